"""Nested feature sets over 30-minute bars: FS1 < FS2 < FS3 < FS4.

FS1: rolling min-max normalized log returns of OHLC plus Box-Cox transformed,
min-max normalized volume (5 columns). FS2 adds SMAs of the normalized close
return at 1/5/10-day lookbacks (8). FS3 adds a 12-bin volume-at-price
distribution: recent (6-hour) volume bucketed by where each bar's close sits
inside the trailing one-month close range (20). FS4 adds 7 normalized trade
aggressiveness/direction columns (27).

All windows are trailing and inclusive of the current bar, so every value at
row t is a function of rows <= t only. The Box-Cox exponent is supplied by
the caller (fitted on a training window) to keep fold discipline out of this
module.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view
from scipy.optimize import minimize_scalar
from scipy.stats import boxcox_llf

FS1_NAMES = ["open_logret_mm", "high_logret_mm", "low_logret_mm", "close_logret_mm",
             "volume_boxcox_mm"]
SMA_NAMES = ["close_sma_48", "close_sma_240", "close_sma_480"]
VAP_NAMES = [f"vap_bin_{i:02d}" for i in range(12)]
AGGR_RAW_NAMES = ["trade_count", "count_imbalance", "volume_imbalance",
                  "nonaggr_volume", "nonaggr_count", "nonaggr_count_imbalance",
                  "nonaggr_volume_imbalance"]
AGGR_NAMES = [f"{n}_mm" for n in AGGR_RAW_NAMES]


class FeatureSetLevel(str, Enum):
    FS1 = "FS1"
    FS2 = "FS2"
    FS3 = "FS3"
    FS4 = "FS4"

    @property
    def n_columns(self) -> int:
        return {"FS1": 5, "FS2": 8, "FS3": 20, "FS4": 27}[self.value]

    def column_names(self, sma_windows=(48, 240, 480)) -> list[str]:
        names = list(FS1_NAMES)
        if self is not FeatureSetLevel.FS1:
            names += [f"close_sma_{w}" for w in sma_windows]
        if self in (FeatureSetLevel.FS3, FeatureSetLevel.FS4):
            names += VAP_NAMES
        if self is FeatureSetLevel.FS4:
            names += AGGR_NAMES
        return names


@dataclass(frozen=True)
class FeatureParams:
    """Window sizes in bar counts; boxcox_lambda comes from a training fit."""

    boxcox_lambda: float
    minmax_window: int = 480
    sma_windows: tuple[int, ...] = (48, 240, 480)
    vap_long_window: int = 1440
    vap_short_window: int = 12
    vap_bins: int = 12


@dataclass
class FeatureMatrix:
    times: np.ndarray      # datetime64[ms], one per bar
    names: list[str]
    values: np.ndarray     # (n, d) float64; NaN on warm-up rows
    valid_from: int

    def __post_init__(self):
        assert self.values.shape == (len(self.times), len(self.names))

    @property
    def valid_mask(self) -> np.ndarray:
        return ~np.isnan(self.values).any(axis=1)

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=self.names)
        df.insert(0, "time", self.times)
        return df


def log_returns(series) -> np.ndarray:
    """ln(x_t / x_{t-1}); the first element is NaN (no predecessor)."""
    x = np.asarray(series, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("log_returns needs at least 2 values")
    if np.any(x <= 0):
        raise ValueError("log_returns requires positive values")
    out = np.empty_like(x)
    out[0] = np.nan
    out[1:] = np.log(x[1:] / x[:-1])
    return out


def boxcox_fit(train_values, bounds: tuple[float, float] = (-2.0, 2.0)) -> float:
    """Maximum-likelihood Box-Cox exponent over a bounded interval."""
    x = np.asarray(train_values, dtype=np.float64)
    if len(x) < 30:
        raise ValueError(f"boxcox_fit needs >= 30 values, got {len(x)}")
    if np.any(x <= 0):
        raise ValueError("boxcox_fit requires positive values")
    if np.ptp(x) == 0:
        raise ValueError("constant input is degenerate for Box-Cox")
    res = minimize_scalar(lambda lam: -boxcox_llf(lam, x), bounds=bounds, method="bounded",
                          options={"xatol": 1e-8})
    return float(res.x)


def boxcox_apply(x, lam: float):
    """Box-Cox transform: ln(x) at lambda 0, else (x^lambda - 1)/lambda."""
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr <= 0):
        raise ValueError("boxcox_apply requires positive values")
    if lam == 0.0:
        out = np.log(arr)
    else:
        out = (np.power(arr, lam) - 1.0) / lam
    return float(out) if np.isscalar(x) else out


def rolling_minmax(series, window: int = 480) -> np.ndarray:
    """Scale into [0,1] against the trailing `window` values (inclusive).

    Rows with fewer than `window` observations are NaN; a flat window maps
    to 0.5.
    """
    if window < 2:
        raise ValueError("rolling_minmax window must be >= 2")
    s = pd.Series(np.asarray(series, dtype=np.float64))
    roll = s.rolling(window, min_periods=window)
    mn = roll.min().to_numpy()
    mx = roll.max().to_numpy()
    span = mx - mn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (s.to_numpy() - mn) / span
    out[span == 0] = 0.5
    return out


def sma(series, window: int) -> np.ndarray:
    """Trailing arithmetic mean; warm-up rows are NaN."""
    if window < 1:
        raise ValueError("sma window must be >= 1")
    return pd.Series(np.asarray(series, dtype=np.float64)).rolling(
        window, min_periods=window).mean().to_numpy()


def vap_features(bars: pd.DataFrame, long_window: int = 1440, short_window: int = 12,
                 bins: int = 12, _chunk: int = 200_000) -> np.ndarray:
    """Volume-at-price distribution: (n, bins) rows summing to 1.

    The trailing `long_window` close range is cut into `bins` equal-width
    buckets; each of the trailing `short_window` bars adds its volume to the
    bucket holding its close (top edge falls in the last bucket). Rows are
    normalized by total short-window volume; zero volume or a flat price
    range yields the uniform distribution.
    """
    if not long_window > short_window >= 1:
        raise ValueError("need long_window > short_window >= 1")
    closes = bars["close"].to_numpy(dtype=np.float64)
    volumes = bars["volume"].to_numpy(dtype=np.float64)
    n = len(closes)
    out = np.full((n, bins), np.nan)
    if n < long_window:
        return out

    roll = pd.Series(closes).rolling(long_window, min_periods=long_window)
    lo = roll.min().to_numpy()
    hi = roll.max().to_numpy()

    close_w = sliding_window_view(closes, short_window)   # row i ends at bar i+short_window-1
    vol_w = sliding_window_view(volumes, short_window)
    first = long_window - 1
    for start in range(first, n, _chunk):
        stop = min(start + _chunk, n)
        cw = close_w[start - short_window + 1:stop - short_window + 1]
        vw = vol_w[start - short_window + 1:stop - short_window + 1]
        lo_c = lo[start:stop, None]
        width = (hi[start:stop] - lo[start:stop])[:, None]
        flat = width[:, 0] == 0
        safe_width = np.where(width > 0, width, 1.0)
        idx = np.clip((cw - lo_c) / safe_width * bins, 0, bins - 1).astype(np.int64)
        block = np.zeros((stop - start, bins))
        for b in range(bins):
            block[:, b] = np.where(idx == b, vw, 0.0).sum(axis=1)
        total = block.sum(axis=1, keepdims=True)
        zero = total[:, 0] == 0
        with np.errstate(invalid="ignore", divide="ignore"):
            block /= total
        block[zero | flat] = 1.0 / bins
        out[start:stop] = block
    return out


def aggressiveness_features(bars: pd.DataFrame) -> pd.DataFrame:
    """Seven raw trade-flow columns per bar (normalization happens later)."""
    b = bars
    return pd.DataFrame({
        "trade_count": b["trade_count"].astype(np.float64),
        "count_imbalance": (b["buy_count"] - b["sell_count"]).astype(np.float64),
        "volume_imbalance": (b["buy_volume"] - b["sell_volume"]).astype(np.float64),
        "nonaggr_volume": b["nonaggr_volume"].astype(np.float64),
        "nonaggr_count": b["nonaggr_count"].astype(np.float64),
        "nonaggr_count_imbalance": (b["nonaggr_buy_count"] - b["nonaggr_sell_count"]).astype(np.float64),
        "nonaggr_volume_imbalance": (b["nonaggr_buy_volume"] - b["nonaggr_sell_volume"]).astype(np.float64),
    })


def assemble(bars: pd.DataFrame, level: FeatureSetLevel, params: FeatureParams) -> FeatureMatrix:
    """Build the feature matrix for one level; raises if nothing warms up."""
    level = FeatureSetLevel(level)
    w = params.minmax_window
    cols: list[np.ndarray] = []
    names: list[str] = []

    for field in ("open", "high", "low", "close"):
        cols.append(rolling_minmax(log_returns(bars[field].to_numpy()), w))
        names.append(f"{field}_logret_mm")
    volume = bars["volume"].to_numpy(dtype=np.float64)
    bc = boxcox_apply(volume, params.boxcox_lambda)
    cols.append(rolling_minmax(bc, w))
    names.append("volume_boxcox_mm")

    if level is not FeatureSetLevel.FS1:
        close_mm = cols[3]
        for sw in params.sma_windows:
            cols.append(sma(close_mm, sw))
            names.append(f"close_sma_{sw}")

    if level in (FeatureSetLevel.FS3, FeatureSetLevel.FS4):
        vap = vap_features(bars, params.vap_long_window, params.vap_short_window,
                           params.vap_bins)
        for i in range(params.vap_bins):
            cols.append(vap[:, i])
        names += [f"vap_bin_{i:02d}" for i in range(params.vap_bins)]

    if level is FeatureSetLevel.FS4:
        raw = aggressiveness_features(bars)
        for name in AGGR_RAW_NAMES:
            cols.append(rolling_minmax(raw[name].to_numpy(), w))
            names.append(f"{name}_mm")

    values = np.column_stack(cols)
    finite = ~np.isnan(values).any(axis=1)
    if not finite.any():
        per_col = [int(np.argmax(~np.isnan(c))) if (~np.isnan(c)).any() else len(c)
                   for c in cols]
        worst = int(np.argmax(per_col))
        raise ValueError(
            f"insufficient history: column {names[worst]!r} needs "
            f"{per_col[worst] + 1} bars, have {len(bars)}")
    valid_from = int(np.argmax(finite))
    # trailing windows make validity a suffix property
    assert finite[valid_from:].all(), "non-contiguous warm-up"

    times = bars["open_time"].to_numpy().astype("datetime64[ms]")
    return FeatureMatrix(times=times, names=names, values=values, valid_from=valid_from)


def feature_matrix_to_csv(fm: FeatureMatrix, path) -> None:
    """Export valid rows as CSV: time column then named feature columns."""
    df = fm.to_frame().iloc[fm.valid_from:]
    df = df.copy()
    df["time"] = np.char.add(np.datetime_as_string(df["time"].to_numpy().astype("datetime64[ms]"),
                                                   unit="ms"), "Z")
    df.to_csv(path, index=False, float_format="%.17g")
