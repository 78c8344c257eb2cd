"""Tick ingestion, trade classification, and 30-minute bar construction.

Raw tick files carry only (timestamp, price, size). Trade direction is
inferred with the tick rule (sign of the last price change, carried forward
over unchanged prices) and a trade is flagged aggressive when it moves the
price. Ticks are aggregated into calendar-aligned 30-minute OHLCV bars with
buy/sell and aggressive/non-aggressive sub-totals.

A seeded synthetic tick generator stands in for proprietary exchange data:
it plants a persistent latent momentum state whose influence on bar
direction is controlled by a signal-strength knob, so downstream classifiers
have a tunable amount of real predictability to find.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd

BAR_INTERVAL_MS = 30 * 60 * 1000

BAR_COLUMNS = [
    "open_time", "open", "high", "low", "close", "volume", "trade_count",
    "buy_count", "sell_count", "buy_volume", "sell_volume",
    "nonaggr_volume", "nonaggr_count", "nonaggr_buy_count",
    "nonaggr_sell_count", "nonaggr_buy_volume", "nonaggr_sell_volume",
]

TICK_CSV_HEADER = "timestamp,price,size"


@dataclass(frozen=True)
class Instrument:
    """Contract metadata needed to turn price moves into dollars."""

    symbol: str
    tick_size: float
    point_value: float

    def __post_init__(self):
        if self.tick_size <= 0:
            raise ValueError(f"tick_size must be > 0, got {self.tick_size}")
        if self.point_value <= 0:
            raise ValueError(f"point_value must be > 0, got {self.point_value}")


class Tick(NamedTuple):
    timestamp: np.datetime64
    price: float
    size: int


@dataclass
class TickData:
    """Column-oriented tick series (timestamps non-decreasing)."""

    times: np.ndarray   # datetime64[ms]
    prices: np.ndarray  # float64, > 0
    sizes: np.ndarray   # int64, >= 1

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i: int) -> Tick:
        return Tick(self.times[i], float(self.prices[i]), int(self.sizes[i]))

    def validate(self) -> None:
        if not (len(self.times) == len(self.prices) == len(self.sizes)):
            raise ValueError("tick columns have mismatched lengths")
        if len(self) == 0:
            return
        if np.any(self.prices <= 0):
            raise ValueError("non-positive price in tick data")
        if np.any(self.sizes < 1):
            raise ValueError("non-positive size in tick data")
        if np.any(np.diff(self.times.astype("int64")) < 0):
            raise ValueError("tick timestamps are not non-decreasing")


@dataclass
class ClassifiedTicks:
    """Ticks plus inferred direction (+1 buy / -1 sell) and aggressiveness."""

    ticks: TickData
    direction: np.ndarray   # int8, +1 or -1, never 0
    aggressive: np.ndarray  # bool

    def __len__(self) -> int:
        return len(self.ticks)


def parse_ticks(source) -> TickData:
    """Parse tick CSV (header ``timestamp,price,size``) into a TickData.

    `source` may be a path, a file object, or raw bytes/str. Malformed rows
    and invariant violations raise ValueError naming the offending CSV line
    (1-based, header = line 1).
    """
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    elif isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    raw = pd.read_csv(
        source,
        dtype={"timestamp": "string", "price": "string", "size": "string"},
        keep_default_na=False,
        skip_blank_lines=False,
    )
    expected = TICK_CSV_HEADER.split(",")
    if list(raw.columns) != expected:
        raise ValueError(f"tick CSV header must be {TICK_CSV_HEADER!r}, got {list(raw.columns)}")
    if len(raw) == 0:
        return TickData(
            times=np.empty(0, dtype="datetime64[ms]"),
            prices=np.empty(0, dtype=np.float64),
            sizes=np.empty(0, dtype=np.int64),
        )

    def _first_bad_line(mask: np.ndarray) -> int:
        # +2: 1-based lines and the header row
        return int(np.flatnonzero(mask)[0]) + 2

    times = pd.to_datetime(raw["timestamp"], errors="coerce", utc=True, format="ISO8601")
    if times.isna().any():
        raise ValueError(f"unparsable timestamp at line {_first_bad_line(times.isna().to_numpy())}")
    prices = pd.to_numeric(raw["price"], errors="coerce")
    if prices.isna().any():
        raise ValueError(f"unparsable price at line {_first_bad_line(prices.isna().to_numpy())}")
    sizes = pd.to_numeric(raw["size"], errors="coerce")
    if sizes.isna().any():
        raise ValueError(f"unparsable size at line {_first_bad_line(sizes.isna().to_numpy())}")

    # numpy string->float is correctly rounded; pd.to_numeric is not
    price_arr = raw["price"].to_numpy(dtype=np.float64)
    size_arr = sizes.to_numpy()
    if np.any(size_arr != np.floor(size_arr)):
        raise ValueError(f"non-integer size at line {_first_bad_line(size_arr != np.floor(size_arr))}")
    size_arr = size_arr.astype(np.int64)
    if np.any(size_arr < 1):
        raise ValueError(f"non-positive size at line {_first_bad_line(size_arr < 1)}")
    if np.any(price_arr <= 0):
        raise ValueError(f"non-positive price at line {_first_bad_line(price_arr <= 0)}")

    time_arr = times.dt.tz_localize(None).to_numpy().astype("datetime64[ms]")
    steps = np.diff(time_arr.astype("int64"))
    if np.any(steps < 0):
        bad = int(np.flatnonzero(steps < 0)[0]) + 1
        raise ValueError(f"non-monotonic timestamp at line {bad + 2}")
    return TickData(times=time_arr, prices=price_arr, sizes=size_arr)


def ticks_to_csv(ticks: TickData, path) -> None:
    """Write ticks in the tick CSV format (ISO-8601 UTC, Z suffix)."""
    stamps = np.datetime_as_string(ticks.times, unit="ms")
    df = pd.DataFrame({
        "timestamp": np.char.add(stamps, "Z"),
        "price": ticks.prices,
        "size": ticks.sizes,
    })
    df.to_csv(path, index=False, float_format="%.17g")


def classify_ticks(ticks: TickData) -> ClassifiedTicks:
    """Assign direction and aggressiveness to every tick.

    Tick rule: buy if the price is above the last different price, sell if
    below, previous direction carried when unchanged. The first tick has no
    precedent and defaults to buy / non-aggressive. A tick is aggressive iff
    its price differs from the previous tick's price.
    """
    ticks.validate()
    n = len(ticks)
    if n == 0:
        raise ValueError("classify_ticks requires at least one tick")
    move = np.sign(np.diff(ticks.prices))
    aggressive = np.concatenate([[False], move != 0])

    signed = np.concatenate([[1.0], move])  # first tick defaults to buy
    idx = np.where(signed != 0, np.arange(n), 0)
    np.maximum.accumulate(idx, out=idx)
    direction = signed[idx].astype(np.int8)
    return ClassifiedTicks(ticks=ticks, direction=direction, aggressive=aggressive)


def build_bars(classified: ClassifiedTicks, interval_ms: int = BAR_INTERVAL_MS) -> pd.DataFrame:
    """Aggregate classified ticks into calendar-aligned time bars.

    Returns a DataFrame with BAR_COLUMNS, one row per interval that contains
    at least one tick; empty intervals are omitted. All count/volume
    sub-totals are exact integers.
    """
    n = len(classified)
    if n == 0:
        return pd.DataFrame({c: pd.Series(dtype="datetime64[ms]" if c == "open_time" else
                                          ("float64" if c in ("open", "high", "low", "close") else "int64"))
                             for c in BAR_COLUMNS})
    epoch_ms = classified.ticks.times.astype("int64")
    bucket = epoch_ms // interval_ms
    keys, starts = np.unique(bucket, return_index=True)
    ends = np.append(starts[1:], n)

    prices = classified.ticks.prices
    sizes = classified.ticks.sizes
    buy = classified.direction > 0
    nonaggr = ~classified.aggressive

    def seg_sum(values: np.ndarray) -> np.ndarray:
        return np.add.reduceat(values, starts)

    bars = pd.DataFrame({
        "open_time": (keys * interval_ms).astype("datetime64[ms]"),
        "open": prices[starts],
        "high": np.maximum.reduceat(prices, starts),
        "low": np.minimum.reduceat(prices, starts),
        "close": prices[ends - 1],
        "volume": seg_sum(sizes),
        "trade_count": (ends - starts).astype(np.int64),
        "buy_count": seg_sum(buy.astype(np.int64)),
        "sell_count": seg_sum((~buy).astype(np.int64)),
        "buy_volume": seg_sum(np.where(buy, sizes, 0)),
        "sell_volume": seg_sum(np.where(~buy, sizes, 0)),
        "nonaggr_volume": seg_sum(np.where(nonaggr, sizes, 0)),
        "nonaggr_count": seg_sum(nonaggr.astype(np.int64)),
        "nonaggr_buy_count": seg_sum((nonaggr & buy).astype(np.int64)),
        "nonaggr_sell_count": seg_sum((nonaggr & ~buy).astype(np.int64)),
        "nonaggr_buy_volume": seg_sum(np.where(nonaggr & buy, sizes, 0)),
        "nonaggr_sell_volume": seg_sum(np.where(nonaggr & ~buy, sizes, 0)),
    })
    return bars


def bars_to_csv(bars: pd.DataFrame, path) -> None:
    out = bars.copy()
    out["open_time"] = np.char.add(
        np.datetime_as_string(out["open_time"].to_numpy().astype("datetime64[ms]"), unit="ms"), "Z")
    out.to_csv(path, index=False, columns=BAR_COLUMNS, float_format="%.17g")


def bars_from_csv(path) -> pd.DataFrame:
    bars = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in BAR_COLUMNS if c not in bars.columns]
    if missing:
        raise ValueError(f"bar CSV missing columns: {missing}")
    bars["open_time"] = (
        pd.to_datetime(bars["open_time"], utc=True, format="ISO8601")
        .dt.tz_localize(None).to_numpy().astype("datetime64[ms]")
    )
    return bars[BAR_COLUMNS]


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the planted-signal synthetic tick stream.

    signal_strength s: each bar's direction equals the latent momentum state
    with probability s and is an independent coin flip otherwise, so s=0
    produces an i.i.d. sign sequence and s=1 makes the latent state fully
    determine the close-to-close sign.
    """

    start: str = "2011-01-03"
    end: str = "2011-07-03"
    base_price: float = 1500.0
    tick_size: float = 0.1
    bar_volatility: float = 0.6          # stdev of |close-to-close| move, price units
    signal_strength: float = 0.6
    regime_flip_prob: float = 1.0 / 48.0  # latent state hazard per bar
    volume_exponent: float = 2.5          # tail exponent of per-bar volume
    min_volume: int = 10
    mean_ticks_per_bar: float = 16.0

    def n_bars(self) -> int:
        start = np.datetime64(self.start, "ms")
        end = np.datetime64(self.end, "ms")
        span = (end - start).astype("int64")
        if span <= 0:
            raise ValueError(f"invalid date range: {self.start} .. {self.end}")
        return int(span // BAR_INTERVAL_MS)


@dataclass
class SyntheticBarPlan:
    """Per-bar ground truth used to synthesize ticks (exposed for tests)."""

    open_times: np.ndarray        # datetime64[ms]
    latent_state: np.ndarray      # int8 in {-1, +1}
    direction: np.ndarray         # int8 in {-1, +1}; sign of close-to-close move
    close_ticks: np.ndarray       # int64, close price in tick_size units
    volume: np.ndarray            # int64
    tick_count: np.ndarray        # int64, >= 1


def synthetic_bar_plan(config: SyntheticConfig, seed: int) -> SyntheticBarPlan:
    """Draw the latent state, bar directions, closes, and volumes."""
    n = config.n_bars()
    if not 0.0 <= config.signal_strength <= 1.0:
        raise ValueError("signal_strength must lie in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBAA5]))

    flips = rng.random(n) < config.regime_flip_prob
    flips[0] = False
    state0 = 1 if rng.random() < 0.5 else -1
    latent = (state0 * np.where(np.cumsum(flips) % 2 == 0, 1, -1)).astype(np.int8)

    follow = rng.random(n) < config.signal_strength
    coin = np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)
    direction = np.where(follow, latent, coin).astype(np.int8)

    vol_ticks = config.bar_volatility / config.tick_size
    magnitude = np.maximum(1, np.rint(np.abs(rng.normal(0.0, vol_ticks, n)))).astype(np.int64)
    base_ticks = int(round(config.base_price / config.tick_size))
    closes = base_ticks + np.cumsum(direction.astype(np.int64) * magnitude)
    if closes.min() <= 0:
        raise ValueError("synthetic price path crossed zero; raise base_price or lower volatility")

    # Pareto-tailed per-bar volume: P(V >= v) ~ v^-(exponent-1)
    u = rng.random(n)
    volume = np.floor(config.min_volume * u ** (-1.0 / (config.volume_exponent - 1.0))).astype(np.int64)
    tick_count = np.maximum(1, rng.poisson(config.mean_ticks_per_bar, n)).astype(np.int64)
    volume = np.maximum(volume, tick_count)

    start = np.datetime64(config.start, "ms")
    open_times = start + (np.arange(n) * BAR_INTERVAL_MS).astype("timedelta64[ms]")
    return SyntheticBarPlan(
        open_times=open_times, latent_state=latent, direction=direction,
        close_ticks=closes, volume=volume, tick_count=tick_count,
    )


def generate_synthetic_ticks(config: SyntheticConfig, seed: int) -> TickData:
    """Generate a deterministic tick stream realizing a synthetic bar plan.

    Prices live on the tick_size grid. Within each bar the path walks from
    the previous close to the planned close with unit-tick noise, so OHLC
    extremes and aggressiveness statistics arise naturally.
    """
    plan = synthetic_bar_plan(config, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x71C5]))
    n_bars = len(plan.close_ticks)
    counts = plan.tick_count
    total = int(counts.sum())

    bar_of_tick = np.repeat(np.arange(n_bars), counts)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

    # Position of each tick inside its bar, in [0, 1]: k / count
    pos_in_bar = (np.arange(total) - starts[bar_of_tick] + 1) / counts[bar_of_tick]
    prev_close = np.concatenate([[int(round(config.base_price / config.tick_size))],
                                 plan.close_ticks[:-1]])
    target = plan.close_ticks[bar_of_tick]
    anchor = prev_close[bar_of_tick]
    ramp = np.rint(anchor + (target - anchor) * pos_in_bar).astype(np.int64)
    noise = rng.integers(-1, 2, total)
    is_last = pos_in_bar >= 1.0
    price_ticks = np.where(is_last, target, np.maximum(1, ramp + noise))
    prices = price_ticks.astype(np.float64) * config.tick_size

    # Split bar volume over its ticks: one contract each plus a multinomial rest
    sizes = np.ones(total, dtype=np.int64)
    extra = plan.volume - counts
    u = rng.random(total)
    # per-bar normalized weights via segment sums
    seg_tot = np.add.reduceat(u, starts)
    frac = u / seg_tot[bar_of_tick]
    alloc = np.floor(frac * extra[bar_of_tick]).astype(np.int64)
    sizes += alloc
    # put any rounding remainder on the last tick of the bar
    given = np.add.reduceat(alloc, starts)
    remainder = extra - given
    last_idx = starts + counts - 1
    sizes[last_idx] += remainder

    # Absolute times: bar open + random offset; offsets stay inside their bar,
    # so one global sort orders ticks within bars without crossing boundaries.
    offsets = rng.integers(0, BAR_INTERVAL_MS, total)
    abs_ms = plan.open_times.astype("int64")[bar_of_tick] + offsets
    times = np.sort(abs_ms).astype("datetime64[ms]")

    ticks = TickData(times=times, prices=prices, sizes=sizes)
    ticks.validate()
    return ticks
