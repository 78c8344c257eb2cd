import io

import numpy as np
import pytest

from seltrade.market_data import (
    BAR_COLUMNS,
    Instrument,
    SyntheticConfig,
    TickData,
    bars_from_csv,
    bars_to_csv,
    build_bars,
    classify_ticks,
    generate_synthetic_ticks,
    parse_ticks,
    synthetic_bar_plan,
    ticks_to_csv,
)


def make_ticks(prices, sizes=None, start="2011-02-14T00:00:00", step_ms=1000):
    n = len(prices)
    times = np.datetime64(start, "ms") + (np.arange(n) * step_ms).astype("timedelta64[ms]")
    return TickData(
        times=times,
        prices=np.asarray(prices, dtype=np.float64),
        sizes=np.asarray(sizes if sizes is not None else [1] * n, dtype=np.int64),
    )


class TestParseTicks:
    def test_basic_row(self):
        csv = "timestamp,price,size\n2011-02-14T00:00:01.500Z,1360.25,3\n"
        ticks = parse_ticks(csv)
        assert len(ticks) == 1
        assert ticks[0].price == 1360.25
        assert ticks[0].size == 3
        assert ticks[0].timestamp == np.datetime64("2011-02-14T00:00:01.500")

    def test_empty_file(self):
        ticks = parse_ticks("timestamp,price,size\n")
        assert len(ticks) == 0

    def test_zero_size_rejected(self):
        csv = "timestamp,price,size\n2011-02-14T00:00:01Z,10.0,0\n"
        with pytest.raises(ValueError, match="non-positive size at line 2"):
            parse_ticks(csv)

    def test_non_monotonic_rejected_with_line(self):
        csv = (
            "timestamp,price,size\n"
            "2011-02-14T00:00:02Z,10.0,1\n"
            "2011-02-14T00:00:01Z,10.0,1\n"
        )
        with pytest.raises(ValueError, match="line 3"):
            parse_ticks(csv)

    def test_garbage_row_reports_line(self):
        csv = "timestamp,price,size\n2011-02-14T00:00:01Z,abc,1\n"
        with pytest.raises(ValueError, match="line 2"):
            parse_ticks(csv)

    def test_roundtrip(self, tmp_path):
        ticks = make_ticks([10.0, 10.5, 10.25], sizes=[1, 2, 3])
        path = tmp_path / "ticks.csv"
        ticks_to_csv(ticks, path)
        back = parse_ticks(path)
        np.testing.assert_array_equal(back.times, ticks.times)
        np.testing.assert_array_equal(back.prices, ticks.prices)
        np.testing.assert_array_equal(back.sizes, ticks.sizes)


class TestClassifyTicks:
    def test_aggressive_iff_price_change(self):
        ct = classify_ticks(make_ticks([10, 10, 11]))
        np.testing.assert_array_equal(ct.aggressive, [False, False, True])

    def test_tick_rule_with_carry(self):
        ct = classify_ticks(make_ticks([10, 11, 11, 10]))
        np.testing.assert_array_equal(ct.direction, [1, 1, 1, -1])

    def test_single_tick_defaults(self):
        ct = classify_ticks(make_ticks([10.0]))
        assert ct.direction[0] == 1
        assert not ct.aggressive[0]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            classify_ticks(make_ticks([]))

    def test_aggressive_replay_property(self):
        rng = np.random.default_rng(7)
        prices = 100 + np.cumsum(rng.integers(-1, 2, 500)) * 0.25
        ct = classify_ticks(make_ticks(prices))
        expect = np.concatenate([[False], prices[1:] != prices[:-1]])
        np.testing.assert_array_equal(ct.aggressive, expect)


class TestBuildBars:
    def test_single_interval_aggregation(self):
        ct = classify_ticks(make_ticks([10, 12, 9]))
        bars = build_bars(ct)
        assert len(bars) == 1
        row = bars.iloc[0]
        assert (row["open"], row["high"], row["low"], row["close"]) == (10, 12, 9, 9)
        assert row["volume"] == 3
        assert row["trade_count"] == 3

    def test_two_intervals_partition(self):
        ticks = make_ticks([10, 11, 12, 13], step_ms=11 * 60 * 1000)  # 0,11,22,33 min
        bars = build_bars(classify_ticks(ticks))
        assert len(bars) == 2
        assert bars.iloc[0]["trade_count"] == 3
        assert bars.iloc[1]["trade_count"] == 1
        assert bars.iloc[1]["open"] == 13

    def test_all_buys_subtotals(self):
        ticks = make_ticks([10, 11, 12], sizes=[2, 3, 4])  # strictly rising = all buys
        bars = build_bars(classify_ticks(ticks))
        row = bars.iloc[0]
        assert row["sell_volume"] == 0
        assert row["buy_volume"] == row["volume"] == 9

    def test_calendar_alignment(self):
        ticks = make_ticks([10.0], start="2011-02-14T00:17:00")
        bars = build_bars(classify_ticks(ticks))
        assert bars.iloc[0]["open_time"] == np.datetime64("2011-02-14T00:00:00", "ms")

    def test_subtotal_invariants_random(self):
        rng = np.random.default_rng(11)
        n = 4000
        prices = 50 + np.cumsum(rng.integers(-1, 2, n)) * 0.1
        sizes = rng.integers(1, 9, n)
        times = np.datetime64("2011-02-14", "ms") + np.cumsum(rng.integers(0, 60_000, n)).astype("timedelta64[ms]")
        ct = classify_ticks(TickData(times=times, prices=prices, sizes=sizes.astype(np.int64)))
        bars = build_bars(ct)
        assert (bars["buy_volume"] + bars["sell_volume"] == bars["volume"]).all()
        assert (bars["buy_count"] + bars["sell_count"] == bars["trade_count"]).all()
        assert (bars["nonaggr_volume"] <= bars["volume"]).all()
        assert (bars["nonaggr_buy_count"] + bars["nonaggr_sell_count"] == bars["nonaggr_count"]).all()
        assert (bars["nonaggr_buy_volume"] + bars["nonaggr_sell_volume"] == bars["nonaggr_volume"]).all()
        assert (bars["low"] <= bars[["open", "close"]].min(axis=1)).all()
        assert (bars["high"] >= bars[["open", "close"]].max(axis=1)).all()
        assert bars["volume"].sum() == sizes.sum()

    def test_csv_roundtrip(self, tmp_path):
        ticks = generate_synthetic_ticks(SyntheticConfig(end="2011-01-04"), seed=3)
        bars = build_bars(classify_ticks(ticks))
        path = tmp_path / "bars.csv"
        bars_to_csv(bars, path)
        back = bars_from_csv(path)
        assert list(back.columns) == BAR_COLUMNS
        for col in BAR_COLUMNS:
            np.testing.assert_array_equal(back[col].to_numpy(), bars[col].to_numpy())


class TestSynthetic:
    def test_determinism(self):
        cfg = SyntheticConfig(end="2011-01-10")
        a = generate_synthetic_ticks(cfg, seed=42)
        b = generate_synthetic_ticks(cfg, seed=42)
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.prices, b.prices)
        np.testing.assert_array_equal(a.sizes, b.sizes)

    def test_different_seed_differs(self):
        cfg = SyntheticConfig(end="2011-01-10")
        a = generate_synthetic_ticks(cfg, seed=1)
        b = generate_synthetic_ticks(cfg, seed=2)
        assert not np.array_equal(a.prices, b.prices)

    def test_invalid_range_rejected(self):
        with pytest.raises(ValueError, match="invalid date range"):
            synthetic_bar_plan(SyntheticConfig(start="2012-01-01", end="2011-01-01"), seed=0)

    def test_prices_on_tick_grid(self):
        cfg = SyntheticConfig(end="2011-01-06", tick_size=0.25)
        ticks = generate_synthetic_ticks(cfg, seed=5)
        ratio = ticks.prices / cfg.tick_size
        np.testing.assert_allclose(ratio, np.rint(ratio), atol=1e-9)

    def test_bars_match_plan(self):
        cfg = SyntheticConfig(end="2011-01-31")
        seed = 9
        plan = synthetic_bar_plan(cfg, seed)
        bars = build_bars(classify_ticks(generate_synthetic_ticks(cfg, seed)))
        assert len(bars) == len(plan.close_ticks)
        np.testing.assert_allclose(bars["close"].to_numpy(), plan.close_ticks * cfg.tick_size)
        np.testing.assert_array_equal(bars["volume"].to_numpy(), plan.volume)

    def test_signal_one_latent_determines_sign(self):
        cfg = SyntheticConfig(end="2011-02-01", signal_strength=1.0)
        seed = 17
        plan = synthetic_bar_plan(cfg, seed)
        bars = build_bars(classify_ticks(generate_synthetic_ticks(cfg, seed)))
        closes = bars["close"].to_numpy()
        prev = np.concatenate([[cfg.base_price], closes[:-1]])
        signs = np.sign(closes - prev)
        np.testing.assert_array_equal(signs.astype(np.int8), plan.latent_state)

    def test_signal_zero_runs_test(self):
        # Wald-Wolfowitz runs test on the bar-direction sign sequence
        cfg = SyntheticConfig(end="2011-05-01", signal_strength=0.0)
        plan = synthetic_bar_plan(cfg, seed=23)
        d = plan.direction.astype(np.int64)
        n_pos = int((d > 0).sum())
        n_neg = int((d < 0).sum())
        runs = 1 + int((d[1:] != d[:-1]).sum())
        n = n_pos + n_neg
        mu = 2.0 * n_pos * n_neg / n + 1.0
        var = (mu - 1.0) * (mu - 2.0) / (n - 1.0)
        z = (runs - mu) / np.sqrt(var)
        assert abs(z) < 1.96

    def test_volume_heavy_tail(self):
        cfg = SyntheticConfig(end="2011-06-01")
        plan = synthetic_bar_plan(cfg, seed=31)
        # Pareto tail: a nontrivial share of bars far above the median
        med = np.median(plan.volume)
        assert (plan.volume > 5 * med).mean() > 0.005


class TestInstrument:
    def test_validation(self):
        with pytest.raises(ValueError):
            Instrument("GC", tick_size=0.0, point_value=100.0)
        with pytest.raises(ValueError):
            Instrument("GC", tick_size=0.1, point_value=-1.0)
        inst = Instrument("GC", tick_size=0.1, point_value=100.0)
        assert inst.symbol == "GC"
