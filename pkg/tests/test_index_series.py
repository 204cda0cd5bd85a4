"""Index return computation, trailing windows, and comparison diagnostics."""

import math
from datetime import date, timedelta

import numpy as np
import pandas as pd
import pytest

from capdex.errors import DataError
from capdex.index_series import (
    ReturnSeries,
    cross_correlation_report,
    distribution_report,
    index_daily_returns,
    read_series_csv,
    significance_limit,
    t3m_gross_returns,
    write_series_csv,
)
from capdex.market_data import BarTable, MetaTable
from capdex.reconstitution import IndexParams, membership_timeline
from capdex.trading_calendar import build_trading_calendar


def returns_universe(ret_specs, caps):
    """Single pre-2004 cycle with explicit per-security return paths.

    ret_specs: permno -> callable(day_index) -> return or NaN.
    caps: permno -> (permco, cap) with constant prices backing the caps.
    """
    cal = build_trading_calendar(date(1998, 1, 1), date(2001, 12, 31))
    sessions = cal.sessions(date(1999, 1, 4), date(2000, 7, 28))
    frames, meta_rows = [], []
    for permno, (permco, cap) in caps.items():
        rets = np.array(
            [ret_specs[permno](i) for i in range(len(sessions))], dtype=float
        )
        rets[0] = np.nan
        frames.append(pd.DataFrame({
            "permno": np.full(len(sessions), permno, dtype=np.int64),
            "permco": np.full(len(sessions), permco, dtype=np.int64),
            "date": pd.to_datetime(sessions),
            "prc": np.full(len(sessions), cap / 1_000_000),
            "midpoint": False,
            "shrout": np.full(len(sessions), 1000.0),
            "ret": rets,
            "cfacpr": 1.0,
        }))
        meta_rows.append({
            "permno": permno, "permco": permco,
            "begdat": pd.Timestamp(sessions[0]), "hshrcd": 10,
            "company_name": f"Co {permco}", "domicile_flag": True,
        })
    bars = BarTable(pd.concat(frames, ignore_index=True))
    meta = MetaTable(pd.DataFrame(meta_rows))
    params = IndexParams(n_tier1=1, n_tier3=2, n_tier_e=4, min_cap=1e6)
    timeline = membership_timeline((1999, 1999), bars, meta, params, cal)
    return timeline, bars, cal


def test_single_member_index_equals_member():
    rng = np.random.default_rng(5)
    path = rng.normal(0.001, 0.02, size=500)
    timeline, bars, cal = returns_universe(
        {10001: lambda i: path[i]}, {10001: (1001, 50e6)}
    )
    series = index_daily_returns(timeline, bars, "T3")
    snap = timeline.snapshots[0]
    expected_days = [
        d for d in cal.sessions(snap.effective_start, snap.effective_end)
        if d > snap.effective_start
    ]
    assert list(series.dates) == expected_days
    start_idx = {d: i for i, d in enumerate(cal.sessions(date(1999, 1, 4), date(2000, 7, 28)))}
    for d, v in zip(series.dates, series.values):
        assert v == pytest.approx(path[start_idx[d]], abs=1e-15)


def test_two_member_weighted_average():
    timeline, bars, cal = returns_universe(
        {10001: lambda i: 0.01, 10002: lambda i: 0.03},
        {10001: (1001, 40e6), 10002: (1002, 40e6)},
    )
    series = index_daily_returns(timeline, bars, "T3")
    assert series.values[0] == pytest.approx(0.02, abs=1e-15)


def test_missing_return_renormalizes():
    # Member 2 reports nothing on the second post-rebalance day.
    snap_days = {}

    def b_ret(i):
        return np.nan if i == snap_days.get("gap") else 0.03

    timeline, bars, cal = returns_universe(
        {10001: lambda i: 0.01, 10002: b_ret},
        {10001: (1001, 40e6), 10002: (1002, 40e6)},
    )
    # Rebuild with the gap aligned to a real post-rebalance day.
    sessions = cal.sessions(date(1999, 1, 4), date(2000, 7, 28))
    reb = timeline.snapshots[0].effective_start
    gap_idx = sessions.index(reb) + 2
    snap_days["gap"] = gap_idx
    timeline, bars, cal = returns_universe(
        {10001: lambda i: 0.01, 10002: b_ret},
        {10001: (1001, 40e6), 10002: (1002, 40e6)},
    )
    series = index_daily_returns(timeline, bars, "T3")
    gap_day = sessions[gap_idx]
    by_date = dict(zip(series.dates, series.values))
    assert by_date[gap_day] == pytest.approx(0.01, abs=1e-15)  # only member 1 reports
    # Drifted weights into the next day: member 1 realized two 1% days,
    # member 2 realized one 3% day and sat flat through the gap.
    next_day = sessions[gap_idx + 1]
    v1 = 0.5 * 1.01**2
    v2 = 0.5 * 1.03
    expected = (v1 * 0.01 + v2 * 0.03) / (v1 + v2)
    assert by_date[next_day] == pytest.approx(expected, abs=1e-12)


def test_all_members_dark_leaves_series_gap(caplog):
    # Both members miss the same day: the date drops out of the series.
    sessions_probe = build_trading_calendar(
        date(1998, 1, 1), date(2001, 12, 31)
    ).sessions(date(1999, 1, 4), date(2000, 7, 28))
    gap_idx = sessions_probe.index(date(1999, 6, 25)) + 3

    def gappy(i):
        return np.nan if i == gap_idx else 0.01

    timeline, bars, cal = returns_universe(
        {10001: gappy, 10002: gappy},
        {10001: (1001, 40e6), 10002: (1002, 40e6)},
    )
    with caplog.at_level("WARNING"):
        series = index_daily_returns(timeline, bars, "T3")
    assert sessions_probe[gap_idx] not in series.dates
    assert sessions_probe[gap_idx - 1] in series.dates
    assert any("series gap" in r.message for r in caplog.records)


def test_buy_and_hold_consistency():
    rng = np.random.default_rng(17)
    paths = {p: rng.normal(0.0005, 0.015, size=500) for p in (10001, 10002, 10003)}
    timeline, bars, cal = returns_universe(
        {p: (lambda i, p=p: paths[p][i]) for p in paths},
        {10001: (1001, 90e6), 10002: (1002, 60e6), 10003: (1003, 30e6)},
    )
    series = index_daily_returns(timeline, bars, "TE")
    snap = timeline.snapshots[0]
    sessions = cal.sessions(date(1999, 1, 4), date(2000, 7, 28))
    days = [d for d in cal.sessions(snap.effective_start, snap.effective_end)
            if d > snap.effective_start]
    idx = {d: i for i, d in enumerate(sessions)}
    compounded = math.prod(1 + v for v in series.values)
    total = 90e6 + 60e6 + 30e6
    weighted_gross = sum(
        (cap / total) * math.prod(1 + paths[p][idx[d]] for d in days)
        for p, cap in ((10001, 90e6), (10002, 60e6), (10003, 30e6))
    )
    assert compounded == pytest.approx(weighted_gross, abs=1e-9, rel=1e-9)


# ---------------------------------------------------------------- t3m

def dates_n(n, start=date(2000, 1, 1)):
    return tuple(start + timedelta(days=i) for i in range(n))


def test_t3m_zero_returns():
    series = ReturnSeries(dates_n(100), np.zeros(100))
    gross = t3m_gross_returns(series, window=63)
    assert len(gross) == 100 - 62
    assert (gross.values == 1.0).all()


def test_t3m_hand_compounding():
    series = ReturnSeries(dates_n(5), np.full(5, 0.01))
    gross = t3m_gross_returns(series, window=3)
    assert gross.values[0] == pytest.approx(1.01**3, abs=1e-12)
    assert gross.dates[0] == series.dates[2]


def test_t3m_total_loss():
    series = ReturnSeries(dates_n(4), np.array([0.1, -1.0, 0.2, 0.3]))
    gross = t3m_gross_returns(series, window=3)
    assert gross.values[0] == 0.0


def test_t3m_window_longer_than_series():
    series = ReturnSeries(dates_n(10), np.zeros(10))
    assert len(t3m_gross_returns(series, window=11)) == 0


def test_t3m_constant_return_exactness():
    # Sequential left-fold products must reproduce the power exactly.
    r = 0.0123
    series = ReturnSeries(dates_n(200), np.full(200, r))
    gross = t3m_gross_returns(series, window=63)
    expected = math.prod([1 + r] * 63)
    assert (gross.values == expected).all()


# ------------------------------------------------------- cross-correlation

def test_lag0_identity():
    values = np.random.default_rng(0).normal(size=100)
    a = ReturnSeries(dates_n(100), values)
    report = cross_correlation_report(a, a, max_lag=5)
    assert report.lag0_corr == pytest.approx(1.0, abs=1e-12)


def test_significance_limit_formula():
    assert significance_limit(3780) == pytest.approx(1.96 / math.sqrt(3780), abs=1e-15)
    assert round(significance_limit(3780), 2) == 0.03
    values = np.random.default_rng(1).normal(size=3780)
    other = values + 0.5 * np.random.default_rng(2).normal(size=3780)
    report = cross_correlation_report(
        ReturnSeries(dates_n(3780), values), ReturnSeries(dates_n(3780), other)
    )
    assert report.sig_limit == pytest.approx(0.0318794, abs=1e-6)
    assert report.n == 3780


def test_lag0_symmetry():
    rng = np.random.default_rng(9)
    a = ReturnSeries(dates_n(60), rng.normal(size=60))
    b = ReturnSeries(dates_n(60), rng.normal(size=60))
    assert cross_correlation_report(a, b).lag0_corr == pytest.approx(
        cross_correlation_report(b, a).lag0_corr, abs=1e-15
    )


def test_white_noise_rarely_significant():
    n, hits, trials = 1000, 0, 200
    for seed in range(trials):
        rng = np.random.default_rng(seed)
        a = ReturnSeries(dates_n(n), rng.normal(size=n))
        b = ReturnSeries(dates_n(n), rng.normal(size=n))
        report = cross_correlation_report(a, b, max_lag=1)
        if abs(report.lag0_corr) < 0.062:
            hits += 1
    assert 0.90 <= hits / trials <= 0.995


def test_autocorrelation_flagging():
    rng = np.random.default_rng(12)
    n = 500
    x = np.zeros(n)
    for t in range(1, n):
        x[t] = 0.8 * x[t - 1] + rng.normal()
    a = ReturnSeries(dates_n(n), x)
    b = ReturnSeries(dates_n(n), rng.normal(size=n))
    report = cross_correlation_report(a, b, max_lag=5)
    assert any(lag == 1 for lag, _rho in report.autocorr_flags["a"])
    assert not any(lag == 1 for lag, _rho in report.autocorr_flags["b"])


def test_short_series_error():
    a = ReturnSeries(dates_n(10), np.zeros(10))
    with pytest.raises(DataError, match="at least 30"):
        cross_correlation_report(a, a)


# ----------------------------------------------------------- distributions

def test_qq_identity_diagonal():
    rng = np.random.default_rng(21)
    a = ReturnSeries(dates_n(200), rng.normal(size=200))
    report = distribution_report(a, a, n_bins=20)
    for qa, qb in report.qq_points:
        assert qa == pytest.approx(qb, abs=1e-15)


def test_histograms_integrate_to_one():
    rng = np.random.default_rng(22)
    a = ReturnSeries(dates_n(300), rng.normal(size=300))
    b = ReturnSeries(dates_n(300), rng.normal(0.3, 2.0, size=300))
    report = distribution_report(a, b, n_bins=40)
    widths = np.diff(report.bin_edges)
    assert float((report.hist_a * widths).sum()) == pytest.approx(1.0, abs=1e-9)
    assert float((report.hist_b * widths).sum()) == pytest.approx(1.0, abs=1e-9)


def test_qq_shift_offset():
    rng = np.random.default_rng(23)
    values = rng.normal(size=150)
    a = ReturnSeries(dates_n(150), values)
    b = ReturnSeries(dates_n(150), values + 0.01)
    report = distribution_report(a, b, n_bins=10)
    for qa, qb in report.qq_points:
        assert qb - qa == pytest.approx(0.01, abs=1e-12)


# ------------------------------------------------------------------- io

def test_series_csv_round_trip(tmp_path):
    series = ReturnSeries(dates_n(5), np.array([0.1, -0.2, 0.0, 1.5, -0.5]))
    write_series_csv(series, tmp_path / "s.csv")
    loaded = read_series_csv(tmp_path / "s.csv")
    assert loaded.dates == series.dates
    assert np.array_equal(loaded.values, series.values)


def test_return_series_validation():
    with pytest.raises(DataError, match="strictly increasing"):
        ReturnSeries((date(2020, 1, 2), date(2020, 1, 2)), np.zeros(2))
    with pytest.raises(DataError, match="finite"):
        ReturnSeries(dates_n(2), np.array([0.0, np.inf]))
