"""Daily index returns, trailing gross-return windows, and replication diagnostics.

Index returns are buy-and-hold: positions are established at each rebalance
close with rank-day cap weights, then drift with member returns until the
next rebalance. A member with no return on a day is excluded from that day's
average and the surviving drifted weights renormalize, which also covers
delisted members (they simply never report again). Compounding the daily
series across one holding period therefore reproduces the weighted average
of member gross returns exactly, absent missing data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .market_data import BarTable
from .reconstitution import MembershipTimeline

logger = logging.getLogger(__name__)

DEFAULT_T3M_WINDOW = 63  # trading days standing in for three calendar months
DEFAULT_MAX_LAG = 20


@dataclass(frozen=True)
class ReturnSeries:
    """Aligned (date, value) series with strictly increasing dates."""

    dates: tuple[date, ...]
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        if len(self.dates) != len(vals):
            raise DataError("dates and values length mismatch")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("dates must be strictly increasing")
        if vals.size and not np.isfinite(vals).all():
            raise DataError("series values must be finite")

    def __len__(self) -> int:
        return len(self.dates)


def write_series_csv(series: ReturnSeries, path: str | Path) -> None:
    """Write `date,value` rows."""
    frame = pd.DataFrame(
        {"date": [d.isoformat() for d in series.dates], "value": series.values}
    )
    frame.to_csv(path, index=False, lineterminator="\n")


def read_series_csv(path: str | Path) -> ReturnSeries:
    """Read a `date,value` file written by `write_series_csv`."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"series file not found: {path}")
    frame = pd.read_csv(path)
    if list(frame.columns) != ["date", "value"]:
        raise DataError(f"{path}: expected header date,value")
    dates = tuple(date.fromisoformat(str(d)) for d in frame["date"])
    return ReturnSeries(dates=dates, values=frame["value"].to_numpy(dtype=float))


def align(a: ReturnSeries, b: ReturnSeries) -> tuple[list[date], np.ndarray, np.ndarray]:
    """Restrict two series to their common dates."""
    common = sorted(set(a.dates) & set(b.dates))
    idx_a = {d: i for i, d in enumerate(a.dates)}
    idx_b = {d: i for i, d in enumerate(b.dates)}
    av = np.array([a.values[idx_a[d]] for d in common])
    bv = np.array([b.values[idx_b[d]] for d in common])
    return common, av, bv


def index_daily_returns(
    timeline: MembershipTimeline, bars: BarTable, tier: str
) -> ReturnSeries:
    """Daily net returns of one tier's cap-weighted buy-and-hold portfolio.

    Returns accrue on trading days strictly after each snapshot's rebalance
    through (and including) the next one. Security-level starting weights
    split a company's tier weight by constituent cap shares.
    """
    cal = timeline.calendar
    out_dates: list[date] = []
    out_values: list[float] = []
    for snap in timeline.snapshots:
        members = snap.tier_members(tier)
        if not members:
            logger.warning("%s: no members in tier %s", snap.label, tier)
            continue
        permnos: list[int] = []
        weights: list[float] = []
        for member in members:
            w_company = member.weights[tier]
            for const in member.constituents:
                permnos.append(const.permno)
                weights.append(w_company * (const.cap / member.cap_at_rank))
        order = np.argsort(permnos, kind="stable")
        permnos = [permnos[i] for i in order]
        v = np.array([weights[i] for i in order], dtype=float)

        days = [
            d
            for d in cal.sessions(snap.effective_start, snap.effective_end)
            if d > snap.effective_start
        ]
        if not days:
            continue
        sub = bars.slice_range(days[0], days[-1])
        sub = sub[sub["permno"].isin(permnos)]
        ret_matrix = (
            sub.pivot_table(index="date", columns="permno", values="ret", dropna=False)
            .reindex(index=pd.to_datetime(days), columns=permnos)
            .to_numpy(dtype=float)
        )
        for day, row in zip(days, ret_matrix):
            has = ~np.isnan(row)
            denom = v[has].sum()
            if not has.any() or denom <= 0:
                logger.warning("no reporting members in %s on %s: series gap", tier, day)
                continue
            r_idx = float((v[has] * row[has]).sum() / denom)
            v[has] *= 1.0 + row[has]
            out_dates.append(day)
            out_values.append(r_idx)
    return ReturnSeries(dates=tuple(out_dates), values=np.array(out_values))


def t3m_gross_returns(series: ReturnSeries, window: int = DEFAULT_T3M_WINDOW) -> ReturnSeries:
    """Trailing gross return: product of (1 + r) over the last `window` days.

    Output is empty when the series is shorter than the window.
    """
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    n = len(series)
    if window > n:
        return ReturnSeries(dates=(), values=np.array([]))
    gross = 1.0 + series.values
    values = [math.prod(gross[i - window + 1 : i + 1]) for i in range(window - 1, n)]
    return ReturnSeries(dates=series.dates[window - 1 :], values=np.array(values))


def significance_limit(n: int) -> float:
    """Two-sided 5% significance threshold, 1.96/sqrt(n)."""
    if n <= 0:
        raise ConfigError(f"sample size must be positive, got {n}")
    return 1.96 / math.sqrt(n)


def _autocorrelation(x: np.ndarray, lag: int) -> float:
    centered = x - x.mean()
    denom = float((centered**2).sum())
    if denom == 0.0:
        return 0.0
    return float((centered[:-lag] * centered[lag:]).sum() / denom)


@dataclass
class CorrelationReport:
    """Lag-0 correlation with the autocorrelation precondition check."""

    lag0_corr: float
    n: int
    sig_limit: float
    autocorr_flags: dict[str, list[tuple[int, float]]]

    def to_dict(self) -> dict:
        return {
            "lag0_corr": self.lag0_corr,
            "n": self.n,
            "sig_limit": self.sig_limit,
            "autocorr_flags": {
                key: [{"lag": lag, "rho": rho} for lag, rho in flags]
                for key, flags in self.autocorr_flags.items()
            },
        }


def cross_correlation_report(
    a: ReturnSeries, b: ReturnSeries, max_lag: int = DEFAULT_MAX_LAG
) -> CorrelationReport:
    """Lag-0 correlation of two aligned series plus autocorrelation flags.

    Autocorrelations of each series at lags 1..max_lag are flagged when they
    exceed the 1.96/sqrt(n) limit; significant ones would make the lag-0
    correlation untrustworthy.
    """
    common, av, bv = align(a, b)
    n = len(common)
    if n < 30:
        raise DataError(f"need at least 30 common dates, got {n}")
    limit = significance_limit(n)
    corr = float(np.corrcoef(av, bv)[0, 1])
    flags: dict[str, list[tuple[int, float]]] = {"a": [], "b": []}
    for key, x in (("a", av), ("b", bv)):
        for lag in range(1, min(max_lag, n - 1) + 1):
            rho = _autocorrelation(x, lag)
            if abs(rho) > limit:
                flags[key].append((lag, rho))
    return CorrelationReport(lag0_corr=corr, n=n, sig_limit=limit, autocorr_flags=flags)


@dataclass
class DistributionReport:
    """Common-binning histograms and matched-quantile points for two series."""

    bin_edges: np.ndarray
    hist_a: np.ndarray
    hist_b: np.ndarray
    qq_points: list[tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "bin_edges": self.bin_edges.tolist(),
            "hist_a": self.hist_a.tolist(),
            "hist_b": self.hist_b.tolist(),
            "qq_points": [{"a": qa, "b": qb} for qa, qb in self.qq_points],
        }


def distribution_report(
    a: ReturnSeries, b: ReturnSeries, n_bins: int = 50
) -> DistributionReport:
    """Density histograms on shared bins plus a quantile-quantile point list.

    Quantiles are taken at k/(n+1); with equal-length series those are
    exactly the matched order statistics.
    """
    common, av, bv = align(a, b)
    if not common:
        raise DataError("series share no dates")
    edges = np.histogram_bin_edges(np.concatenate([av, bv]), bins=n_bins)
    hist_a, _ = np.histogram(av, bins=edges, density=True)
    hist_b, _ = np.histogram(bv, bins=edges, density=True)
    n = len(common)
    probs = np.arange(1, n + 1) / (n + 1)
    qa = np.quantile(av, probs, method="weibull")
    qb = np.quantile(bv, probs, method="weibull")
    return DistributionReport(
        bin_edges=edges,
        hist_a=hist_a,
        hist_b=hist_b,
        qq_points=list(zip(qa.tolist(), qb.tolist())),
    )
