"""Two-sample inference: pooled bootstrap testing and FDR adjustments.

The hypothesis machinery is deliberately bootstrap-only. The observed
statistic is an unequal-variance, unequal-size two-sample statistic; its
null distribution comes from resampling the pooled observations, and the
two-tailed p-value counts resampled statistics inside [-|t_obs|, |t_obs|]
(ties inclusive). Percentile intervals use k/(n+1) plotting positions with
linear interpolation; the same quantile rule is used everywhere in the
package.

All randomness flows through an explicitly seeded generator, and the pooled
sample is sorted before resampling so results depend only on the sample
contents, never on observation order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_BOOTSTRAP_REPS = 10_000


@dataclass(frozen=True)
class WelchStat:
    """Observed two-sample statistic with the moments behind it."""

    t_obs: float
    n: int
    m: int
    mean_z: float
    mean_y: float
    var_z: float
    var_y: float


def welch_t(z, y) -> WelchStat:
    """Unequal-variance, unequal-size two-sample statistic.

    t = (mean(z) - mean(y)) / sqrt(var(z)/n + var(y)/m) with (n-1)- and
    (m-1)-denominator sample variances. Requires n, m >= 2 and at least one
    nonzero variance.
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = len(z), len(y)
    if n < 2 or m < 2:
        raise DataError(f"welch_t needs at least 2 observations per sample (got {n}, {m})")
    mean_z, mean_y = float(z.mean()), float(y.mean())
    var_z = float(z.var(ddof=1))
    var_y = float(y.var(ddof=1))
    denom = var_z / n + var_y / m
    if denom == 0.0:
        raise DataError("degenerate samples: both variances are zero")
    t = (mean_z - mean_y) / np.sqrt(denom)
    return WelchStat(t_obs=float(t), n=n, m=m, mean_z=mean_z, mean_y=mean_y,
                     var_z=var_z, var_y=var_y)


@dataclass
class BootstrapResult:
    """Observed statistic plus its resampled null distribution."""

    t_obs: float
    boot_ts: np.ndarray
    p_two_tailed: float
    mean_t: float
    n_reps: int
    seed: int
    redraws: int = 0

    def to_dict(self) -> dict:
        return {
            "t_obs": self.t_obs,
            "p_two_tailed": self.p_two_tailed,
            "mean_t": self.mean_t,
            "n_reps": self.n_reps,
            "seed": self.seed,
            "redraws": self.redraws,
        }


def _row_stats(samples: np.ndarray, n: int, m: int):
    zs, ys = samples[:, :n], samples[:, n:]
    mz, my = zs.mean(axis=1), ys.mean(axis=1)
    vz, vy = zs.var(axis=1, ddof=1), ys.var(axis=1, ddof=1)
    denom = vz / n + vy / m
    return mz - my, denom


def bootstrap_test(
    z,
    y,
    n_reps: int = DEFAULT_BOOTSTRAP_REPS,
    seed: int = 0,
) -> BootstrapResult:
    """Pooled-resampling test of whether z and y share a distribution.

    Each repetition draws n+m observations with replacement from the pooled
    sample; the first n act as z*, the rest as y*. Resamples whose statistic
    is undefined (both variances zero) are redrawn and counted. The result is
    bit-identical for identical (z, y, n_reps, seed).
    """
    if n_reps < 1:
        raise ConfigError(f"n_reps must be >= 1, got {n_reps}")
    obs = welch_t(z, y)
    n, m = obs.n, obs.m
    pooled = np.sort(np.concatenate([np.asarray(z, float), np.asarray(y, float)]))
    if pooled.min() == pooled.max():
        raise DataError("degenerate pooled sample: all observations identical")

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n + m, size=(n_reps, n + m))
    diffs, denoms = _row_stats(pooled[idx], n, m)
    redraws = 0
    bad = denoms == 0.0
    while bad.any():
        redraws += int(bad.sum())
        idx_new = rng.integers(0, n + m, size=(int(bad.sum()), n + m))
        diffs[bad], denoms[bad] = _row_stats(pooled[idx_new], n, m)
        bad = denoms == 0.0
    boot_ts = diffs / np.sqrt(denoms)

    inside = np.abs(boot_ts) <= abs(obs.t_obs)
    p = 1.0 - inside.sum() / n_reps
    return BootstrapResult(
        t_obs=obs.t_obs,
        boot_ts=boot_ts,
        p_two_tailed=float(p),
        mean_t=float(boot_ts.mean()),
        n_reps=n_reps,
        seed=seed,
        redraws=redraws,
    )


def percentile_ci(boot_ts, alpha: float) -> tuple[float, float]:
    """Percentile interval of a bootstrap distribution at coverage 1 - alpha.

    Empirical quantiles at alpha/2 and 1 - alpha/2 using k/(n+1) plotting
    positions with linear interpolation.
    """
    ts = np.asarray(boot_ts, dtype=float)
    if ts.size == 0:
        raise DataError("percentile_ci needs a nonempty bootstrap distribution")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    lo, hi = np.quantile(ts, [alpha / 2.0, 1.0 - alpha / 2.0], method="weibull")
    return float(lo), float(hi)


@dataclass
class MultipleTestingAdjustment:
    """Step-up FDR adjustment over one family of p-values."""

    raw_p: list[float]
    adjusted_p: list[float]
    alpha: float
    k: int
    alpha_prime: float

    def rejected(self) -> list[bool]:
        """Per-hypothesis rejection at level alpha (adjusted p <= alpha)."""
        return [p <= self.alpha for p in self.adjusted_p]


def bh_adjust(raw_p, alpha: float = 0.05) -> MultipleTestingAdjustment:
    """Step-up false-discovery-rate adjustment of a p-value family.

    Adjusted values are min(min_{j>=i} m*p_(j)/j, 1) over the sorted family;
    k is the largest sorted index with p_(k) <= k*alpha/m (0 when none), and
    alpha_prime = (k/m)*alpha feeds the adjusted confidence intervals.
    """
    p = np.asarray(raw_p, dtype=float)
    if p.size and (np.isnan(p).any() or p.min() < 0.0 or p.max() > 1.0):
        raise DataError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return MultipleTestingAdjustment([], [], alpha, 0, 0.0)
    order = np.argsort(p, kind="stable")
    sorted_p = p[order]
    scaled = m * sorted_p / np.arange(1, m + 1)
    adj_sorted = np.minimum(np.minimum.accumulate(scaled[::-1])[::-1], 1.0)
    adjusted = np.empty(m, dtype=float)
    adjusted[order] = adj_sorted

    passing = np.nonzero(sorted_p <= np.arange(1, m + 1) * alpha / m)[0]
    k = int(passing[-1]) + 1 if passing.size else 0
    return MultipleTestingAdjustment(
        raw_p=p.tolist(),
        adjusted_p=adjusted.tolist(),
        alpha=alpha,
        k=k,
        alpha_prime=(k / m) * alpha,
    )


@dataclass(frozen=True)
class FcrInterval:
    """Confidence interval for one test after the family-wide adjustment."""

    index: int
    lo: float
    hi: float
    coverage: float
    adjusted: bool  # False: test not significant, interval left at 1 - alpha


def fcr_adjusted_cis(boot_ts_list, raw_p, alpha: float = 0.05) -> list[FcrInterval]:
    """Coverage-adjusted percentile intervals for a family of bootstrap tests.

    Significant tests (after bh_adjust) get intervals at coverage
    1 - alpha_prime with alpha_prime = (k/m)*alpha; the rest keep the
    unadjusted 1 - alpha interval and are flagged.
    """
    if len(boot_ts_list) != len(raw_p):
        raise ConfigError("boot_ts_list and raw_p lengths differ")
    adj = bh_adjust(raw_p, alpha)
    rejected = adj.rejected()
    out = []
    for i, ts in enumerate(boot_ts_list):
        if rejected[i] and adj.k > 0:
            lo, hi = percentile_ci(ts, adj.alpha_prime)
            out.append(FcrInterval(i, lo, hi, 1.0 - adj.alpha_prime, True))
        else:
            lo, hi = percentile_ci(ts, alpha)
            out.append(FcrInterval(i, lo, hi, 1.0 - alpha, False))
    return out
