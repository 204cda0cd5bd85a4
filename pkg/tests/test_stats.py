"""Bootstrap testing and multiple-testing adjustment checks.

Expected values follow the oracle-first rule: hand-evaluated statistics,
an independent plotting-position quantile, and an independent step-up
rejection procedure, all frozen here before the implementations ran.
"""

import math
import statistics
from fractions import Fraction

import numpy as np
import pytest

from capdex.errors import ConfigError, DataError
from capdex.stats import (
    bh_adjust,
    bootstrap_test,
    fcr_adjusted_cis,
    percentile_ci,
    welch_t,
)


# ---------------------------------------------------------------- welch_t

def test_welch_identical_samples_is_zero():
    assert welch_t([1, 2, 3], [1, 2, 3]).t_obs == 0.0


def test_welch_hand_value():
    stat = welch_t([2, 4], [1, 3])
    assert stat.t_obs == pytest.approx(1 / math.sqrt(2), abs=1e-12)
    assert stat.var_z == pytest.approx(2.0) and stat.var_y == pytest.approx(2.0)


def test_welch_antisymmetry():
    z, y = [2.0, 4.0, 7.0], [1.0, 3.0]
    assert welch_t(z, y).t_obs == pytest.approx(-welch_t(y, z).t_obs, abs=1e-15)


def test_welch_matches_textbook_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        z = rng.normal(0, 1, size=int(rng.integers(2, 30))).tolist()
        y = rng.normal(0.5, 2, size=int(rng.integers(2, 30))).tolist()
        expected = (statistics.fmean(z) - statistics.fmean(y)) / math.sqrt(
            statistics.variance(z) / len(z) + statistics.variance(y) / len(y)
        )
        assert welch_t(z, y).t_obs == pytest.approx(expected, abs=1e-12)


def test_welch_degenerate_errors():
    with pytest.raises(DataError, match="degenerate"):
        welch_t([5.0, 5.0], [5.0, 5.0])
    with pytest.raises(DataError, match="at least 2"):
        welch_t([1.0], [1.0, 2.0])


# ---------------------------------------------------------- bootstrap_test

def test_bootstrap_identical_samples():
    z = [0.1, 1.7, 2.9, 4.3, 6.2]
    result = bootstrap_test(z, list(z), n_reps=2000, seed=3)
    assert result.t_obs == 0.0
    # Only resampled statistics exactly at zero land inside [-0, 0].
    assert result.p_two_tailed > 0.9
    inside = int((np.abs(result.boot_ts) <= abs(result.t_obs)).sum())
    assert result.p_two_tailed == pytest.approx(1 - inside / result.n_reps, abs=1e-15)


def test_bootstrap_deterministic():
    z = [1.0, 2.0, 3.5, 0.2]
    y = [4.0, 2.2, 5.1]
    a = bootstrap_test(z, y, n_reps=500, seed=42)
    b = bootstrap_test(z, y, n_reps=500, seed=42)
    assert a.t_obs == b.t_obs
    assert a.p_two_tailed == b.p_two_tailed
    assert np.array_equal(a.boot_ts, b.boot_ts)
    c = bootstrap_test(z, y, n_reps=500, seed=43)
    assert not np.array_equal(a.boot_ts, c.boot_ts)


def test_bootstrap_relabeling_invariance():
    # Resampling runs on the sorted pooled values, so shuffling observations
    # inside each sample changes nothing at all.
    z = [3.1, 0.4, 2.2, 5.9]
    y = [1.5, 4.4, 2.8]
    a = bootstrap_test(z, y, n_reps=400, seed=9)
    b = bootstrap_test(z[::-1], [y[1], y[0], y[2]], n_reps=400, seed=9)
    assert a.p_two_tailed == b.p_two_tailed
    assert np.array_equal(a.boot_ts, b.boot_ts)


def test_bootstrap_redraws_degenerate_resamples():
    # Tiny pool with heavy ties: degenerate (zero-variance) resamples occur
    # and must be redrawn, never emitted.
    result = bootstrap_test([1.0, 1.0], [1.0, 2.0], n_reps=300, seed=5)
    assert result.redraws > 0
    assert np.isfinite(result.boot_ts).all()


def test_bootstrap_constant_pool_errors():
    with pytest.raises(DataError):
        bootstrap_test([2.0, 2.0], [2.0, 2.0], n_reps=10, seed=0)


def test_bootstrap_p_formula_consistency():
    result = bootstrap_test([1.0, 3.0, 2.0], [4.0, 6.0, 5.0], n_reps=800, seed=1)
    inside = int((np.abs(result.boot_ts) <= abs(result.t_obs)).sum())
    assert result.p_two_tailed == pytest.approx(1 - inside / 800, abs=1e-15)


# ----------------------------------------------------------- percentile_ci

def _oracle_quantile(xs, p):
    """k/(n+1) plotting positions with linear interpolation, by hand."""
    xs = sorted(xs)
    n = len(xs)
    h = p * (n + 1)
    h = min(max(h, 1.0), float(n))
    i = int(math.floor(h))
    frac = h - i
    if i >= n:
        return xs[-1]
    return xs[i - 1] + frac * (xs[i] - xs[i - 1])


def test_percentile_ci_rank_rule():
    boot = list(range(1, 1001))
    lo, hi = percentile_ci(boot, alpha=0.05)
    assert lo == pytest.approx(25.025, abs=1e-9)
    assert hi == pytest.approx(975.975, abs=1e-9)
    assert lo == pytest.approx(_oracle_quantile(boot, 0.025), abs=1e-12)
    assert hi == pytest.approx(_oracle_quantile(boot, 0.975), abs=1e-12)


def test_percentile_ci_matches_oracle_on_random_input():
    rng = np.random.default_rng(2)
    for _ in range(20):
        boot = rng.normal(size=int(rng.integers(3, 200)))
        alpha = float(rng.uniform(0.01, 0.5))
        lo, hi = percentile_ci(boot, alpha)
        assert lo == pytest.approx(_oracle_quantile(boot, alpha / 2), abs=1e-12)
        assert hi == pytest.approx(_oracle_quantile(boot, 1 - alpha / 2), abs=1e-12)


def test_percentile_ci_symmetry():
    boot = [-5.0, -2.0, -1.0, 0.0, 1.0, 2.0, 5.0]
    lo, hi = percentile_ci(boot, alpha=0.1)
    assert lo == pytest.approx(-hi, abs=1e-12)


def test_percentile_ci_single_element():
    assert percentile_ci([3.25], alpha=0.05) == (3.25, 3.25)


def test_percentile_ci_validation():
    with pytest.raises(DataError):
        percentile_ci([], 0.05)
    with pytest.raises(ConfigError):
        percentile_ci([1.0], 1.5)


# -------------------------------------------------------------- bh_adjust

def _oracle_stepup_rejections(p_values, alpha):
    """Independent step-up procedure: largest k with p_(k) <= k*alpha/m."""
    m = len(p_values)
    order = sorted(range(m), key=lambda i: (p_values[i], i))
    k = 0
    for j, idx in enumerate(order, start=1):
        if p_values[idx] <= j * alpha / m:
            k = j
    rejected = [False] * m
    for idx in order[:k]:
        rejected[idx] = True
    return rejected, k


def test_bh_single_hypothesis_identity():
    adj = bh_adjust([0.05], alpha=0.05)
    assert adj.adjusted_p == [0.05]
    assert adj.k == 1 and adj.alpha_prime == 0.05


def test_bh_hand_values():
    adj = bh_adjust([0.01, 0.02, 0.03, 0.04], alpha=0.05)
    assert adj.adjusted_p == pytest.approx([0.04, 0.04, 0.04, 0.04], abs=1e-12)
    assert adj.k == 4

    adj = bh_adjust([0.005, 0.05], alpha=0.05)
    assert adj.adjusted_p == pytest.approx([0.01, 0.05], abs=1e-12)
    assert adj.k == 2


def test_bh_adjusted_at_least_raw_and_monotone():
    rng = np.random.default_rng(4)
    for _ in range(100):
        p = rng.uniform(0, 1, size=int(rng.integers(1, 20))).tolist()
        adj = bh_adjust(p, alpha=0.05)
        assert all(a >= r - 1e-15 for a, r in zip(adj.adjusted_p, p))
        order = np.argsort(p, kind="stable")
        adj_sorted = np.array(adj.adjusted_p)[order]
        assert (np.diff(adj_sorted) >= -1e-15).all()


def test_bh_rejections_match_stepup_oracle():
    rng = np.random.default_rng(8)
    for _ in range(300):
        m = int(rng.integers(1, 21))
        scale = float(rng.choice([0.05, 0.3, 1.0]))
        p = (rng.uniform(0, scale, size=m)).round(3).tolist()
        adj = bh_adjust(p, alpha=0.05)
        expected, k = _oracle_stepup_rejections(p, 0.05)
        assert adj.rejected() == expected
        assert adj.k == k


def test_bh_rejects_bad_pvalues():
    with pytest.raises(DataError):
        bh_adjust([0.5, 1.2])


# -------------------------------------------------------- fcr_adjusted_cis

def test_fcr_single_significant():
    boot = np.linspace(-1, 1, 101)
    cis = fcr_adjusted_cis([boot], [0.01], alpha=0.05)
    assert cis[0].adjusted and cis[0].coverage == pytest.approx(0.95)
    assert (cis[0].lo, cis[0].hi) == percentile_ci(boot, 0.05)


def test_fcr_alpha_prime_case():
    # k = 3 of m = 12 discoveries at alpha = 0.05: coverage level 0.0125.
    assert Fraction(3, 12) * Fraction(5, 100) == Fraction(1, 80)
    p = [0.001, 0.002, 0.003] + [0.9] * 9
    boots = [np.linspace(-2, 2, 401)] * 12
    adj = bh_adjust(p, alpha=0.05)
    assert adj.k == 3
    assert adj.alpha_prime == pytest.approx(0.0125, abs=1e-15)
    cis = fcr_adjusted_cis(boots, p, alpha=0.05)
    assert all(c.adjusted for c in cis[:3])
    assert not any(c.adjusted for c in cis[3:])
    assert cis[0].coverage == pytest.approx(1 - 0.0125, abs=1e-15)


def test_fcr_no_discoveries():
    p = [0.8, 0.9]
    boots = [np.linspace(-1, 1, 11)] * 2
    cis = fcr_adjusted_cis(boots, p, alpha=0.05)
    assert not any(c.adjusted for c in cis)
    assert all(c.coverage == pytest.approx(0.95) for c in cis)


def test_fcr_adjusted_never_narrower():
    rng = np.random.default_rng(6)
    boots = [np.sort(rng.normal(size=500)) for _ in range(6)]
    p = [0.001, 0.002, 0.3, 0.4, 0.9, 0.01]
    cis = fcr_adjusted_cis(boots, p, alpha=0.05)
    for ci, boot in zip(cis, boots):
        lo_plain, hi_plain = percentile_ci(boot, 0.05)
        assert ci.lo <= lo_plain + 1e-12
        assert ci.hi >= hi_plain - 1e-12
