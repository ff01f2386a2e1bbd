import itertools
import math

import numpy as np
import pytest

from riquant.assignment import CRE
from riquant.inference import AssumptionError, Plan, flip_for_lesser, pvalue_quantile, pvalue_sharp
from riquant.intervals import (
    QuantileEngine,
    band_all_quantiles,
    band_for,
    ci_count_lower,
    ci_quantile_lower,
    count_lower_direct,
    effect_range,
    max_effect_lower,
    range_from_limits,
    two_sided_band,
)
from riquant.oracle import brute_pvalue
from riquant.ranks import FIRST, TieMethod, stephenson, wilcoxon
from riquant.sim import ConstantEffect, NormalEffects, generate_population
from riquant.statistics import DifferenceInMeans, RankScore

EXACT = Plan.exact()


def _instance(rng, n_lo=4, n_hi=8):
    n = int(rng.integers(n_lo, n_hi + 1))
    mech = CRE(n, int(rng.integers(1, n)))
    st = RankScore(stephenson(n, int(rng.integers(2, min(4, n) + 1))), TieMethod.random(n, int(rng.integers(1000))))
    z = mech.sample(int(rng.integers(1 << 40)), 0)
    y = rng.integers(-3, 4, n).astype(float)
    return mech, st, z, y


def test_uninformative_ranks():
    mech, st = CRE(6, 2), RankScore(wilcoxon(6), FIRST)
    eng = QuantileEngine(mech, st, [1, 1, 0, 0, 0, 0], [5, 6, 1, 2, 3, 4], EXACT)
    for k in range(1, 5):
        assert ci_quantile_lower(eng, k, 0.1) == (-math.inf, False)


def test_nothing_rejected_gives_minus_infinity():
    mech, st = CRE(4, 2), RankScore(wilcoxon(4), FIRST)
    # p >= 1/6 > alpha everywhere
    eng = QuantileEngine(mech, st, [1, 1, 0, 0], [3, 4, 1, 2], EXACT)
    assert eng.lower_limit(4, 0.1) == (-math.inf, False)


def test_grid_inversion_oracle():
    rng = np.random.default_rng(42)
    mech = CRE(6, 3)
    for _ in range(2):
        st = RankScore(stephenson(6, 2), TieMethod.random(6, int(rng.integers(100))))
        z = mech.sample(int(rng.integers(1 << 30)), 0)
        y = np.round(rng.normal(size=6) * 2, 2)
        eng = QuantileEngine(mech, st, z, y, EXACT)
        alpha = 0.1
        for k in (5, 6):
            lim, _ = eng.lower_limit(k, alpha)
            diffs = np.subtract.outer(y, y)
            grid = np.arange(diffs.min() - 1, diffs.max() + 1, 1e-4)
            accepted = [c for c in grid if eng.p_value(k, c) > alpha]
            grid_inf = accepted[0] if accepted[0] > grid[0] else -math.inf
            if math.isinf(grid_inf):
                assert math.isinf(lim)
            else:
                assert abs(lim - grid_inf) <= 1e-4 + 1e-9


def test_inversion_correctness_and_candidate_completeness():
    rng = np.random.default_rng(7)
    alpha = 0.2
    for _ in range(10):
        mech, st, z, y = _instance(rng, 4, 7)
        eng = QuantileEngine(mech, st, z, y, EXACT)
        for k in range(1, eng.n + 1):
            lim, att = eng.lower_limit(k, alpha)
            cands = eng.candidates(k)
            if math.isfinite(lim):
                gap = np.diff(np.unique(np.r_[cands, lim])).min(initial=1.0)
                assert eng.p_value(k, lim + gap / 2) > alpha
                assert eng.p_value(k, lim - gap / 2) <= alpha
                assert att == (eng.p_value(k, lim) <= alpha)
        # p is a step function with jumps only at candidate points
        k = eng.n
        cands = eng.candidates(k)
        grid = np.linspace(cands.min() - 1, cands.max() + 1, 10_000)
        cell = np.searchsorted(cands, grid, side="left")
        on_point = np.isin(grid, cands)
        seen = {}
        for c, j, pt in zip(grid, cell, on_point):
            if pt:
                continue
            p = eng.p_value(k, c)
            assert seen.setdefault(j, p) == p


def test_band_monotone_in_k_and_alpha():
    rng = np.random.default_rng(11)
    for _ in range(15):
        mech, st, z, y = _instance(rng, 5, 8)
        eng = QuantileEngine(mech, st, z, y, EXACT)
        prev = None
        for alpha in (0.05, 0.1, 0.2, 0.4):
            band = band_all_quantiles(eng, alpha)
            assert (band.lower[1:] >= band.lower[:-1]).all()
            assert (band.lower[: eng.n - eng.m] == -math.inf).all()
            if prev is not None:
                assert (band.lower >= prev).all()
            prev = band.lower
            unpruned = band_all_quantiles(eng, alpha, prune=False)
            assert np.array_equal(band.lower, unpruned.lower)
            assert np.array_equal(band.lower_attained, unpruned.lower_attained)


def test_band_top_entry_is_max_effect_limit():
    rng = np.random.default_rng(1)
    mech, st, z, y = _instance(rng, 6, 6)
    eng = QuantileEngine(mech, st, z, y, EXACT)
    assert band_all_quantiles(eng, 0.2).lower[-1] == max_effect_lower(mech, st, z, y, 0.2, EXACT)[0]


def test_count_identity():
    rng = np.random.default_rng(5)
    for _ in range(40):
        mech, st, z, y = _instance(rng, 8, 8)
        eng = QuantileEngine(mech, st, z, y, EXACT)
        band = band_all_quantiles(eng, 0.2)
        for c in (-1.0, 0.0, 0.5, 2.0):
            direct = count_lower_direct(eng, c, 0.2)
            assert ci_count_lower(band, c).bound == direct
            kbar = max([k for k in range(1, 9) if eng.p_value(k, c) > 0.2], default=0)
            assert direct == 8 - kbar


def test_count_all_minus_infinity():
    mech, st = CRE(4, 2), RankScore(wilcoxon(4), FIRST)
    band = band_all_quantiles(QuantileEngine(mech, st, [1, 1, 0, 0], [3, 4, 1, 2], EXACT), 0.1)
    assert ci_count_lower(band, 0.0).bound == 0


def test_range_examples():
    r = range_from_limits(2.0, 5.0, 0.1)
    assert r.limit == 0 and not r.rejected
    r = range_from_limits(5.0, 2.0, 0.1)
    assert r.limit == 3 and r.rejected
    assert range_from_limits(-math.inf, 2.0, 0.1).limit == 0


def test_flipped_max_effect_is_min_effect_upper():
    """Upper limit for the smallest effect from the negated data agrees with a brute-force inversion."""
    rng = np.random.default_rng(9)
    mech = CRE(4, 2)
    alpha = 0.4
    for _ in range(20):
        st = RankScore(wilcoxon(4), TieMethod.random(4, int(rng.integers(50))))
        z = mech.sample(int(rng.integers(1 << 30)), 0)
        y = rng.integers(-3, 4, 4).astype(float)
        fz, fy = flip_for_lesser(z, y)
        upper = -max_effect_lower(mech, st, fz, fy, alpha, EXACT)[0]
        # all effects >= c is rejected iff the negated data reject "all effects <= -c"
        for c in np.arange(-8, 8.01, 0.25):
            p = brute_pvalue(mech, st, z, -y, delta=-c)
            if c < upper:
                assert p > alpha
            elif c > upper:
                assert p <= alpha


def test_effect_range_exhaustive_under_constant_effects():
    mech = CRE(8, 4)
    pop = generate_population(ConstantEffect(1.5), 8, 3)
    st = RankScore(stephenson(8, 3), TieMethod.random(8, 0))
    for alpha in (0.2, 0.4):
        rejected = 0
        total = 0
        for a, _ in mech.enumerate():
            rejected += effect_range(mech, st, a, pop.observe(a), alpha, EXACT).rejected
            total += 1
        assert rejected / total <= alpha


def test_two_sided_coverage_and_widths():
    mech = CRE(8, 4)
    pop = generate_population(NormalEffects(0.5, 1.0), 8, 4)
    tau = np.sort(pop.tau)
    st = RankScore(stephenson(8, 2), TieMethod.random(8, 1))
    alpha = 0.2
    covered = 0
    total = 0
    for a, _ in mech.enumerate():
        y = pop.observe(a)
        band = two_sided_band(mech, st, a, y, alpha, EXACT)
        lo_ok = (tau > band.lower) | ((tau == band.lower) & ~band.lower_attained)
        hi_ok = (tau < band.upper) | ((tau == band.upper) & ~band.upper_attained)
        covered += bool(lo_ok.all() and hi_ok.all())
        total += 1
        one = band_all_quantiles(QuantileEngine(mech, st, a, y, EXACT), alpha)
        assert (one.lower >= band.lower).all()
        assert (band.lower <= band.upper).all()
    assert covered / total >= 1 - alpha


def test_symmetric_sharp_null_band_contains_zero_in_the_middle():
    mech = CRE(10, 5)
    st = RankScore(wilcoxon(10), FIRST)
    z = np.array([1, 0] * 5)
    y = np.array([-2.0, 2.0, -1.0, 1.0, 0.5, -0.5, 3.0, -3.0, 0.1, -0.1])
    band = two_sided_band(mech, st, z, y, 0.2, EXACT)
    for k in (5, 6):
        assert band.lower[k - 1] <= 0 <= band.upper[k - 1]


def test_constant_effect_band_shape():
    n = 120
    pop = generate_population(NormalEffects(2.0, 0.0), n, 0)
    mech = CRE(n, 60)
    st = RankScore(stephenson(n, 10), TieMethod.random(n, 0))
    z = mech.sample(1, 0)
    eng = QuantileEngine(mech, st, z, pop.observe(z), Plan.monte_carlo(2000, 3))
    band = band_all_quantiles(eng, 0.1)
    finite = np.isfinite(band.lower)
    assert 0 < finite.sum() < n
    assert 1.0 < band.lower[-1] <= 2.0
    assert ci_count_lower(band, 0.0).bound > 0


def test_non_rank_statistic_band_only_bounds_extremes():
    mech = CRE(8, 4)
    z = np.array([1, 1, 1, 1, 0, 0, 0, 0])
    y = np.array([5.0, 6.0, 7.0, 8.0, 1.0, 2.0, 3.0, 4.0])
    dim = DifferenceInMeans()
    band = band_for(mech, dim, z, y, 0.1, EXACT)
    assert np.isinf(band.lower[:-1]).all() and np.isfinite(band.lower[-1])
    # bisection limit agrees with a direct check of the p-value function
    lim = band.lower[-1]
    assert pvalue_sharp(mech, dim, z, y, lim + 1e-6, EXACT).p > 0.1
    assert pvalue_sharp(mech, dim, z, y, lim - 1e-6, EXACT).p <= 0.1
    with pytest.raises(AssumptionError):
        QuantileEngine(mech, dim, z, y, EXACT)


def test_engine_matches_pvalue_quantile():
    rng = np.random.default_rng(4)
    for _ in range(50):
        mech, st, z, y = _instance(rng)
        eng = QuantileEngine(mech, st, z, y, EXACT)
        for k, c in itertools.product(range(1, eng.n + 1), (-1.5, 0.0, 2.0)):
            assert eng.p_value(k, c) == pvalue_quantile(mech, st, z, y, k, c, EXACT).p
