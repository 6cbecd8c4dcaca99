import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from immunebranch import analytics as an
from immunebranch.analytics import DomainError, ModelParams
from immunebranch.engine import StopRule
from immunebranch.montecarlo import (
    Estimate,
    compare_thinning,
    estimate_conditioned_mean,
    estimate_extinction_pair,
    estimate_mean_progeny,
    estimate_survival,
    ks_two_sample,
    run_batch,
)


def test_estimate_invariants():
    e = Estimate.of_sample(np.array([1.0, 2.0, 3.0, 4.0]), 5)
    assert e.mean == 2.5 and e.n_used == 4 and e.n_reps == 5
    assert e.ci95[0] < e.mean < e.ci95[1]
    assert e.ci95[1] - e.mean == pytest.approx(1.96 * e.stderr)
    p = Estimate.of_proportion(0, 100)
    assert p.mean == 0.0 and p.stderr == 0.0
    assert Estimate.of_sample(np.array([]), 10).n_used == 0


@settings(max_examples=50, deadline=None)
@given(hits=st.integers(0, 500), extra=st.integers(1, 500))
def test_proportion_bounds(hits, extra):
    e = Estimate.of_proportion(hits, hits + extra)
    assert 0.0 <= e.mean <= 1.0
    assert e.stderr <= 0.5 / math.sqrt(hits + extra) + 1e-15


def test_batch_is_worker_count_invariant():
    params = ModelParams.mixed(0.9, 0.6, 0.4)
    stop = StopRule(50.0, 500, 10**5)
    a = run_batch(params, stop, 3000, seed=4, workers=1)
    for w in (2, 4, 8):
        b = run_batch(params, stop, 3000, seed=4, workers=w)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


def test_batch_paths_give_independent_streams():
    params = ModelParams.standard(0.2, 0.5)
    a = run_batch(params, StopRule(), 500, seed=4, path=(1,))
    b = run_batch(params, StopRule(), 500, seed=4, path=(2,))
    assert not np.array_equal(a.N, b.N)


@pytest.mark.parametrize("lam, target", [(0.1, 1.127017), (0.2, 1.381966)])
def test_mean_progeny_subcritical(lam, target):
    rep = estimate_mean_progeny(ModelParams.standard(lam, 1.0), 20_000, seed=1)
    assert rep.N.within(target)
    assert rep.N.aborted_fraction == 0.0


def test_mean_progeny_grid_against_closed_form():
    misses = 0
    points = [(f * an.critical_lambda(r), r) for r in (0.2, 0.5, 0.8) for f in (0.3, 0.5, 0.7)]
    for i, (lam, r) in enumerate(points):
        rep = estimate_mean_progeny(ModelParams.standard(lam, r), 10_000, seed=100 + i)
        misses += not rep.N.within(an.expected_total_progeny(lam, r))
    assert misses <= 1


def test_sterile_ratio():
    rep = estimate_mean_progeny(ModelParams.mixed(0.5, 0.8, 0.5), 20_000, seed=2)
    assert rep.sterile_ratio.within(2 / 3)
    nv, s, _ = an.expected_counts_mixed(0.5, 0.8, 0.5)
    assert rep.S.within(s, k=4)


def test_supercritical_progeny_flags_infinite_target():
    with pytest.warns(RuntimeWarning):
        rep = estimate_mean_progeny(ModelParams.standard(0.6, 1.0), 200, seed=3, stop=StopRule.progeny_only(2000))
    assert rep.infinite_target
    assert rep.N.aborted_fraction > 0


def test_conditioned_mean():
    e = estimate_conditioned_mean(1.0, 0.1, 1.0, 20_000, seed=5)
    assert e.within(an.conditioned_mean_progeny(1.0, 0.1, 1.0))
    e0 = estimate_conditioned_mean(0.0, 0.3, 0.5, 500, seed=5)
    assert e0.mean == 1.0 and e0.stderr == 0.0
    with pytest.raises(DomainError):
        estimate_conditioned_mean(1.0, 0.5, 1.0, 100)


def test_survival_examples():
    low = estimate_survival(ModelParams.standard(0.05, 1.0), n_reps=10_000, seed=6)
    assert low.ci95[1] < 0.01
    high = estimate_survival(ModelParams.standard(1.5, 1.0), n_reps=2_000, seed=6)
    assert high.mean > 0.05
    outside = estimate_survival(ModelParams.mixed(1.0, 0.95, 0.2), n_reps=5_000, seed=6)
    assert outside.ci95[1] < 0.01


def test_survival_is_monotone_in_lambda():
    stop = StopRule(100.0, 1000)
    ests = [estimate_survival(ModelParams.standard(lam, 0.5), stop, 2000, seed=7) for lam in (0.6, 0.9, 1.3, 2.0)]
    for a, b in zip(ests, ests[1:]):
        assert b.mean >= a.mean - 3 * math.hypot(a.stderr, b.stderr)


def test_extinction_pair():
    pair = estimate_extinction_pair(0.05, 0.5, StopRule(), 2000, seed=8)
    assert pair.q_hat.mean == 1.0 and pair.q_star_hat.mean == 1.0 and pair.relation_residual == 0.0
    pair = estimate_extinction_pair(1.2, 0.5, StopRule(100.0, 1000), 4000, seed=8)
    assert abs(pair.relation_residual) < 3 * pair.residual_stderr


@settings(max_examples=30, deadline=None)
@given(
    x=st.lists(st.integers(0, 30), min_size=5, max_size=200),
    y=st.lists(st.integers(0, 30), min_size=5, max_size=200),
)
def test_ks_distance_matches_scipy(x, y):
    d, p = ks_two_sample(np.array(x), np.array(y))
    ref = stats.ks_2samp(x, y, method="asymp")
    assert d == pytest.approx(ref.statistic, abs=1e-12)
    assert 0.0 <= p <= 1.0


def test_thinning_small():
    rep = compare_thinning(0.4, 1.0, 0.5, 20_000, seed=9)
    assert (rep.lambda_eff, rep.r_eff) == pytest.approx((0.2, 1.0))
    assert rep.mean_gap_sigmas < 3
    assert rep.ks_pvalue > 0.001
