import io
import json
import math
from collections import deque

import numpy as np
import pytest
from scipy import stats

from immunebranch import analytics as an
from immunebranch._kernel import run_kernel
from immunebranch.analytics import ModelParams, Variant
from immunebranch.engine import (
    Episode,
    EpisodeOutcome,
    PathogenRecord,
    StopRule,
    TraceEvent,
    TypeRecord,
    Verdict,
    run_episode,
    simulate,
    validate_genealogy,
    write_trace,
)
from immunebranch.streams import episode_rng, stream_key

PROGENY = StopRule.progeny_only(1_000_000)
VARIANT_CODE = {Variant.STANDARD: 0, Variant.STAR: 1, Variant.MIXED: 2, Variant.CONDITIONED: 3}


def episodes(params, n, seed=0, stop=PROGENY):
    key = stream_key(seed)
    return [simulate(params, stop, episode_rng(key, i)) for i in range(n)]


def test_determinism():
    params = ModelParams.mixed(0.8, 0.6, 0.5)
    a = run_episode(params, StopRule(), 11)
    b = run_episode(params, StopRule(), 11)
    assert a == b
    assert run_episode(params, StopRule(), 12) != a or a.total_progeny_N == 1


def test_star_with_zero_clock_dies_at_once():
    # find a seed whose first coin sends the root clock to 0
    params = ModelParams.star(2.0, 0.3)
    key = stream_key(0)
    for i in range(50):
        if not episode_rng(key, i).random() < 0.3:
            ep = simulate(params, PROGENY, episode_rng(key, i))
            assert ep.outcome.verdict is Verdict.EXTINCT
            assert ep.outcome.total_progeny_N == 1
            assert ep.outcome.extinction_time == 0.0
            return
    pytest.fail("no zero-clock root found")


def test_conditioned_zero_time_has_single_individual():
    for ep in episodes(ModelParams.conditioned(0.9, 1.0, 0.0), 200):
        assert ep.outcome.total_progeny_N == 1
        assert ep.outcome.extinction_time == 0.0


def test_deep_subcritical_always_dies():
    for ep in episodes(ModelParams.standard(0.1, 1.0), 500, stop=StopRule()):
        assert ep.outcome.verdict is Verdict.EXTINCT


def test_mixed_with_p_one_equals_standard():
    key = stream_key(5)
    std = ModelParams.standard(0.3, 0.6)
    mix = ModelParams(0.3, 0.6, 1.0, Variant.MIXED)
    for i in range(200):
        assert simulate(std, PROGENY, episode_rng(key, i)).outcome == simulate(mix, PROGENY, episode_rng(key, i)).outcome


@pytest.mark.parametrize(
    "params",
    [
        ModelParams.standard(0.9, 0.5),
        ModelParams.star(0.9, 0.5),
        ModelParams.mixed(1.2, 0.5, 0.4),
        ModelParams.conditioned(0.2, 0.7, 3.0),
    ],
)
def test_kernel_matches_python_engine(params):
    stop = StopRule(30.0, 500, 5000)
    key = stream_key(9)
    for i in range(150):
        py = simulate(params, stop, episode_rng(key, i), record=False).outcome
        v, n, s, ext, peak, types = run_kernel(
            episode_rng(key, i), VARIANT_CODE[params.variant], params.lam, params.r, params.p,
            params.t or 0.0, stop.time_horizon, stop.population_cap, stop.progeny_cap,
        )
        assert (int(py.verdict), py.total_progeny_N, py.sterile_S, py.peak_population, py.types_created) == (
            v, n, s, peak, types,
        )
        if py.extinction_time is None:
            assert math.isnan(ext)
        else:
            assert py.extinction_time == ext


def test_stop_rules():
    ep = simulate(ModelParams.standard(2.0, 1.0), StopRule(1e9, 50, 10**9), episode_rng(stream_key(1), 3))
    assert ep.outcome.verdict in (Verdict.CENSORED_SURVIVED, Verdict.EXTINCT)
    hit = [
        simulate(ModelParams.standard(2.0, 1.0), StopRule(1e9, 10**9, 40), episode_rng(stream_key(1), i)).outcome
        for i in range(100)
    ]
    assert any(o.verdict is Verdict.ABORTED_PROGENY_CAP and o.total_progeny_N == 40 for o in hit)
    with pytest.raises(an.DomainError):
        StopRule(time_horizon=0.0)


# ---------------------------------------------------------------- genealogy

@pytest.mark.parametrize(
    "params",
    [ModelParams.standard(0.9, 0.5), ModelParams.mixed(1.1, 0.6, 0.4), ModelParams.star(0.8, 0.3)],
)
def test_real_traces_validate(params):
    for ep in episodes(params, 100, stop=StopRule(20.0, 2000, 20000)):
        assert validate_genealogy(ep) == []


def _fixture(types, pathogens, events=()):
    outcome = EpisodeOutcome(Verdict.EXTINCT, len(pathogens), len(pathogens), 0, 2.0, 1, len(types))
    return Episode(ModelParams.standard(0.5, 1.0), StopRule(), outcome, list(types), list(pathogens), list(events))


def test_ancestral_order_violation():
    ep = _fixture(
        [TypeRecord(0, None, 2.0, 2.0), TypeRecord(1, 0, 1.5, -0.5)],
        [PathogenRecord(0, 0, 0.0), PathogenRecord(1, 1, 1.0, parent_id=0)],
    )
    kinds = [v.kind for v in validate_genealogy(ep)]
    assert kinds == ["AncestralOrder"]


def test_posthumous_birth_violation():
    ep = _fixture(
        [TypeRecord(0, None, 1.0, 1.0)],
        [PathogenRecord(0, 0, 0.0), PathogenRecord(1, 0, 1.2, parent_id=0)],
    )
    kinds = [v.kind for v in validate_genealogy(ep)]
    assert kinds == ["PosthumousBirth"]


def test_incomplete_removal_violation():
    ep = _fixture(
        [TypeRecord(0, None, 1.0, 1.0)],
        [PathogenRecord(0, 0, 0.0), PathogenRecord(1, 0, 0.5, parent_id=0)],
        [TraceEvent(1.0, "death", None, 0, removed=1)],
    )
    assert [v.kind for v in validate_genealogy(ep)] == ["IncompleteRemoval"]


def test_trace_dump_round_trips():
    ep = episodes(ModelParams.standard(0.9, 0.5), 1, seed=3, stop=StopRule(10.0, 200, 2000))[0]
    buf = io.StringIO()
    write_trace(ep, buf)
    lines = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert len(lines) == len(ep.events)
    births = [x for x in lines if x["kind"] == "birth"]
    assert len(births) == ep.outcome.total_progeny_N - 1
    assert all(a["t"] <= b["t"] for a, b in zip(lines, lines[1:]))


# ---------------------------------------------------------------- distributional properties

def test_type_clocks_are_unit_exponential():
    clocks = []
    for ep in episodes(ModelParams.mixed(0.3, 0.8, 0.5), 3000, seed=21):
        types = {t.type_id: t for t in ep.types}
        clocks += [t.death_time - types[t.parent_type].death_time for t in ep.types if t.parent_type is not None]
    assert len(clocks) > 1000
    assert stats.kstest(clocks, "expon").pvalue > 0.001


def test_births_poisson_given_lifetime():
    lam = 0.3
    lifetimes, counts = [], []
    for ep in episodes(ModelParams.standard(lam, 0.5), 4000, seed=22):
        death = {t.type_id: t.death_time for t in ep.types}
        kids = np.zeros(len(ep.pathogens), dtype=int)
        for q in ep.pathogens:
            if q.parent_id is not None:
                kids[q.parent_id] += 1
        for q in ep.pathogens:
            lifetimes.append(death[q.type_id] - q.birth_time)
            counts.append(kids[q.pathogen_id])
    mu = lam * np.asarray(lifetimes)
    counts = np.asarray(counts)
    kmax = 3
    observed = np.array([np.sum(counts == k) for k in range(kmax)] + [np.sum(counts >= kmax)])
    pmf = np.stack([stats.poisson.pmf(k, mu) for k in range(kmax)] + [stats.poisson.sf(kmax - 1, mu)])
    expected = pmf.sum(axis=1)
    chi2 = np.sum((observed - expected) ** 2 / expected)
    assert stats.chi2.sf(chi2, len(observed) - 1) > 0.001


def test_birth_kind_fractions():
    r, p = 0.6, 0.4
    copies = beneficial = sterile = 0
    for ep in episodes(ModelParams.mixed(0.3, r, p), 4000, seed=23):
        parent_type = {q.pathogen_id: q.type_id for q in ep.pathogens}
        for q in ep.pathogens[1:]:
            if q.sterile:
                sterile += 1
            elif q.type_id == parent_type[q.parent_id]:
                copies += 1
            else:
                beneficial += 1
    n = copies + beneficial + sterile
    for got, prob in [(copies, 1 - r), (beneficial, r * p), (sterile, r * (1 - p))]:
        assert abs(got / n - prob) < 3 * math.sqrt(prob * (1 - prob) / n)


def _generation_oracle(lam, r, n, seed):
    """Independent construction: each individual gets a Poisson number of
    children over its whole lifetime, placed uniformly; no event queue."""
    rng = np.random.default_rng(seed)
    sizes = np.empty(n, dtype=int)
    for i in range(n):
        queue = deque([(0.0, rng.exponential())])  # (birth, type death)
        total = 0
        while queue:
            b, d = queue.popleft()
            total += 1
            k = rng.poisson(lam * (d - b))
            for t in rng.uniform(b, d, size=k):
                queue.append((t, d + rng.exponential()) if rng.random() < r else (t, d))
        sizes[i] = total
    return sizes


def test_progeny_law_matches_independent_construction():
    lam, r = 0.25, 0.5
    engine = np.array([ep.outcome.total_progeny_N for ep in episodes(ModelParams.standard(lam, r), 5000, seed=24)])
    oracle = _generation_oracle(lam, r, 5000, seed=25)
    assert stats.ks_2samp(engine, oracle, method="asymp").pvalue > 0.001
    target = an.expected_total_progeny(lam, r)
    for x in (engine, oracle):
        assert abs(x.mean() - target) < 4 * x.std() / math.sqrt(len(x))
