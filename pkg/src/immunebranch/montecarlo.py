"""Replicated estimation on top of the compiled episode kernel.

Episode ``i`` of an experiment always uses the same random stream, whatever
the worker count, and results are reduced in episode-index order, so every
estimate is a deterministic function of ``(params, stop, n_reps, seed)``.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from . import _kernel
from .analytics import (
    DomainError,
    ModelParams,
    Regime,
    Variant,
    classify,
    effective_params,
    params_critical_lambda,
)
from .engine import StopRule, Verdict
from .streams import episode_rng, normalize_seed, stream_key

__all__ = [
    "WORKERS_ENV",
    "default_workers",
    "Outcomes",
    "run_batch",
    "Estimate",
    "ProgenyReport",
    "ExtinctionPair",
    "ThinningReport",
    "estimate_survival",
    "estimate_mean_progeny",
    "estimate_conditioned_mean",
    "estimate_extinction_pair",
    "compare_thinning",
    "ks_two_sample",
]

WORKERS_ENV = "IMMUNEBRANCH_WORKERS"
Z95 = 1.96
# progeny means above this fraction of lambda_c come with a heavy-tail note
NEAR_CRITICAL = 0.8

_VARIANT_CODE = {
    Variant.STANDARD: _kernel.STANDARD,
    Variant.STAR: _kernel.STAR,
    Variant.MIXED: _kernel.MIXED,
    Variant.CONDITIONED: _kernel.CONDITIONED,
}


def default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


class Outcomes(NamedTuple):
    """Per-episode results in episode-index order."""

    verdict: np.ndarray
    N: np.ndarray
    S: np.ndarray
    extinction_time: np.ndarray
    peak: np.ndarray
    types: np.ndarray

    @property
    def Nv(self) -> np.ndarray:
        return self.N - self.S


def _run_range(params: ModelParams, stop: StopRule, key: np.ndarray, lo: int, hi: int) -> Outcomes:
    n = hi - lo
    verdict = np.empty(n, dtype=np.int8)
    total = np.empty(n, dtype=np.int64)
    sterile = np.empty(n, dtype=np.int64)
    ext = np.empty(n, dtype=np.float64)
    peak = np.empty(n, dtype=np.int64)
    types = np.empty(n, dtype=np.int64)
    code = _VARIANT_CODE[params.variant]
    t_root = params.t if params.t is not None else 0.0
    horizon = float(stop.time_horizon)
    pop_cap = int(stop.population_cap)
    progeny_cap = int(stop.progeny_cap)
    kernel = _kernel.run_kernel
    for j in range(n):
        res = kernel(episode_rng(key, lo + j), code, params.lam, params.r, params.p, t_root, horizon, pop_cap, progeny_cap)
        verdict[j], total[j], sterile[j], ext[j], peak[j], types[j] = res
    return Outcomes(verdict, total, sterile, ext, peak, types)


def run_batch(
    params: ModelParams,
    stop: StopRule,
    n_reps: int,
    seed: int = 0,
    *,
    path: tuple[int, ...] = (),
    workers: Optional[int] = None,
) -> Outcomes:
    """Run episodes ``0 .. n_reps-1`` of stream ``(seed, path)``."""
    if n_reps < 1:
        raise DomainError(f"n_reps must be positive, got {n_reps}")
    workers = workers or default_workers()
    key = stream_key(normalize_seed(seed), path)
    if workers == 1 or n_reps < 2 * workers:
        return _run_range(params, stop, key, 0, n_reps)
    # many more chunks than workers so a few heavy episodes do not serialize the pool
    n_chunks = min(n_reps, 16 * workers)
    bounds = np.linspace(0, n_reps, n_chunks + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda ab: _run_range(params, stop, key, ab[0], ab[1]), zip(bounds[:-1], bounds[1:])))
    return Outcomes(*(np.concatenate([getattr(p, f) for p in parts]) for f in Outcomes._fields))


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    ci95: tuple[float, float]
    n_reps: int
    censored_fraction: float = 0.0
    aborted_fraction: float = 0.0
    n_used: Optional[int] = None
    median: Optional[float] = None
    note: Optional[str] = None

    @classmethod
    def build(cls, mean: float, stderr: float, n_reps: int, **kw) -> "Estimate":
        return cls(mean, stderr, (mean - Z95 * stderr, mean + Z95 * stderr), n_reps, **kw)

    @classmethod
    def of_sample(cls, x: np.ndarray, n_reps: int, **kw) -> "Estimate":
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            return cls.build(math.nan, math.nan, n_reps, n_used=0, **kw)
        se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.inf
        return cls.build(float(x.mean()), se, n_reps, n_used=int(x.size), **kw)

    @classmethod
    def of_proportion(cls, hits: int, n: int, **kw) -> "Estimate":
        m = hits / n
        return cls.build(m, math.sqrt(m * (1.0 - m) / n), n, n_used=n, **kw)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "ci95": list(self.ci95),
            "n_reps": self.n_reps,
            "n_used": self.n_used,
            "censored_fraction": self.censored_fraction,
            "aborted_fraction": self.aborted_fraction,
            "median": self.median,
            "note": self.note,
        }


def _fractions(out: Outcomes) -> tuple[float, float]:
    n = out.verdict.size
    return (
        float(np.count_nonzero(out.verdict == Verdict.CENSORED_SURVIVED)) / n,
        float(np.count_nonzero(out.verdict == Verdict.ABORTED_PROGENY_CAP)) / n,
    )


def estimate_survival(
    params: ModelParams,
    stop: Optional[StopRule] = None,
    n_reps: int = 10_000,
    seed: int = 0,
    *,
    path: tuple[int, ...] = (),
    workers: Optional[int] = None,
) -> Estimate:
    """Fraction of episodes still alive at censoring, with binomial standard error."""
    stop = stop or StopRule()
    out = run_batch(params, stop, n_reps, seed, path=path, workers=workers)
    censored, aborted = _fractions(out)
    hits = int(np.count_nonzero(out.verdict == Verdict.CENSORED_SURVIVED))
    return Estimate.of_proportion(hits, n_reps, censored_fraction=censored, aborted_fraction=aborted)


@dataclass(frozen=True)
class ProgenyReport:
    N: Estimate
    Nv: Estimate
    S: Estimate
    sterile_ratio: Optional[Estimate]  # mean S / (mean Nv - 1), mixed variant only
    regime: Regime
    infinite_target: bool


def _ratio_estimate(num: np.ndarray, den: np.ndarray, n_reps: int) -> Estimate:
    # delta method for mean(num) / mean(den)
    n = num.size
    a, b = num.mean(), den.mean()
    if n < 2 or b == 0:
        return Estimate.build(math.nan, math.nan, n_reps, n_used=n)
    ratio = a / b
    cov = np.cov(np.vstack([num, den]), ddof=1)
    var = (cov[0, 0] - 2.0 * ratio * cov[0, 1] + ratio * ratio * cov[1, 1]) / (b * b * n)
    return Estimate.build(float(ratio), float(math.sqrt(max(var, 0.0))), n_reps, n_used=n)


def estimate_mean_progeny(
    params: ModelParams,
    n_reps: int = 100_000,
    seed: int = 0,
    *,
    stop: Optional[StopRule] = None,
    path: tuple[int, ...] = (),
    workers: Optional[int] = None,
) -> ProgenyReport:
    """Sample means of ``N``, ``N_v`` and ``S`` over episodes that went extinct.

    By default only the progeny cap applies.  Censored and aborted episodes
    are excluded from the means and reported as fractions.
    """
    stop = stop or StopRule.progeny_only()
    regime = classify(params)
    infinite = regime is Regime.SUPERCRITICAL
    if infinite:
        warnings.warn("supercritical parameters: the mean progeny is infinite", RuntimeWarning, stacklevel=2)
    out = run_batch(params, stop, n_reps, seed, path=path, workers=workers)
    censored, aborted = _fractions(out)
    done = out.verdict == Verdict.EXTINCT
    N = out.N[done].astype(np.float64)
    S = out.S[done].astype(np.float64)
    Nv = N - S

    note = None
    if not infinite and params.lam > NEAR_CRITICAL * params_critical_lambda(params):
        note = "near-critical: progeny is heavy-tailed, stderr may understate the error"
    if aborted > 0 and not infinite:
        note = (note + "; " if note else "") + f"progeny cap bound in {aborted:.3g} of episodes"
    kw = dict(censored_fraction=censored, aborted_fraction=aborted, note=note)
    med = lambda x: float(np.median(x)) if x.size else math.nan
    ratio = None
    if params.variant is Variant.MIXED:
        ratio = _ratio_estimate(S, Nv - 1.0, n_reps)
    return ProgenyReport(
        N=Estimate.of_sample(N, n_reps, median=med(N), **kw),
        Nv=Estimate.of_sample(Nv, n_reps, median=med(Nv), **kw),
        S=Estimate.of_sample(S, n_reps, median=med(S), **kw),
        sterile_ratio=ratio,
        regime=regime,
        infinite_target=infinite,
    )


def estimate_conditioned_mean(
    t: float,
    lam: float,
    r: float,
    n_reps: int = 100_000,
    seed: int = 0,
    *,
    workers: Optional[int] = None,
) -> Estimate:
    """Mean total progeny when the initial type is killed at exactly time ``t``."""
    if classify(ModelParams(lam, r)) is Regime.SUPERCRITICAL:
        raise DomainError(f"conditioned mean is infinite for lambda={lam} > lambda_c(r)")
    params = ModelParams.conditioned(lam, r, t)
    rep = estimate_mean_progeny(params, n_reps, seed, workers=workers)
    return rep.N


@dataclass(frozen=True)
class ExtinctionPair:
    q_hat: Estimate
    q_star_hat: Estimate
    relation_residual: float
    residual_stderr: float


def estimate_extinction_pair(
    lam: float,
    r: float,
    stop: Optional[StopRule] = None,
    n_reps: int = 10_000,
    seed: int = 0,
    *,
    workers: Optional[int] = None,
) -> ExtinctionPair:
    """Extinction probabilities of the standard and starred variants on disjoint streams.

    The residual ``q* - (1 - r + r q)`` should vanish.
    """
    stop = stop or StopRule()
    surv = estimate_survival(ModelParams.standard(lam, r), stop, n_reps, seed, path=(1,), workers=workers)
    surv_star = estimate_survival(ModelParams.star(lam, r), stop, n_reps, seed, path=(2,), workers=workers)

    def flip(e: Estimate) -> Estimate:
        return Estimate.build(
            1.0 - e.mean, e.stderr, e.n_reps,
            censored_fraction=e.censored_fraction, aborted_fraction=e.aborted_fraction, n_used=e.n_used,
        )

    q, qs = flip(surv), flip(surv_star)
    residual = qs.mean - ((1.0 - r) + r * q.mean)
    se = math.hypot(qs.stderr, r * q.stderr)
    return ExtinctionPair(q, qs, residual, se)


def ks_two_sample(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Two-sample KS distance for integer-valued samples, with asymptotic p-value.

    The empirical CDFs are compared at every support point, which is where
    the supremum of their difference is attained for step functions.
    """
    x = np.sort(np.asarray(x))
    y = np.sort(np.asarray(y))
    n, m = x.size, y.size
    support = np.union1d(x, y)
    fx = np.searchsorted(x, support, side="right") / n
    fy = np.searchsorted(y, support, side="right") / m
    d = float(np.max(np.abs(fx - fy)))
    en = n * m / (n + m)
    return d, float(stats.kstwobign.sf(math.sqrt(en) * d))


@dataclass(frozen=True)
class ThinningReport:
    mean_Nv_mixed: Estimate
    mean_N_effective: Estimate
    ks_distance: float
    ks_pvalue: float
    lambda_eff: float
    r_eff: float

    @property
    def mean_gap_sigmas(self) -> float:
        a, b = self.mean_Nv_mixed, self.mean_N_effective
        return abs(a.mean - b.mean) / math.hypot(a.stderr, b.stderr)


def compare_thinning(
    lam: float,
    r: float,
    p: float,
    n_reps: int = 100_000,
    seed: int = 0,
    *,
    workers: Optional[int] = None,
) -> ThinningReport:
    """Compare the viable count of the mixed model with the effective beneficial-mutation model."""
    lam_eff, r_eff = effective_params(lam, r, p)
    stop = StopRule.progeny_only()
    mixed = run_batch(ModelParams.mixed(lam, r, p), stop, n_reps, seed, path=(1,), workers=workers)
    eff = run_batch(ModelParams.standard(lam_eff, r_eff), stop, n_reps, seed, path=(2,), workers=workers)
    a = mixed.Nv[mixed.verdict == Verdict.EXTINCT]
    b = eff.N[eff.verdict == Verdict.EXTINCT]
    d, pval = ks_two_sample(a, b)
    return ThinningReport(
        mean_Nv_mixed=Estimate.of_sample(a, n_reps, aborted_fraction=_fractions(mixed)[1]),
        mean_N_effective=Estimate.of_sample(b, n_reps, aborted_fraction=_fractions(eff)[1]),
        ks_distance=d,
        ks_pvalue=pval,
        lambda_eff=lam_eff,
        r_eff=r_eff,
    )
