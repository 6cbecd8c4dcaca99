"""Acceptance suite shared by ``immunebranch validate`` and the test suite.

Each criterion returns a :class:`CriterionResult` made of individual checks.
Tolerances are fixed here; ``fast`` only shrinks replication counts and
grid sizes, which widens standard errors but never loosens a bound.
"""

from __future__ import annotations

import filecmp
import math
import re
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import analytics as an
from .analytics import ModelParams, Regime
from .engine import StopRule
from .montecarlo import (
    compare_thinning,
    estimate_conditioned_mean,
    estimate_extinction_pair,
    estimate_mean_progeny,
    estimate_survival,
    run_batch,
)
from .sweep import Axis, GridSpec, emit_csv, emit_phase_svg, run_sweep

__all__ = ["Check", "CriterionResult", "ValidationConfig", "CRITERIA", "run_criterion", "run_validation"]


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(passed), detail))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number}: {self.title} ({self.seconds:.1f} s)"


@dataclass(frozen=True)
class ValidationConfig:
    seed: int = 0
    workers: int = 1
    fast: bool = False
    out_dir: Optional[Path] = None

    def reps(self, full: int, fast: int) -> int:
        return fast if self.fast else full


def _g(x: float) -> str:
    return f"{x:.9g}"


def crit_exact_analytics(cfg: ValidationConfig) -> CriterionResult:
    res = CriterionResult(1, "exact analytics")
    t0 = time.perf_counter()

    res.add("lambda_c(1) = 1/4", abs(an.critical_lambda(1.0) - 0.25) <= 1e-14, _g(an.critical_lambda(1.0)))

    rs = np.linspace(0.01, 1.0, 100)
    err = max(abs(an.critical_lambda_mixed(r, 1.0) - an.critical_lambda(r)) for r in rs)
    res.add("lambda_c(r, 1) = lambda_c(r) on 100 points", err <= 1e-14, f"max err {err:.3g}")

    ps = np.arange(1, 10) * 0.05
    err = max(abs(an.critical_lambda_mixed(p / (1 - p), p) - (1 - p)) for p in ps)
    res.add("lambda_c(r*, p) = 1 - p for p = 0.05..0.45", err <= 1e-12, f"max err {err:.3g}")

    worst = 0.0
    n_endpoints = 0
    for p in np.linspace(0.02, 1.0, 50):
        for lam in np.linspace(0.2, 3.0, 57):
            w = an.mutation_window(lam, p)
            for e in w.endpoints():
                if 0.0 < e <= 1.0:
                    n_endpoints += 1
                    worst = max(worst, abs(an.critical_lambda_mixed(e, p) - lam))
    res.add("window endpoints round-trip", worst <= 1e-10 and n_endpoints > 0, f"{n_endpoints} endpoints, max err {worst:.3g}")

    worst_prod = worst_sum = 0.0
    for r in np.linspace(0.01, 1.0, 40):
        lc = an.critical_lambda(r)
        for lam in np.linspace(lc / 25, lc, 25):
            a, b, _ = an.roots(lam, r)
            worst_prod = max(worst_prod, abs(a * b - lam))
            worst_sum = max(worst_sum, abs(a + b - 1 - lam * (1 - r)))
    res.add("Vieta identities on 1000 points", max(worst_prod, worst_sum) <= 1e-12, f"{worst_prod:.3g}, {worst_sum:.3g}")

    worst_tot = worst_thin = 0.0
    for r in np.linspace(0.05, 1.0, 20):
        for p in np.linspace(0.05, 1.0, 20):
            lc = an.critical_lambda_mixed(r, p)
            for lam in (0.3 * lc, 0.7 * lc, lc):
                nv, s, npp = an.expected_counts_mixed(lam, r, p)
                worst_tot = max(worst_tot, abs(npp - (nv + s)) / npp)
                le, re_ = an.effective_params(lam, r, p)
                worst_thin = max(worst_thin, abs(nv - an.expected_total_progeny(le, re_)) / nv)
    res.add("E[N^(p)] = E[N_v] + E[S]", worst_tot <= 1e-12, f"max rel err {worst_tot:.3g}")
    res.add("E[N_v](lambda, r, p) = E[N](effective)", worst_thin <= 1e-12, f"max rel err {worst_thin:.3g}")

    worst = 0.0
    for r in np.linspace(0.02, 1.0, 50):
        lam = 0.5
        worst = max(worst, abs(an.mgf_min_check(lam, r) / lam - (1 + math.sqrt(r)) ** 2))
    res.add("MGF minimum / lambda = (1 + sqrt r)^2 on 50 points", worst <= 1e-8, f"max err {worst:.3g}")

    elapsed = time.perf_counter() - t0
    res.add("runtime < 1 s", elapsed < 1.0, f"{elapsed:.3f} s")
    return res


def crit_progeny_means(cfg: ValidationConfig) -> CriterionResult:
    res = CriterionResult(2, "subcritical progeny means")
    for lam in (0.1, 0.2):
        target = an.expected_total_progeny(lam, 1.0)
        e = estimate_mean_progeny(ModelParams(lam, 1.0), cfg.reps(100_000, 20_000), cfg.seed, workers=cfg.workers).N
        res.add(
            f"lambda={lam}, r=1: mean N within 3 stderr of {target:.6f}",
            e.within(target),
            f"mean {_g(e.mean)} +- {_g(e.stderr)}, {abs(e.mean - target) / e.stderr:.2f} stderr",
        )
    n = cfg.reps(1_000_000, 100_000)
    e = estimate_mean_progeny(ModelParams(0.25, 1.0), n, cfg.seed, workers=cfg.workers).N
    rel = abs(e.mean - 2.0) / 2.0
    res.add(
        "lambda=0.25, r=1 (critical): mean N within 5% of 2",
        rel <= 0.05,
        f"mean {_g(e.mean)} (rel err {rel:.3%}), median {_g(e.median)}, aborted {e.aborted_fraction:.3g}; heavy-tailed at criticality",
    )
    return res


def crit_conditioned(cfg: ValidationConfig) -> CriterionResult:
    res = CriterionResult(3, "conditioned mean E[Y(t)] = exp(alpha t)")
    target = an.conditioned_mean_progeny(1.0, 0.1, 1.0)
    e = estimate_conditioned_mean(1.0, 0.1, 1.0, cfg.reps(100_000, 20_000), cfg.seed, workers=cfg.workers)
    res.add(
        f"t=1, lambda=0.1, r=1 within 3 stderr of {target:.6f}",
        e.within(target),
        f"mean {_g(e.mean)} +- {_g(e.stderr)}",
    )
    for r in (1.0, 0.5):
        out = run_batch(ModelParams.conditioned(0.1, r, 0.0), StopRule.progeny_only(), 1000, cfg.seed, workers=cfg.workers)
        res.add(f"t=0, r={r}: N = 1 in every episode", bool(np.all(out.N == 1)), f"max N {int(out.N.max())}")
    return res


def crit_phase_positions(cfg: ValidationConfig) -> CriterionResult:
    res = CriterionResult(4, "phase positions at r = 0.5")
    n = cfg.reps(10_000, 2_000)
    e = estimate_survival(ModelParams(0.25, 0.5), StopRule(), n, cfg.seed, workers=cfg.workers)
    res.add("lambda=0.25: survival upper CI < 0.01", e.ci95[1] < 0.01, f"estimate {_g(e.mean)}, CI {_g(e.ci95[1])}")
    e = estimate_survival(ModelParams(0.5, 0.5), StopRule(), n, cfg.seed, workers=cfg.workers)
    res.add("lambda=0.5: survival > 0.05", e.mean > 0.05, f"estimate {_g(e.mean)} +- {_g(e.stderr)}")
    return res


def crit_mutation_window(cfg: ValidationConfig) -> CriterionResult:
    res = CriterionResult(5, "intermediate-mutation window at lambda = 1, p = 0.2")
    n = cfg.reps(10_000, 2_000)
    w = an.mutation_window(1.0, 0.2)
    res.add("analytic window is r < 0.8", w.kind is an.WindowKind.BELOW and abs(w.r_plus - 0.8) < 1e-12, f"{w.kind.value}, r_+={_g(w.r_plus)}")
    e = estimate_survival(ModelParams.mixed(1.0, 0.4, 0.2), StopRule(), n, cfg.seed, workers=cfg.workers)
    res.add("r=0.4: survival > 0.05", e.mean > 0.05, f"estimate {_g(e.mean)} +- {_g(e.stderr)}")
    e = estimate_survival(ModelParams.mixed(1.0, 0.95, 0.2), StopRule(), n, cfg.seed, workers=cfg.workers)
    res.add("r=0.95: survival upper CI < 0.01", e.ci95[1] < 0.01, f"estimate {_g(e.mean)}, CI {_g(e.ci95[1])}")
    return res


def crit_thinning(cfg: ValidationConfig) -> CriterionResult:
    res = CriterionResult(6, "thinning equivalence")
    rep = compare_thinning(0.5, 0.8, 0.5, cfg.reps(100_000, 20_000), cfg.seed, workers=cfg.workers)
    res.add(
        "effective parameters (0.3, 2/3)",
        abs(rep.lambda_eff - 0.3) < 1e-12 and abs(rep.r_eff - 2 / 3) < 1e-12,
        f"{_g(rep.lambda_eff)}, {_g(rep.r_eff)}",
    )
    a, b = rep.mean_Nv_mixed, rep.mean_N_effective
    res.add(
        "means within 3 combined stderr",
        rep.mean_gap_sigmas <= 3.0,
        f"{_g(a.mean)} vs {_g(b.mean)}, {rep.mean_gap_sigmas:.2f} sigma",
    )
    res.add("KS p-value > 0.001", rep.ks_pvalue > 0.001, f"D={_g(rep.ks_distance)}, p={_g(rep.ks_pvalue)}")
    return res


def crit_extinction_relation(cfg: ValidationConfig) -> CriterionResult:
    res = CriterionResult(7, "extinction relation q* = 1 - r + r q")
    pair = estimate_extinction_pair(0.5, 0.5, StopRule(), cfg.reps(10_000, 2_000), cfg.seed, workers=cfg.workers)
    res.add(
        "lambda=0.5, r=0.5: |residual| < 3 combined stderr",
        abs(pair.relation_residual) < 3 * pair.residual_stderr,
        f"q={_g(pair.q_hat.mean)}, q*={_g(pair.q_star_hat.mean)}, residual {_g(pair.relation_residual)} (se {_g(pair.residual_stderr)})",
    )
    return res


def crit_sterile_accounting(cfg: ValidationConfig) -> CriterionResult:
    res = CriterionResult(8, "sterile accounting")
    rep = estimate_mean_progeny(ModelParams.mixed(0.5, 0.8, 0.5), cfg.reps(100_000, 20_000), cfg.seed, workers=cfg.workers)
    ratio = rep.sterile_ratio
    res.add(
        "mean S / (mean N_v - 1) within 3 stderr of 2/3",
        ratio.within(2 / 3),
        f"ratio {_g(ratio.mean)} +- {_g(ratio.stderr)}",
    )
    return res


# population cap for the figure sweeps; survival is decided long before it binds at these parameters
SWEEP_STOP = StopRule(time_horizon=200.0, population_cap=1000, progeny_cap=10_000_000)


def figure_specs(cfg: ValidationConfig) -> dict[str, GridSpec]:
    steps = 6 if cfg.fast else 20
    reps = 100 if cfg.fast else 1000
    return {
        "phase_p1": GridSpec(
            Axis("lambda", 0.06, 1.2, steps), Axis("r", 0.0, 1.0, steps), {"p": 1.0},
            per_cell_reps=reps, stop=SWEEP_STOP, master_seed=cfg.seed,
        ),
        "phase_p0.2": GridSpec(
            Axis("lambda", 0.5, 1.6, steps), Axis("r", 0.0, 1.0, steps), {"p": 0.2},
            per_cell_reps=reps, stop=SWEEP_STOP, master_seed=cfg.seed,
        ),
    }


def svg_overlay_vertices(path: Path) -> list[tuple[float, float]]:
    """Read back the exact critical-curve vertices stored in a phase SVG."""
    m = re.search(r'id="critical-curve"[^>]*data-vertices="([^"]*)"', path.read_text(encoding="utf-8"))
    if m is None:
        return []
    return [tuple(float(v) for v in pair.split(",")) for pair in m.group(1).split()]


def crit_figures(cfg: ValidationConfig) -> CriterionResult:
    res = CriterionResult(9, "figure reproduction sweeps")
    out_dir = cfg.out_dir or Path(tempfile.mkdtemp(prefix="immunebranch-"))
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, spec in figure_specs(cfg).items():
        t0 = time.perf_counter()
        cells = run_sweep(spec, cfg.workers)
        emit_csv(cells, out_dir / f"{name}.csv")
        emit_phase_svg(cells, True, out_dir / f"{name}.svg")
        elapsed = time.perf_counter() - t0
        res.add(f"{name}: runtime < 10 min", elapsed < 600, f"{elapsed:.1f} s, {len(cells)} cells")

        bad_sub = [c for c in cells if c.params.lam < 0.8 * c.analytic_lambda_c and not c.estimate.ci95[1] < 0.02]
        n_sub = sum(c.params.lam < 0.8 * c.analytic_lambda_c for c in cells)
        res.add(f"{name}: subcritical-by-margin cells have upper CI < 0.02", not bad_sub, f"{len(bad_sub)} of {n_sub} disagree")
        sup = [c for c in cells if c.params.lam > 1.25 * c.analytic_lambda_c]
        bad_sup = [c for c in sup if not c.estimate.mean > 0]
        detail = f"{len(bad_sup)} of {len(sup)} disagree"
        if bad_sup:
            worst = max(bad_sup, key=lambda c: c.params.lam / c.analytic_lambda_c)
            detail += f"; farthest at lambda/lambda_c = {worst.params.lam / worst.analytic_lambda_c:.3f}"
        res.add(f"{name}: supercritical-by-margin cells have estimate > 0", not bad_sup, detail)

        verts = svg_overlay_vertices(out_dir / f"{name}.svg")
        p = spec.fixed["p"]
        err = max(abs(lam - 1.0 / (math.sqrt(1 - r + r * p) + math.sqrt(r * p)) ** 2) for r, lam in verts)
        res.add(f"{name}: {len(verts)} overlay vertices exact to 1e-12", err <= 1e-12 and len(verts) == 200, f"max err {err:.3g}")
    res.add("artifacts written", all((out_dir / f"{n}.{ext}").exists() for n in figure_specs(cfg) for ext in ("csv", "svg")), str(out_dir))
    return res


def crit_determinism(cfg: ValidationConfig) -> CriterionResult:
    """Runs the fast suite twice with different worker counts and compares artifacts."""
    res = CriterionResult(10, "determinism across runs and worker counts")
    with tempfile.TemporaryDirectory() as a, tempfile.TemporaryDirectory() as b:
        runs = []
        for d, w in ((a, 1), (b, 3)):
            sub = ValidationConfig(seed=cfg.seed, workers=w, fast=True, out_dir=Path(d))
            runs.append([run_criterion(n, sub) for n in range(1, 10)])
        for name in figure_specs(ValidationConfig(fast=True)):
            fa, fb = Path(a) / f"{name}.csv", Path(b) / f"{name}.csv"
            res.add(f"{name}.csv byte-identical", filecmp.cmp(fa, fb, shallow=False))
        stat_a = [r.passed for r in runs[0]]
        stat_b = [r.passed for r in runs[1]]
        res.add("identical pass/fail results", stat_a == stat_b, f"{stat_a} vs {stat_b}")
        details_a = [[c.passed for c in r.checks if "runtime" not in c.name] for r in runs[0]]
        details_b = [[c.passed for c in r.checks if "runtime" not in c.name] for r in runs[1]]
        res.add("identical per-check results", details_a == details_b)
    return res


CRITERIA: dict[int, Callable[[ValidationConfig], CriterionResult]] = {
    1: crit_exact_analytics,
    2: crit_progeny_means,
    3: crit_conditioned,
    4: crit_phase_positions,
    5: crit_mutation_window,
    6: crit_thinning,
    7: crit_extinction_relation,
    8: crit_sterile_accounting,
    9: crit_figures,
    10: crit_determinism,
}


def run_criterion(number: int, cfg: ValidationConfig) -> CriterionResult:
    t0 = time.perf_counter()
    res = CRITERIA[number](cfg)
    res.seconds = time.perf_counter() - t0
    return res


def run_validation(cfg: ValidationConfig, numbers=None, report: Optional[Callable[[str], None]] = None) -> list[CriterionResult]:
    results = []
    for n in numbers or sorted(CRITERIA):
        r = run_criterion(n, cfg)
        results.append(r)
        if report:
            report(r.line())
            for c in r.checks:
                report(f"    {'ok ' if c.passed else 'BAD'} {c.name}: {c.detail}")
    return results
