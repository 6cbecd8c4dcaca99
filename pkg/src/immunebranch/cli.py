"""Command-line interface: ``immunebranch {analytic,simulate,estimate,sweep,validate}``.

Exit status is 2 for argument or domain errors, 1 when ``validate`` finds a
failing criterion, 0 otherwise.  The default worker count is read from the
``IMMUNEBRANCH_WORKERS`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Optional

from . import analytics as an
from .analytics import DomainError, ModelParams, Variant
from .engine import StopRule, simulate, write_trace
from .montecarlo import (
    Estimate,
    compare_thinning,
    default_workers,
    estimate_conditioned_mean,
    estimate_extinction_pair,
    estimate_mean_progeny,
    estimate_survival,
)
from .streams import episode_rng, normalize_seed, stream_key
from .sweep import Estimator, GridSpec, emit_csv, emit_phase_svg, parse_grid, run_sweep
from .validation import ValidationConfig, run_validation


def _num(x) -> str:
    if x is None:
        return "undefined"
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return "inf" if math.isinf(x) else f"{x:.9g}"
    return str(x)


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _print_kv(items: dict, out, indent: str = "") -> None:
    width = max((len(k) for k in items), default=0)
    for k, v in items.items():
        if isinstance(v, dict):
            out.write(f"{indent}{k}:\n")
            _print_kv(v, out, indent + "  ")
        elif isinstance(v, list):
            out.write(f"{indent}{k.ljust(width)}  {' '.join(_num(x) for x in v)}\n")
        else:
            out.write(f"{indent}{k.ljust(width)}  {_num(v)}\n")


def _emit(obj: dict, as_json: bool, out) -> None:
    if as_json:
        out.write(json.dumps(_jsonable(obj), sort_keys=False) + "\n")
    else:
        _print_kv(obj, out)


def _parse_variant(text: Optional[str], p: float) -> tuple[Variant, Optional[float]]:
    if text is None:
        return (Variant.MIXED if p != 1.0 else Variant.STANDARD), None
    if text.startswith("cond:"):
        return Variant.CONDITIONED, float(text[5:])
    try:
        return Variant(text), None
    except ValueError:
        raise DomainError(f"unknown variant {text!r}; use standard, star, mixed or cond:T") from None


def _params(args) -> ModelParams:
    variant, t = _parse_variant(getattr(args, "variant", None), args.p)
    return ModelParams(args.lam, args.r, args.p, variant, t)


def _stop(args, default: StopRule) -> StopRule:
    return StopRule(
        args.horizon if args.horizon is not None else default.time_horizon,
        args.pop_cap if args.pop_cap is not None else default.population_cap,
        args.progeny_cap if args.progeny_cap is not None else default.progeny_cap,
    )


def cmd_analytic(args, out) -> int:
    params = _params(args)
    summary = an.summarize(params).as_dict()
    w = an.mutation_window(params.lam, params.p)
    summary["window"] = {
        "kind": w.kind.value,
        "r_minus": w.r_minus,
        "r_plus": w.r_plus,
        "r_star": w.r_star,
        "lambda_c_min": w.lambda_c_min,
    }
    summary["mgf_min"] = an.mgf_min_check(params.lam, params.r) if params.p == 1.0 else None
    _emit(summary, args.json, out)
    return 0


def cmd_simulate(args, out) -> int:
    params = _params(args)
    stop = _stop(args, StopRule())
    rng = episode_rng(stream_key(args.seed), 0)
    ep = simulate(params, stop, rng, record=args.trace is not None)
    if args.trace is not None:
        with open(args.trace, "w", encoding="utf-8") as fh:
            write_trace(ep, fh)
    _emit(ep.outcome.as_dict(), args.json, out)
    return 0


def _estimate_dict(e: Estimate) -> dict:
    return e.as_dict()


def cmd_estimate(args, out) -> int:
    target = args.target
    workers = args.workers
    if target == "survival":
        e = estimate_survival(_params(args), _stop(args, StopRule()), args.reps, args.seed, workers=workers)
        result = {"survival": _estimate_dict(e)}
    elif target == "progeny":
        params = _params(args)
        rep = estimate_mean_progeny(params, args.reps, args.seed, stop=_stop(args, StopRule.progeny_only()), workers=workers)
        result = {
            "regime": rep.regime.value,
            "infinite_target": rep.infinite_target,
            "N": _estimate_dict(rep.N),
            "Nv": _estimate_dict(rep.Nv),
            "S": _estimate_dict(rep.S),
        }
        if rep.sterile_ratio is not None:
            result["sterile_ratio"] = _estimate_dict(rep.sterile_ratio)
    elif target.startswith("conditioned:"):
        t = float(target.split(":", 1)[1])
        e = estimate_conditioned_mean(t, args.lam, args.r, args.reps, args.seed, workers=workers)
        result = {"conditioned_mean": _estimate_dict(e), "analytic": an.conditioned_mean_progeny(t, args.lam, args.r)}
    elif target == "extinction-pair":
        pair = estimate_extinction_pair(args.lam, args.r, _stop(args, StopRule()), args.reps, args.seed, workers=workers)
        result = {
            "q": _estimate_dict(pair.q_hat),
            "q_star": _estimate_dict(pair.q_star_hat),
            "relation_residual": pair.relation_residual,
            "residual_stderr": pair.residual_stderr,
        }
    elif target == "thinning":
        rep = compare_thinning(args.lam, args.r, args.p, args.reps, args.seed, workers=workers)
        result = {
            "lambda_eff": rep.lambda_eff,
            "r_eff": rep.r_eff,
            "mean_Nv_mixed": _estimate_dict(rep.mean_Nv_mixed),
            "mean_N_effective": _estimate_dict(rep.mean_N_effective),
            "ks_distance": rep.ks_distance,
            "ks_pvalue": rep.ks_pvalue,
        }
    else:
        raise DomainError(f"unknown target {target!r}")
    _emit(result, args.json, out)
    return 0


def cmd_sweep(args, out) -> int:
    axis1, axis2, fixed = parse_grid(args.grid)
    spec = GridSpec(
        axis1,
        axis2,
        fixed,
        estimator=Estimator(args.estimator),
        per_cell_reps=args.reps,
        stop=_stop(args, StopRule()),
        master_seed=args.seed,
    )
    cells = run_sweep(spec, args.workers)
    emit_csv(cells, args.out_csv)
    if args.out_svg:
        emit_phase_svg(cells, args.overlay, args.out_svg, survival=spec.estimator is Estimator.SURVIVAL)
    out.write(f"{len(cells)} cells written to {args.out_csv}\n")
    return 0


def cmd_validate(args, out) -> int:
    cfg = ValidationConfig(seed=args.seed, workers=args.workers, fast=args.fast, out_dir=Path(args.out_dir) if args.out_dir else None)
    results = run_validation(cfg, report=lambda s: (out.write(s + "\n"), out.flush()))
    n_fail = sum(not r.passed for r in results)
    out.write(f"{len(results) - n_fail}/{len(results)} criteria passed\n")
    return 1 if n_fail else 0


def _seed(text: str) -> int:
    try:
        return normalize_seed(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive_int(text: str) -> int:
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return n


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="immunebranch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p, need_variant=True):
        p.add_argument("--lambda", dest="lam", type=float, required=True, help="birth rate")
        p.add_argument("--r", type=float, required=True, help="mutation probability in (0, 1]")
        p.add_argument("--p", type=float, default=1.0, help="beneficial fraction of mutations (default 1)")
        if need_variant:
            p.add_argument("--variant", help="standard, star, mixed or cond:T (default: mixed when p < 1)")

    def common(p, stop=True):
        p.add_argument("--seed", type=_seed, default=0, help="master seed, or 'random' (default 0)")
        p.add_argument("--json", action="store_true", help="print one JSON object")
        if stop:
            p.add_argument("--horizon", type=float, help="censoring time horizon")
            p.add_argument("--pop-cap", type=_positive_int, help="censor when the living population reaches this")
            p.add_argument("--progeny-cap", type=_positive_int, help="abort after this many births")

    p = sub.add_parser("analytic", help="closed-form summary of a parameter point")
    model_args(p)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analytic)

    p = sub.add_parser("simulate", help="run one episode")
    model_args(p)
    common(p)
    p.add_argument("--trace", help="write the event log (JSON lines) to this path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="Monte Carlo estimates")
    model_args(p)
    common(p)
    p.add_argument("--target", required=True, help="survival, progeny, conditioned:T, extinction-pair or thinning")
    p.add_argument("--reps", type=_positive_int, default=10_000)
    p.add_argument("--workers", type=_positive_int, default=None)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("sweep", help="phase-diagram sweep to CSV and SVG")
    p.add_argument("--grid", required=True, help="e.g. 'lambda=0.05:1.2:20,r=0:1:20,p=1'")
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-svg")
    p.add_argument("--overlay", action="store_true", help="draw the analytic critical curve")
    p.add_argument("--estimator", choices=[e.value for e in Estimator], default="survival")
    p.add_argument("--reps", type=_positive_int, default=1000, help="episodes per cell")
    p.add_argument("--workers", type=_positive_int, default=None)
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="run the acceptance suite")
    p.add_argument("--fast", action="store_true", help="reduced replication counts")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--workers", type=_positive_int, default=None)
    p.add_argument("--out-dir", help="where to keep the sweep artifacts")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "workers", "absent") is None:
        args.workers = default_workers()
    try:
        return args.func(args, out)
    except DomainError as exc:
        sys.stderr.write(f"immunebranch: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
