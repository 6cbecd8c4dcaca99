"""Branching processes with ancestral-order immune killing.

Closed-form analytics, an exact event-driven simulator, Monte Carlo
estimators, parameter sweeps and a command-line front end.
"""

from .analytics import (
    AnalyticSummary,
    DomainError,
    ModelParams,
    MutationWindow,
    Regime,
    Variant,
    WindowKind,
    classify,
    conditioned_mean_progeny,
    critical_lambda,
    critical_lambda_mixed,
    effective_params,
    expected_counts_mixed,
    expected_total_progeny,
    extinction_prob_star,
    mgf,
    mgf_min_check,
    mutation_window,
    roots,
    summarize,
)
from .engine import Episode, EpisodeOutcome, StopRule, Verdict, run_episode, simulate, validate_genealogy, write_trace
from .montecarlo import (
    Estimate,
    compare_thinning,
    estimate_conditioned_mean,
    estimate_extinction_pair,
    estimate_mean_progeny,
    estimate_survival,
    run_batch,
)
from .sweep import Axis, Estimator, GridSpec, emit_csv, emit_phase_svg, overlay_curve, run_sweep

__version__ = "0.1.0"
