"""Phase-diagram sweeps over two of ``(lambda, r, p)``.

Each cell is an independent Monte Carlo estimate seeded by
``(master_seed, cell_index)``; cells are listed in row-major order (first
axis outer).  Output is a CSV table and a standalone SVG heatmap with the
analytic critical curve optionally drawn on top.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .analytics import DomainError, ModelParams, Regime, classify, critical_lambda_mixed, params_critical_lambda
from .engine import StopRule
from .montecarlo import Estimate, default_workers, estimate_mean_progeny, estimate_survival

__all__ = [
    "PARAM_NAMES",
    "Axis",
    "Estimator",
    "GridSpec",
    "SweepCell",
    "run_sweep",
    "emit_csv",
    "overlay_curve",
    "emit_phase_svg",
    "parse_grid",
]

PARAM_NAMES = ("lambda", "r", "p")
EPS = 1e-3
# where the overlay starts when a unit-interval axis was clamped at zero;
# the curve has a finite limit there, so it is drawn up to the plot edge
OVERLAY_EPS = 1e-12


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    steps: int

    def __post_init__(self):
        if self.name not in PARAM_NAMES:
            raise DomainError(f"axis name must be one of {PARAM_NAMES}, got {self.name!r}")
        if self.steps < 1:
            raise DomainError(f"axis {self.name} needs at least 1 step, got {self.steps}")
        if self.steps == 1 and self.lo != self.hi:
            raise DomainError(f"a single-step axis {self.name} needs lo == hi, got {self.lo}, {self.hi}")
        if self.steps > 1 and not self.lo < self.hi:
            raise DomainError(f"axis {self.name}: need lo < hi, got {self.lo}, {self.hi}")
        if self.name in ("r", "p") and self.hi > 1.0:
            raise DomainError(f"axis {self.name} must stay inside (0, 1], got hi={self.hi}")
        if self.name == "lambda" and self.lo <= 0.0:
            raise DomainError(f"axis lambda must stay positive, got lo={self.lo}")

    def values(self, eps: float = EPS) -> np.ndarray:
        lo = self.lo
        if self.name in ("r", "p") and lo <= 0.0:
            lo = eps
        return np.linspace(lo, self.hi, self.steps)


class Estimator(enum.Enum):
    SURVIVAL = "survival"
    MEAN_PROGENY = "progeny"


@dataclass(frozen=True)
class GridSpec:
    axis1: Axis
    axis2: Axis
    fixed: dict = field(default_factory=dict)
    estimator: Estimator = Estimator.SURVIVAL
    per_cell_reps: int = 1000
    stop: StopRule = field(default_factory=StopRule)
    master_seed: int = 0
    eps: float = EPS

    def __post_init__(self):
        if self.axis1.name == self.axis2.name:
            raise DomainError("the two axes must be different parameters")
        if self.per_cell_reps < 1:
            raise DomainError("per_cell_reps must be positive")
        fixed = dict(self.fixed)
        fixed.setdefault("p", 1.0)
        missing = [n for n in self.fixed_names if n not in fixed]
        if missing:
            raise DomainError(f"no value given for fixed parameter(s) {missing}")
        extra = set(fixed) - set(PARAM_NAMES)
        if extra:
            raise DomainError(f"unknown fixed parameter(s) {sorted(extra)}")
        object.__setattr__(self, "fixed", {n: float(fixed[n]) for n in self.fixed_names})
        # validates the fixed values against the model domain
        self.params_at(self.axis1.values(self.eps)[0], self.axis2.values(self.eps)[0])

    @property
    def axis_names(self) -> tuple[str, str]:
        return self.axis1.name, self.axis2.name

    @property
    def fixed_names(self) -> list[str]:
        return [n for n in PARAM_NAMES if n not in self.axis_names]

    @property
    def mixed(self) -> bool:
        return "p" in self.axis_names or self.fixed["p"] != 1.0

    def params_at(self, x1: float, x2: float) -> ModelParams:
        vals = dict(self.fixed)
        vals[self.axis1.name] = float(x1)
        vals[self.axis2.name] = float(x2)
        if self.mixed:
            return ModelParams.mixed(vals["lambda"], vals["r"], vals["p"])
        return ModelParams.standard(vals["lambda"], vals["r"])

    def coords(self) -> list[tuple[float, float]]:
        v1, v2 = self.axis1.values(self.eps), self.axis2.values(self.eps)
        return [(float(a), float(b)) for a in v1 for b in v2]


@dataclass(frozen=True)
class SweepCell:
    index: int
    axis_names: tuple[str, str]
    coords: tuple[float, float]
    params: ModelParams
    estimate: Estimate
    analytic_lambda_c: float
    analytic_regime: Regime


def _run_cell(spec: GridSpec, index: int, coords: tuple[float, float]) -> SweepCell:
    params = spec.params_at(*coords)
    if spec.estimator is Estimator.SURVIVAL:
        est = estimate_survival(params, spec.stop, spec.per_cell_reps, spec.master_seed, path=(index,), workers=1)
    else:
        est = estimate_mean_progeny(params, spec.per_cell_reps, spec.master_seed, stop=spec.stop, path=(index,), workers=1).N
    return SweepCell(index, spec.axis_names, coords, params, est, params_critical_lambda(params), classify(params))


def run_sweep(spec: GridSpec, workers: Optional[int] = None) -> list[SweepCell]:
    """Evaluate every cell; the result does not depend on ``workers``."""
    workers = workers or default_workers()
    coords = spec.coords()
    if workers == 1:
        return [_run_cell(spec, i, c) for i, c in enumerate(coords)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ic: _run_cell(spec, *ic), enumerate(coords)))


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _open_out(destination):
    if hasattr(destination, "write"):
        return destination, False
    return open(destination, "w", newline="", encoding="utf-8"), True


CSV_COLUMNS = ("n_reps", "estimate_mean", "stderr", "ci_low", "ci_high", "censored_fraction", "lambda_c", "regime")


def emit_csv(cells: list[SweepCell], destination) -> None:
    if not cells:
        raise ValueError("no cells to write")
    names = cells[0].axis_names
    fixed_names = [n for n in PARAM_NAMES if n not in names]
    header = [*names, *fixed_names, *CSV_COLUMNS]
    fh, owned = _open_out(destination)
    try:
        fh.write(",".join(header) + "\n")
        for c in cells:
            pv = {"lambda": c.params.lam, "r": c.params.r, "p": c.params.p}
            e = c.estimate
            row = [
                *(_fmt(pv[n]) for n in names),
                *(_fmt(pv[n]) for n in fixed_names),
                str(e.n_reps),
                _fmt(e.mean),
                _fmt(e.stderr),
                _fmt(e.ci95[0]),
                _fmt(e.ci95[1]),
                _fmt(e.censored_fraction),
                _fmt(c.analytic_lambda_c),
                c.analytic_regime.value,
            ]
            fh.write(",".join(row) + "\n")
    finally:
        if owned:
            fh.close()


def _plot_axes(names: tuple[str, str]) -> tuple[str, str]:
    """(x, y) parameter names: lambda is vertical when present, else p."""
    y = "lambda" if "lambda" in names else "p"
    x = names[0] if names[1] == y else names[1]
    return x, y


def overlay_curve(
    x_name: str,
    y_name: str,
    x_range: tuple[float, float],
    fixed: dict,
    n: int = 200,
) -> list[tuple[float, float]]:
    """Critical curve as vertices ``(x, y)`` in plot coordinates.

    With lambda vertical the curve is ``y = lambda_c``; for an ``(r, p)``
    plane at fixed lambda it is the ``p`` solving ``lambda_c(r, p) = lambda``
    (``lambda_c`` is decreasing in ``p``), kept only where that ``p`` is in range.
    """
    xs = np.linspace(x_range[0], x_range[1], n)
    out: list[tuple[float, float]] = []
    if y_name == "lambda":
        for x in xs:
            vals = dict(fixed)
            vals[x_name] = float(x)
            out.append((float(x), critical_lambda_mixed(vals["r"], vals["p"])))
        return out
    lam = fixed["lambda"]
    for x in xs:
        f = lambda p, r=float(x): critical_lambda_mixed(r, p) - lam
        lo, hi = EPS, 1.0
        if f(lo) * f(hi) > 0:
            continue
        p_star = lo if f(lo) == 0 else brentq(f, lo, hi, xtol=1e-15, rtol=1e-15)
        out.append((float(x), float(p_star)))
    return out


_LABEL = {"lambda": "λ", "r": "r", "p": "p"}


def _color(v: float, lo: float, hi: float) -> str:
    if not math.isfinite(v):
        return "#bdbdbd"
    s = 0.0 if hi <= lo else min(max((v - lo) / (hi - lo), 0.0), 1.0)
    # white -> dark blue, linear in each channel
    c0, c1 = (255, 255, 255), (8, 48, 107)
    rgb = [round(a + s * (b - a)) for a, b in zip(c0, c1)]
    return "#{:02x}{:02x}{:02x}".format(*rgb)


def emit_phase_svg(
    cells: list[SweepCell],
    overlay: bool,
    destination,
    *,
    survival: Optional[bool] = None,
    width: int = 640,
    height: int = 560,
) -> None:
    """Heatmap of cell estimates, with the analytic critical curve when ``overlay``."""
    if not cells:
        raise ValueError("no cells to draw")
    names = cells[0].axis_names
    x_name, y_name = _plot_axes(names)
    xi, yi = names.index(x_name), names.index(y_name)
    xs = sorted({c.coords[xi] for c in cells})
    ys = sorted({c.coords[yi] for c in cells})
    if len(xs) < 2 or len(ys) < 2:
        raise ValueError("a phase diagram needs a 2-D grid")
    dx = (xs[-1] - xs[0]) / (len(xs) - 1)
    dy = (ys[-1] - ys[0]) / (len(ys) - 1)
    x0, x1 = xs[0] - dx / 2, xs[-1] + dx / 2
    y0, y1 = ys[0] - dy / 2, ys[-1] + dy / 2
    ml, mr, mt, mb = 70, 90, 30, 60
    pw, ph = width - ml - mr, height - mt - mb
    px = lambda x: ml + (x - x0) / (x1 - x0) * pw
    py = lambda y: mt + ph - (y - y0) / (y1 - y0) * ph

    values = [c.estimate.mean for c in cells]
    if survival is None:
        survival = all(0.0 <= v <= 1.0 for v in values if math.isfinite(v))
    finite = [v for v in values if math.isfinite(v)]
    if survival:
        vlo, vhi = 0.0, 1.0
    else:
        vlo, vhi = (min(finite), max(finite)) if finite else (0.0, 1.0)

    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<defs><clipPath id="plot"><rect x="{ml}" y="{mt}" width="{pw}" height="{ph}"/></clipPath></defs>',
        '<rect width="100%" height="100%" fill="white"/>',
        '<g id="heatmap" shape-rendering="crispEdges">',
    ]
    cw, ch = pw / len(xs), ph / len(ys)
    for c in cells:
        x, y = c.coords[xi], c.coords[yi]
        lines.append(
            f'<rect x="{px(x) - cw / 2:.3f}" y="{py(y) - ch / 2:.3f}" width="{cw:.3f}" height="{ch:.3f}" '
            f'fill="{_color(c.estimate.mean, vlo, vhi)}"><title>{_fmt(x)},{_fmt(y)}: {_fmt(c.estimate.mean)}</title></rect>'
        )
    lines.append("</g>")

    if overlay:
        p = cells[0].params
        fixed = {"lambda": p.lam, "r": p.r, "p": p.p}
        fixed = {k: v for k, v in fixed.items() if k not in names}
        start = OVERLAY_EPS if x_name in ("r", "p") and xs[0] <= EPS else xs[0]
        verts = overlay_curve(x_name, y_name, (start, xs[-1]), fixed)
        pts = " ".join(f"{px(a):.3f},{py(b):.3f}" for a, b in verts)
        data = " ".join(f"{a!r},{b!r}" for a, b in verts)
        lines.append(
            f'<polyline id="critical-curve" clip-path="url(#plot)" fill="none" stroke="#d62728" stroke-width="2" '
            f'points="{pts}" data-vertices="{data}"/>'
        )

    lines.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for v in (xs[0], 0.5 * (xs[0] + xs[-1]), xs[-1]):
        lines.append(f'<text x="{px(v):.3f}" y="{mt + ph + 18}" font-size="12" text-anchor="middle">{v:.3g}</text>')
    for v in (ys[0], 0.5 * (ys[0] + ys[-1]), ys[-1]):
        lines.append(f'<text x="{ml - 6}" y="{py(v) + 4:.3f}" font-size="12" text-anchor="end">{v:.3g}</text>')
    lines.append(f'<text x="{ml + pw / 2}" y="{height - 15}" font-size="14" text-anchor="middle">{_LABEL[x_name]}</text>')
    lines.append(
        f'<text x="18" y="{mt + ph / 2}" font-size="14" text-anchor="middle" transform="rotate(-90 18 {mt + ph / 2})">{_LABEL[y_name]}</text>'
    )
    # colour bar
    bx = ml + pw + 25
    for k in range(50):
        v = vlo + (vhi - vlo) * k / 49
        lines.append(f'<rect x="{bx}" y="{mt + ph - (k + 1) * ph / 50:.3f}" width="15" height="{ph / 50 + 0.5:.3f}" fill="{_color(v, vlo, vhi)}"/>')
    lines.append(f'<text x="{bx + 20}" y="{mt + ph}" font-size="11">{vlo:.3g}</text>')
    lines.append(f'<text x="{bx + 20}" y="{mt + 10}" font-size="11">{vhi:.3g}</text>')
    lines.append("</svg>")

    fh, owned = _open_out(destination)
    try:
        fh.write("\n".join(lines) + "\n")
    finally:
        if owned:
            fh.close()


def parse_grid(text: str) -> tuple[Axis, Axis, dict]:
    """Parse ``"lambda=0.05:1.2:20,r=0:1:20,p=0.2"`` into two axes and fixed values.

    Ranges are ``lo:hi:steps``; single numbers are fixed values.  Axes keep
    the order in which they appear.
    """
    axes, fixed = [], {}
    for part in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in part:
            raise DomainError(f"grid item {part!r} is not name=value")
        name, val = (s.strip() for s in part.split("=", 1))
        if name not in PARAM_NAMES:
            raise DomainError(f"unknown grid parameter {name!r}")
        if ":" in val:
            bits = val.split(":")
            if len(bits) != 3:
                raise DomainError(f"range for {name} must be lo:hi:steps, got {val!r}")
            axes.append(Axis(name, float(bits[0]), float(bits[1]), int(bits[2])))
        else:
            fixed[name] = float(val)
    if len(axes) != 2:
        raise DomainError(f"grid needs exactly two ranged axes, got {len(axes)}")
    return axes[0], axes[1], fixed
