"""Closed-form results for the ancestral-order killing model.

Everything here is a pure function of the parameters.  Infinite means are
returned as ``math.inf``; undefined roots (complex, above the critical curve)
are ``None``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

__all__ = [
    "DomainError",
    "Variant",
    "Regime",
    "ModelParams",
    "AnalyticSummary",
    "WindowKind",
    "MutationWindow",
    "CRITICAL_RTOL",
    "critical_lambda",
    "critical_lambda_mixed",
    "params_critical_lambda",
    "classify",
    "roots",
    "expected_total_progeny",
    "expected_counts_mixed",
    "mutation_window",
    "effective_params",
    "conditioned_mean_progeny",
    "mgf",
    "mgf_min_check",
    "extinction_prob_star",
    "summarize",
]

# |lambda - lambda_c| <= CRITICAL_RTOL * max(1, lambda_c) counts as critical.
CRITICAL_RTOL = 1e-12


class DomainError(ValueError):
    """A parameter lies outside the domain where the model is defined."""


class Variant(enum.Enum):
    STANDARD = "standard"
    STAR = "star"
    MIXED = "mixed"
    CONDITIONED = "conditioned"


class Regime(enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"

    @property
    def dies_out(self) -> bool:
        return self is not Regime.SUPERCRITICAL


def _check_unit(name: str, value: float) -> None:
    if not (0.0 < value <= 1.0):
        raise DomainError(f"{name} must lie in (0, 1], got {value!r}")


def _check_positive(name: str, value: float) -> None:
    if not (value > 0.0 and math.isfinite(value)):
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")


@dataclass(frozen=True)
class ModelParams:
    """Birth rate, mutation probability, beneficial fraction and model variant.

    ``p`` only has meaning for the mixed variant; the other variants require
    ``p == 1``.  ``t`` is the imposed death time of the initial type for the
    conditioned variant and must be left ``None`` otherwise.
    """

    lam: float
    r: float
    p: float = 1.0
    variant: Variant = Variant.STANDARD
    t: Optional[float] = None

    def __post_init__(self):
        _check_positive("lambda", self.lam)
        _check_unit("r", self.r)
        _check_unit("p", self.p)
        if self.variant is not Variant.MIXED and self.p != 1.0:
            raise DomainError(f"p < 1 requires the mixed variant, got variant={self.variant.value}")
        if self.variant is Variant.CONDITIONED:
            if self.t is None or not (self.t >= 0.0 and math.isfinite(self.t)):
                raise DomainError(f"conditioned variant needs a finite t >= 0, got {self.t!r}")
        elif self.t is not None:
            raise DomainError("t is only meaningful for the conditioned variant")

    @classmethod
    def standard(cls, lam: float, r: float) -> "ModelParams":
        return cls(lam, r)

    @classmethod
    def star(cls, lam: float, r: float) -> "ModelParams":
        return cls(lam, r, variant=Variant.STAR)

    @classmethod
    def mixed(cls, lam: float, r: float, p: float) -> "ModelParams":
        return cls(lam, r, p, variant=Variant.MIXED)

    @classmethod
    def conditioned(cls, lam: float, r: float, t: float) -> "ModelParams":
        return cls(lam, r, variant=Variant.CONDITIONED, t=t)


def critical_lambda(r: float) -> float:
    """Critical birth rate ``(1 + sqrt(r))**-2`` of the beneficial-mutation model."""
    _check_unit("r", r)
    return 1.0 / (1.0 + math.sqrt(r)) ** 2


def critical_lambda_mixed(r: float, p: float) -> float:
    """Critical birth rate when a fraction ``1 - p`` of mutants is sterile."""
    _check_unit("r", r)
    _check_unit("p", p)
    rp = r * p
    return 1.0 / (math.sqrt(1.0 - r + rp) + math.sqrt(rp)) ** 2


def params_critical_lambda(params: ModelParams) -> float:
    if params.variant is Variant.MIXED:
        return critical_lambda_mixed(params.r, params.p)
    return critical_lambda(params.r)


def _regime(lam: float, lam_c: float) -> Regime:
    if abs(lam - lam_c) <= CRITICAL_RTOL * max(1.0, lam_c):
        return Regime.CRITICAL
    return Regime.SUBCRITICAL if lam < lam_c else Regime.SUPERCRITICAL


def classify(params: ModelParams) -> Regime:
    """Position of ``params`` relative to the critical curve.

    Critical points belong to the extinction phase.
    """
    return _regime(params.lam, params_critical_lambda(params))


def _discriminant(lam: float, r: float, p: float = 1.0) -> float:
    b = 1.0 + lam * (1.0 - r)
    return b * b - 4.0 * lam * (1.0 - r + r * p)


def roots(lam: float, r: float) -> tuple[float, float, float]:
    """Roots ``alpha <= beta`` of ``X**2 - [1 + lam(1-r)] X + lam`` and the discriminant.

    Only defined on and below the critical curve, where the roots are real.
    A discriminant that rounds slightly negative at the critical point is
    clamped to zero.
    """
    _check_positive("lambda", lam)
    lam_c = critical_lambda(r)
    if _regime(lam, lam_c) is Regime.SUPERCRITICAL:
        raise DomainError(f"roots are complex for lambda={lam!r} > lambda_c(r)={lam_c!r}")
    delta = _clamped_discriminant(lam, r, 1.0, lam_c)
    beta = 0.5 * (1.0 + lam * (1.0 - r) + math.sqrt(delta))
    # alpha from the product of the roots; the subtractive form cancels badly for small lambda
    alpha = lam / beta
    return alpha, beta, delta


def _clamped_discriminant(lam: float, r: float, p: float, lam_c: float) -> float:
    # inside the critical band the discriminant is zero up to rounding, and its
    # square root would turn 1e-16 noise into 1e-8 errors
    if _regime(lam, lam_c) is Regime.CRITICAL:
        return 0.0
    return max(_discriminant(lam, r, p), 0.0)


def _progeny_mean(lam: float, r: float, p: float) -> float:
    delta = _clamped_discriminant(lam, r, p, critical_lambda_mixed(r, p))
    return 2.0 / (1.0 - lam * (1.0 - r) + math.sqrt(delta))


def expected_total_progeny(lam: float, r: float) -> float:
    """Mean number of pathogens ever present, counting the initial one.

    Infinite strictly above the critical curve.
    """
    _check_positive("lambda", lam)
    if _regime(lam, critical_lambda(r)) is Regime.SUPERCRITICAL:
        return math.inf
    return _progeny_mean(lam, r, 1.0)


def expected_counts_mixed(lam: float, r: float, p: float) -> tuple[float, float, float]:
    """Means of viable count, sterile count and their total for the mixed model.

    Returns ``(mean_Nv, mean_S, mean_Np)``.  The total uses the general
    expression ``(mean_Nv - r(1-p)) / (1 - r(1-p))``, also at criticality.
    """
    _check_positive("lambda", lam)
    if _regime(lam, critical_lambda_mixed(r, p)) is Regime.SUPERCRITICAL:
        return math.inf, math.inf, math.inf
    waste = r * (1.0 - p)
    keep = 1.0 - waste
    mean_nv = _progeny_mean(lam, r, p)
    mean_s = waste / keep * (mean_nv - 1.0)
    mean_np = (mean_nv - waste) / keep
    return mean_nv, mean_s, mean_np


def effective_params(lam: float, r: float, p: float) -> tuple[float, float]:
    """Birth rate and mutation probability of the viable subprocess.

    Discarding sterile births thins the rate-``lam`` birth stream to rate
    ``lam(1 - r + rp)``, of which a fraction ``rp / (1 - r + rp)`` are new types.
    """
    _check_positive("lambda", lam)
    _check_unit("r", r)
    _check_unit("p", p)
    keep = 1.0 - r + r * p
    return lam * keep, r * p / keep


def conditioned_mean_progeny(t: float, lam: float, r: float) -> float:
    """``E[Y(t)] = exp(alpha t)``: mean progeny when the initial type dies at time ``t``."""
    if not (t >= 0.0 and math.isfinite(t)):
        raise DomainError(f"t must be a finite nonnegative number, got {t!r}")
    alpha, _, _ = roots(lam, r)
    return math.exp(alpha * t)


def extinction_prob_star(q: float, r: float) -> float:
    """Extinction probability of the starred variant from that of the standard one."""
    _check_unit("r", r)
    if not (0.0 <= q <= 1.0):
        raise DomainError(f"q must lie in [0, 1], got {q!r}")
    return (1.0 - r) + r * q


def mgf(u: float, r: float) -> float:
    """MGF of a clock that is 0 w.p. ``1 - r`` and Exponential(1) w.p. ``r``; needs ``u < 1``."""
    return 1.0 - r + r / (1.0 - u)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f, lo: float, hi: float, xtol: float) -> tuple[float, float]:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > xtol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def mgf_min_check(lam: float, r: float, *, eps: float = 1e-9, xtol: float = 1e-10) -> float:
    """Minimum over ``u in (0, 1)`` of ``(lam / u) * mgf(u, r)`` by golden-section search.

    The minimum equals ``lam * (1 + sqrt(r))**2``, so it exceeds 1 exactly
    when the process is supercritical.
    """
    _check_positive("lambda", lam)
    _check_unit("r", r)
    _, fmin = _golden_min(lambda u: lam / u * mgf(u, r), eps, 1.0 - eps, xtol)
    return fmin


class WindowKind(enum.Enum):
    EMPTY = "empty"  # extinction for every r
    ABOVE = "above"  # survival iff r > r_minus
    INTERVAL = "interval"  # survival iff r_minus < r < r_plus
    BELOW = "below"  # survival iff r < r_plus
    FULL = "full"  # survival for every r


@dataclass(frozen=True)
class MutationWindow:
    """Set of mutation probabilities ``r`` for which the mixed model survives at fixed ``(lam, p)``.

    ``lambda_c_min`` is the minimum of ``r -> lambda_c(r, p)`` over ``(0, 1]``:
    ``1 - p`` at ``r_star`` when ``p < 1/2``, otherwise ``1/(4p)`` at ``r = 1``.
    """

    kind: WindowKind
    lam: float
    p: float
    r_minus: Optional[float] = None
    r_plus: Optional[float] = None
    r_star: Optional[float] = None
    lambda_c_min: float = field(default=math.nan)

    def contains(self, r: float) -> bool:
        if self.kind is WindowKind.EMPTY:
            return False
        if self.kind is WindowKind.FULL:
            return True
        if self.r_minus is not None and not r > self.r_minus:
            return False
        if self.r_plus is not None and not r < self.r_plus:
            return False
        return True

    def endpoints(self) -> list[float]:
        return [x for x in (self.r_minus, self.r_plus) if x is not None]


def _window_endpoints(lam: float, p: float) -> tuple[float, float]:
    s = math.sqrt(max(lam + p - 1.0, 0.0))
    sp = math.sqrt(p)
    return (sp - s) ** 2 / lam, (sp + s) ** 2 / lam


def mutation_window(lam: float, p: float) -> MutationWindow:
    """Case analysis of the survival set in ``r`` for fixed ``(lam, p)``.

    Endpoints are excluded: on the critical curve the process dies out.
    """
    _check_positive("lambda", lam)
    _check_unit("p", p)
    quarter = 1.0 / (4.0 * p)
    if p >= 0.5:
        r_star = None
        lc_min = quarter
    else:
        r_star = p / (1.0 - p)
        lc_min = 1.0 - p
    mk = lambda kind, lo=None, hi=None: MutationWindow(kind, lam, p, lo, hi, r_star, lc_min)

    if p >= 0.5:
        if lam <= quarter:
            return mk(WindowKind.EMPTY)
        if lam < 1.0:
            return mk(WindowKind.ABOVE, _window_endpoints(lam, p)[0])
        return mk(WindowKind.FULL)

    if lam <= 1.0 - p:
        return mk(WindowKind.EMPTY)
    r_minus, r_plus = _window_endpoints(lam, p)
    if lam < min(1.0, quarter):
        return mk(WindowKind.INTERVAL, r_minus, r_plus)
    if lam == quarter and lam < 1.0:
        # lambda_c(1, p) == lam: r = 1 itself is critical and excluded
        return mk(WindowKind.INTERVAL, r_minus, 1.0)
    if p > 0.25 and quarter < lam < 1.0:
        return mk(WindowKind.ABOVE, r_minus)
    if p < 0.25 and 1.0 <= lam < quarter:
        return mk(WindowKind.BELOW, None, r_plus)
    return mk(WindowKind.FULL)


@dataclass(frozen=True)
class AnalyticSummary:
    """Derived scalars for one parameter point.

    ``alpha``/``beta``/``delta`` belong to the viable subprocess with
    effective parameters, which for ``p = 1`` is the process itself.
    ``mean_N`` is the mean total progeny of the chosen variant.
    """

    params: ModelParams
    lambda_c: float
    regime: Regime
    delta: float
    alpha: Optional[float]
    beta: Optional[float]
    lambda_eff: float
    r_eff: float
    mean_N: float
    mean_Nv: float
    mean_S: float
    mean_Np: float

    def as_dict(self) -> dict:
        p = self.params
        return {
            "lambda": p.lam,
            "r": p.r,
            "p": p.p,
            "variant": p.variant.value,
            "t": p.t,
            "lambda_c": self.lambda_c,
            "regime": self.regime.value,
            "delta": self.delta,
            "alpha": self.alpha,
            "beta": self.beta,
            "lambda_eff": self.lambda_eff,
            "r_eff": self.r_eff,
            "mean_N": self.mean_N,
            "mean_Nv": self.mean_Nv,
            "mean_S": self.mean_S,
            "mean_Np": self.mean_Np,
        }


def summarize(params: ModelParams) -> AnalyticSummary:
    lam, r, p = params.lam, params.r, params.p
    lam_c = params_critical_lambda(params)
    regime = _regime(lam, lam_c)
    lam_eff, r_eff = effective_params(lam, r, p)
    delta = _discriminant(lam, r, p)
    if regime is Regime.SUPERCRITICAL:
        alpha = beta = None
    else:
        # the effective process shares the critical point, so roots() accepts it
        alpha, beta, _ = roots(lam_eff, r_eff)
    mean_nv, mean_s, mean_np = expected_counts_mixed(lam, r, p)

    if params.variant is Variant.STAR:
        mean_n = 1.0 - r + r * mean_nv
    elif params.variant is Variant.CONDITIONED:
        if params.t == 0.0:
            mean_n = 1.0
        else:
            mean_n = math.inf if alpha is None else math.exp(alpha * params.t)
    else:
        mean_n = mean_np
    if params.variant is not Variant.MIXED:
        mean_nv = mean_np = mean_n
    return AnalyticSummary(
        params=params,
        lambda_c=lam_c,
        regime=regime,
        delta=delta,
        alpha=alpha,
        beta=beta,
        lambda_eff=lam_eff,
        r_eff=r_eff,
        mean_N=mean_n,
        mean_Nv=mean_nv,
        mean_S=mean_s,
        mean_Np=mean_np,
    )
