"""Penalty objectives built from dose-volume and EUD constraints.

Each constraint contributes ``weight * G(deviation)`` with the one-sided
quadratic penalty ``G(x) = max(x, 0)**2``.  The closed-form 1-D examples
(``make_f1``, ``make_f2``) describe the objective along the coordinate
transverse to the hypersurface where the constraint dose equals a critical
value: ``sigma < 0`` is the side where a local maximum pokes above the dose
level and adds a volume ``alpha_loc * (-sigma)**1.5``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dose_model import PeakFamily, validate_sigma
from .errors import InvalidArgumentError, NumericalDomainError
from .eud import EudSpec, eud, eud_and_grad
from .geometry import Region
from .histogram import DEFAULT_QUADRATURE, QuadratureSpec, critical_points_for, volumes_above

DV_KINDS = ("dv-min", "dv-max")
EUD_KINDS = ("eud-min", "eud-max")


def penalty(x):
    """``G(x) = 0`` for ``x < 0`` and ``x**2`` otherwise (C1, not C2 at 0)."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, x * x, 0.0)
    return float(out) if out.ndim == 0 else out


def penalty_derivative(x):
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, 2.0 * x, 0.0)
    return float(out) if out.ndim == 0 else out


def penalty_second(x, side: str = "right"):
    """``G''``; at the seam ``x = 0`` the left limit is 0 and the right limit 2."""
    x = float(x)
    if x == 0.0:
        return 0.0 if side == "left" else 2.0
    return 2.0 if x > 0 else 0.0


@dataclass(frozen=True)
class Constraint:
    kind: str
    dose_level: float
    volume_fraction: float = 0.0
    alpha: float = 1.0
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in DV_KINDS + EUD_KINDS:
            raise InvalidArgumentError(f"unknown constraint kind {self.kind!r}")
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise InvalidArgumentError(f"constraint weight must be positive, got {self.weight}")
        if not math.isfinite(self.dose_level):
            raise InvalidArgumentError("dose level must be finite")
        if self.kind in DV_KINDS:
            if self.dose_level < 0:
                raise InvalidArgumentError("dose-volume levels must be >= 0")
            if not 0.0 <= self.volume_fraction <= 1.0:
                raise InvalidArgumentError(f"volume fraction must lie in [0, 1], got {self.volume_fraction}")
        elif not (self.alpha != 0 and math.isfinite(self.alpha)):
            raise InvalidArgumentError("EUD constraints need a finite nonzero alpha")

    @property
    def is_dv(self) -> bool:
        return self.kind in DV_KINDS

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "dose_level": self.dose_level, "weight": self.weight}
        if self.is_dv:
            d["volume_fraction"] = self.volume_fraction
        else:
            d["alpha"] = self.alpha
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Constraint":
        try:
            return cls(
                d["kind"],
                float(d["dose_level"]),
                float(d.get("volume_fraction", 0.0)),
                float(d.get("alpha", 1.0)),
                float(d.get("weight", 1.0)),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"bad constraint {d!r}: {exc}") from exc


@dataclass(frozen=True)
class ObjectiveSpec:
    family: PeakFamily
    terms: tuple
    quad: QuadratureSpec = DEFAULT_QUADRATURE

    def __post_init__(self):
        terms = tuple((r, c) for r, c in self.terms)
        if not terms:
            raise InvalidArgumentError("an objective needs at least one constraint")
        for r, c in terms:
            if not isinstance(r, Region) or not isinstance(c, Constraint):
                raise InvalidArgumentError("terms must be (Region, Constraint) pairs")
        object.__setattr__(self, "terms", terms)

    @property
    def eud_only(self) -> bool:
        return not any(c.is_dv for _, c in self.terms)

    def to_dict(self) -> dict:
        return {
            "family": self.family.to_dict(),
            "quad": self.quad.to_dict(),
            "terms": [{"region": r.to_dict(), "constraint": c.to_dict()} for r, c in self.terms],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveSpec":
        try:
            terms = [(Region.from_dict(t["region"]), Constraint.from_dict(t["constraint"])) for t in d["terms"]]
            quad = QuadratureSpec.from_dict(d["quad"]) if "quad" in d else DEFAULT_QUADRATURE
            return cls(PeakFamily.from_dict(d["family"]), tuple(terms), quad)
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"bad objective document: {exc}") from exc


def _dv_regions(spec):
    return list(dict.fromkeys(r for r, c in spec.terms if c.is_dv))


def deviations(spec: ObjectiveSpec, sigma, hints: dict | None = None) -> np.ndarray:
    """Signed penalty arguments, one per constraint (positive = violated).

    ``hints`` maps a region to critical points at a nearby parameter.
    """
    s = validate_sigma(spec.family, sigma)
    hints = hints or {}
    out = np.empty(len(spec.terms))
    # one quadrature pass per region for all its dose-volume levels
    by_region: dict = {}
    for i, (r, c) in enumerate(spec.terms):
        if c.is_dv:
            by_region.setdefault(r, []).append(i)
    for r, idx in by_region.items():
        levels = [spec.terms[i][1].dose_level for i in idx]
        vols = volumes_above(spec.family, s, r, levels, spec.quad, hints=hints.get(r))
        for i, v in zip(idx, vols):
            c = spec.terms[i][1]
            out[i] = c.volume_fraction - v if c.kind == "dv-min" else v - c.volume_fraction
    for i, (r, c) in enumerate(spec.terms):
        if not c.is_dv:
            e = eud(spec.family, s, EudSpec(c.alpha, r, spec.quad))
            out[i] = c.dose_level - e if c.kind == "eud-min" else e - c.dose_level
    return out


def objective_value(spec: ObjectiveSpec, sigma, hints: dict | None = None) -> float:
    dev = deviations(spec, sigma, hints)
    weights = np.array([c.weight for _, c in spec.terms])
    return float(np.sum(weights * penalty(dev)))


def objective_grad_fd(spec: ObjectiveSpec, sigma, step: float = 1e-3) -> np.ndarray:
    """Central differences, one weight at a time.

    Critical points found at ``sigma`` warm-start the patch planning at the
    stencil points, so the gradient costs one critical-point search.
    """
    s = validate_sigma(spec.family, sigma)
    if not step > 0:
        raise InvalidArgumentError("step must be positive")
    if np.any(s <= step):
        raise InvalidArgumentError(f"every weight must exceed the step {step}, got {s}")
    hints = {r: critical_points_for(spec.family, s, r) for r in _dv_regions(spec)} if spec.quad.patches else {}
    g = np.empty(len(s))
    for j in range(len(s)):
        e = np.zeros(len(s))
        e[j] = step
        g[j] = (objective_value(spec, s + e, hints) - objective_value(spec, s - e, hints)) / (2.0 * step)
    return g


def objective_grad_eud(spec: ObjectiveSpec, sigma) -> np.ndarray:
    """Analytic gradient through ``eud_and_grad``; EUD-only objectives."""
    if not spec.eud_only:
        raise InvalidArgumentError("analytic gradient needs an EUD-only objective")
    s = validate_sigma(spec.family, sigma)
    g = np.zeros(len(s))
    for r, c in spec.terms:
        e, de = eud_and_grad(spec.family, s, EudSpec(c.alpha, r, spec.quad))
        dev, sign = (c.dose_level - e, -1.0) if c.kind == "eud-min" else (e - c.dose_level, 1.0)
        g += c.weight * penalty_derivative(dev) * sign * de
    return g


# --- closed-form 1-D examples --------------------------------------------------


@dataclass
class Scalar1DObjective:
    """A scalar objective with exact first and second derivatives.

    ``second_fn(sigma, side)`` takes ``side`` in {"left", "right"} and only
    uses it at the points listed in ``flagged``, where the second derivative
    is one-sided or unbounded.
    """

    name: str
    value_fn: Callable[[float], float]
    first_derivative_fn: Callable[[float], float]
    second_derivative_fn: Callable[[float, str], float]
    flagged: tuple = ()
    domain_notes: str = ""
    minimizer: float | None = None
    params: dict = field(default_factory=dict)

    def value(self, sigma: float) -> float:
        return self.value_fn(float(sigma))

    def first(self, sigma: float) -> float:
        return self.first_derivative_fn(float(sigma))

    def second(self, sigma: float, side: str = "left") -> float:
        if side not in ("left", "right"):
            raise InvalidArgumentError(f"side must be 'left' or 'right', got {side!r}")
        return self.second_derivative_fn(float(sigma), side)


def _u(sigma):
    if not sigma > -10.0:
        raise NumericalDomainError(f"U(sigma) = 15/(10 + sigma) needs sigma > -10, got {sigma}", point=sigma)
    d = 10.0 + sigma
    return 15.0 / d, -15.0 / d**2, 30.0 / d**3


def make_f1() -> Scalar1DObjective:
    """``F1(sigma) = (U(sigma) - 1)**2`` with ``U = 15/(10 + sigma)``; minimum at 5."""

    def value(s):
        u, _, _ = _u(s)
        return (u - 1.0) ** 2

    def first(s):
        u, du, _ = _u(s)
        return 2.0 * (u - 1.0) * du

    def second(s, side="left"):
        u, du, d2u = _u(s)
        return 2.0 * du * du + 2.0 * (u - 1.0) * d2u

    return Scalar1DObjective(
        "f1", value, first, second, (), "smooth on sigma > -10; inflection at sigma = 12.5", 5.0
    )


DEFAULT_ALPHA_LOC = 1.0


def make_f2(alpha_loc: float = DEFAULT_ALPHA_LOC) -> Scalar1DObjective:
    """``F2 = (V - 1)**2`` with ``V = U + alpha_loc * (-sigma)**1.5`` for ``sigma < 0``, ``U`` otherwise.

    C1 everywhere; at ``sigma = 0`` the left second derivative is ``+inf`` and
    the right one is ``F1''(0)``.
    """
    alpha_loc = float(alpha_loc)
    if not (alpha_loc > 0 and math.isfinite(alpha_loc)):
        raise InvalidArgumentError(f"alpha_loc must be positive, got {alpha_loc}")

    def vol(s):
        u, du, d2u = _u(s)
        if s < 0:
            r = math.sqrt(-s)
            return u + alpha_loc * r**3, du - 1.5 * alpha_loc * r, d2u + (0.75 * alpha_loc / r)
        return u, du, d2u

    def value(s):
        return (vol(s)[0] - 1.0) ** 2

    def first(s):
        v, dv, _ = vol(s)
        return 2.0 * (v - 1.0) * dv

    def second(s, side="left"):
        if s == 0.0 and side == "left":
            # left limit of 2 V'^2 + 2 (V - 1) V'' with V'' ~ (3/4) alpha (-s)^(-1/2), V(0) - 1 = 1/2
            return math.inf
        v, dv, d2v = vol(s)
        return 2.0 * dv * dv + 2.0 * (v - 1.0) * d2v

    return Scalar1DObjective(
        "f2",
        value,
        first,
        second,
        (0.0,),
        "second derivative unbounded as sigma -> 0 from the left; equals F1 on sigma >= 0",
        5.0,
        {"alpha_loc": alpha_loc},
    )


def make_quadratic(center: float = 5.0, scale: float = 1.0) -> Scalar1DObjective:
    """``scale * (sigma - center)**2``; Newton is exact on it."""
    return Scalar1DObjective(
        "quadratic",
        lambda s: scale * (s - center) ** 2,
        lambda s: 2.0 * scale * (s - center),
        lambda s, side="left": 2.0 * scale,
        (),
        "",
        center,
    )


def make_sqrt_curvature(slope: float = 1.0) -> Scalar1DObjective:
    """Synthetic fixture: ``F' = slope`` constant and ``F'' = |sigma|**-0.5``.

    Deliberately not the derivatives of one function; it isolates the Newton
    step law ``|step| = slope * |sigma|**0.5``.
    """

    def second(s, side="left"):
        return math.inf if s == 0.0 else abs(s) ** -0.5

    return Scalar1DObjective(
        "sqrt-curvature",
        lambda s: slope * s,
        lambda s: slope,
        second,
        (0.0,),
        "inconsistent derivative pair, Newton-step fixture only",
        None,
    )


OBJECTIVES_1D = {"f1": make_f1, "f2": make_f2, "quadratic": make_quadratic}
