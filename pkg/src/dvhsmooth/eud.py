"""Equivalent uniform dose: the power mean of the dose over a region.

    E_alpha(sigma) = [ (1/vol R) int_R f_sigma^alpha ]^(1/alpha)

The integral is a plain weighted midpoint sum (the weights are the cell
volumes, smoothly tapered across a ball's surface) normalised by the total
weight, so the discrete value is itself a power mean of the node values:
bounds, homogeneity and the power-mean inequality hold exactly, and the
gradient below differentiates exactly this sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .dose_model import PeakFamily, basis, validate_sigma
from .errors import InvalidArgumentError, NumericalDomainError
from .geometry import DEFAULT_REGION, Region
from .histogram import DEFAULT_QUADRATURE, QuadratureSpec, _grid_geometry, sample_region


@dataclass(frozen=True)
class EudSpec:
    alpha: float
    region: Region = DEFAULT_REGION
    quad: QuadratureSpec = DEFAULT_QUADRATURE

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha == 0:
            raise InvalidArgumentError(f"alpha must be a finite nonzero number, got {self.alpha}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "region": self.region.to_dict(), "quad": self.quad.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "EudSpec":
        return cls(
            float(d["alpha"]),
            Region.from_dict(d["region"]) if "region" in d else DEFAULT_REGION,
            QuadratureSpec.from_dict(d["quad"]) if "quad" in d else DEFAULT_QUADRATURE,
        )


def _sums(family: PeakFamily, s: np.ndarray, spec: EudSpec, backend=None) -> np.ndarray:
    """``[sum w, sum w f^a, sum w f^(a-1) b_j ...]`` over the quadrature nodes."""
    quad = spec.quad
    if quad.kind == "monte-carlo":
        pts = sample_region(spec.region, quad.samples, np.random.default_rng(quad.seed))
        b = basis(family, pts)
        f = np.sum(b * s, axis=-1)
        fa1 = f ** (spec.alpha - 1.0)
        return np.concatenate([[len(f), np.sum(fa1 * f)], fa1 @ b])
    lo, delta, shape, width, ball = _grid_geometry(spec.region, quad.resolution)
    part = _backend.power_sums(
        family.centers, family.offsets, s, lo, delta, shape, float(spec.alpha), width, ball, backend=backend
    )
    return part.sum(axis=0)


def _mean_power(sums, alpha, s):
    m = sums[1] / sums[0]
    if not (np.isfinite(m) and m > 0):
        raise NumericalDomainError(f"power mean integral is {m!r} (alpha={alpha})", point=s)
    return m


def eud(family: PeakFamily, sigma, spec: EudSpec, backend=None) -> float:
    s = validate_sigma(family, sigma)
    sums = _sums(family, s, spec, backend)
    return float(_mean_power(sums, spec.alpha, s) ** (1.0 / spec.alpha))


def eud_and_grad(family: PeakFamily, sigma, spec: EudSpec, backend=None) -> tuple[float, np.ndarray]:
    """``E_alpha`` and ``dE/dsigma_j = E^(1-alpha) * mean(f^(alpha-1) b_j)``."""
    s = validate_sigma(family, sigma)
    sums = _sums(family, s, spec, backend)
    e = _mean_power(sums, spec.alpha, s) ** (1.0 / spec.alpha)
    return float(e), e ** (1.0 - spec.alpha) * sums[2:] / sums[0]


def eud_grad_sigma(family: PeakFamily, sigma, spec: EudSpec, backend=None) -> np.ndarray:
    return eud_and_grad(family, sigma, spec, backend)[1]


def power_mean_monotone_check(
    family: PeakFamily, sigma, region: Region, alphas, quad: QuadratureSpec = DEFAULT_QUADRATURE
) -> list[float]:
    """``E_alpha`` for each alpha; non-decreasing by the power-mean inequality."""
    alphas = [float(a) for a in alphas]
    if any(a == 0 for a in alphas):
        raise InvalidArgumentError("alphas must be nonzero")
    if any(b < a for a, b in zip(alphas, alphas[1:])):
        raise InvalidArgumentError("alphas must be ascending")
    return [eud(family, sigma, EudSpec(a, region, quad)) for a in alphas]


def node_extrema(family: PeakFamily, sigma, region: Region, quad: QuadratureSpec = DEFAULT_QUADRATURE):
    """Smallest and largest dose over the quadrature nodes with positive weight."""
    s = validate_sigma(family, sigma)
    if quad.kind == "monte-carlo":
        f = np.sum(basis(family, sample_region(region, quad.samples, np.random.default_rng(quad.seed))) * s, axis=-1)
        return float(f.min()), float(f.max())
    lo, delta, shape, width, ball = _grid_geometry(region, quad.resolution)
    lo_f, hi_f = _backend.field_extrema(family.centers, family.offsets, s, lo, delta, shape, width, ball)
    return float(lo_f), float(hi_f)
