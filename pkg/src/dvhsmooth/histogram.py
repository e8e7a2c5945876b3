"""Volume functions: the relative volume of a region receiving at least dose h.

The reference quadrature is a midpoint grid over the region's bounding box
with a smoothed indicator per cell, so that ``sigma -> V_sigma(h)`` inherits
the smoothness of the field and finite-difference probes in ``sigma`` see
the true volume function, not grid staircases.  Around non-degenerate maxima
and minima, where the level sets shrink below the grid scale, the volume is
taken over from the grid by a smooth partition of unity and integrated along
rays from the critical point instead.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _backend
from ._kernels_py import partition
from .dose_model import PeakFamily, evaluate, find_critical_points, refine_critical_point, validate_sigma
from .errors import DegenerateCriticalPointError, InvalidArgumentError, TrackingLostError
from .fitting import ExponentFit, loglog_fit
from .geometry import DEFAULT_REGION, Region

DEFAULT_RESOLUTION = 96
MIN_PATCH_CELLS = 2
PATCH_SEPARATION = 0.45
RAY_POLAR = 24
RAY_AZIMUTH = 48
BISECTION_STEPS = 60


@dataclass(frozen=True)
class QuadratureSpec:
    """``kind`` is ``"midpoint-grid"`` (with ``resolution`` cells per axis) or
    ``"monte-carlo"`` (with ``samples`` and ``seed``)."""

    kind: str = "midpoint-grid"
    resolution: int = DEFAULT_RESOLUTION
    samples: int = 0
    seed: int = 0
    patches: bool = True

    def __post_init__(self):
        if self.kind == "midpoint-grid":
            if int(self.resolution) != self.resolution or self.resolution < 8:
                raise InvalidArgumentError(f"grid resolution must be an integer >= 8, got {self.resolution}")
        elif self.kind == "monte-carlo":
            if int(self.samples) != self.samples or self.samples < 1000:
                raise InvalidArgumentError(f"monte-carlo needs >= 1000 samples, got {self.samples}")
            if not 0 <= int(self.seed) < 2**64:
                raise InvalidArgumentError("seed must fit in 64 unsigned bits")
        else:
            raise InvalidArgumentError(f"unknown quadrature kind {self.kind!r}")

    @classmethod
    def grid(cls, resolution: int = DEFAULT_RESOLUTION, patches: bool = True) -> "QuadratureSpec":
        return cls("midpoint-grid", resolution=int(resolution), patches=patches)

    @classmethod
    def monte_carlo(cls, samples: int, seed: int = 0) -> "QuadratureSpec":
        return cls("monte-carlo", samples=int(samples), seed=int(seed))

    def to_dict(self) -> dict:
        if self.kind == "midpoint-grid":
            return {"kind": self.kind, "resolution": self.resolution, "patches": self.patches}
        return {"kind": self.kind, "samples": self.samples, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "QuadratureSpec":
        kind = d.get("kind", "midpoint-grid")
        if kind == "midpoint-grid":
            return cls.grid(d.get("resolution", DEFAULT_RESOLUTION), bool(d.get("patches", True)))
        if kind == "monte-carlo":
            return cls.monte_carlo(d["samples"], d.get("seed", 0))
        raise InvalidArgumentError(f"unknown quadrature kind {kind!r}")


DEFAULT_QUADRATURE = QuadratureSpec.grid()


class DvhCurve:
    """Sampled volume function ``h -> V(h)``."""

    def __init__(self, doses, volumes):
        self.doses = np.asarray(doses, dtype=float)
        self.volumes = np.asarray(volumes, dtype=float)
        if self.doses.shape != self.volumes.shape or self.doses.ndim != 1:
            raise InvalidArgumentError("doses and volumes must be 1-D arrays of equal length")
        if np.any(np.diff(self.doses) < 0):
            raise InvalidArgumentError("doses must be ascending")
        if np.any(self.volumes < 0) or np.any(self.volumes > 1):
            raise InvalidArgumentError("volumes must lie in [0, 1]")
        if np.any(np.diff(self.volumes) > 0):
            raise InvalidArgumentError("volumes must be non-increasing")

    def __len__(self):
        return len(self.doses)

    def to_csv(self, extra_columns: dict | None = None, comment: str | None = None, fmt: str = "%.16e") -> str:
        cols = {"dose": self.doses, "volume": self.volumes}
        cols.update(extra_columns or {})
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(cols))
        for row in zip(*cols.values()):
            writer.writerow([fmt % v for v in row])
        return buf.getvalue()


def _grid_geometry(region: Region, resolution: int):
    lo, hi = region.bounds()
    shape = (resolution,) * 3
    delta = (hi - lo) / resolution
    width = 2.0 * float(delta.max())
    ball = (np.array(region.center), region.radius) if region.kind == "ball" else None
    return lo, delta, shape, width, ball


@lru_cache(maxsize=512)
def _critical_points(family: PeakFamily, sigma_key: tuple, region: Region):
    box = Region.box(*region.bounds())
    return tuple(find_critical_points(family, np.array(sigma_key), box, on_degenerate="skip"))


def critical_points_for(family: PeakFamily, sigma, region: Region, hints=None) -> tuple:
    """Critical points used for patch planning.

    With ``hints`` (critical points at a nearby parameter) each one is
    refined by Newton at ``sigma`` instead of searching from scratch; any
    failure falls back to the full search.
    """
    s = validate_sigma(family, sigma)
    if hints is not None:
        try:
            out = tuple(refine_critical_point(family, s, c.location) for c in hints)
            if all(a.morse_signature == b.morse_signature for a, b in zip(out, hints)):
                return out
        except (TrackingLostError, DegenerateCriticalPointError):
            pass
    return _critical_points(family, tuple(s.tolist()), region)


@lru_cache(maxsize=1)
def _ray_directions():
    mu, wmu = np.polynomial.legendre.leggauss(RAY_POLAR)
    phi = 2.0 * math.pi * (np.arange(RAY_AZIMUTH) + 0.5) / RAY_AZIMUTH
    st = np.sqrt(1.0 - mu**2)
    dirs = np.stack(
        [np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(mu, np.ones_like(phi))], axis=-1
    ).reshape(-1, 3)
    weights = np.repeat(wmu * (2.0 * math.pi / RAY_AZIMUTH), RAY_AZIMUTH)
    return dirs, weights


def patch_plan(family: PeakFamily, sigma, region: Region, resolution: int, hints=None) -> list[tuple]:
    """``(center, radius, sign)`` for every extremum that gets a ray patch.

    ``sign`` is +1 for maxima and -1 for minima.  The radius is
    ``PATCH_SEPARATION`` times the distance to the nearest other critical
    point (the region's diameter if there is none), so it varies smoothly with
    ``sigma``; it is halved while the field is not strictly monotone along
    every ray, and extrema left with fewer than ``MIN_PATCH_CELLS`` cells are
    handed to the grid.  ``hints`` is passed to :func:`critical_points_for`.
    """
    s = validate_sigma(family, sigma)
    cps = critical_points_for(family, s, region, hints)
    _, delta, _, _, _ = _grid_geometry(region, resolution)
    cell = float(delta.max())
    dirs, _ = _ray_directions()
    plan = []
    for c in cps:
        if c.kind == "saddle" or not region.contains(c.location):
            continue
        others = [np.linalg.norm(o.location - c.location) for o in cps if o is not c]
        lo, hi = region.bounds()
        rho = PATCH_SEPARATION * min(others) if others else float(np.linalg.norm(hi - lo))
        sign = 1 if c.kind == "maximum" else -1
        while rho >= MIN_PATCH_CELLS * cell:
            reach = np.minimum(rho, region.exit_distance(c.location, dirs))
            r = reach[:, None] * np.linspace(0.0, 1.0, 33)[None, 1:]
            vals = evaluate(family, s, c.location + r[..., None] * dirs[:, None, :])
            vals = np.concatenate([np.full((len(dirs), 1), c.value), vals], axis=1)
            steps = sign * np.diff(vals, axis=1)
            if np.all(steps[reach > 0] < 0):
                plan.append((c.location, rho, sign))
                break
            rho *= 0.5
    return plan


def _psi_r2_integral(a, b, rho):
    """``int_a^b partition(r, rho) r^2 dr`` for arrays ``a <= b``."""
    half = 0.5 * rho
    lo1, hi1 = np.clip(a, 0.0, half), np.clip(b, 0.0, half)
    inner = (hi1**3 - lo1**3) / 3.0
    lo2, hi2 = np.clip(a, half, rho), np.clip(b, half, rho)
    x, w = np.polynomial.legendre.leggauss(6)  # exact: the integrand is a degree-11 polynomial
    mid, hw = 0.5 * (lo2 + hi2), 0.5 * (hi2 - lo2)
    r = mid[..., None] + hw[..., None] * x
    outer = hw * np.sum(w * partition(r, rho) * r * r, axis=-1)
    return inner + outer


def _patch_volume(family, s, region, center, rho, sign, levels):
    dirs, weights = _ray_directions()
    reach = np.minimum(rho, region.exit_distance(center, dirs))
    f0 = float(evaluate(family, s, center))
    fend = evaluate(family, s, center + reach[:, None] * dirs)
    h = levels[:, None]
    lo = np.zeros((len(levels), len(dirs)))
    hi = np.broadcast_to(reach, lo.shape).copy()
    for _ in range(BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        inside = evaluate(family, s, center + mid[..., None] * dirs) >= h
        if sign > 0:
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        else:
            hi = np.where(inside, mid, hi)
            lo = np.where(inside, lo, mid)
    full = np.broadcast_to(reach, lo.shape)
    if sign > 0:
        rstar = np.where(f0 < h, 0.0, np.where(fend >= h, full, lo))
        per_ray = _psi_r2_integral(np.zeros_like(rstar), rstar, rho)
    else:
        rstar = np.where(f0 >= h, 0.0, np.where(fend < h, full, hi))
        per_ray = _psi_r2_integral(rstar, full, rho)
    # row-wise sum, not BLAS: identical levels must give identical volumes
    return np.sum(per_ray * weights, axis=1)


def _check_levels(levels) -> np.ndarray:
    h = np.atleast_1d(np.asarray(levels, dtype=float))
    if h.ndim != 1 or not np.all(np.isfinite(h)):
        raise InvalidArgumentError("dose levels must be finite")
    if np.any(h < 0):
        raise InvalidArgumentError("dose levels must be >= 0")
    return h


def volumes_above(
    family: PeakFamily,
    sigma,
    region: Region = DEFAULT_REGION,
    levels=(0.0,),
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    backend: str | None = None,
    hints=None,
) -> np.ndarray:
    """Relative volume ``V_sigma(h)`` for every ``h`` in ``levels``.

    For the grid quadrature the result is exactly 1 at ``h = 0``, exactly
    monotone in ``h`` and independent of the number of threads.  ``hints``
    are critical points at a nearby parameter (see :func:`critical_points_for`).
    """
    s = validate_sigma(family, sigma)
    h = _check_levels(levels)
    if quad.kind == "monte-carlo":
        return np.array([volume_above_mc(family, s, region, v, quad.samples, quad.seed)[0] for v in h])
    out = np.ones(len(h))
    pos = h > 0
    if not pos.any():
        return out
    hp = h[pos]
    lo, delta, shape, width, ball = _grid_geometry(region, quad.resolution)
    plan = patch_plan(family, s, region, quad.resolution, hints) if quad.patches else []
    pc = np.array([p[0] for p in plan]).reshape(-1, 3)
    prho = np.array([p[1] for p in plan], dtype=float)
    sums = _backend.level_sums(
        family.centers, family.offsets, s, lo, delta, shape, hp, width, ball, pc, prho, backend=backend
    )
    total = sums.sum(axis=0) * float(np.prod(delta))
    for center, rho, sign in plan:
        total = total + _patch_volume(family, s, region, center, rho, sign, hp)
    out[pos] = np.clip(total / region.exact_volume, 0.0, 1.0)
    return out


def volume_above(family, sigma, region=DEFAULT_REGION, h=0.0, quad=DEFAULT_QUADRATURE, backend=None) -> float:
    """Relative volume of ``region`` where the dose is at least ``h``."""
    return float(volumes_above(family, sigma, region, [h], quad, backend)[0])


def sample_region(region: Region, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` uniform points in ``region``."""
    if region.kind == "box":
        lo, hi = region.bounds()
        return lo + (hi - lo) * rng.random((n, 3))
    u = rng.standard_normal((n, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = region.radius * rng.random(n) ** (1.0 / 3.0)
    return np.array(region.center) + r[:, None] * u


def volume_above_mc(family, sigma, region: Region, h: float, samples: int, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo estimate of the relative volume and its standard error."""
    s = validate_sigma(family, sigma)
    _check_levels([h])
    if h <= 0:
        return 1.0, 0.0
    pts = sample_region(region, int(samples), np.random.default_rng(int(seed)))
    hit = evaluate(family, s, pts) >= h
    p = float(hit.mean())
    return p, math.sqrt(p * (1.0 - p) / len(hit))


def dvh_curve(family, sigma, region=DEFAULT_REGION, h_grid=(0.0,), quad=DEFAULT_QUADRATURE) -> DvhCurve:
    h = _check_levels(h_grid)
    if np.any(np.diff(h) < 0):
        raise InvalidArgumentError("h_grid must be ascending")
    vols = volumes_above(family, sigma, region, h, quad)
    if quad.kind == "monte-carlo":
        # independent draws per level are not monotone by construction
        vols = np.minimum.accumulate(vols)
    return DvhCurve(h, vols)


def centered_peak_volume(h, weight: float = 1.0, offset: float = 1.0):
    """Exact volume of ``{weight/(offset+|x|^2) >= h}`` (a ball), for ``h > 0``."""
    h = np.asarray(h, dtype=float)
    r2 = np.maximum(weight / h - offset, 0.0)
    return 4.0 / 3.0 * math.pi * r2**1.5


# --- Morse standard forms ----------------------------------------------------


def local_volume_standard(p: int, q: int, k: float, radius: float = 1.0) -> float:
    """Volume of ``{x in ball(0, radius) : sum_{i<=p} x_i^2 - sum_{i>p} x_i^2 >= k}``.

    Closed forms for all four signatures in three dimensions; the saddle
    cases follow from slicing along the distinguished axis.
    """
    if p < 0 or q < 0 or p + q != 3:
        raise InvalidArgumentError(f"signature ({p}, {q}) must have p + q = 3, p, q >= 0")
    if not radius > 0:
        raise InvalidArgumentError("radius must be positive")
    k = float(k)
    r2 = radius * radius
    ball = 4.0 / 3.0 * math.pi * radius**3
    if q == 3:
        return 0.0 if k > 0 else (ball if k < -r2 else 4.0 / 3.0 * math.pi * (-k) ** 1.5)
    if p == 3:
        return ball if k <= 0 else (0.0 if k > r2 else ball - 4.0 / 3.0 * math.pi * k**1.5)
    if p == 1:
        return _one_positive(k, radius)
    return ball - _one_positive(-k, radius)


def _one_positive(k, radius):
    # {x1^2 - x2^2 - x3^2 >= k}: disc of radius^2 min(x1^2 - k, R^2 - x1^2) per x1 slice
    r2 = radius * radius
    if k < -r2:
        return 4.0 / 3.0 * math.pi * radius**3
    if k > r2:
        return 0.0
    a = math.sqrt(max(k, 0.0))
    b = math.sqrt(0.5 * (r2 + k))
    return 2.0 * math.pi * ((b**3 - a**3) / 3.0 - k * (b - a) + r2 * (radius - b) - (radius**3 - b**3) / 3.0)


def local_volume_exponent(
    p: int,
    q: int,
    side: str,
    radius: float = 1.0,
    k_range: tuple = (1e-6, 1e-3),
    samples: int = 16,
    return_fit: bool = False,
):
    """Exponent ``e`` of the non-smooth part ``|V(k) - V_smooth(k)| ~ c |k|^e``.

    ``k`` approaches 0 from ``side`` ("left" is k < 0).  The smooth
    background is a cubic fitted on the opposite side and extrapolated
    across 0.  Returns NaN when the chosen side carries no non-smooth term
    (V constant, or exactly polynomial there).
    """
    if side not in ("left", "right"):
        raise InvalidArgumentError(f"side must be 'left' or 'right', got {side!r}")
    sgn = -1.0 if side == "left" else 1.0
    s = np.geomspace(k_range[0], k_range[1], samples) * radius**2
    vol = np.vectorize(lambda k: local_volume_standard(p, q, k, radius))
    v0 = vol(0.0)
    v_side, v_opp = vol(sgn * s), vol(-sgn * s)
    var = np.abs(v_side - v0).max()
    if var <= 1e-13 * max(1.0, abs(v0)):
        return (math.nan, None) if return_fit else math.nan
    k_side = np.concatenate([[0.0], sgn * s])
    same = np.polyfit(k_side / s[-1], np.concatenate([[v0], v_side]), 3, full=True)
    rms = math.sqrt(float(same[1][0]) / len(k_side)) if len(same[1]) else 0.0
    if rms <= 1e-7 * var:
        return (math.nan, None) if return_fit else math.nan
    k_opp = np.concatenate([[0.0], -sgn * s])
    coef = np.polyfit(k_opp / s[-1], np.concatenate([[v0], v_opp]), 3)
    rough = v_side - np.polyval(coef, sgn * s / s[-1])
    fit = loglog_fit(s, rough)
    return (fit.exponent, fit) if return_fit else fit.exponent
