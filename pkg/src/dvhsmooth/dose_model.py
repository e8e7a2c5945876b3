"""Analytic dose fields built from inverse-quadratic peaks.

A :class:`PeakFamily` fixes peak centres ``a_i`` and offsets ``c_i``; the
treatment parameters ``sigma`` are the peak weights, so that

    f_sigma(x) = sum_i sigma_i / (c_i + |x - a_i|^2)

is linear in ``sigma`` and smooth in ``x``.  Everything here is a pure
function of its arguments.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DegenerateCriticalPointError, InvalidArgumentError, TrackingLostError
from .geometry import DEFAULT_REGION, Region

GRAD_TOL = 1e-10
STEP_TOL = 1e-9
DEGENERACY_TOL = 1e-8
DEDUP_RADIUS = 1e-6
NEWTON_MAX_ITER = 100
DEFAULT_SEED_RESOLUTION = 8


@dataclass(frozen=True)
class Peak:
    center: tuple
    offset: float

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        if len(center) != 3 or not all(math.isfinite(v) for v in center):
            raise InvalidArgumentError(f"peak center must be a finite 3-vector, got {self.center!r}")
        if not (self.offset > 0 and math.isfinite(self.offset)):
            raise InvalidArgumentError(f"peak offset must be positive, got {self.offset!r}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "offset", float(self.offset))


class PeakFamily:
    """Ordered collection of peaks; the parameter dimension is ``len(peaks)``."""

    def __init__(self, peaks: Iterable[Peak]):
        self.peaks = tuple(p if isinstance(p, Peak) else Peak(*p) for p in peaks)
        if not self.peaks:
            raise InvalidArgumentError("a peak family needs at least one peak")
        self.centers = np.array([p.center for p in self.peaks], dtype=float)
        self.offsets = np.array([p.offset for p in self.peaks], dtype=float)
        self.centers.setflags(write=False)
        self.offsets.setflags(write=False)

    @property
    def dimension(self) -> int:
        return len(self.peaks)

    def __len__(self):
        return len(self.peaks)

    def __eq__(self, other):
        return isinstance(other, PeakFamily) and self.peaks == other.peaks

    def __hash__(self):
        return hash(self.peaks)

    def __repr__(self):
        inner = ", ".join(f"({list(p.center)}, {p.offset:g})" for p in self.peaks)
        return f"PeakFamily([{inner}])"

    def to_dict(self) -> dict:
        return {"peaks": [{"center": list(p.center), "offset": p.offset} for p in self.peaks]}

    @classmethod
    def from_dict(cls, d: dict) -> "PeakFamily":
        try:
            return cls(Peak(tuple(p["center"]), float(p["offset"])) for p in d["peaks"])
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"bad peak family document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PeakFamily":
        return cls.from_dict(json.loads(text))


def single_peak(offset: float = 1.0, center=(0.0, 0.0, 0.0)) -> PeakFamily:
    """The one-maximum field ``1/(1+|x|^2)`` (at unit weight)."""
    return PeakFamily([Peak(center, offset)])


def two_peak() -> PeakFamily:
    """The two-maximum field ``1/(1+|x|^2) + 1/(2+|x-(4,0,0)|^2)`` (at unit weights)."""
    return PeakFamily([Peak((0.0, 0.0, 0.0), 1.0), Peak((4.0, 0.0, 0.0), 2.0)])


def validate_sigma(family: PeakFamily, sigma) -> np.ndarray:
    """Return ``sigma`` as a float array after checking it against ``family``."""
    s = np.asarray(sigma, dtype=float)
    if s.ndim != 1 or s.shape[0] != family.dimension:
        raise InvalidArgumentError(
            f"sigma has shape {s.shape}, family has dimension {family.dimension}"
        )
    if not np.all(np.isfinite(s)):
        raise InvalidArgumentError("sigma must be finite")
    if np.any(s < 0) or not np.any(s > 0):
        raise InvalidArgumentError(f"weights must be >= 0 with at least one > 0, got {s}")
    return s


def sigma_from_json(text: str) -> np.ndarray:
    values = json.loads(text)
    if not isinstance(values, list):
        raise InvalidArgumentError("a parameter point is a JSON array of numbers")
    return np.asarray(values, dtype=float)


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (3,):
        raise InvalidArgumentError(f"points must have trailing dimension 3, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("points must be finite")
    return x


def basis(family: PeakFamily, x) -> np.ndarray:
    """Per-peak unit-weight values ``1/(c_i + |x-a_i|^2)``, shape ``(..., m)``."""
    x = _points(x)
    d = x[..., None, :] - family.centers
    return 1.0 / (family.offsets + np.einsum("...ij,...ij->...i", d, d))


def evaluate(family: PeakFamily, sigma, x) -> np.ndarray | float:
    """Dose ``f_sigma(x)``; ``x`` may be a single point or an array of points."""
    s = validate_sigma(family, sigma)
    out = np.sum(basis(family, x) * s, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def gradient_x(family: PeakFamily, sigma, x) -> np.ndarray:
    s = validate_sigma(family, sigma)
    x = _points(x)
    d = x[..., None, :] - family.centers
    b = 1.0 / (family.offsets + np.einsum("...ij,...ij->...i", d, d))
    return -2.0 * np.einsum("...i,...ij->...j", s * b * b, d)


def hessian_x(family: PeakFamily, sigma, x) -> np.ndarray:
    """Spatial Hessian, shape ``(..., 3, 3)``; exactly symmetric."""
    s = validate_sigma(family, sigma)
    x = _points(x)
    d = x[..., None, :] - family.centers
    b = 1.0 / (family.offsets + np.einsum("...ij,...ij->...i", d, d))
    sb2 = s * b * b
    outer = np.einsum("...i,...ij,...ik->...jk", 8.0 * sb2 * b, d, d)
    hess = outer - 2.0 * sb2.sum(axis=-1)[..., None, None] * np.eye(3)
    return 0.5 * (hess + np.swapaxes(hess, -1, -2))


def laplacian_x(family: PeakFamily, sigma, x) -> np.ndarray | float:
    s = validate_sigma(family, sigma)
    x = _points(x)
    d = x[..., None, :] - family.centers
    r2 = np.einsum("...ij,...ij->...i", d, d)
    b = 1.0 / (family.offsets + r2)
    out = (s * b * b * (8.0 * b * r2 - 6.0)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def grad_sigma(family: PeakFamily, sigma, x) -> np.ndarray:
    """Derivative of the dose with respect to each weight (the peak basis)."""
    validate_sigma(family, sigma)
    return basis(family, x)


@dataclass(frozen=True)
class CriticalPoint:
    location: np.ndarray
    value: float
    morse_signature: tuple
    hessian_det: float
    eigenvalues: np.ndarray

    @property
    def kind(self) -> str:
        p, q = self.morse_signature
        if q == 3:
            return "maximum"
        if p == 3:
            return "minimum"
        return "saddle"

    def to_dict(self) -> dict:
        return {
            "location": [float(v) for v in self.location],
            "value": float(self.value),
            "morse_signature": list(self.morse_signature),
            "hessian_det": float(self.hessian_det),
            "kind": self.kind,
        }


def classify(family: PeakFamily, sigma, location) -> CriticalPoint:
    """Build a :class:`CriticalPoint` at ``location``, rejecting degenerate ones."""
    location = np.asarray(location, dtype=float)
    hess = hessian_x(family, sigma, location)
    eig = np.linalg.eigvalsh(hess)
    det = float(np.prod(eig))
    # mean |eigenvalue| instead of trace/3: the trace of a saddle Hessian can vanish
    scale = float(np.mean(np.abs(eig))) ** 3
    if not abs(det) > DEGENERACY_TOL * scale or scale == 0.0:
        raise DegenerateCriticalPointError(
            f"degenerate critical point at {location} (det Hess = {det:.3e})",
            location=location,
            hessian_det=det,
        )
    p = int(np.sum(eig > 0))
    return CriticalPoint(
        location=location,
        value=float(evaluate(family, sigma, location)),
        morse_signature=(p, 3 - p),
        hessian_det=det,
        eigenvalues=eig,
    )


def _newton_batch(family, sigma, x0, max_iter=NEWTON_MAX_ITER, grad_tol=GRAD_TOL, escape=None):
    """Vectorised Newton on grad f = 0.  Returns final points and a convergence mask.

    A point has converged when ``|grad f| < grad_tol`` and the Newton step is
    below ``STEP_TOL`` (relative); the step test stops a slowly converging
    sequence near a degenerate point from being accepted far from it.
    ``escape = (center, radius)`` drops points that run further away.
    """
    x = np.array(x0, dtype=float, copy=True)
    done = np.zeros(len(x), dtype=bool)
    alive = np.ones(len(x), dtype=bool)
    for _ in range(max_iter + 1):
        idx = np.flatnonzero(alive & ~done)
        if idx.size == 0:
            break
        g = gradient_x(family, sigma, x[idx])
        hess = hessian_x(family, sigma, x[idx])
        det = np.linalg.det(hess)
        ok = np.isfinite(det) & (np.abs(det) > 1e-300)
        small = np.linalg.norm(g, axis=-1) < grad_tol
        # exactly singular Hessian at a zero gradient: accept, classify() judges it
        done[idx[small & ~ok]] = True
        alive[idx[~small & ~ok]] = False
        idx, g, hess, small = idx[ok], g[ok], hess[ok], small[ok]
        if idx.size == 0:
            continue
        step = np.linalg.solve(hess, g[..., None])[..., 0]
        x[idx] -= step
        tiny = np.linalg.norm(step, axis=-1) <= STEP_TOL * (1.0 + np.abs(x[idx]).max(axis=-1))
        done[idx[small & tiny]] = True
        bad = ~np.all(np.isfinite(x[idx]), axis=-1) | (np.abs(x[idx]).max(axis=-1) > 1e8)
        if escape is not None:
            bad |= np.linalg.norm(x[idx] - escape[0], axis=-1) > escape[1]
        alive[idx[bad]] = False
    return x, done & alive


def seed_grid(search_box: Region, seed_resolution: int) -> np.ndarray:
    lo, hi = search_box.bounds()
    axes = [lo[i] + (hi[i] - lo[i]) * (np.arange(seed_resolution) + 0.5) / seed_resolution for i in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return pts[search_box.contains(pts)]


def _monotone_newton(family, sigma, x0, direction, bounds=None, max_iter=NEWTON_MAX_ITER, max_step=1.0):
    """Saddle-free Newton ascent (``direction=+1``) or descent (``-1``).

    The Hessian eigenvalues are replaced by ``-direction * |lambda|`` so every
    step improves ``f``; near a non-degenerate extremum of the right kind this
    is the plain Newton step.  Backtracking halves the step until ``f``
    improves.  Points leaving ``bounds`` (a ``(lo, hi)`` pair) are frozen.
    """
    sigma = validate_sigma(family, sigma)
    x = np.array(x0, dtype=float, copy=True)
    active = np.ones(len(x), dtype=bool)
    fx = np.sum(basis(family, x) * sigma, axis=-1) if len(x) else np.zeros(0)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g = gradient_x(family, sigma, x[idx])
        gn = np.linalg.norm(g, axis=-1)
        conv = gn < GRAD_TOL
        active[idx[conv]] = False
        idx, g = idx[~conv], g[~conv]
        if idx.size == 0:
            break
        lam, vec = np.linalg.eigh(hessian_x(family, sigma, x[idx]))
        lam = np.maximum(np.abs(lam), 1e-12)
        coef = np.einsum("nji,nj->ni", vec, g) / lam
        step = direction * np.einsum("nij,nj->ni", vec, coef)
        norm = np.linalg.norm(step, axis=-1)
        step *= np.minimum(1.0, max_step / np.maximum(norm, 1e-300))[:, None]
        trial = x[idx] + step
        ft = np.sum(basis(family, trial) * sigma, axis=-1)
        better = direction * (ft - fx[idx]) >= 0
        for _ in range(40):
            bad = np.flatnonzero(~better)
            if bad.size == 0:
                break
            step[bad] *= 0.5
            trial[bad] = x[idx[bad]] + step[bad]
            ft[bad] = np.sum(basis(family, trial[bad]) * sigma, axis=-1)
            better[bad] = direction * (ft[bad] - fx[idx[bad]]) >= 0
        x[idx] = trial
        fx[idx] = ft
        # tiny steps: rounding floor of the gradient reached, Newton refines later
        tiny = np.linalg.norm(step, axis=-1) < 1e-12 * (1.0 + np.abs(x[idx]).max(axis=-1))
        stuck = ~better | tiny | (np.abs(x[idx]).max(axis=-1) > 1e6)
        if bounds is not None:
            stuck |= np.any((x[idx] < bounds[0]) | (x[idx] > bounds[1]), axis=-1)
        active[idx[stuck]] = False
    return x


def _pass_points(family, sigma, maxima, samples=257):
    """Lowest point of ``f`` on the segment between each pair of maxima."""
    out = []
    t = np.linspace(0.0, 1.0, samples)[1:-1, None]
    for i in range(len(maxima)):
        for j in range(i + 1, len(maxima)):
            seg = maxima[i] + t * (maxima[j] - maxima[i])
            out.append(seg[np.argmin(evaluate(family, sigma, seg))])
    return np.array(out).reshape(-1, 3)


def find_critical_points(
    family: PeakFamily,
    sigma,
    search_box: Region = DEFAULT_REGION,
    seed_resolution: int = DEFAULT_SEED_RESOLUTION,
    on_degenerate: str = "raise",
) -> list[CriticalPoint]:
    """All non-degenerate critical points inside ``search_box``, by descending value.

    Newton's method on ``grad f = 0`` is run from a ``seed_resolution**3``
    midpoint grid.  Plain Newton only converges from seeds close to a critical
    point, so it is also started from the end points of a saddle-free Newton
    ascent/descent (which reach the extrema) and from the lowest point on the
    segment between every pair of maxima (near the connecting saddle).
    Non-converged seeds are dropped, roots are merged within ``DEDUP_RADIUS``.
    With ``on_degenerate="skip"`` degenerate roots are left out instead of
    raising :class:`DegenerateCriticalPointError`.
    """
    s = validate_sigma(family, sigma)
    if seed_resolution < 4:
        raise InvalidArgumentError("seed_resolution must be >= 4")
    if on_degenerate not in ("raise", "skip"):
        raise InvalidArgumentError(f"on_degenerate must be 'raise' or 'skip', got {on_degenerate!r}")
    seeds = seed_grid(search_box, seed_resolution)
    lo, hi = search_box.bounds()
    margin = 0.5 * (hi - lo)
    bounds = (lo - margin, hi + margin)
    ascended = _monotone_newton(family, s, seeds, +1, bounds)
    descended = _monotone_newton(family, s, seeds, -1, bounds)
    escape = (0.5 * (lo + hi), 10.0 * float(np.linalg.norm(hi - lo)))
    x, ok = _newton_batch(family, s, np.concatenate([seeds, ascended, descended]), escape=escape)
    roots = x[ok]
    roots = roots[search_box.contains(roots)]
    maxima = roots[np.all(np.linalg.eigvalsh(hessian_x(family, s, roots)) < 0, axis=-1)] if len(roots) else roots
    if len(maxima) > 1:
        x, ok = _newton_batch(family, s, _pass_points(family, s, _dedup(maxima)), escape=escape)
        extra = x[ok]
        roots = np.concatenate([roots, extra[search_box.contains(extra)]])
    points = []
    for u in _dedup(roots):
        try:
            points.append(classify(family, s, u))
        except DegenerateCriticalPointError:
            if on_degenerate == "raise":
                raise
    points.sort(key=lambda c: (-c.value, tuple(c.location)))
    return points


def _dedup(roots):
    unique: list[np.ndarray] = []
    for r in roots[np.lexsort(roots.T[::-1])]:
        if all(np.linalg.norm(r - u) > DEDUP_RADIUS for u in unique):
            unique.append(r)
    return np.array(unique).reshape(-1, 3)


def refine_critical_point(family: PeakFamily, sigma, guess, max_iter: int = NEWTON_MAX_ITER) -> CriticalPoint:
    """Newton from a single warm start; raises :class:`TrackingLostError` on failure."""
    s = validate_sigma(family, sigma)
    x, ok = _newton_batch(family, s, np.asarray(guess, dtype=float)[None, :], max_iter=max_iter)
    if not ok[0]:
        raise TrackingLostError(f"Newton did not converge from {guess}")
    return classify(family, s, x[0])


def track_critical_points(
    family: PeakFamily,
    sigma_path: Callable[[float], Sequence[float]],
    which: int,
    t_grid: Sequence[float],
    search_box: Region = DEFAULT_REGION,
    max_jump: float = 0.5,
    max_halvings: int = 12,
    start: CriticalPoint | None = None,
) -> list[CriticalPoint]:
    """Follow critical point number ``which`` (at ``t_grid[0]``) along a parameter path.

    ``start`` supplies the critical point at ``t_grid[0]`` directly, skipping
    the search (``which`` and ``search_box`` are then unused).
    Each step warm-starts Newton from the previous location.  If the solve
    fails, jumps further than ``max_jump`` or changes Morse signature, the
    step is halved (up to ``max_halvings`` times) before giving up.
    """
    t_grid = [float(t) for t in t_grid]
    if not t_grid:
        raise InvalidArgumentError("t_grid is empty")
    if start is None:
        found = find_critical_points(family, sigma_path(t_grid[0]), search_box)
        if not 0 <= which < len(found):
            raise InvalidArgumentError(f"critical point index {which} out of range ({len(found)} found)")
        current = found[which]
    else:
        current = start
    out = [current]
    t_prev = t_grid[0]
    for t in t_grid[1:]:
        current = _continue(family, sigma_path, current, t_prev, t, max_jump, max_halvings)
        out.append(current)
        t_prev = t
    return out


def _continue(family, sigma_path, cp, t0, t1, max_jump, max_halvings):
    pending = [t1]
    t_at = t0
    depth = 0
    while pending:
        t = pending[-1]
        try:
            nxt = refine_critical_point(family, sigma_path(t), cp.location)
            good = (
                np.linalg.norm(nxt.location - cp.location) <= max_jump
                and nxt.morse_signature == cp.morse_signature
            )
        except TrackingLostError:
            good = False
        if good:
            cp, t_at = nxt, t
            pending.pop()
            continue
        depth += 1
        if depth > max_halvings * 4:
            raise TrackingLostError(f"critical point lost between t={t0} and t={t1}")
        mid = 0.5 * (t_at + t)
        if abs(t - t_at) < abs(t1 - t0) * 2.0**-max_halvings:
            raise TrackingLostError(f"critical point lost near t={t}")
        pending.append(mid)
    return cp


def track_critical_value(family, sigma_path, which, t_grid, search_box: Region = DEFAULT_REGION):
    """``[(t, critical value), ...]`` along ``sigma_path`` by continuation."""
    pts = track_critical_points(family, sigma_path, which, t_grid, search_box)
    return [(float(t), cp.value) for t, cp in zip(t_grid, pts)]
