"""Diagnostics for the loss of second differentiability.

Locates the parameters where a dose level equals a critical value of the
field (the hypersurface Lambda), measures one-sided second-difference
exponents of sampled functions, and the Newton step-size law near Lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .dose_model import (
    CriticalPoint,
    PeakFamily,
    find_critical_points,
    grad_sigma,
    refine_critical_point,
    track_critical_points,
)
from .errors import BracketInvalidError, InsufficientDataError, InvalidArgumentError, TrackingLostError
from .fitting import FIT_QUALITY_MIN, ExponentFit, loglog_fit
from .geometry import DEFAULT_REGION, Region
from .objective import Scalar1DObjective
from .optimizer import newton1d_run

LAMBDA_TOL = 1e-8
DEFAULT_PROBE_STEPS = tuple(10.0 ** (-1.0 - 0.25 * k) for k in range(13))  # 1e-1 ... 1e-4
SLOWDOWN_BAND = 0.05

__all__ = [
    "ExponentFit",
    "LambdaPoint",
    "locate_lambda_1d",
    "fd_second_derivative",
    "holder_exponent",
    "step_scaling_probe",
    "lambda_distance",
]


@dataclass(frozen=True)
class LambdaPoint:
    sigma: np.ndarray
    critical_point: CriticalPoint
    dose_level: float
    residual: float

    def to_dict(self) -> dict:
        return {
            "sigma": [float(v) for v in self.sigma],
            "critical_point": self.critical_point.to_dict(),
            "dose_level": float(self.dose_level),
            "residual": float(self.residual),
        }


def _section(other_weights, which_weight: int, m: int | None = None):
    base = np.asarray(other_weights, dtype=float)
    if m is not None and len(base) == m - 1:
        base = np.insert(base, which_weight, 0.0)
    if not 0 <= which_weight < len(base):
        raise InvalidArgumentError(f"weight index {which_weight} out of range")

    def sigma_at(t):
        s = base.copy()
        s[which_weight] = t
        return s

    return sigma_at


def locate_lambda_1d(
    family: PeakFamily,
    h: float,
    which_weight: int,
    bracket: tuple,
    other_weights: Sequence[float],
    which: int | None = None,
    search_box: Region = DEFAULT_REGION,
    lambda_tol: float = LAMBDA_TOL,
) -> LambdaPoint:
    """Weight ``t`` in ``bracket`` where a tracked critical value equals ``h``.

    ``other_weights`` is either the full parameter vector (its entry at
    ``which_weight`` is ignored) or the other ``m - 1`` weights.  Without
    ``which`` the first critical point (by descending value at the bracket's
    low end) whose value crosses ``h`` is used.  The root is bracketed and
    refined with Brent's method on ``t -> f(x_t) - h``, the critical point
    ``x_t`` being continued from the nearer bracket end.
    """
    lo, hi = (float(v) for v in bracket)
    if not hi > lo:
        raise BracketInvalidError(f"bracket must satisfy lo < hi, got {bracket}")
    sigma_at = _section(other_weights, which_weight, family.dimension)
    start = find_critical_points(family, sigma_at(lo), search_box)
    candidates = range(len(start)) if which is None else [which]
    for idx in candidates:
        if not 0 <= idx < len(start):
            raise InvalidArgumentError(f"critical point index {idx} out of range ({len(start)} found)")
        try:
            cp_lo, cp_hi = track_critical_points(family, sigma_at, idx, [lo, hi], search_box)
        except TrackingLostError:
            if which is not None:
                raise
            continue
        g_lo, g_hi = cp_lo.value - h, cp_hi.value - h
        if g_lo == 0.0:
            return LambdaPoint(sigma_at(lo), cp_lo, float(h), 0.0)
        if g_hi == 0.0:
            return LambdaPoint(sigma_at(hi), cp_hi, float(h), 0.0)
        if g_lo * g_hi < 0:
            return _solve(family, h, sigma_at, lo, hi, cp_lo, cp_hi, lambda_tol)
    raise BracketInvalidError(
        f"no tracked critical value crosses h = {h} for weight {which_weight} in [{lo}, {hi}]"
    )


def _solve(family, h, sigma_at, lo, hi, cp_lo, cp_hi, lambda_tol):
    anchors = {lo: cp_lo, hi: cp_hi}

    def point(t):
        near = lo if abs(t - lo) <= abs(t - hi) else hi
        path = [near, t]
        cps = track_critical_points(family, sigma_at, 0, path, search_box=None, start=anchors[near])
        return cps[-1]

    def g(t):
        return point(t).value - h

    t = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    cp = point(t)
    residual = abs(cp.value - h)
    if not residual < lambda_tol:
        raise TrackingLostError(f"Lambda residual {residual:.3e} above tolerance {lambda_tol}")
    return LambdaPoint(sigma_at(t), cp, float(h), float(residual))


def fd_second_derivative(fn: Callable[[float], float], sigma: float, step: float, side: str = "central") -> float:
    """Second-difference quotient; one-sided variants use only that side."""
    if not step > 0:
        raise InvalidArgumentError("step must be positive")
    s = float(sigma)
    if side == "central":
        return (fn(s + step) - 2.0 * fn(s) + fn(s - step)) / step**2
    if side == "left":
        return (fn(s) - 2.0 * fn(s - step) + fn(s - 2.0 * step)) / step**2
    if side == "right":
        return (fn(s + 2.0 * step) - 2.0 * fn(s + step) + fn(s)) / step**2
    raise InvalidArgumentError(f"side must be left, right or central, got {side!r}")


def _check_steps(steps):
    steps = np.asarray(sorted((float(v) for v in steps), reverse=True))
    if len(steps) < 5:
        raise InsufficientDataError(f"need at least 5 probe steps, got {len(steps)}")
    if np.any(steps <= 0):
        raise InvalidArgumentError("probe steps must be positive")
    if steps[0] / steps[-1] < 100.0 * (1 - 1e-12):
        raise InsufficientDataError("probe steps must span at least two decades")
    return steps


def holder_exponent(
    fn: Callable[[float], float],
    sigma_star: float,
    side: str = "central",
    probe_steps=DEFAULT_PROBE_STEPS,
    background: str | None = None,
    fit_quality_min: float = FIT_QUALITY_MIN,
    return_samples: bool = False,
):
    """Fit ``|D2(s)| ~ c s^e`` for second differences at ``sigma_star``.

    ``background="opposite"`` subtracts the opposite side's second
    difference at the same step, removing a smooth background that would
    otherwise mask a weak one-sided singularity (used for saddles).
    Function values are cached, so shared nodes are evaluated once.
    """
    steps = _check_steps(probe_steps)
    cache: dict = {}

    def f(x):
        if x not in cache:
            cache[x] = float(fn(x))
        return cache[x]

    d2 = np.array([fd_second_derivative(f, sigma_star, s, side) for s in steps])
    if background == "opposite":
        if side == "central":
            raise InvalidArgumentError("background subtraction needs a one-sided probe")
        other = "right" if side == "left" else "left"
        d2 = d2 - np.array([fd_second_derivative(f, sigma_star, s, other) for s in steps])
    elif background is not None:
        raise InvalidArgumentError(f"unknown background mode {background!r}")
    fit = loglog_fit(steps, d2, fit_quality_min)
    return (fit, steps, d2) if return_samples else fit


def step_scaling_probe(
    obj: Scalar1DObjective,
    sigma_star: float,
    starts: Sequence[float],
    side: str | None = None,
    fit_quality_min: float = FIT_QUALITY_MIN,
    return_samples: bool = False,
    **newton_kw,
):
    """Fit ``|step_k| ~ c |sigma_k - sigma_star|^e`` over Newton runs.

    Pools every step taken from an iterate on the starting side of
    ``sigma_star`` (the side of the first start unless ``side`` is given).
    """
    starts = [float(v) for v in starts]
    if not starts:
        raise InvalidArgumentError("need at least one start")
    if side is None:
        side = "left" if starts[0] < sigma_star else "right"
    sgn = -1.0 if side == "left" else 1.0
    if any(sgn * (s0 - sigma_star) <= 0 for s0 in starts):
        raise InvalidArgumentError(f"all starts must lie on the {side} of {sigma_star}")
    dist, step = [], []
    for s0 in starts:
        tr = newton1d_run(obj, s0, **newton_kw)
        for x, st in zip(tr.iterates, tr.step_sizes):
            d = sgn * (float(x) - sigma_star)
            if d > 0 and st > 0:
                dist.append(d)
                step.append(st)
    fit = loglog_fit(dist, step, fit_quality_min)
    return (fit, np.array(dist), np.array(step)) if return_samples else fit


def lambda_distance(family: PeakFamily, sigma, h: float, region: Region = DEFAULT_REGION) -> float:
    """First-order distance from ``sigma`` to Lambda for dose level ``h``.

    ``min |f(x_c) - h| / |grad_sigma f(x_c)|`` over the critical points in
    ``region``; by the envelope theorem ``grad_sigma f(x_c)`` is the gradient
    of the critical value itself.  ``inf`` if there are none.
    """
    cps = find_critical_points(family, sigma, Region.box(*region.bounds()), on_degenerate="skip")
    best = math.inf
    for c in cps:
        if region.contains(c.location):
            best = min(best, abs(c.value - h) / float(np.linalg.norm(grad_sigma(family, sigma, c.location))))
    return best
