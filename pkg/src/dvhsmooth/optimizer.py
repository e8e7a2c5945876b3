"""Newton and BFGS iterations with full iterate traces."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IllConditionedStepError, InsufficientDataError, InvalidArgumentError, NumericalDomainError
from .objective import Scalar1DObjective

TERMINATIONS = ("converged", "max-iter", "stalled", "spurious-fixed-point", "seam-crossed")
CLASSES = ("quadratic", "superlinear", "linear", "sublinear", "stalled")


@dataclass
class Trace:
    """Iterate history.  ``step_sizes[k] = |iterates[k+1] - iterates[k]|``."""

    iterates: list = field(default_factory=list)
    values: list = field(default_factory=list)
    derivative_norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)
    termination: str = "max-iter"
    events: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def record(self, x, value, dnorm):
        x = np.array(x, dtype=float, copy=True)
        if self.iterates:
            self.step_sizes.append(float(np.linalg.norm(np.atleast_1d(x - self.iterates[-1]))))
        self.iterates.append(x)
        self.values.append(float(value))
        self.derivative_norms.append(float(dnorm))

    def __len__(self):
        return len(self.iterates)

    @property
    def final(self):
        return self.iterates[-1]

    def to_csv(self, comment: str | None = None, fmt: str = "%.16e") -> str:
        dim = int(np.size(self.iterates[0])) if self.iterates else 1
        xcols = ["sigma"] if dim == 1 else [f"sigma_{j}" for j in range(dim)]
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter"] + xcols + ["value", "grad_norm", "step", "termination"])
        for k, x in enumerate(self.iterates):
            step = fmt % self.step_sizes[k] if k < len(self.step_sizes) else ""
            last = k == len(self.iterates) - 1
            w.writerow(
                [k]
                + [fmt % v for v in np.atleast_1d(x)]
                + [fmt % self.values[k], fmt % self.derivative_norms[k], step, self.termination if last else ""]
            )
        return buf.getvalue()


# --- one-dimensional Newton ------------------------------------------------------


def division_tol(d1: float) -> float:
    return 1e-14 * (1.0 + abs(d1))


def newton1d_step(obj: Scalar1DObjective, sigma: float, side: str = "left") -> float:
    """The Newton map ``phi(sigma) = sigma - F'(sigma) / F''(sigma)``.

    ``side`` picks the one-sided second derivative at flagged points; an
    infinite second derivative gives a zero step.
    """
    d1 = obj.first(sigma)
    d2 = obj.second(sigma, side)
    if math.isinf(d2):
        return float(sigma)
    if not math.isfinite(d2) or abs(d2) < division_tol(d1):
        raise IllConditionedStepError(f"F''({sigma}) = {d2!r} too small for a Newton step")
    return float(sigma - d1 / d2)


def newton1d_run(
    obj: Scalar1DObjective,
    sigma0: float,
    tol: float = 1e-14,
    max_iter: int = 100,
    side: str = "left",
    safeguard: bool = True,
    max_step: float = 1.0,
    flag_tol: float = 1e-12,
) -> Trace:
    """Iterate the Newton map until ``|F'| < tol``.

    With ``safeguard`` (default) a point of non-positive curvature, where the
    Newton step would head for a maximum, takes a descent step of length
    ``min(|F'/F''|, max_step)`` instead, and a step that leaves the domain or
    increases ``F`` is halved until it does not.  Newton steps that decrease
    ``F`` are taken unchanged.
    The trace is labelled ``spurious-fixed-point`` when the iteration sits on
    a flagged point with ``|F'| >= tol``.
    """
    if max_iter < 1:
        raise InvalidArgumentError("max_iter must be >= 1")
    trace = Trace()
    s = float(sigma0)
    for k in range(max_iter + 1):
        d1 = obj.first(s)
        trace.record(s, obj.value(s), abs(d1))
        if abs(d1) < tol:
            trace.termination = "converged"
            return trace
        if k == max_iter:
            break
        try:
            d2 = obj.second(s, side)
            if safeguard and d2 <= 0:
                step = abs(d1 / d2) if d2 != 0 else max_step
                nxt = s - math.copysign(min(step, max_step), d1)
                trace.events.append((k, "safeguarded-step"))
            else:
                nxt = newton1d_step(obj, s, side)
        except IllConditionedStepError:
            trace.termination = "stalled"
            return trace
        if safeguard and nxt != s:
            nxt = _backtrack(obj, s, nxt, trace, k)
        if any(abs(s - p) <= flag_tol for p in obj.flagged) and nxt == s:
            trace.termination = "spurious-fixed-point"
            return trace
        if nxt == s:
            trace.termination = "stalled"
            return trace
        for p in obj.flagged:
            if (s - p) * (nxt - p) < 0:
                trace.events.append((k, f"crossed flagged point {p}"))
        s = nxt
    trace.termination = "max-iter"
    return trace


def _backtrack(obj, s, nxt, trace, k, max_halvings=60):
    f0 = obj.value(s)
    slack = 8.0 * np.finfo(float).eps * abs(f0)
    for _ in range(max_halvings):
        try:
            if obj.value(nxt) <= f0 + slack:
                return nxt
        except NumericalDomainError:
            pass
        nxt = s + 0.5 * (nxt - s)
        if trace.events[-1:] != [(k, "backtracked")]:
            trace.events.append((k, "backtracked"))
    return nxt


# --- convergence classification ----------------------------------------------------


def convergence_classify(trace_or_iterates, limit=None, min_iterates: int = 5) -> str:
    """Classify the tail of an iterate sequence by its error ratios.

    Errors are ``e_k = |x_k - limit|`` (the last iterate when ``limit`` is
    None), keeping only ``e_k > 1e-13 * max(1, |limit|)``.  With ratios
    ``r_k = e_{k+1}/e_k`` and orders ``p_k = log r_k / log r_{k-1}``
    (thresholds fixed here):

    * stalled: errors do not decrease over the tail, or the trace says so;
    * quadratic: the last order estimate is >= 1.8;
    * superlinear: ratios strictly decreasing and the last one < 0.1;
    * linear: last ratio <= 0.9;
    * sublinear: ratios tending to 1 (last ratio > 0.9).
    """
    if isinstance(trace_or_iterates, Trace):
        trace = trace_or_iterates
        xs = [np.atleast_1d(x) for x in trace.iterates]
        if trace.termination == "stalled":
            return "stalled"
    else:
        xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x in trace_or_iterates]
    if len(xs) < min_iterates:
        raise InsufficientDataError(f"need at least {min_iterates} iterates, got {len(xs)}")
    ref = xs[-1] if limit is None else np.atleast_1d(np.asarray(limit, dtype=float))
    errs = np.array([np.linalg.norm(x - ref) for x in xs])
    floor = 1e-13 * max(1.0, float(np.linalg.norm(ref)))
    errs = errs[errs > floor]
    if len(errs) < 3:
        # converged to the floor in too few steps to tell anything but "fast"
        if len(errs) == 2 and errs[1] <= errs[0] ** 2 * 10:
            return "quadratic"
        raise InsufficientDataError("fewer than three errors above the rounding floor")
    ratios = errs[1:] / errs[:-1]
    tail = ratios[-3:]
    if np.all(tail >= 1.0):
        return "stalled"
    if len(ratios) >= 2 and ratios[-1] < 1 and ratios[-2] < 1:
        p = math.log(ratios[-1]) / math.log(ratios[-2])
        if p >= 1.8:
            return "quadratic"
    if len(tail) >= 2 and np.all(np.diff(tail) < 0) and tail[-1] < 0.1:
        return "superlinear"
    if tail[-1] <= 0.9:
        return "linear"
    return "sublinear"


# --- BFGS -------------------------------------------------------------------------


@dataclass(frozen=True)
class QuasiNewtonOptions:
    grad_tol: float = 1e-6
    max_iter: int = 200
    fd_step: float = 1e-3
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    curvature_skip_tol: float = 1e-10
    max_line_search: int = 40

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise InvalidArgumentError("grad_tol must be positive")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be >= 1")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise InvalidArgumentError("need 0 < wolfe_c1 < wolfe_c2 < 1")

    @classmethod
    def from_dict(cls, d: dict) -> "QuasiNewtonOptions":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def _checked(fun, grad, x):
    v = float(fun(x))
    g = np.asarray(grad(x), dtype=float)
    return v, g


def wolfe_line_search(fun, grad, x, p, f0, g0, c1=1e-4, c2=0.9, alpha0=1.0, max_iter=40):
    """Strong Wolfe line search (bracketing + bisection zoom).

    Returns ``(alpha, f, g)`` or ``None`` when no acceptable step is found.
    Trial points with non-finite value or gradient count as too long.
    """
    d0 = float(g0 @ p)
    if d0 >= 0:
        return None

    def phi(a):
        v, g = _checked(fun, grad, x + a * p)
        if not (math.isfinite(v) and np.all(np.isfinite(g))):
            return None
        return v, g, float(g @ p)

    def zoom(lo, hi, f_lo):
        for _ in range(max_iter):
            a = 0.5 * (lo + hi)
            r = phi(a)
            if r is None or r[0] > f0 + c1 * a * d0 or r[0] >= f_lo:
                hi = a
                continue
            v, g, d = r
            if abs(d) <= -c2 * d0:
                return a, v, g
            if d * (hi - lo) >= 0:
                hi = lo
            lo, f_lo = a, v
        return None

    a_prev, f_prev = 0.0, f0
    a = alpha0
    for i in range(max_iter):
        r = phi(a)
        if r is None:
            # shrink towards the last good point
            return zoom(a_prev, a, f_prev)
        v, g, d = r
        if v > f0 + c1 * a * d0 or (i > 0 and v >= f_prev):
            return zoom(a_prev, a, f_prev)
        if abs(d) <= -c2 * d0:
            return a, v, g
        if d >= 0:
            return zoom(a, a_prev, v)
        a_prev, f_prev = a, v
        a *= 2.0
    return None


def bfgs_run(
    fun: Callable,
    grad: Callable,
    sigma0,
    opts: QuasiNewtonOptions = QuasiNewtonOptions(),
    monitor: Callable | None = None,
) -> Trace:
    """BFGS with a strong Wolfe line search.

    The inverse Hessian starts as ``I / |g0|`` and the update is skipped when
    ``y.s <= curvature_skip_tol * |y| |s|``.  ``monitor(x)`` may return a
    dict of per-iterate diagnostics, stored in ``trace.diagnostics`` as lists.

    Raises
    ------
    NumericalDomainError
        Non-finite value or gradient at the start or at an accepted iterate.
    """
    x = np.array(sigma0, dtype=float)
    f, g = _checked(fun, grad, x)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise NumericalDomainError(f"objective not finite at the start point {x}", point=x)
    trace = Trace()

    def log(x, f, g):
        trace.record(x, f, np.linalg.norm(g))
        if monitor is not None:
            for k, v in monitor(x).items():
                trace.diagnostics.setdefault(k, []).append(v)

    log(x, f, g)
    n = len(x)
    gnorm = float(np.linalg.norm(g))
    H = np.eye(n) / max(gnorm, 1e-300)
    for it in range(opts.max_iter):
        if np.linalg.norm(g) < opts.grad_tol:
            trace.termination = "converged"
            return trace
        p = -H @ g
        if g @ p >= 0:
            # lost descent (e.g. after skipped updates): restart from the scaled identity
            H = np.eye(n) / max(np.linalg.norm(g), 1e-300)
            p = -H @ g
            trace.events.append((it, "reset"))
        ls = wolfe_line_search(fun, grad, x, p, f, g, opts.wolfe_c1, opts.wolfe_c2, max_iter=opts.max_line_search)
        if ls is None:
            trace.termination = "stalled"
            return trace
        a, f_new, g_new = ls
        x_new = x + a * p
        if not (math.isfinite(f_new) and np.all(np.isfinite(g_new))):
            raise NumericalDomainError(f"objective not finite at {x_new}", point=x_new)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > opts.curvature_skip_tol * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            I = np.eye(n)
            H = (I - rho * np.outer(s, y)) @ H @ (I - rho * np.outer(y, s)) + rho * np.outer(s, s)
        else:
            trace.events.append((it, "skipped-update"))
        x, f, g = x_new, f_new, g_new
        log(x, f, g)
    trace.termination = "converged" if np.linalg.norm(g) < opts.grad_tol else "max-iter"
    return trace
