"""Integration regions: axis-aligned boxes and balls."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class Region:
    """Axis-aligned box ``[lo, hi]`` or ball ``|x - center| <= radius``.

    Use :meth:`box` / :meth:`ball` to build one; the raw constructor does no
    validation of the unused fields.
    """

    kind: str
    lo: tuple = (0.0, 0.0, 0.0)
    hi: tuple = (0.0, 0.0, 0.0)
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 0.0

    @classmethod
    def box(cls, lo, hi) -> "Region":
        lo = tuple(float(v) for v in lo)
        hi = tuple(float(v) for v in hi)
        if len(lo) != 3 or len(hi) != 3:
            raise InvalidArgumentError("box corners must be 3-vectors")
        if not all(math.isfinite(v) for v in lo + hi):
            raise InvalidArgumentError("box corners must be finite")
        if any(b <= a for a, b in zip(lo, hi)):
            raise InvalidArgumentError(f"box needs hi > lo componentwise, got {lo} {hi}")
        return cls("box", lo=lo, hi=hi)

    @classmethod
    def cube(cls, half_width: float, center=(0.0, 0.0, 0.0)) -> "Region":
        c = np.asarray(center, dtype=float)
        return cls.box(c - half_width, c + half_width)

    @classmethod
    def ball(cls, center, radius: float) -> "Region":
        center = tuple(float(v) for v in center)
        if len(center) != 3 or not all(math.isfinite(v) for v in center):
            raise InvalidArgumentError("ball center must be a finite 3-vector")
        radius = float(radius)
        if not radius > 0 or not math.isfinite(radius):
            raise InvalidArgumentError(f"ball radius must be positive, got {radius}")
        return cls("ball", center=center, radius=radius)

    @property
    def exact_volume(self) -> float:
        if self.kind == "box":
            return float(np.prod(np.subtract(self.hi, self.lo)))
        return 4.0 / 3.0 * math.pi * self.radius**3

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corner of the bounding box."""
        if self.kind == "box":
            return np.array(self.lo), np.array(self.hi)
        c = np.array(self.center)
        return c - self.radius, c + self.radius

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            return np.all((x >= self.lo) & (x <= self.hi), axis=-1)
        d = x - np.array(self.center)
        return np.einsum("...i,...i->...", d, d) <= self.radius**2

    def exit_distance(self, origin, directions) -> np.ndarray:
        """Distance along each unit direction from an interior ``origin`` to the boundary."""
        o = np.asarray(origin, dtype=float)
        u = np.asarray(directions, dtype=float)
        if self.kind == "box":
            with np.errstate(divide="ignore", invalid="ignore"):
                t_hi = np.where(u > 0, (np.array(self.hi) - o) / u, np.inf)
                t_lo = np.where(u < 0, (np.array(self.lo) - o) / u, np.inf)
            return np.maximum(np.minimum(t_hi, t_lo).min(axis=-1), 0.0)
        d = o - np.array(self.center)
        b = u @ d
        c = d @ d - self.radius**2
        return np.maximum(-b + np.sqrt(np.maximum(b * b - c, 0.0)), 0.0)

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}

    @classmethod
    def from_dict(cls, d: dict) -> "Region":
        try:
            kind = d["kind"]
            if kind == "box":
                return cls.box(d["lo"], d["hi"])
            if kind == "ball":
                return cls.ball(d["center"], d["radius"])
        except (KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"bad region description {d!r}: {exc}") from exc
        raise InvalidArgumentError(f"unknown region kind {kind!r}")


DEFAULT_REGION = Region.cube(8.0)
