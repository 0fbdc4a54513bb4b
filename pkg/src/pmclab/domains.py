"""Analytic planar domains with closed-form area and perimeter.

Three variants are supported: a disk, an axis-aligned square box, and a disk
with circular holes removed.  The holed-disk generator ``swiss_cheese``
produces the porous family used by the domain-perturbation experiments, with
holes accumulating towards the boundary of the unit disk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("disk radius must be positive")

    @property
    def exact_area(self) -> float:
        return math.pi * self.radius**2

    @property
    def exact_perimeter(self) -> float:
        return 2.0 * math.pi * self.radius

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        r = self.radius
        return (cx - r, cx + r, cy - r, cy + r)

    def contains(self, x: Array, y: Array) -> Array:
        cx, cy = self.center
        return (x - cx) ** 2 + (y - cy) ** 2 < self.radius**2


@dataclass(frozen=True)
class Box:
    corner: tuple[float, float]
    side: float

    def __post_init__(self) -> None:
        if self.side <= 0:
            raise ValueError("box side must be positive")

    @property
    def exact_area(self) -> float:
        return self.side**2

    @property
    def exact_perimeter(self) -> float:
        return 4.0 * self.side

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        x0, y0 = self.corner
        return (x0, x0 + self.side, y0, y0 + self.side)

    def contains(self, x: Array, y: Array) -> Array:
        x0, y0 = self.corner
        return (x > x0) & (x < x0 + self.side) & (y > y0) & (y < y0 + self.side)


@dataclass(frozen=True)
class DiskWithHoles:
    """Disk minus a finite union of closed disjoint balls strictly inside it."""

    center: tuple[float, float]
    radius: float
    holes: tuple[tuple[float, float, float], ...]  # (cx, cy, r) per hole

    def __post_init__(self) -> None:
        if self.radius <= 0:
            raise ValueError("outer radius must be positive")
        cx, cy = self.center
        holes = self.holes
        for k, (hx, hy, hr) in enumerate(holes):
            if hr <= 0:
                raise ValueError(f"hole {k} has non-positive radius")
            if math.hypot(hx - cx, hy - cy) + hr >= self.radius:
                raise ValueError(f"hole {k} is not strictly inside the outer disk")
        for a in range(len(holes)):
            for b in range(a + 1, len(holes)):
                ax, ay, ar = holes[a]
                bx, by, br = holes[b]
                if math.hypot(ax - bx, ay - by) <= ar + br:
                    raise ValueError(f"holes {a} and {b} overlap")

    @property
    def exact_area(self) -> float:
        return math.pi * (self.radius**2 - math.fsum(r**2 for _, _, r in self.holes))

    @property
    def exact_perimeter(self) -> float:
        return 2.0 * math.pi * (self.radius + math.fsum(r for _, _, r in self.holes))

    @property
    def bbox(self) -> tuple[float, float, float, float]:
        cx, cy = self.center
        r = self.radius
        return (cx - r, cx + r, cy - r, cy + r)

    def contains(self, x: Array, y: Array) -> Array:
        cx, cy = self.center
        inside = (x - cx) ** 2 + (y - cy) ** 2 < self.radius**2
        for hx, hy, hr in self.holes:
            inside &= (x - hx) ** 2 + (y - hy) ** 2 > hr**2
        return inside

    def fill_holes(self, keep: int) -> "DiskWithHoles":
        """Return the domain with only the ``keep`` largest holes retained."""
        order = sorted(self.holes, key=lambda t: t[2], reverse=True)
        return DiskWithHoles(self.center, self.radius, tuple(order[:keep]))


AnalyticDomain = Disk | Box | DiskWithHoles


def swiss_cheese(a: float, delta: float, eps: float, i_max: int) -> DiskWithHoles:
    """Unit disk minus a two-index family of balls accumulating at the boundary.

    For 1 <= j <= i <= i_max the ball (i, j) sits at polar position
    (rho_ij, theta_ij) with radius r_ij, where

        rho_ij = 1 - eps / a**(i**2 + j)
        r_ij   = delta / a**(2 i**2 + 2 j)
        theta_ij = (pi / 2) * j / (i + 1)

    Raises ValueError if the parameter constraints 0 < delta < eps < 1, a > 1
    are violated or if the resulting balls overlap or touch the boundary.
    """
    if not (0.0 < delta < eps < 1.0):
        raise ValueError("parameters must satisfy 0 < delta < eps < 1")
    if a <= 1.0:
        raise ValueError("parameter a must exceed 1")
    if i_max < 0:
        raise ValueError("i_max must be nonnegative")
    holes: list[tuple[float, float, float]] = []
    for i in range(1, i_max + 1):
        for j in range(1, i + 1):
            rho = 1.0 - eps / a ** (i * i + j)
            r = delta / a ** (2 * i * i + 2 * j)
            theta = 0.5 * math.pi * j / (i + 1)
            holes.append((rho * math.cos(theta), rho * math.sin(theta), r))
    return DiskWithHoles((0.0, 0.0), 1.0, tuple(holes))


# ---------------------------------------------------------------------------
# JSON round trip
# ---------------------------------------------------------------------------


def domain_to_dict(dom: AnalyticDomain) -> dict:
    if isinstance(dom, Disk):
        return {"kind": "disk", "center": list(dom.center), "radius": dom.radius}
    if isinstance(dom, Box):
        return {"kind": "box", "corner": list(dom.corner), "side": dom.side}
    if isinstance(dom, DiskWithHoles):
        return {
            "kind": "disk_minus_balls",
            "center": list(dom.center),
            "radius": dom.radius,
            "holes": [list(hole) for hole in dom.holes],
        }
    raise TypeError(f"not an analytic domain: {dom!r}")


def domain_from_dict(spec: dict) -> AnalyticDomain:
    kind = spec.get("kind")
    if kind == "disk":
        return Disk(tuple(spec.get("center", (0.0, 0.0))), float(spec["radius"]))
    if kind == "box":
        return Box(tuple(spec.get("corner", (0.0, 0.0))), float(spec["side"]))
    if kind == "disk_minus_balls":
        return DiskWithHoles(
            tuple(spec.get("center", (0.0, 0.0))),
            float(spec["radius"]),
            tuple(tuple(map(float, hole)) for hole in spec.get("holes", ())),
        )
    if kind == "swiss_cheese":
        return swiss_cheese(
            float(spec["a"]), float(spec["delta"]), float(spec["eps"]), int(spec["i_max"])
        )
    raise ValueError(f"unknown domain kind: {kind!r}")
