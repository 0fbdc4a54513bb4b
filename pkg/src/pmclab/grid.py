"""Uniform cell-centered grids, the fields living on them, and difference stencils.

Arrays over a grid are indexed ``values[i, j]`` with ``i`` along x and ``j``
along y; the cell (i, j) is centered at ``origin + ((i + 0.5) h, (j + 0.5) h)``.

Two stencil families are provided and kept strictly separate:

* forward gradient / backward divergence -- the adjoint pair used by the
  total-variation optimizers,
* zero-padded centered gradient / divergence -- an exact adjoint pair
  (``<div_c p, v> = -<p, grad_c v>`` holds to rounding) used by the curvature
  and pairing operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class Grid:
    """Uniform grid of nx-by-ny square cells with spacing h."""

    nx: int
    ny: int
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.h <= 0.0:
            raise ValueError("grid spacing h must be positive")
        if self.nx < 8 or self.ny < 8:
            raise ValueError("grid needs at least 8 cells per axis")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) of the covered box."""
        x0, y0 = self.origin
        return (x0, x0 + self.nx * self.h, y0, y0 + self.ny * self.h)

    def cell_centers(self) -> tuple[Array, Array]:
        """Coordinate arrays X, Y of shape (nx, ny)."""
        x0, y0 = self.origin
        x = x0 + (np.arange(self.nx) + 0.5) * self.h
        y = y0 + (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(x, y, indexing="ij")

    def fractional_index(self, points: Array) -> Array:
        """Map physical points (..., 2) to fractional cell indices (..., 2).

        Index (i, j) = 0 corresponds to the center of the corner cell.
        """
        pts = np.asarray(points, dtype=float)
        out = np.empty_like(pts)
        out[..., 0] = (pts[..., 0] - self.origin[0]) / self.h - 0.5
        out[..., 1] = (pts[..., 1] - self.origin[1]) / self.h - 0.5
        return out

    def index_to_point(self, idx: Array) -> Array:
        """Inverse of :meth:`fractional_index`."""
        ij = np.asarray(idx, dtype=float)
        out = np.empty_like(ij)
        out[..., 0] = self.origin[0] + (ij[..., 0] + 0.5) * self.h
        out[..., 1] = self.origin[1] + (ij[..., 1] + 0.5) * self.h
        return out


@dataclass
class ScalarField:
    """Cell-sampled real function on a grid."""

    grid: Grid
    values: Array
    extended_real: bool = False

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not self.extended_real and not np.all(np.isfinite(self.values)):
            raise ValueError("scalar field has non-finite values")

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy(), self.extended_real)


@dataclass
class VectorField:
    """Cell-sampled planar vector function on a grid.

    ``sup_bound``, when set, certifies max |values| <= sup_bound.
    """

    grid: Grid
    values: Array
    sup_bound: float | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (2,) + self.grid.shape:
            raise ValueError(
                f"vector field shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("vector field has non-finite values")
        if self.sup_bound is not None:
            mag = np.hypot(self.values[0], self.values[1])
            if float(mag.max(initial=0.0)) > self.sup_bound * (1.0 + 1e-12):
                raise ValueError("vector field exceeds its declared sup-norm bound")

    def magnitude(self) -> Array:
        return np.hypot(self.values[0], self.values[1])


# ---------------------------------------------------------------------------
# Stencils
# ---------------------------------------------------------------------------


def grad_forward(values: Array, h: float) -> Array:
    """Forward-difference gradient, zero one-sided difference at the far edge.

    Returns an array of shape (2, nx, ny).
    """
    g = np.zeros((2,) + values.shape)
    g[0, :-1, :] = (values[1:, :] - values[:-1, :]) / h
    g[1, :, :-1] = (values[:, 1:] - values[:, :-1]) / h
    return g


def div_backward(p: Array, h: float) -> Array:
    """Negative adjoint of :func:`grad_forward` (backward-difference divergence)."""
    px, py = p[0], p[1]
    d = np.zeros(px.shape)
    d[0, :] += px[0, :]
    d[1:-1, :] += px[1:-1, :] - px[:-2, :]
    d[-1, :] += -px[-2, :]
    d[:, 0] += py[:, 0]
    d[:, 1:-1] += py[:, 1:-1] - py[:, :-2]
    d[:, -1] += -py[:, -2]
    return d / h


def grad_centered(values: Array, h: float) -> Array:
    """Centered-difference gradient with zero padding outside the box."""
    g = np.zeros((2,) + values.shape)
    g[0, 1:-1, :] = (values[2:, :] - values[:-2, :]) / (2.0 * h)
    g[0, 0, :] = values[1, :] / (2.0 * h)
    g[0, -1, :] = -values[-2, :] / (2.0 * h)
    g[1, :, 1:-1] = (values[:, 2:] - values[:, :-2]) / (2.0 * h)
    g[1, :, 0] = values[:, 1] / (2.0 * h)
    g[1, :, -1] = -values[:, -2] / (2.0 * h)
    return g


def div_centered(p: Array, h: float) -> Array:
    """Centered divergence with zero padding; exact negative adjoint of grad_centered."""
    return grad_centered(p[0], h)[0] + grad_centered(p[1], h)[1]


def interp_bilinear(grid: Grid, values: Array, points: Array) -> Array:
    """Bilinear interpolation of a cell-centered array at physical points (..., 2)."""
    idx = grid.fractional_index(points)
    fi = np.clip(idx[..., 0], 0.0, grid.nx - 1.0)
    fj = np.clip(idx[..., 1], 0.0, grid.ny - 1.0)
    i0 = np.clip(np.floor(fi).astype(int), 0, grid.nx - 2)
    j0 = np.clip(np.floor(fj).astype(int), 0, grid.ny - 2)
    wx = fi - i0
    wy = fj - j0
    v00 = values[i0, j0]
    v10 = values[i0 + 1, j0]
    v01 = values[i0, j0 + 1]
    v11 = values[i0 + 1, j0 + 1]
    return (
        v00 * (1 - wx) * (1 - wy)
        + v10 * wx * (1 - wy)
        + v01 * (1 - wx) * wy
        + v11 * wx * wy
    )
