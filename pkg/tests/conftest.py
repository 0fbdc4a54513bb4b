"""Shared fixtures; the heavy solves are session-scoped and reused."""

from __future__ import annotations

import numpy as np
import pytest

from pmclab.domains import Box, Disk
from pmclab.extremality import classify
from pmclab.geometry import rasterize
from pmclab.grid import Grid
from pmclab.solver import solve_dirichlet, solve_extremal


def disk_grid(n: int, box: float = 2.1) -> Grid:
    h = box / n
    return Grid(n, n, h, (-box / 2, -box / 2))


def square_grid(resolution: int, margin_cells: int = 16) -> Grid:
    h = 1.0 / resolution
    n = resolution + 2 * margin_cells
    return Grid(n, n, h, (-margin_cells * h, -margin_cells * h))


@pytest.fixture(scope="session")
def disk_mask_256():
    return rasterize(Disk((0.0, 0.0), 1.0), disk_grid(256))


@pytest.fixture(scope="session")
def disk_mask_h128():
    """Unit disk at spacing exactly 1/128 (grid 269 x 269)."""
    n, h = 269, 1.0 / 128
    grid = Grid(n, n, h, (-n * h / 2, -n * h / 2))
    return rasterize(Disk((0.0, 0.0), 1.0), grid)


@pytest.fixture(scope="session")
def square_mask_256():
    return rasterize(Box((0.0, 0.0), 1.0), square_grid(256))


@pytest.fixture(scope="session")
def extremal_disk_run(disk_mask_h128):
    """Ladder solve of the (unit disk, constant 2) pair at h = 1/128."""
    mask = disk_mask_h128
    cls = classify(mask, 2.0, with_margin=False)
    assert cls.label == "extremal"
    return solve_extremal(mask, 2.0, classification=cls)


@pytest.fixture(scope="session")
def strict_disk_run(disk_mask_h128):
    """Penalized solve of the (unit disk, constant 1.9) pair at h = 1/128."""
    mask = disk_mask_h128
    cls = classify(mask, 1.9, with_margin=False)
    assert cls.label == "strict"
    return solve_dirichlet(mask, 1.9, 0.0, classification=cls)


def hemisphere_values(grid: Grid, mask) -> np.ndarray:
    x, y = grid.cell_centers()
    r2 = x * x + y * y
    return np.where(mask.inside, -np.sqrt(np.maximum(1.0 - r2, 0.0)), 0.0)


def radial_sq(grid: Grid) -> np.ndarray:
    x, y = grid.cell_centers()
    return x * x + y * y
