import math

import numpy as np
import pytest

from pmclab.domains import Disk
from pmclab.extremality import (
    CurvatureSpec,
    PairViolatedError,
    cheeger,
    classify,
    epsilon0,
    normalized_extremal_curvature,
    subset_deficit,
    total_curvature,
)
from pmclab.geometry import area, raster_perimeter, rasterize
from pmclab.grid import Grid, ScalarField

from conftest import disk_grid


SQUARE_CHEEGER = (4 - math.pi) / (2 - math.sqrt(math.pi))


# ---------------------------------------------------------------------------
# total curvature
# ---------------------------------------------------------------------------


def test_total_curvature_constant(disk_mask_256):
    assert total_curvature(disk_mask_256, 2.0) == pytest.approx(2 * math.pi, rel=0.01)
    assert total_curvature(disk_mask_256, 0.0) == 0.0


def test_total_curvature_field(square_mask_256):
    g = square_mask_256.grid
    x, _ = g.cell_centers()
    spec = CurvatureSpec(field=ScalarField(g, x))
    assert total_curvature(square_mask_256, spec) == pytest.approx(0.5, rel=0.01)


# ---------------------------------------------------------------------------
# subset deficit
# ---------------------------------------------------------------------------


def test_deficit_extremal_pair_is_zero(disk_mask_256):
    rep = subset_deficit(disk_mask_256, 2.0, 0.0, 1)
    assert rep.converged
    assert rep.value == pytest.approx(0.0, abs=2e-3)
    assert rep.value <= 0.0 + rep.gap


def test_deficit_with_margin_still_zero(disk_mask_256):
    rep = subset_deficit(disk_mask_256, 1.9, 0.04, 1)
    assert rep.value == pytest.approx(0.0, abs=2e-3)


def test_deficit_negative_with_full_threshold_set(disk_mask_256):
    rep = subset_deficit(disk_mask_256, 2.0, 0.05, 1, tol_gap=2e-3)
    assert rep.value < -0.05
    assert rep.threshold_inside is not None
    assert rep.threshold_area == pytest.approx(area(disk_mask_256), rel=0.05)


def test_deficit_monotone_in_eps(disk_mask_256):
    values = [
        subset_deficit(disk_mask_256, 2.0, e, 1, tol_gap=2e-3).value
        for e in (0.02, 0.06, 0.10)
    ]
    assert values[0] >= values[1] - 1e-6 >= values[2] - 2e-6


def test_deficit_nonpositive_on_random_fields(disk_mask_256):
    # the zero field is feasible, so the true minimum is never positive; the
    # primal value can only exceed it by the duality gap
    rng = np.random.default_rng(3)
    hv = ScalarField(disk_mask_256.grid, rng.normal(0.0, 1.0, disk_mask_256.grid.shape))
    rep = subset_deficit(disk_mask_256, CurvatureSpec(field=hv), 0.0, 1, tol_gap=5e-3)
    assert rep.dual_value <= 1e-12
    assert rep.value <= rep.gap + 1e-12


def test_deficit_threshold_certificate(square_mask_256):
    # supercritical constant on the square: the threshold set must certify
    rep = subset_deficit(square_mask_256, 4.2, 0.0, 1, tol_gap=2e-3)
    assert rep.value < -0.01
    cert = rep.threshold_curvature - rep.threshold_perimeter
    assert cert > -2 * 0.05
    assert cert == pytest.approx(-rep.value, abs=0.12)


def test_deficit_validates_inputs(disk_mask_256):
    with pytest.raises(ValueError):
        subset_deficit(disk_mask_256, 2.0, 1.5, 1)
    with pytest.raises(ValueError):
        subset_deficit(disk_mask_256, 2.0, 0.0, 2)


# ---------------------------------------------------------------------------
# epsilon0
# ---------------------------------------------------------------------------


def test_epsilon0_strict_disk(disk_mask_256):
    assert epsilon0(disk_mask_256, 1.9) == pytest.approx(0.05, abs=0.01)


def test_epsilon0_extremal_disk(disk_mask_256):
    assert epsilon0(disk_mask_256, 2.0) == pytest.approx(0.0, abs=0.01)


def test_epsilon0_zero_curvature(disk_mask_256):
    assert epsilon0(disk_mask_256, 0.0) == 1.0


def test_epsilon0_refuses_violated(square_mask_256):
    with pytest.raises(PairViolatedError):
        epsilon0(square_mask_256, 4.2)


# ---------------------------------------------------------------------------
# Cheeger constant
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cheeger_disk(disk_mask_256):
    return cheeger(disk_mask_256)


@pytest.fixture(scope="module")
def cheeger_square(square_mask_256):
    return cheeger(square_mask_256)


def test_cheeger_disk(cheeger_disk):
    assert cheeger_disk.value == pytest.approx(2.0, rel=0.02)


def test_cheeger_square(cheeger_square):
    assert cheeger_square.value == pytest.approx(SQUARE_CHEEGER, rel=0.02)


def test_cheeger_extracted_quotient_consistent(cheeger_square, square_mask_256):
    res = cheeger_square
    g = square_mask_256.grid
    q = raster_perimeter(g, res.cheeger_inside) / (g.cell_area * res.cheeger_inside.sum())
    assert q == pytest.approx(res.quotient, rel=1e-12)
    assert res.quotient >= res.value - 0.05 * res.value


def test_cheeger_scaling():
    big_grid = Grid(256, 256, 4.2 / 256, (-2.1, -2.1))
    big = rasterize(Disk((0.0, 0.0), 2.0), big_grid)
    res = cheeger(big)
    assert res.value == pytest.approx(1.0, rel=0.02)


def test_cheeger_bracket_straddles_relaxed_transition(disk_mask_256):
    # the relaxed-deficit sign flips across [h - 0.05, h + 0.05] around the
    # reported constant on a 384-cell grid where the relaxed bias is small
    g = disk_grid(384)
    mask = rasterize(Disk((0.0, 0.0), 1.0), g)
    res = cheeger(mask)
    below = subset_deficit(mask, res.value - 0.05, 0.0, 1, tol_gap=2e-3)
    above = subset_deficit(mask, res.value + 0.05, 0.0, 1, tol_gap=2e-3)
    assert below.value >= -1e-3
    assert above.value < -1e-3


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def test_classify_extremal(disk_mask_256):
    cls = classify(disk_mask_256, 2.0, with_margin=False)
    assert cls.label == "extremal"
    assert cls.epsilon0 == 0.0


def test_classify_strict_with_margin(disk_mask_256):
    cls = classify(disk_mask_256, 1.9)
    assert cls.label == "strict"
    assert cls.epsilon0 == pytest.approx(0.05, abs=0.01)


def test_classify_violated(square_mask_256):
    cls = classify(square_mask_256, 4.2, with_margin=False)
    assert cls.label == "violated"


def test_classify_sign_symmetric(disk_mask_256, square_mask_256):
    for mask, h in ((disk_mask_256, 2.0), (disk_mask_256, 1.9), (square_mask_256, 4.2)):
        a = classify(mask, h, with_margin=False)
        b = classify(mask, -h, with_margin=False)
        assert a.label == b.label


def test_classify_violated_by_proper_subset(square_mask_256):
    # total curvature matches the perimeter, yet the near-square subset of
    # quotient ~3.77 < 4 violates: the classifier must catch it
    cls = classify(square_mask_256, 4.0, with_margin=False)
    assert cls.label == "violated"


# ---------------------------------------------------------------------------
# normalized curvature
# ---------------------------------------------------------------------------


def test_normalized_curvature_disk(disk_mask_256):
    rep = normalized_extremal_curvature(disk_mask_256)
    assert rep.value == pytest.approx(2.0, rel=0.02)
    assert rep.classification.label == "extremal"


def test_normalized_curvature_square_is_not_extremal(square_mask_256):
    rep = normalized_extremal_curvature(square_mask_256)
    assert rep.value == pytest.approx(4.0, rel=0.02)
    assert rep.classification.label == "violated"
