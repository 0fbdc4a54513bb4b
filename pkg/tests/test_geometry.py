import math

import numpy as np
import pytest

from pmclab.domains import Disk, DiskWithHoles, swiss_cheese
from pmclab.geometry import (
    DisconnectedRasterError,
    DomainDoesNotFitError,
    DomainMask,
    ErosionEmptyError,
    area,
    boundary_loops,
    boundary_normals,
    build_ladder,
    inner_minkowski_content,
    interior_approximation,
    perimeter,
    rasterize,
    signed_distance,
    super_reduced_test,
)
from pmclab.grid import Grid, ScalarField

from conftest import disk_grid


# ---------------------------------------------------------------------------
# rasterize
# ---------------------------------------------------------------------------


def test_rasterize_disk_area(disk_mask_256):
    assert abs(area(disk_mask_256) / math.pi - 1.0) < 0.01


def test_rasterize_aligned_box(square_mask_256):
    assert area(square_mask_256) == pytest.approx(1.0, abs=1e-12)
    assert abs(perimeter(square_mask_256) / 4.0 - 1.0) < 0.01


def test_rasterize_subresolution_hole_warns():
    g = disk_grid(256)
    dom = DiskWithHoles((0.0, 0.0), 1.0, ((0.3, 0.0, 0.4 * g.h),))
    with pytest.warns(UserWarning, match="hole"):
        mask = rasterize(dom, g)
    assert mask.cell_count > 0


def test_rasterize_domain_must_fit():
    g = Grid(32, 32, 0.01, (-0.16, -0.16))
    with pytest.raises(DomainDoesNotFitError):
        rasterize(Disk((0.0, 0.0), 0.2), g)


def test_rasterize_disconnected_rejected():
    g = disk_grid(64)
    inside = np.zeros(g.shape, dtype=bool)
    inside[10:20, 10:20] = True
    inside[40:50, 40:50] = True
    with pytest.raises(DisconnectedRasterError):
        DomainMask(g, inside)


# ---------------------------------------------------------------------------
# signed distance
# ---------------------------------------------------------------------------


def test_signed_distance_disk(disk_mask_256):
    mask = disk_mask_256
    d = signed_distance(mask)
    g = mask.grid
    x, y = g.cell_centers()
    r = np.hypot(x, y)
    center = np.unravel_index(np.argmin(r), g.shape)
    # exact distance from the sampled cell center to the unit circle
    assert d.values[center] == pytest.approx(-(1.0 - r[center]), abs=g.h)
    # boundary-adjacent interior cells sit within (-h, 0)
    r = np.hypot(x, y)
    adjacent = mask.inside & (r > 1.0 - 0.4 * g.h)
    assert adjacent.any()
    assert (d.values[adjacent] > -g.h).all() and (d.values[adjacent] < 0.0).all()
    # exterior margin cells are positive
    assert (d.values[:2, :] > 0).all()


# ---------------------------------------------------------------------------
# area / perimeter
# ---------------------------------------------------------------------------


def test_area_of_relaxed_indicator(square_mask_256):
    g = square_mask_256.grid
    half = ScalarField(g, 0.5 * square_mask_256.indicator())
    assert area(half) == pytest.approx(0.5, abs=1e-12)


def test_perimeter_disk_within_one_percent():
    g = Grid(256 + 16, 256 + 16, 1.0 / 256, (-8.0 / 256 - 0.5, -8.0 / 256 - 0.5))
    mask = rasterize(Disk((0.0, 0.0), 0.4), g)
    assert abs(perimeter(mask) / (2 * math.pi * 0.4) - 1.0) < 0.01


def test_perimeter_convergence_under_refinement():
    errs = []
    for n in (64, 128, 256):
        g = Grid(n + 16, n + 16, 1.0 / n, (-8.0 / n - 0.5, -8.0 / n - 0.5))
        mask = rasterize(Disk((0.0, 0.0), 0.4), g)
        errs.append(abs(perimeter(mask) / (2 * math.pi * 0.4) - 1.0))
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[1] > 1.3 and errs[1] / errs[2] > 1.3


def test_perimeter_of_relaxed_smoothed_disk(disk_mask_256):
    from scipy import ndimage

    g = disk_mask_256.grid
    smooth = ndimage.gaussian_filter(disk_mask_256.indicator(), 2.0)
    p = perimeter(ScalarField(g, smooth))
    assert abs(p / (2 * math.pi) - 1.0) < 0.02


def test_perimeter_region_restriction(disk_mask_256):
    # right half-plane sees half the circle
    p_half = perimeter(disk_mask_256, region=(0.0, 2.0, -2.0, 2.0))
    assert abs(p_half / math.pi - 1.0) < 0.03


def test_empty_indicator_has_zero_perimeter(disk_mask_256):
    g = disk_mask_256.grid
    assert perimeter(ScalarField(g, np.zeros(g.shape))) == 0.0


def test_perimeter_of_full_interior_is_bounding_rectangle():
    g = disk_grid(128)
    inside = np.zeros(g.shape, dtype=bool)
    inside[2:-2, 2:-2] = True
    mask = DomainMask(g, inside)
    side = (g.nx - 4) * g.h
    assert perimeter(mask) == pytest.approx(4 * side, rel=0.02)


# ---------------------------------------------------------------------------
# interior approximation and ladders
# ---------------------------------------------------------------------------


def test_interior_approximation_disk(disk_mask_256):
    eroded = interior_approximation(disk_mask_256, 0.1)
    assert abs(perimeter(eroded) / (2 * math.pi * 0.9) - 1.0) < 0.02
    assert (eroded.inside <= disk_mask_256.inside).all()


def test_interior_approximation_box(square_mask_256):
    eroded = interior_approximation(square_mask_256, 0.25)
    assert area(eroded) == pytest.approx(0.25, rel=0.05)


def test_interior_approximation_monotone(disk_mask_256):
    a = interior_approximation(disk_mask_256, 0.05)
    b = interior_approximation(disk_mask_256, 0.15)
    assert (b.inside <= a.inside).all()


def test_interior_approximation_empty(disk_mask_256):
    with pytest.raises(ErosionEmptyError):
        interior_approximation(disk_mask_256, 2.0)


def test_dumbbell_erosion_keeps_largest_component():
    g = disk_grid(256)
    x, y = g.cell_centers()
    inside = (
        ((x + 0.55) ** 2 + y**2 < 0.45**2)
        | ((x - 0.55) ** 2 + y**2 < 0.35**2)
        | ((np.abs(y) < 0.06) & (np.abs(x) < 0.6))
    )
    mask = DomainMask(g, inside)
    with pytest.warns(UserWarning, match="largest"):
        eroded = interior_approximation(mask, 0.12)
    # the larger lobe survives: area close to the big disk eroded by 0.12
    assert area(eroded) == pytest.approx(math.pi * 0.33**2, rel=0.1)


def test_build_ladder_disk(disk_mask_256):
    ladder = build_ladder(disk_mask_256, [0.2, 0.1, 0.05])
    for lv in ladder.levels:
        assert lv.perimeter == pytest.approx(2 * math.pi * (1 - lv.t), rel=0.02)
    assert ladder.converged


def test_build_ladder_rejects_nonmonotone(disk_mask_256):
    with pytest.raises(ValueError, match="decreasing"):
        build_ladder(disk_mask_256, [0.1, 0.2])


def test_build_ladder_porous_disk_converges_to_exact_perimeter():
    # a single interior hole grows under erosion exactly as the outer circle
    # shrinks, so every level carries the full perimeter
    dom = swiss_cheese(1.6, 0.4, 0.6, 1)
    mask = rasterize(dom, disk_grid(256))
    ladder = build_ladder(mask, [0.1, 0.05, 0.025])
    assert abs(ladder.perimeter_limit / dom.exact_perimeter - 1.0) < 0.03
    assert abs(ladder.levels[-1].perimeter / dom.exact_perimeter - 1.0) < 0.03


def test_fill_holes_drops_smallest_first():
    dom = swiss_cheese(1.6, 0.4, 0.6, 2)
    radii = sorted((r for _, _, r in dom.holes), reverse=True)
    kept = dom.fill_holes(2)
    assert sorted((r for _, _, r in kept.holes), reverse=True) == radii[:2]
    assert dom.fill_holes(0).holes == ()


# ---------------------------------------------------------------------------
# inner Minkowski content
# ---------------------------------------------------------------------------


def test_minkowski_disk(disk_mask_256):
    est = inner_minkowski_content(disk_mask_256, [0.2, 0.15, 0.1, 0.05])
    assert abs(est.content / (2 * math.pi) - 1.0) < 0.03
    # agreement with the contour perimeter (same 3% scale)
    assert abs(est.content - perimeter(disk_mask_256)) < 0.03 * 2 * math.pi


def test_minkowski_box(square_mask_256):
    est = inner_minkowski_content(square_mask_256, [0.2, 0.15, 0.1, 0.05])
    assert abs(est.content / 4.0 - 1.0) < 0.03


def test_minkowski_swiss_cheese():
    dom = swiss_cheese(1.1, 0.05, 0.1, 3)
    g = disk_grid(512)
    mask = rasterize(dom, g)
    est = inner_minkowski_content(mask, [0.12, 0.09, 0.06, 0.03])
    assert abs(est.content / dom.exact_perimeter - 1.0) < 0.05


def test_minkowski_rejects_subresolution_entries(disk_mask_256):
    with pytest.raises(ValueError, match="2h"):
        inner_minkowski_content(disk_mask_256, [0.2, 0.1, 0.05, disk_mask_256.grid.h])
    with pytest.raises(ValueError, match="four"):
        inner_minkowski_content(disk_mask_256, [0.2, 0.1, 0.05])


# ---------------------------------------------------------------------------
# boundary polyline and normals
# ---------------------------------------------------------------------------


def test_boundary_normals_disk(disk_mask_256):
    loops = boundary_loops(disk_mask_256)
    assert len(loops) == 1
    lp = loops[0]
    exact = lp.points / np.hypot(lp.points[:, 0], lp.points[:, 1])[:, None]
    dots = np.clip((lp.normals * exact).sum(axis=1), -1.0, 1.0)
    assert np.arccos(dots).max() < 0.05


def test_boundary_normals_unit_length(disk_mask_256):
    for lp in boundary_loops(disk_mask_256):
        np.testing.assert_allclose(np.hypot(lp.normals[:, 0], lp.normals[:, 1]), 1.0, atol=1e-12)


def test_boundary_length_equals_perimeter_exactly(disk_mask_256):
    loops = boundary_loops(disk_mask_256)
    assert sum(lp.length for lp in loops) == perimeter(disk_mask_256)


def test_boundary_normals_box_edge(square_mask_256):
    pairs = boundary_normals(square_mask_256)
    pts = np.array([p for p, _ in pairs])
    nrm = np.array([n for _, n in pairs])
    k = np.argmin(np.hypot(pts[:, 0] - 0.5, pts[:, 1]))
    assert nrm[k] @ np.array([0.0, -1.0]) > 0.999


# ---------------------------------------------------------------------------
# blow-up cone test
# ---------------------------------------------------------------------------


def test_cone_test_disk_point(disk_mask_256):
    res = super_reduced_test(disk_mask_256, (1.0, 0.0), [0.4, 0.2, 0.1], 0.3)
    assert res.verdict == "super-reduced"


def test_cone_test_accumulating_holes():
    depths = [0.3, 0.15, 0.075, 0.0375]
    dom = DiskWithHoles((0.0, 0.0), 1.0, tuple((1.0 - d, 0.0, d / 4.0) for d in depths))
    mask = rasterize(dom, disk_grid(512))
    res = super_reduced_test(mask, (1.0, 0.0), [0.5, 0.25, 0.125], 0.3)
    assert res.verdict == "not-super-reduced"


def test_cone_test_subresolution_scale(disk_mask_256):
    res = super_reduced_test(disk_mask_256, (1.0, 0.0), [0.02], 0.3)
    assert res.verdict == "inconclusive"


def test_cone_test_point_off_boundary(disk_mask_256):
    with pytest.raises(ValueError, match="boundary"):
        super_reduced_test(disk_mask_256, (0.2, 0.1), [0.4], 0.3)


# ---------------------------------------------------------------------------
# porous-disk generator
# ---------------------------------------------------------------------------


def test_swiss_cheese_first_hole_position():
    dom = swiss_cheese(2.0, 0.01, 0.1, 1)
    assert len(dom.holes) == 1
    hx, hy, r = dom.holes[0]
    rho = math.hypot(hx, hy)
    theta = math.atan2(hy, hx)
    assert rho == pytest.approx(0.975, abs=1e-12)
    assert r == pytest.approx(0.000625, abs=1e-15)
    assert theta == pytest.approx(math.pi / 4, abs=1e-12)


def test_swiss_cheese_hole_count():
    assert len(swiss_cheese(2.0, 0.01, 0.1, 2).holes) == 3
    assert len(swiss_cheese(2.0, 0.01, 0.1, 3).holes) == 6


def test_swiss_cheese_no_holes_is_disk():
    dom = swiss_cheese(2.0, 0.01, 0.1, 0)
    assert dom.holes == ()
    assert dom.exact_area == pytest.approx(math.pi)
    assert dom.exact_perimeter == pytest.approx(2 * math.pi)


def test_swiss_cheese_parameter_constraints():
    with pytest.raises(ValueError):
        swiss_cheese(2.0, 0.2, 0.1, 1)  # delta >= eps
    with pytest.raises(ValueError):
        swiss_cheese(0.9, 0.01, 0.1, 1)  # a <= 1


def test_swiss_cheese_exact_measures_match_independent_sums():
    a, delta, eps, i_max = 1.3, 0.2, 0.5, 3
    dom = swiss_cheese(a, delta, eps, i_max)
    radii = [delta / a ** (2 * i * i + 2 * j) for i in range(1, i_max + 1) for j in range(1, i + 1)]
    assert dom.exact_perimeter == pytest.approx(2 * math.pi * (1 + math.fsum(radii)), rel=1e-14)
    assert dom.exact_area == pytest.approx(math.pi * (1 - math.fsum(r * r for r in radii)), rel=1e-14)


def test_disk_with_holes_rejects_overlap():
    with pytest.raises(ValueError, match="overlap"):
        DiskWithHoles((0.0, 0.0), 1.0, ((0.3, 0.0, 0.1), (0.45, 0.0, 0.1)))
    with pytest.raises(ValueError, match="inside"):
        DiskWithHoles((0.0, 0.0), 1.0, ((0.95, 0.0, 0.1),))
