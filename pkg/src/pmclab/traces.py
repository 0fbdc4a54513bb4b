"""Pairings, weak normal traces, flux diagnostics, and boundary densities.

For a bounded continuous vector field with bounded divergence, the pairing

    <xi, phi> = int phi div xi + int xi . grad phi

depends only on the boundary behavior of phi (discrete integration by parts
is exact for the zero-padded centered stencils), so it is represented by a
boundary function: the weak normal trace.  The estimator localizes the
pairing with test profiles (1 + d/eps)_+ modulated by a piecewise-linear
partition of unity over boundary arcs, and extrapolates over an eps ladder.

The module also ships the twisting counterexample field on the unit square:
divergence-free rotational bumps of unit speed accumulating at the bottom
edge, whose weak normal trace vanishes although the field itself has no
pointwise or measure-theoretic limit there.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import BoundaryLoop, DomainMask, boundary_loops, distance_gradient, signed_distance
from .grid import Array, Grid, ScalarField, VectorField, div_centered, grad_centered, interp_bilinear


@dataclass
class DivField:
    """Vector field with a certified sup norm and a bounded divergence.

    ``div`` holds the analytic divergence when known; otherwise the centered
    discrete divergence is attached.  When the analytic divergence is given,
    it is checked against the discrete one on cells two layers inside the
    domain (consistency up to the stencil truncation error).
    """

    xi: VectorField
    mask: DomainMask
    div: ScalarField | None = None
    check_consistency: bool = True

    def __post_init__(self) -> None:
        grid = self.xi.grid
        if grid.shape != self.mask.grid.shape:
            raise ValueError("field and mask grids differ")
        if self.div is None:
            self.div = ScalarField(grid, div_centered(self.xi.values, grid.h))
            self.analytic_div = False
        else:
            self.analytic_div = True
            if self.check_consistency:
                disc = div_centered(self.xi.values, grid.h)
                d = signed_distance(self.mask)
                deep = d.values < -2.0 * grid.h
                if deep.any():
                    gap = float(np.abs(disc - self.div.values)[deep].max())
                    scale = self.sup_norm / grid.h
                    if gap > 0.5 * scale:
                        raise ValueError(
                            f"analytic divergence inconsistent with the discrete one (gap {gap:.3g})"
                        )

    @property
    def sup_norm(self) -> float:
        if self.xi.sup_bound is not None:
            return float(self.xi.sup_bound)
        return float(self.xi.magnitude().max())


def unit_square_grid(resolution: int, margin_cells: int = 8) -> tuple[Grid, DomainMask]:
    """Grid covering (0,1)^2 with cell-aligned edges plus an exterior margin."""
    from .domains import Box
    from .geometry import rasterize

    h = 1.0 / resolution
    n = resolution + 2 * margin_cells
    grid = Grid(n, n, h, (-margin_cells * h, -margin_cells * h))
    mask = rasterize(Box((0.0, 0.0), 1.0), grid)
    return grid, mask


def twisting_field(i_max: int, grid: Grid, mask: DomainMask) -> DivField:
    """Divergence-free rotational bumps on the unit square.

    Row i (1 <= i <= i_max) holds balls of radius 2^-(i+2) centered at
    (j 2^-i, 2^-i) for j = 1, ..., 2^i - 1; inside each ball the field spins
    with profile c s^2 (r - s)^3, normalized to unit peak speed, and vanishes
    to second order on the ball rim (a merely Lipschitz rim would leave O(1)
    artifacts in the discrete divergence).  The analytic divergence is
    identically zero.
    """
    h = grid.h
    if i_max < 1:
        raise ValueError("need at least one row of balls")
    if 4.0 * h * 2.0**i_max > 1.0 + 1e-12:
        raise ValueError(f"row {i_max} is below resolution at h={h:.3g}")
    X, Y = grid.cell_centers()
    vals = np.zeros((2,) + grid.shape)
    for i in range(1, i_max + 1):
        r = 2.0 ** -(i + 2)
        y = 2.0**-i
        # peak tangential speed c s^3 (r - s)^3 at s = r/2 equals 1
        c = 64.0 / r**6
        for j in range(1, 2**i):
            x = j * 2.0**-i
            dx = X - x
            dy = Y - y
            s = np.hypot(dx, dy)
            ball = s < r
            prof = c * s[ball] ** 2 * (r - s[ball]) ** 3
            vals[0][ball] += -dy[ball] * prof
            vals[1][ball] += dx[ball] * prof
    xi = VectorField(grid, vals, sup_bound=1.0)
    return DivField(xi, mask, div=ScalarField(grid, np.zeros(grid.shape)), check_consistency=False)


# ---------------------------------------------------------------------------
# Pairing and its Gauss-Green residual
# ---------------------------------------------------------------------------


def pairing(xi: DivField, phi: ScalarField | Array, mask: DomainMask) -> float:
    """h^2 sum over the domain of (phi div xi + xi . grad phi).

    Uses the same centered stencils as the curvature operators; by their
    exact adjointness the value depends only on the behavior of phi near the
    boundary, up to the stencil truncation error.
    """
    grid = mask.grid
    vals = phi.values if isinstance(phi, ScalarField) else np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(vals[mask.inside])):
        raise ValueError("test function must be finite on the domain")
    gp = grad_centered(vals, grid.h)
    integrand = vals * xi.div.values + xi.xi.values[0] * gp[0] + xi.xi.values[1] * gp[1]
    return grid.cell_area * float(integrand[mask.inside].sum())


@dataclass
class ArcTrace:
    loop: int
    midpoint: tuple[float, float]
    length: float
    span: tuple[float, float]  # arclength interval on the loop
    values: list[float]        # per eps-ladder level
    extrapolated: float


@dataclass
class TraceEstimate:
    arcs: list[ArcTrace]
    eps_levels: list[float]
    sup_norm: float            # of the underlying field
    sup_ok: bool               # all |arc values| within the sup bound plus slack

    def values(self) -> Array:
        return np.array([a.extrapolated for a in self.arcs])


def _arc_partition(loops: list[BoundaryLoop], arc_count: int, h: float):
    """Split loops into arcs of roughly equal length, at least 4h each."""
    total = sum(lp.length for lp in loops)
    target = total / max(arc_count, 1)
    plan = []
    for k, lp in enumerate(loops):
        n_arcs = max(1, int(round(lp.length / target)))
        while n_arcs > 1 and lp.length / n_arcs < 4.0 * h:
            n_arcs -= 1
            warnings.warn("arc below 4h merged with its neighbor", stacklevel=3)
        plan.append((k, lp, n_arcs))
    return plan


def weak_normal_trace(
    xi: DivField,
    mask: DomainMask,
    eps_levels: list[float] | None = None,
    arc_count: int = 64,
) -> TraceEstimate:
    """Arc-averaged weak normal trace of the field on the domain boundary.

    For each arc the pairing is localized by the profile
    psi_arc(nearest boundary point) * (1 + d/eps)_+ and divided by the arc
    length; the eps ladder is extrapolated linearly to eps = 0.  Eps levels
    below 4h are rejected.
    """
    grid = mask.grid
    h = grid.h
    if eps_levels is None:
        eps_levels = [24.0 * h, 16.0 * h, 8.0 * h]
    eps_levels = sorted(set(float(e) for e in eps_levels), reverse=True)
    if min(eps_levels) < 4.0 * h:
        raise ValueError("eps levels below 4h are resolution noise; rejected")
    loops = boundary_loops(mask)
    plan = _arc_partition(loops, arc_count, h)

    d = signed_distance(mask).values
    band = d > -(max(eps_levels) + 2.0 * h)
    cells = np.argwhere(band)
    pts = grid.index_to_point(cells.astype(float))

    all_pts = np.concatenate([lp.points for lp in loops], axis=0)
    offsets = np.cumsum([0] + [len(lp.points) for lp in loops])
    tree = cKDTree(all_pts)
    _, nearest = tree.query(pts)

    # per-loop arclength coordinate of each band cell's nearest boundary point
    arcs: list[ArcTrace] = []
    div_vals = xi.div.values
    xiv = xi.xi.values
    cell_area = grid.cell_area
    inside = mask.inside

    for loop_id, lp, n_arcs in plan:
        s = lp.arclengths()
        length = lp.length
        sel = (nearest >= offsets[loop_id]) & (nearest < offsets[loop_id + 1])
        cell_idx = cells[sel]
        cell_s = s[nearest[sel] - offsets[loop_id]]
        bounds = np.linspace(0.0, length, n_arcs + 1)
        centers = 0.5 * (bounds[:-1] + bounds[1:])
        arc_of_vertex = np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, n_arcs - 1)
        for a in range(n_arcs):
            if n_arcs == 1:
                psi_cells = np.ones(len(cell_idx))
                psi_vertices = np.ones(len(s))
            else:
                psi_cells = _hat(cell_s, centers, a, length)
                psi_vertices = _hat(s, centers, a, length)
            denom = float((psi_vertices * lp.seg_lengths).sum())
            phi_base = np.zeros(grid.shape)
            phi_base[cell_idx[:, 0], cell_idx[:, 1]] = psi_cells
            vals_per_eps = []
            for eps in eps_levels:
                profile = np.clip(1.0 + d / eps, 0.0, None)
                phi = phi_base * profile
                gp = grad_centered(phi, h)
                integrand = phi * div_vals + xiv[0] * gp[0] + xiv[1] * gp[1]
                vals_per_eps.append(cell_area * float(integrand[inside].sum()) / denom)
            if len(vals_per_eps) >= 2:
                e1, e2 = eps_levels[-2], eps_levels[-1]
                v1, v2 = vals_per_eps[-2], vals_per_eps[-1]
                extrap = v2 + (v2 - v1) * e2 / (e1 - e2)
            else:
                extrap = vals_per_eps[-1]
            mid_vertex = int(np.argmin(np.abs(s - centers[a])))
            arcs.append(
                ArcTrace(
                    loop=loop_id,
                    midpoint=tuple(lp.points[mid_vertex]),
                    length=float(bounds[a + 1] - bounds[a]),
                    span=(float(bounds[a]), float(bounds[a + 1])),
                    values=vals_per_eps,
                    extrapolated=float(extrap),
                )
            )
    sup = xi.sup_norm
    sup_ok = all(abs(a.extrapolated) <= sup + 0.05 for a in arcs)
    return TraceEstimate(arcs=arcs, eps_levels=eps_levels, sup_norm=sup, sup_ok=sup_ok)


def _hat(s: Array, centers: Array, a: int, length: float) -> Array:
    """Piecewise-linear partition of unity over cyclic arcs (hat on arc a)."""
    n = len(centers)
    c = centers[a]
    left = centers[(a - 1) % n]
    right = centers[(a + 1) % n]
    ds = (s - c + 0.5 * length) % length - 0.5 * length
    wl = (c - left) % length
    wr = (right - c) % length
    out = np.zeros_like(s)
    neg = (ds <= 0) & (ds >= -wl)
    pos = (ds >= 0) & (ds <= wr)
    out[neg] = 1.0 + ds[neg] / wl
    out[pos] = 1.0 - ds[pos] / wr
    return out


def gauss_green_residual(
    xi: DivField, phi: ScalarField | Array, mask: DomainMask, trace: TraceEstimate
) -> float:
    """Defect of the generalized divergence identity for the given trace.

    Compares the volume pairing with the boundary sum of arc length times the
    arc mean of phi times the arc trace.
    """
    vol = pairing(xi, phi, mask)
    vals = phi.values if isinstance(phi, ScalarField) else np.asarray(phi, dtype=float)
    grid = mask.grid
    loops = boundary_loops(mask)
    phi_on_loop = [interp_bilinear(grid, vals, lp.points) for lp in loops]
    boundary = 0.0
    for arc in trace.arcs:
        lp = loops[arc.loop]
        s = lp.arclengths()
        sel = (s >= arc.span[0]) & (s < arc.span[1])
        if sel.any():
            weights = lp.seg_lengths[sel]
            mean_phi = float((phi_on_loop[arc.loop][sel] * weights).sum() / weights.sum())
        else:
            mean_phi = float(interp_bilinear(grid, vals, np.asarray(arc.midpoint)))
        boundary += arc.length * mean_phi * arc.extrapolated
    return abs(vol - boundary)


# ---------------------------------------------------------------------------
# Verticality and boundary-layer diagnostics
# ---------------------------------------------------------------------------


def verticality_flux(u, ladder) -> list[float]:
    """Line integral of the normalized gradient flux over each inner boundary.

    ``ladder`` is an :class:`~pmclab.geometry.ApproxLadder` or a list of
    inner-parallel masks.  For each level the boundary polyline is integrated
    against the normalized-gradient field of the height; for a solution at
    critical total curvature these fluxes rise toward the perimeter of the
    full domain, and they converge to the total curvature for subcritical
    pairs.
    """
    from .solver import tu_field

    masks = ladder.masks() if hasattr(ladder, "masks") else list(ladder)
    tu = tu_field(u.field if hasattr(u, "field") else u)
    out = []
    for m in masks:
        total = 0.0
        for lp in boundary_loops(m):
            tx = interp_bilinear(m.grid, tu.values[0], lp.points)
            ty = interp_bilinear(m.grid, tu.values[1], lp.points)
            dots = tx * lp.normals[:, 0] + ty * lp.normals[:, 1]
            total += float((dots * lp.seg_lengths).sum())
        out.append(total)
    return out


def boundary_layer_flux(xi: DivField, mask: DomainMask, eps: float) -> float:
    """Band-averaged flux (1/eps) int over {-eps < d < 0} of xi . grad d."""
    grid = mask.grid
    if eps < 2.0 * grid.h:
        raise ValueError("band width below 2h is resolution noise")
    d = signed_distance(mask).values
    gd = distance_gradient(mask)
    band = mask.inside & (d > -eps)
    integrand = xi.xi.values[0] * gd[0] + xi.xi.values[1] * gd[1]
    return grid.cell_area * float(integrand[band].sum()) / eps


@dataclass
class DensityProfile:
    center: tuple[float, float]
    radii: list[float]
    bad_ratios: list[float]      # |N_t cap B_r| / r^2
    frame_ratios: list[float]    # |M_tau cap B_r| / r^2 (nan when tau not given)


def bad_set_density(
    xi: DivField,
    mask: DomainMask,
    t: float,
    z: tuple[float, float],
    radii: list[float],
    tau: float | None = None,
) -> DensityProfile:
    """Density ratios at a boundary point of the sets where the field misaligns.

    N_t collects cells where xi . grad d falls below the sup norm minus t;
    M_tau collects cells where grad d deviates from the boundary normal at z
    by more than tau.  Membership is evaluated two cells inside the domain
    (closer to the boundary the stencils carry no information), and balls are
    clipped to the domain.
    """
    grid = mask.grid
    h = grid.h
    radii = sorted(set(float(r) for r in radii), reverse=True)
    if min(radii) < 4.0 * h:
        raise ValueError("radii below 4h are resolution noise; rejected")
    d = signed_distance(mask).values
    gd = distance_gradient(mask)
    valid = mask.inside & (d < -2.0 * h)
    align = xi.xi.values[0] * gd[0] + xi.xi.values[1] * gd[1]
    bad = valid & (align < xi.sup_norm - t)

    loops = boundary_loops(mask)
    all_pts = np.concatenate([lp.points for lp in loops], axis=0)
    all_normals = np.concatenate([lp.normals for lp in loops], axis=0)
    z_arr = np.asarray(z, dtype=float)
    dist = np.hypot(*(all_pts - z_arr).T)
    if float(dist.min()) > h:
        raise ValueError("point is not on the boundary polyline (within h)")
    nu = all_normals[int(np.argmin(dist))]

    frame_bad = None
    if tau is not None:
        dev = np.hypot(gd[0] - nu[0], gd[1] - nu[1])
        frame_bad = valid & (dev > tau)

    X, Y = grid.cell_centers()
    r2 = (X - z_arr[0]) ** 2 + (Y - z_arr[1]) ** 2
    bad_ratios = []
    frame_ratios = []
    for r in radii:
        ball = r2 < r * r
        bad_ratios.append(grid.cell_area * float((bad & ball).sum()) / (r * r))
        if frame_bad is None:
            frame_ratios.append(float("nan"))
        else:
            frame_ratios.append(grid.cell_area * float((frame_bad & ball).sum()) / (r * r))
    return DensityProfile(tuple(z_arr), radii, bad_ratios, frame_ratios)


@dataclass
class ApproxLimitResult:
    estimate: tuple[float, float]
    radii: list[float]
    residual_masses: list[float]
    has_limit: bool


def approx_limit(
    field: VectorField,
    mask: DomainMask,
    z: tuple[float, float],
    alpha: float,
    radii: list[float],
) -> ApproxLimitResult:
    """Approximate limit of a vector field at a point, with residual diagnostics.

    The candidate limit is the componentwise median over the smallest ball;
    the residual mass at each radius is the fraction of domain cells in the
    ball deviating from the candidate by at least alpha.  A limit is declared
    when the residual masses decay below 0.1.
    """
    grid = mask.grid
    radii = sorted(set(float(r) for r in radii), reverse=True)
    if min(radii) < 4.0 * grid.h:
        raise ValueError("radii below 4h are resolution noise; rejected")
    z_arr = np.asarray(z, dtype=float)
    X, Y = grid.cell_centers()
    r2 = (X - z_arr[0]) ** 2 + (Y - z_arr[1]) ** 2
    small = mask.inside & (r2 < radii[-1] ** 2)
    if not small.any():
        raise ValueError("no domain cells in the smallest ball")
    w = (float(np.median(field.values[0][small])), float(np.median(field.values[1][small])))
    dev = np.hypot(field.values[0] - w[0], field.values[1] - w[1])
    masses = []
    for r in radii:
        ball = mask.inside & (r2 < r * r)
        masses.append(float((dev[ball] >= alpha).mean()))
    return ApproxLimitResult(w, radii, masses, has_limit=masses[-1] < 0.1)
