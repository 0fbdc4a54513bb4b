"""Variational solver for the prescribed mean curvature equation.

The graph-area functional is discretized with forward differences over the
whole bounding box while the height is frozen to the extension datum outside
the domain; the cross-interface difference quotients realize the boundary
attachment penalty, so a single mechanism yields both the area term and the
weak Dirichlet condition.  Minimization uses a primal-dual splitting whose
dual variable lives in the unit ball of R^3 per cell (the lifted form of the
conjugate -sqrt(1 - |q|^2) of the area integrand), which keeps the planar
dual component |q| <= 1 feasible exactly where a Newton Hessian would
degenerate.

Near-critical curvature pairs, where the total curvature matches the
perimeter, are handled by the erosion ladder: solve on inner parallel
domains (each pair there is safely subcritical), renormalize each level by
its area median, and take the finest level as the limit field.  Cells beyond
the blow-up cap are reported as diagnostic masks; for admissible pairs they
stay empty.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .extremality import Classification, as_curvature, classify, total_curvature
from .geometry import DomainMask, interior_approximation, perimeter, signed_distance
from .grid import Array, Grid, ScalarField, VectorField, div_centered, grad_centered, grad_forward


class RefusedPairError(ValueError):
    """The curvature pair admits no bounded variational solution; refused."""


@dataclass
class HeightField:
    """Height function over the bounding box with its domain mask.

    Values outside the mask hold the frozen extension datum.
    """

    field: ScalarField
    mask: DomainMask

    @property
    def values(self) -> Array:
        return self.field.values

    @property
    def grid(self) -> Grid:
        return self.field.grid


@dataclass
class SolveConfig:
    """Tunables of one variational solve.

    ``height_tol`` is the stationarity tolerance in height units: iteration
    stops once the incumbent changes by less than it over a stall window.
    Seed-to-seed agreement of converged runs is expected within twice this
    tolerance.  ``m_cap`` is the blow-up detection cap; it must be at least
    ten domain diameters.
    """

    max_iters: int = 60000
    check_every: int = 25
    stall_window: int = 1500
    height_tol: float = 2.5e-4
    energy_tol: float = 1e-10
    phi: float = 0.0
    m_cap: float | None = None
    ladder_t0: float | None = None   # default 8h
    ladder_levels: int = 4

    def __post_init__(self) -> None:
        if self.max_iters <= 0 or self.check_every <= 0 or self.stall_window <= 0:
            raise ValueError("iteration controls must be positive")
        if self.height_tol <= 0 or self.energy_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.ladder_levels < 1:
            raise ValueError("ladder needs at least one level")

    def resolved_m_cap(self, mask: DomainMask) -> float:
        diam = _mask_diameter(mask)
        cap = 50.0 * diam if self.m_cap is None else self.m_cap
        if cap < 10.0 * diam:
            raise ValueError("blow-up cap must be at least 10 domain diameters")
        return cap

    @classmethod
    def from_dict(cls, spec: dict) -> "SolveConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(spec) - known
        if unknown:
            raise ValueError(f"unknown solver config keys: {sorted(unknown)}")
        return cls(**spec)


def _mask_diameter(mask: DomainMask) -> float:
    idx = np.argwhere(mask.inside)
    span = (idx.max(axis=0) - idx.min(axis=0) + 1) * mask.grid.h
    return float(np.hypot(span[0], span[1]))


@dataclass
class SolverReport:
    field: HeightField
    energies: list[float]          # incumbent energy at each checkpoint
    final_energy: float
    residual: float                # sup |div Tu - H| on cells >= 4 cells inside
    iterations: int
    converged: bool
    status: str


@dataclass
class LadderSolve:
    t: float
    median_shift: float
    field: HeightField
    report: SolverReport


@dataclass
class ExtremalResult:
    levels: list[LadderSolve]
    limit: HeightField             # median-normalized finest-level field
    solve_mask: DomainMask         # domain of the finest level
    compact_mask: Array            # cells of the fixed compact K (coarsest level)
    n_plus: Array
    n_minus: Array
    epi_distances: list[float]     # consecutive epigraph L1 distances on K
    monotone_ok: bool


# ---------------------------------------------------------------------------
# Functional, curvature field, derivatives
# ---------------------------------------------------------------------------


def _phi_array(grid: Grid, phi) -> Array:
    if isinstance(phi, ScalarField):
        return phi.values
    return np.full(grid.shape, float(phi))


def _area_term(values: Array, h: float) -> float:
    g = grad_forward(values, h)
    return h * h * float(np.sqrt(1.0 + g[0] ** 2 + g[1] ** 2).sum())


def functional_value(u: HeightField | ScalarField, mask: DomainMask, h_spec, phi=0.0) -> float:
    """Graph area plus curvature work, relative to the exterior datum sheet.

    The area integrand is summed over the whole box with the height frozen to
    the datum outside the domain; the flat contribution of the pure-datum
    sheet over the exterior cells is subtracted so the value reduces to
    area(domain graph) + boundary jump + int H u.
    """
    grid = mask.grid
    values = u.values if isinstance(u, (HeightField, ScalarField)) else np.asarray(u)
    if not np.all(np.isfinite(values[mask.inside])):
        raise ValueError("height field is not finite on the domain")
    h = grid.h
    phi_vals = _phi_array(grid, phi)
    work = np.where(mask.inside, values, phi_vals)
    hv = as_curvature(h_spec).values_on(mask)
    curv = h * h * float((hv[mask.inside] * values[mask.inside]).sum())
    g_ext = grad_forward(phi_vals, h)
    ext_sheet = h * h * float(
        np.sqrt(1.0 + g_ext[0] ** 2 + g_ext[1] ** 2)[~mask.inside].sum()
    )
    return _area_term(work, h) - ext_sheet + curv


def functional_directional(
    u: HeightField | ScalarField, v: Array, mask: DomainMask, h_spec, phi=0.0
) -> float:
    """First variation of :func:`functional_value` along a direction v.

    The direction must vanish outside the domain (the exterior is frozen).
    """
    grid = mask.grid
    h = grid.h
    values = np.where(mask.inside, u.values, _phi_array(grid, phi))
    if np.any(v[~mask.inside] != 0.0):
        raise ValueError("direction must vanish outside the domain")
    gu = grad_forward(values, h)
    gv = grad_forward(v, h)
    denom = np.sqrt(1.0 + gu[0] ** 2 + gu[1] ** 2)
    hv = as_curvature(h_spec).values_on(mask)
    lin = h * h * float(((gu[0] * gv[0] + gu[1] * gv[1]) / denom).sum())
    return lin + h * h * float((hv[mask.inside] * v[mask.inside]).sum())


def tu_field(u: HeightField | ScalarField) -> VectorField:
    """Normalized gradient p / sqrt(1 + |p|^2) of the height, modulus < 1.

    For a :class:`HeightField` the gradient respects the domain mask: cells
    whose centered stencil would reach across the frozen exterior fall back
    to the one-sided interior difference.  Differentiating across the freeze
    attenuates the steep boundary gradients of near-critical solutions and
    leaves a spurious divergence ring.
    """
    grid = u.grid
    g = grad_centered(u.values, grid.h)
    if isinstance(u, HeightField):
        inside = u.mask.inside
        vals = u.values
        h = grid.h
        for axis in (0, 1):
            lo_ok = np.zeros(grid.shape, dtype=bool)
            hi_ok = np.zeros(grid.shape, dtype=bool)
            if axis == 0:
                lo_ok[1:, :] = inside[:-1, :]
                hi_ok[:-1, :] = inside[1:, :]
                fwd = np.zeros(grid.shape)
                fwd[:-1, :] = (vals[1:, :] - vals[:-1, :]) / h
                bwd = np.zeros(grid.shape)
                bwd[1:, :] = (vals[1:, :] - vals[:-1, :]) / h
            else:
                lo_ok[:, 1:] = inside[:, :-1]
                hi_ok[:, :-1] = inside[:, 1:]
                fwd = np.zeros(grid.shape)
                fwd[:, :-1] = (vals[:, 1:] - vals[:, :-1]) / h
                bwd = np.zeros(grid.shape)
                bwd[:, 1:] = (vals[:, 1:] - vals[:, :-1]) / h
            only_hi = inside & hi_ok & ~lo_ok
            only_lo = inside & lo_ok & ~hi_ok
            neither = inside & ~lo_ok & ~hi_ok
            g[axis][only_hi] = fwd[only_hi]
            g[axis][only_lo] = bwd[only_lo]
            g[axis][neither] = 0.0
    denom = np.sqrt(1.0 + g[0] ** 2 + g[1] ** 2)
    return VectorField(grid, g / denom, sup_bound=1.0)


def mean_curvature(u: HeightField | ScalarField) -> ScalarField:
    """Divergence of the normalized gradient; the curvature of the graph.

    Uses the centered-divergence adjoint of the gradient in
    :func:`tu_field`; values within two cells of the domain boundary are
    stencil artifacts.
    """
    tu = tu_field(u)
    return ScalarField(u.grid, div_centered(tu.values, u.grid.h))


def area_median(u: HeightField | ScalarField, mask: DomainMask) -> float:
    """Lower area-median of the height over interior cells."""
    vals = np.sort(u.values[mask.inside])
    n = len(vals)
    return float(vals[n - n // 2 - 1]) if n % 2 else float(vals[n - n // 2])


def median_normalize(u: HeightField, mask: DomainMask) -> HeightField:
    """Vertical shift putting the area median at zero.

    Both the super- and sub-level sets of the result at height zero cover at
    least half the domain area minus one cell.
    """
    shift = area_median(u, mask)
    values = u.values - shift
    return HeightField(ScalarField(u.grid, values), mask)


# ---------------------------------------------------------------------------
# Dirichlet-penalized solve
# ---------------------------------------------------------------------------


def _pmc_residual(values: Array, mask: DomainMask, hv: Array, depth_cells: int = 4) -> float:
    d = signed_distance(mask)
    region = d.values < -depth_cells * mask.grid.h
    if not region.any():
        return float("nan")
    mc = div_centered(
        tu_field(ScalarField(mask.grid, values)).values, mask.grid.h
    )
    return float(np.abs(mc - hv)[region].max())


def solve_dirichlet(
    mask: DomainMask,
    h_spec,
    phi=0.0,
    cfg: SolveConfig | None = None,
    classification: Classification | None = None,
    init: Array | None = None,
) -> SolverReport:
    """Minimize the penalized graph functional with frozen exterior datum.

    Requires a pair admitting the coercive variational problem: violated
    pairs are refused, and pairs at the critical total curvature should go
    through :func:`solve_extremal` instead.  The report carries the incumbent
    energy trajectory (nonincreasing by construction) and the interior
    residual of the curvature equation.
    """
    cfg = cfg or SolveConfig()
    if classification is None:
        classification = classify(mask, h_spec, with_margin=False)
    if classification.label == "violated":
        raise RefusedPairError("curvature pair admits a violating subset; no solution")
    if classification.label == "extremal":
        raise RefusedPairError(
            "pair is at the critical total curvature; use solve_extremal"
        )
    report, _ = _dirichlet_core(mask, h_spec, phi, cfg, init)
    return report


def _dirichlet_core(
    mask: DomainMask,
    h_spec,
    phi,
    cfg: SolveConfig,
    init: Array | None,
) -> tuple[SolverReport, Array]:
    grid = mask.grid
    h = grid.h
    inside = mask.inside
    outside = ~inside
    hv = as_curvature(h_spec).values_on(mask)
    phi_vals = _phi_array(grid, phi)

    step = 0.975 * h / math.sqrt(8.0)
    tau = sigma = step

    u = np.where(inside, init if init is not None else phi_vals, phi_vals).astype(float)
    u[outside] = phi_vals[outside]
    q = np.zeros((2,) + grid.shape)
    # start the dual at the lifted gradient direction of the initial surface
    g0 = grad_forward(u, h)
    denom0 = np.sqrt(1.0 + g0[0] ** 2 + g0[1] ** 2)
    q[0] = g0[0] / denom0
    q[1] = g0[1] / denom0
    w = 1.0 / denom0
    u_bar = u.copy()
    u_old = np.empty_like(u)
    mag = np.empty(grid.shape)
    gb = np.empty((2,) + grid.shape)
    cell = h * h
    g_ext = grad_forward(phi_vals, h)
    ext_sheet = cell * float(np.sqrt(1.0 + g_ext[0] ** 2 + g_ext[1] ** 2)[outside].sum())
    hv_in = np.where(inside, hv, 0.0)

    def energy(uv: Array) -> float:
        gx = grad_forward(uv, h)
        np.sqrt(1.0 + gx[0] ** 2 + gx[1] ** 2, out=gx[0])
        return cell * (float(gx[0].sum()) + float((hv_in * uv).sum())) - ext_sheet

    best_u = u.copy()
    best_energy = energy(u)
    energies = [best_energy]
    window_ref_u = u.copy()
    window_ref_energy = best_energy
    its_since_check = 0
    status = "iteration budget exhausted"
    converged = False
    it = 0
    while it < cfg.max_iters:
        for _ in range(cfg.check_every):
            # dual ascent on the lifted unit ball
            gb[0, :-1, :] = u_bar[1:, :]
            gb[0, :-1, :] -= u_bar[:-1, :]
            gb[0, -1, :] = 0.0
            gb[1, :, :-1] = u_bar[:, 1:]
            gb[1, :, :-1] -= u_bar[:, :-1]
            gb[1, :, -1] = 0.0
            gb *= sigma / h
            q += gb
            w += sigma
            np.sqrt(q[0] * q[0] + q[1] * q[1] + w * w, out=mag)
            np.maximum(mag, 1.0, out=mag)
            q[0] /= mag
            q[1] /= mag
            w /= mag
            # primal descent with frozen exterior
            u_old[:] = u
            dv = gb[0]
            dv[0, :] = q[0][0, :]
            dv[1:-1, :] = q[0][1:-1, :]
            dv[1:-1, :] -= q[0][:-2, :]
            dv[-1, :] = -q[0][-2, :]
            dv[:, 0] += q[1][:, 0]
            dv[:, 1:-1] += q[1][:, 1:-1]
            dv[:, 1:-1] -= q[1][:, :-2]
            dv[:, -1] -= q[1][:, -2]
            dv *= tau / h
            u += dv
            u -= tau * hv
            u[outside] = phi_vals[outside]
            np.subtract(2.0 * u, u_old, out=u_bar)
        it += cfg.check_every
        its_since_check += cfg.check_every
        e = energy(u)
        if e < best_energy:
            best_energy = e
            best_u[:] = u
        energies.append(best_energy)
        if its_since_check >= cfg.stall_window:
            moved = float(np.abs(best_u - window_ref_u)[inside].max(initial=0.0))
            gained = window_ref_energy - best_energy
            if moved <= cfg.height_tol and gained <= cfg.energy_tol * (1.0 + abs(best_energy)):
                converged = True
                status = "stationary within tolerance"
                break
            window_ref_u[:] = best_u
            window_ref_energy = best_energy
            its_since_check = 0

    residual = _pmc_residual(best_u, mask, hv)
    field_out = HeightField(ScalarField(grid, best_u.copy()), mask)
    report = SolverReport(
        field=field_out,
        energies=energies,
        final_energy=best_energy,
        residual=residual,
        iterations=it,
        converged=converged,
        status=status,
    )
    return report, best_u


# ---------------------------------------------------------------------------
# Extremal ladder
# ---------------------------------------------------------------------------


def _nearest_fill(values: Array, known: Array) -> Array:
    """Extend values from known cells to the rest by nearest-cell lookup."""
    if known.all():
        return values
    _, (ix, iy) = ndimage.distance_transform_edt(~known, return_indices=True)
    return values[ix, iy]


def _epigraph_distance(a: Array, b: Array, region: Array, cell_area: float, cap: float) -> float:
    ca = np.clip(a, -cap, cap)
    cb = np.clip(b, -cap, cap)
    return cell_area * float(np.abs(ca - cb)[region].sum())


def default_ladder_schedule(mask: DomainMask, cfg: SolveConfig) -> list[float]:
    t0 = cfg.ladder_t0 if cfg.ladder_t0 is not None else 8.0 * mask.grid.h
    return [t0 * 0.5**j for j in range(cfg.ladder_levels)]


def solve_extremal(
    mask: DomainMask,
    h_spec,
    cfg: SolveConfig | None = None,
    classification: Classification | None = None,
    init: Array | None = None,
) -> ExtremalResult:
    """Solve a critical pair through the inner-domain ladder.

    Each erosion level carries a strictly subcritical pair and is solved with
    a zero exterior datum, warm-started from the previous level and
    median-normalized; the finest level is the limit field.  Blow-up masks
    (cells beyond the cap before normalization) are expected empty and are
    reported as a diagnostic, not an error, as is a non-monotone trend of the
    consecutive epigraph distances on the fixed compact.
    """
    cfg = cfg or SolveConfig()
    if classification is None:
        classification = classify(mask, h_spec, with_margin=False)
    if classification.label != "extremal":
        raise RefusedPairError(
            f"ladder solve expects a pair at critical total curvature, got {classification.label}"
        )
    hv = as_curvature(h_spec).values_on(mask)
    m_cap = cfg.resolved_m_cap(mask)
    schedule = default_ladder_schedule(mask, cfg)
    d = signed_distance(mask)

    levels: list[LadderSolve] = []
    compact: Array | None = None
    prev_raw: Array | None = None
    prev_mask: DomainMask | None = None
    epi: list[float] = []
    warm = init
    n_plus = np.zeros(mask.grid.shape, dtype=bool)
    n_minus = np.zeros(mask.grid.shape, dtype=bool)
    for t in schedule:
        level_mask = interior_approximation(mask, t, distance=d)
        level_pair = abs(total_curvature(level_mask, h_spec))
        level_per = perimeter(level_mask)
        if level_pair >= level_per:
            warnings.warn(
                f"ladder level t={t:.4g} is not subcritical "
                f"(|int H| = {level_pair:.4g} vs P = {level_per:.4g})",
                stacklevel=2,
            )
        if warm is not None:
            warm = _nearest_fill(warm, prev_mask.inside if prev_mask is not None else level_mask.inside)
        level_cfg = replace(cfg, phi=0.0)
        report, raw = _dirichlet_core(level_mask, h_spec, 0.0, level_cfg, warm)
        n_plus |= level_mask.inside & (raw > m_cap)
        n_minus |= level_mask.inside & (raw < -m_cap)
        shift = area_median(report.field, level_mask)
        normalized = HeightField(
            ScalarField(mask.grid, raw - shift), level_mask
        )
        levels.append(LadderSolve(t, shift, normalized, report))
        if compact is None:
            compact = level_mask.inside.copy()
        if prev_raw is not None:
            epi.append(
                _epigraph_distance(
                    prev_raw, normalized.values, compact, mask.grid.cell_area, m_cap
                )
            )
        prev_raw = normalized.values
        prev_mask = level_mask
        warm = raw
    monotone_ok = all(b <= 1.2 * a + 1e-12 for a, b in zip(epi, epi[1:]))
    if not monotone_ok:
        warnings.warn("epigraph distances along the ladder are not nonincreasing", stacklevel=2)
    return ExtremalResult(
        levels=levels,
        limit=levels[-1].field,
        solve_mask=levels[-1].field.mask,
        compact_mask=compact,
        n_plus=n_plus,
        n_minus=n_minus,
        epi_distances=epi,
        monotone_ok=monotone_ok,
    )


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------


def uniqueness_probe(
    mask: DomainMask,
    h_spec,
    cfg: SolveConfig | None = None,
    seeds: list | None = None,
) -> float:
    """Max pairwise sup-distance of median-normalized solves from different seeds.

    Seeds may be constants, arrays, or the string "random" (deterministic
    generator).  Critical pairs run the ladder; subcritical pairs run the
    penalized solve directly.
    """
    cfg = cfg or SolveConfig()
    seeds = seeds if seeds is not None else [0.0]
    classification = classify(mask, h_spec, with_margin=False)
    rng = np.random.default_rng(0)
    fields = []
    region: Array | None = None
    for seed in seeds:
        if isinstance(seed, str) and seed == "random":
            init = rng.standard_normal(mask.grid.shape)
        elif isinstance(seed, np.ndarray):
            init = seed
        else:
            init = np.full(mask.grid.shape, float(seed))
        if classification.label == "extremal":
            res = solve_extremal(mask, h_spec, cfg, classification=classification, init=init)
            fields.append(res.limit.values)
            region = res.compact_mask if region is None else region
        else:
            rep = solve_dirichlet(mask, h_spec, cfg.phi, cfg, classification=classification, init=init)
            norm = median_normalize(rep.field, mask)
            fields.append(norm.values)
            d = signed_distance(mask)
            start = 8.0 * mask.grid.h
            region = (d.values < -start) if region is None else region
    worst = 0.0
    for a in range(len(fields)):
        for b in range(a + 1, len(fields)):
            worst = max(worst, float(np.abs(fields[a] - fields[b])[region].max()))
    return worst


def lower_bound_probe(u: HeightField, mask: DomainMask | None = None) -> float:
    """Minimum of the height over interior cells."""
    m = mask if mask is not None else u.mask
    return float(u.values[m.inside].min())
