"""Numerical laboratory for the prescribed mean curvature equation.

Tools for classifying curvature pairs on non-smooth planar domains
(strict / extremal / violated), solving the curvature equation in both
regimes, and estimating weak normal traces and their boundary diagnostics.
"""

__version__ = "0.1.0"

from .domains import Box, Disk, DiskWithHoles, swiss_cheese
from .extremality import (
    CheegerResult,
    Classification,
    ConvergenceError,
    CurvatureSpec,
    DeficitReport,
    PairViolatedError,
    cheeger,
    classify,
    epsilon0,
    normalized_extremal_curvature,
    subset_deficit,
    total_curvature,
)
from .geometry import (
    ApproxLadder,
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
from .grid import Grid, ScalarField, VectorField
from .solver import (
    ExtremalResult,
    HeightField,
    RefusedPairError,
    SolveConfig,
    SolverReport,
    functional_value,
    lower_bound_probe,
    mean_curvature,
    median_normalize,
    solve_dirichlet,
    solve_extremal,
    tu_field,
    uniqueness_probe,
)
from .traces import (
    DivField,
    TraceEstimate,
    approx_limit,
    bad_set_density,
    boundary_layer_flux,
    gauss_green_residual,
    pairing,
    twisting_field,
    verticality_flux,
    weak_normal_trace,
)
