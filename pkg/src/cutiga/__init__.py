"""Quadratic isogeometric solver for elliptic interface problems on unfitted
meshes, with stabilized enrichment spaces and a benchmark CLI."""

from .assemble import (
    AssembledSystem,
    ProblemData,
    SidedExact,
    assemble,
    cleanup_zero_rows,
    compatibility_residual,
    error_norms,
    recover_coefficients,
    scale_system,
    solve,
)
from .bspline import (
    GeometryMap,
    KnotVector,
    SplineSpace2D,
    eval_basis_derivs,
    eval_geometry,
    identity_map,
    make_open_knot_vector,
    nurbs_annulus_map,
    polar_annulus_map,
    tau_points,
    unit_square_space,
)
from .enrich import (
    EnrichedSpace,
    MethodVariant,
    apply_projection_T,
    build_enrichment,
    mu_counts,
    orthogonalize_ldl,
    psi_point,
    theta_function,
    theta_window,
    variant,
)
from .experiments import Experiment, define_experiment, robustness_experiment
from .geometry import (
    CutCellPartition,
    ImplicitInterface,
    MeshClassification,
    circle_interface,
    classify_elements,
    cut_cell_partition,
    line_interface,
)
from .bench import (
    RunRecord,
    default_deltas,
    fit_slope,
    run_convergence,
    run_robustness,
    write_csv,
)
from .linalg import SpectrumSummary, SymMatrix, ldlt, scn, solve_constrained
from .quadrature import QuadOptions, RuleCache
from .quasi import (
    ExtensionPair,
    QiCoefficients,
    alpha_weights,
    qi_1d,
    qi_2d,
    qi_modified_2d,
)

__version__ = "0.1.0"
