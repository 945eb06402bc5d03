"""Numerical geometry of polarized torus families.

Fiberwise Ricci-flat metrics on principally polarized complex tori,
Kodaira-Spencer representatives and the Weil-Petersson pairing, the
curvature of the relative canonical bundle, Green-operator lower bounds,
and the positivity check for the assembled global form
omega_X + (c + 1) f* omega^WP.

The public API is re-exported flat; the submodules group it by stage:

- ``torus``: period matrices, families, flat metrics, closed-form oracles
- ``fields``: grids, tensor fields, spectral calculus, integration
- ``mongeampere``: the fiberwise complex Monge-Ampere solver
- ``family``: admissible total-space forms over a base stencil
- ``curvature``: curvature blocks, Weil-Petersson metric, identity checks
- ``green``: Green operator, kernel closed forms, lower bounds
- ``assemble``: the shifted global form and its positivity report
- ``config`` / ``cli``: scenario files and the command-line pipeline
"""

from cyfam.assemble import (
    AssembledGlobalForm,
    GlobalFormReport,
    assemble_global_form,
    det_identity_residual,
    dump_eigenvalues,
    negative_control,
    positivity_check,
    top_density_margin,
)
from cyfam.config import (
    DEFAULT_TOLERANCES,
    PsiMode,
    ScenarioConfig,
    config_from_mapping,
    config_from_toml,
    dump_schema,
    make_psi,
    parse_complex,
)
from cyfam.curvature import (
    CurvatureReport,
    CurvatureTensor,
    chi_laplace_residual,
    curvature_report,
    divergence_identity_residual,
    fiber_constancy_residuals,
    first_chern_residuals,
    flat_model_curvature,
    ks_identity_residuals,
    mixed_parallel_residuals,
    parallel_frame_residual,
    phi_laplace_residual,
    relative_canonical_curvature,
    wp_metric,
)
from cyfam.errors import (
    AccuracyError,
    ConfigError,
    CyfamError,
    InvalidPeriodError,
    NotSolvableError,
    PairingError,
    SingularPointError,
    SolverError,
    StepFailureError,
)
from cyfam.family import (
    AdmissibleForm,
    FiberPoint,
    SParameterStencil,
    admissibility_report,
    base_component,
    bordered_matrix,
    build_admissible,
    chi,
    d_closedness,
    horizontal_lift,
    inject_violation,
    kodaira_spencer,
    mixed_component,
    mixed_component_conjugate,
    normalize_admissible,
    phi,
    pollute,
    save_admissible,
)
from cyfam.fields import (
    FiberGrid,
    MetricField,
    TensorField,
    christoffel,
    constant_tensor,
    contract,
    covariant_derivative,
    dump_csv,
    harmonic_projection,
    integrate,
    laplacian,
    poisson_solve,
    scalar_field,
    spectral_derivative,
    verify_spectral_tail,
)
from cyfam.green import (
    FamilyGreenBound,
    GreenBound,
    GreenOperator,
    bound_report,
    dump_kernel_profile,
    family_lower_bound,
    green_apply,
    green_kernel,
    green_lower_bound,
    heat_kernel,
    symbol_form,
    verify_green_reconstruction,
)
from cyfam.mongeampere import (
    MongeAmpereProblem,
    RicciFlatResult,
    complex_hessian,
    ma_residual,
    solve_ricci_flat,
)
from cyfam.torus import (
    PeriodFamily,
    PeriodMatrix,
    Preset,
    flat_metric,
    get_preset,
    green_oracle_constants,
    jacobians,
    ks_closed_form,
    polarized_volume,
    theta_green_oracle,
    wp_closed_form,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
