"""Integrability and quasi-triviality of Hamiltonian perturbations of
hydrodynamic-type systems, up to second order in the dispersion parameter.

Layers, bottom up: ``kernel`` (exact expressions and zero tests),
``parsing``, ``jets`` (jet spaces, Euler operator, Poisson brackets),
``hydro`` (dispersionless analysis), ``perturbation`` (order one and two),
``manifest``/``pipeline``/``cli`` (batch use) and ``casebook``.
"""

from .errors import (
    BasisInsufficientError,
    ChartError,
    HamPerturbError,
    InternalConsistencyError,
    ManifestError,
    NonGenericDensityError,
    NotConservedError,
    NotIntegrableError,
    ParseError,
    PreconditionError,
    UnsupportedExpressionError,
    ZeroTestError,
)
from .hydro import (
    HydroSystem,
    RiemannChart,
    check_conserved0,
    haantjes_tensor,
    is_hydro_integrable,
    solve_chart_n2,
    solve_claws0,
    tsarev_check,
    velocity_matrix,
    verify_chart,
)
from .jets import (
    JetSpace,
    LocalFunctional,
    Metric,
    hamiltonian_flow,
    jet_degree_decompose,
    poisson_bracket,
    total_x_derivative,
    variational_derivative,
)
from .kernel import (
    Workspace,
    ZeroTest,
    canonical,
    is_zero,
    render,
    sampling_seed,
    substitute,
    zero_test,
)
from .manifest import Manifest, load_manifest, loads_manifest
from .parsing import parse_expr
from .perturbation import (
    Perturbation,
    build_h2_canonical,
    canonical_transform,
    chart_bracket,
    extend_claw,
    first_order_check,
    first_order_trivialize,
    quasi_trivialize,
    reduce_first_order,
    second_order_check,
    second_order_extension_solve,
    to_chart_first,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
