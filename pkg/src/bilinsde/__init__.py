"""Finite-dimensional stochastic systems with energy-conserving bilinear drift.

``dU + (nu A U + B(U, U)) dt = sigma dW`` with ``<B(V, U), U> = 0``:
structural checks, Hormander bracket ladders, time stepping, linearized and
Malliavin calculus along paths, and ergodic diagnostics.
"""

__version__ = "0.1.0"

from .brackets import (
    BracketLadder,
    PolyVectorField,
    build_V_ladder,
    build_W_ladder,
    check_hormander_at_point,
    lie_bracket,
    span_dimension,
)
from .errors import (
    BilinsdeError,
    CapacityError,
    ConfigError,
    ConfigParseError,
    DataError,
    GridError,
    IntegrationError,
    NumericalError,
    ObservableError,
    PreconditionError,
    SingularityError,
    StructuralError,
)
from .ergodics import (
    ball_grid,
    ball_mass_bound,
    ergodic_average,
    generator_apply,
    gradient_probe,
    irreducibility_probe,
    mixing_probe,
    occupation_measure,
    stationarity_residual,
)
from .malliavin import (
    assemble_malliavin,
    build_control,
    control_cost,
    spectral_tail,
    spectrum,
    tikhonov_residual_bound,
    verify_control,
)
from .model import (
    BilinearModel,
    galerkin_modes,
    load_model,
    make_galerkin_nse2d,
    make_linear,
    make_triad,
    save_model,
    validate_model,
)
from .noise import NoisePath
from .observables import Observable, coordinate, energy
from .sde import ensemble, moment_tail_probe, simulate, simulate_batch
from .variational import (
    adjoint_flow,
    controlled_response,
    jacobian_flow,
    second_variation,
)
