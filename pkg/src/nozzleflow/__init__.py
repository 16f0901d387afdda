"""Subsonic potential flow of a barotropic gas through axisymmetric and planar nozzles."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CavitationError,
    ChokingError,
    ConfigError,
    ConvergenceError,
    FormatError,
    ForceFieldError,
    InsufficientDataError,
    MeshError,
    NozzleFlowError,
    ProfileError,
    RangeError,
    SubsonicityError,
)
from .gas_model import GasModel, density_from_bernoulli, truncated_density  # noqa: E402
from .geometry import AXISYMMETRIC, PLANAR, Bump, MeridianMesh, NozzleProfile, build_mesh, build_profile  # noqa: E402
from .force_field import ForceField  # noqa: E402
from .solvers import (  # noqa: E402
    FlowState,
    SolverConfig,
    discrete_energy,
    solve_compressible,
    solve_cylinder_reference,
    solve_incompressible,
    uniform_cylinder_state,
)
from .analysis import (  # noqa: E402
    Scenario,
    far_field_rate,
    fit_rate,
    flux_deviation,
    low_mach_study,
    mass_flux,
    mms_study,
    truncation_study,
    uniqueness_probe,
    window_deviation,
)

__all__ = [name for name in dir() if not name.startswith("_")]
