"""Exception hierarchy shared by all modules."""


class NozzleFlowError(Exception):
    """Base class for every error raised by nozzleflow."""


class CavitationError(NozzleFlowError, ValueError):
    """Bernoulli law pushed the enthalpy argument to or below vacuum."""


class ProfileError(NozzleFlowError, ValueError):
    """Nozzle or obstacle parameters violate a profile bound."""


class MeshError(NozzleFlowError, ValueError):
    """Degenerate or inconsistent mesh."""


class ForceFieldError(NozzleFlowError, ValueError):
    """Invalid force field or evaluation outside a tabulated range."""


class ConvergenceError(NozzleFlowError, RuntimeError):
    """Linear or nonlinear iteration failed to reach its tolerance.

    ``history`` carries whatever residual/update/energy trace was collected.
    """

    def __init__(self, message, history=None, state=None):
        super().__init__(message)
        self.history = history if history is not None else {}
        self.state = state


class SubsonicityError(NozzleFlowError, RuntimeError):
    """Converged solution still uses the subsonic truncation branch."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class ChokingError(NozzleFlowError, ValueError):
    """Requested mass flux exceeds the sonic flux ceiling."""


class InsufficientDataError(NozzleFlowError, ValueError):
    """Not enough usable points for a least-squares fit."""


class FormatError(NozzleFlowError, ValueError):
    """Malformed or mismatched dump file."""


class ConfigError(NozzleFlowError, ValueError):
    """Scenario configuration could not be parsed or validated.

    ``violations`` lists every problem found, not just the first.
    """

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class RangeError(NozzleFlowError, ValueError):
    """Requested station or point lies outside the computational domain."""
