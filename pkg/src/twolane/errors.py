"""Exception hierarchy shared by every module of the package."""


class TwoLaneError(Exception):
    """Base class for all package errors."""


class DomainError(TwoLaneError, ValueError):
    """An argument lies outside the domain of a physical law."""


class InfeasibleEquilibriumError(TwoLaneError):
    """The requested steady state has a nonpositive speed or density."""


class CongestionError(TwoLaneError):
    """The steady state is not in the congested regime required by the design."""


class BlowUpError(TwoLaneError):
    """A simulated state left its physical bounds.

    Carries the simulated time and the offending cell index.
    """

    def __init__(self, message, time=None, cell=None, lane=None):
        super().__init__(message)
        self.time = time
        self.cell = cell
        self.lane = lane


class KernelConvergenceError(TwoLaneError):
    """Successive approximations did not converge within the sweep budget."""

    def __init__(self, message, residual=None, sweeps=None):
        super().__init__(message)
        self.residual = residual
        self.sweeps = sweeps


class KernelConfigurationError(TwoLaneError):
    """Characteristic speeds are inconsistent with the kernel boundary data."""


class ConfigError(TwoLaneError, ValueError):
    """Invalid or unparsable scenario configuration."""

    def __init__(self, message, field=None, line=None):
        super().__init__(message)
        self.field = field
        self.line = line
