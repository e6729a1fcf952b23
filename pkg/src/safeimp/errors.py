"""Exception types shared across the package."""


class SafeImpError(Exception):
    """Base class for all faults raised by this package."""


class ConfigError(SafeImpError, ValueError):
    """Invalid configuration or parameter set."""


class ModelError(SafeImpError, ValueError):
    """Robot description that violates the physical invariants."""


class PlantFault(SafeImpError, RuntimeError):
    """Numerical fault while evaluating the simulated plant."""


class DegenerateBoxError(SafeImpError, RuntimeError):
    """Robust acceleration box has lower > upper for some joint."""

    def __init__(self, joints, lower, upper):
        self.joints = list(joints)
        self.lower = lower
        self.upper = upper
        super().__init__(f"degenerate acceleration box on joints {self.joints}")


class SolverError(SafeImpError, RuntimeError):
    """QP/LP solver fault (iteration cap, numerical breakdown)."""

    def __init__(self, message, **info):
        self.info = info
        super().__init__(message)
