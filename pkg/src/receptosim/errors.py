"""Exception hierarchy shared by all receptosim modules."""


class ReceptosimError(Exception):
    """Base class for every error raised by the package."""


class GeometryError(ReceptosimError, ValueError):
    pass


class TopologyError(ReceptosimError):
    pass


class DegenerateNetworkError(ReceptosimError):
    pass


class CalibrationError(ReceptosimError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class SchedulerError(ReceptosimError):
    pass


class ConfigError(ReceptosimError):
    """Invalid scenario/target configuration. ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class SimulationError(ReceptosimError):
    def __init__(self, module, t, message):
        super().__init__(f"[{module} @ t={t:.3f} s] {message}")
        self.module = module
        self.t = t
