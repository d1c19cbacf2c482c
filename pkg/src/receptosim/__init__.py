"""Simulation of in-situ receptor synthesis in a vascularized soft robot."""
from .errors import (
    CalibrationError,
    ConfigError,
    DegenerateNetworkError,
    GeometryError,
    ReceptosimError,
    SchedulerError,
    SimulationError,
    TopologyError,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "ConfigError",
    "DegenerateNetworkError",
    "GeometryError",
    "ReceptosimError",
    "SchedulerError",
    "SimulationError",
    "TopologyError",
    "__version__",
]
