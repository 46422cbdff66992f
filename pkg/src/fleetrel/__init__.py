"""Reliability analytics for data-center server fleets.

Covers DRAM error classification and server failure modeling, SSD lifecycle
analysis, network incident and backbone reliability, and simulation of DRAM
error mitigations.
"""

__version__ = "0.1.0"

from .exceptions import (  # noqa: E402
    ConvergenceError,
    FleetrelError,
    ParseError,
    PhasesNotIdentifiable,
    SeparationError,
    SingularDesignError,
)

__all__ = [
    "ConvergenceError",
    "FleetrelError",
    "ParseError",
    "PhasesNotIdentifiable",
    "SeparationError",
    "SingularDesignError",
    "__version__",
]
