"""Pose prediction for cable-driven continuum robots.

Two models share one robot/routing description: a Cosserat rod solved by
shooting (``ccr.cosserat``) and a per-segment four-bar optimization
(``ccr.fourbar``). ``ccr.workspace`` bridges and compares them.
"""

from .model import (
    BackboneCurve,
    CablePath,
    CableRouting,
    ConfigError,
    RobotSpec,
    ValidationError,
    build_cable_path,
    build_spec,
    cable_length,
    load_routing,
    reference_spec,
    stock_routing,
)

__all__ = [
    "BackboneCurve",
    "CablePath",
    "CableRouting",
    "ConfigError",
    "RobotSpec",
    "ValidationError",
    "build_cable_path",
    "build_spec",
    "cable_length",
    "load_routing",
    "reference_spec",
    "stock_routing",
]
__version__ = "0.1.0"
