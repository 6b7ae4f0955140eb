"""Joint channel allocation and power control for multicast D2D groups reusing uplink channels."""
from .model import (Assignment, D2DGroup, EvaluationError, GainTable, NetworkInstance,
                    RadioConstants, SolverConfig, evaluate, validate)

__all__ = [
    "Assignment", "D2DGroup", "EvaluationError", "GainTable", "NetworkInstance",
    "RadioConstants", "SolverConfig", "evaluate", "validate",
]
