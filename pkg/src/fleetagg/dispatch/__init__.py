from fleetagg.dispatch.dispatch import (
    DeviceSchedule,
    FeasibilityReport,
    InfeasibleProfileError,
    check_aggregate_feasible,
    disaggregate,
    schedule_matrix,
    verify_thresholds,
)
from fleetagg.dispatch.flow import FlowNetwork

__all__ = [
    "DeviceSchedule",
    "FeasibilityReport",
    "FlowNetwork",
    "InfeasibleProfileError",
    "check_aggregate_feasible",
    "disaggregate",
    "schedule_matrix",
    "verify_thresholds",
]
