"""Exact simulator for pair-shift coset-state synthesis with CRT cleanup."""

__version__ = "0.1.0"

from .errors import (
    AccessibilityViolation,
    InstanceError,
    NoAccessiblePrime,
    NotInvertible,
    PairShiftError,
    SupportTooLarge,
    WidthOverflow,
    WindowTooLarge,
)
from .groupstate import Instance, generate_instance, load_instance, reference_instance
from .pipeline import RouteConfig, RunResult, run, run_jfree, run_partial_P, run_postselect, run_reeval

__all__ = [
    "AccessibilityViolation",
    "Instance",
    "InstanceError",
    "NoAccessiblePrime",
    "NotInvertible",
    "PairShiftError",
    "RouteConfig",
    "RunResult",
    "SupportTooLarge",
    "WidthOverflow",
    "WindowTooLarge",
    "generate_instance",
    "load_instance",
    "reference_instance",
    "run",
    "run_jfree",
    "run_partial_P",
    "run_postselect",
    "run_reeval",
]
