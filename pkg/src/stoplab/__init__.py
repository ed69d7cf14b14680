"""Optimal stopping and quasi-stopping on finite scenario trees."""

from .filtration import (
    FiltrationTree,
    atom_probability,
    conditional_expectation,
    enumerate_quasi_stopping_times,
    enumerate_stopping_times,
    validate_tree,
)
from .processes import (
    LadlagReward,
    classify_regularity,
    compose_convex,
    optional_projection,
    predictable_projection,
)
from .snell import QuasiStoppingTime, doob, evaluate_policy, quasi_snell, solve_os

__version__ = "0.1.0"

__all__ = [
    "FiltrationTree",
    "LadlagReward",
    "QuasiStoppingTime",
    "atom_probability",
    "classify_regularity",
    "compose_convex",
    "conditional_expectation",
    "doob",
    "enumerate_quasi_stopping_times",
    "enumerate_stopping_times",
    "evaluate_policy",
    "optional_projection",
    "predictable_projection",
    "quasi_snell",
    "solve_os",
    "validate_tree",
]
