"""Neural VCG redistribution mechanisms for the public project problem."""

from .mechanism import (
    MechanismOutcome,
    Redistribution,
    efficiency_ratio,
    feasibility_gap,
    first_best,
    outcome,
    ratio_stats,
)
from .reference import ConstantShare, FallbackMax

__version__ = "0.1.0"
