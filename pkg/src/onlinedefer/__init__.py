"""Online learning to defer with bandit feedback and varying expert sets."""

from .core import (
    AugmentedInput,
    ConfigurationError,
    DataError,
    DomainError,
    ExpertCost,
    ExpertSet,
    FeatureVector,
    LabelSpace,
    ProtocolError,
    normalize_costs,
)
from .hypothesis import WeightMatrix, project_ball, project_zero_sum
from .learner import OnlineDeferralLearner, Schedule
from .losses import HINGE, LOGISTIC, SurrogateKind

__all__ = [
    "AugmentedInput",
    "ConfigurationError",
    "DataError",
    "DomainError",
    "ExpertCost",
    "ExpertSet",
    "FeatureVector",
    "HINGE",
    "LOGISTIC",
    "LabelSpace",
    "OnlineDeferralLearner",
    "ProtocolError",
    "Schedule",
    "SurrogateKind",
    "WeightMatrix",
    "normalize_costs",
    "project_ball",
    "project_zero_sum",
]
