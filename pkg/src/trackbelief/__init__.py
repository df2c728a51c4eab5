"""Uncertainty-aware track-direction perception and control.

A random-set classifier predicts the upcoming track curvature class with a
calibrated pignistic-entropy uncertainty; an entropy-tiered controller
scales the planner's speed request; a closed-loop cone-track simulator and
an active-learning harness exercise the whole stack.
"""

__version__ = "0.1.0"

from .beliefs import (BeliefPrediction, ClassFrame, FocalSet, MassFunction,
                      PignisticDist, SetBudget, belief_to_mass,
                      mass_to_belief, merge_to_3class,
                      nearest_class_in_top_set, pignistic, pignistic_entropy)
from .controller import SpeedCommand, TierPolicy, scale_speed, validate_policy
from .trackgen import ConeScene, Cone, classify_angle, generate_scene, \
    generate_uncertain, rasterize

__all__ = [
    "BeliefPrediction", "ClassFrame", "FocalSet", "MassFunction",
    "PignisticDist", "SetBudget", "belief_to_mass", "mass_to_belief",
    "merge_to_3class", "nearest_class_in_top_set", "pignistic",
    "pignistic_entropy", "SpeedCommand", "TierPolicy", "scale_speed",
    "validate_policy", "ConeScene", "Cone", "classify_angle",
    "generate_scene", "generate_uncertain", "rasterize", "__version__",
]
