"""Exceedance point processes of random walks in random scenery."""
from .simkit import McEstimate, RngKey
from .stable_walk import StepLaw, generate_walk, estimate_q
from .scenery import ScenerySpec, scenery_value
from .norming import Norming, TailMeasure, norming, tail_measure
from .exceedance import Box, PointPattern, build_pattern

__version__ = "0.1.0"

__all__ = [
    "Box",
    "McEstimate",
    "Norming",
    "PointPattern",
    "RngKey",
    "ScenerySpec",
    "StepLaw",
    "TailMeasure",
    "build_pattern",
    "estimate_q",
    "generate_walk",
    "norming",
    "scenery_value",
    "tail_measure",
    "__version__",
]
