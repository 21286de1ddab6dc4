"""Shared part selection under a global budget, with boosted decision trees."""

__version__ = "0.1.0"

from .boosting import LabelMatrix, boost, fit_tree
from .fusion import FusedModel, bootstrap_fuse, power_normalize
from .part_model import ImagePartSet, PartFeature, PartUniverse, fit_whitening
from .sampling import SamplerStrategy, SharedPartsModel, train_independent, train_shared

__all__ = [
    "FusedModel",
    "ImagePartSet",
    "LabelMatrix",
    "PartFeature",
    "PartUniverse",
    "SamplerStrategy",
    "SharedPartsModel",
    "boost",
    "bootstrap_fuse",
    "fit_tree",
    "fit_whitening",
    "power_normalize",
    "train_independent",
    "train_shared",
]
