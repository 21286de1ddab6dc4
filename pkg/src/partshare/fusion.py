"""Bootstrap fusion of a global-feature classifier with the shared-part classifier.

The global model is boosted first. Its final per-category example weights,
flattened by power normalization, seed the part model's boosting so the
parts concentrate on images the global representation gets wrong. At test
time the two models' confidences are summed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .boosting import (
    DEFAULT_DEPTH,
    CategoryEnsemble,
    LabelMatrix,
    boost,
    normalized_scores,
    raw_scores,
)
from .errors import AllZeroWeights, DimensionMismatch
from .part_model import DEFAULT_SHRINKAGE, ImagePartSet, PartUniverse
from .sampling import SamplerStrategy, SharedPartsModel, attach_parts, train_shared

DEFAULT_TRANSFER_EXPONENT = 0.5

BOOTSTRAP = "bootstrap"
LATE = "late"


def power_normalize(weights, alpha: float = DEFAULT_TRANSFER_EXPONENT) -> np.ndarray:
    """``w_i**alpha / sum_j w_j**alpha``."""
    w = np.asarray(weights, dtype=np.float64)
    if alpha <= 0:
        raise ValueError(f"exponent must be positive, got {alpha}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    powered = w ** alpha
    total = powered.sum()
    if total <= 0:
        raise AllZeroWeights("cannot normalize an all-zero weight vector")
    return powered / total


def train_global(global_features, labels: LabelMatrix, iterations: int, depth: int = DEFAULT_DEPTH,
                 seed=None):
    """Boost every category on the global feature dimensions.

    There is no budget here, so every dimension is available to every tree
    and the result does not depend on ``seed``. Returns the ensembles and the
    final weight distribution of each category (L x N).
    """
    g = np.asarray(global_features, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != labels.num_images:
        raise DimensionMismatch(f"global features {g.shape} do not match {labels.num_images} images")
    if not np.all(np.isfinite(g)):
        raise ValueError("global features must be finite")
    ensembles, finals = [], []
    for l in range(labels.num_categories):
        ens, w = boost(g, labels.column(l), iterations, depth, category=l)
        ensembles.append(ens)
        finals.append(w)
    return ensembles, np.stack(finals)


@dataclass
class FusedModel:
    global_ensembles: List[CategoryEnsemble]
    part_model: SharedPartsModel
    transfer_exponent: float = DEFAULT_TRANSFER_EXPONENT
    fusion: str = BOOTSTRAP
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.global_ensembles) != self.part_model.num_categories:
            raise DimensionMismatch("global and part models cover different category counts")

    @property
    def mode(self) -> str:
        return self.part_model.mode

    @property
    def num_categories(self) -> int:
        return len(self.global_ensembles)

    def scores(self, global_features, part_responses) -> np.ndarray:
        """Summed confidences; ``part_responses`` are universe-indexed."""
        g = np.atleast_2d(np.asarray(global_features, dtype=np.float64))
        return _sum_scores(self.global_ensembles, g, self.part_model, part_responses)

    def predict(self, global_features, part_responses) -> np.ndarray:
        return np.argmax(self.scores(global_features, part_responses), axis=1)


def _has_votes(ensembles: Sequence[CategoryEnsemble]) -> bool:
    return any(e.learners and e.alpha_sum > 0 for e in ensembles)


def _component(ensembles, responses, multiclass: bool) -> np.ndarray:
    if multiclass:
        return normalized_scores(ensembles, responses)
    return raw_scores(ensembles, responses)


def _sum_scores(global_ensembles, g, part_model: SharedPartsModel, part_responses) -> np.ndarray:
    multiclass = part_model.mode == "multiclass"
    total = np.zeros((g.shape[0], len(global_ensembles)))
    if _has_votes(global_ensembles):
        total += _component(global_ensembles, g, multiclass)
    if _has_votes(part_model.ensembles):
        r = np.atleast_2d(np.asarray(part_responses, dtype=np.float64))
        if r.shape[0] != g.shape[0]:
            raise DimensionMismatch(f"{g.shape[0]} global rows but {r.shape[0]} part rows")
        total += _component(part_model.ensembles, r, multiclass)
    return total


def transfer_weights(final_weights: np.ndarray, alpha: float = DEFAULT_TRANSFER_EXPONENT) -> np.ndarray:
    return np.stack([power_normalize(w, alpha) for w in np.atleast_2d(final_weights)])


def fuse_responses(global_features, part_responses, labels: LabelMatrix, strategy: SamplerStrategy,
                   budget: int, iterations: int, *, alpha: float = DEFAULT_TRANSFER_EXPONENT,
                   depth: int = DEFAULT_DEPTH, global_iterations: Optional[int] = None, seed=0,
                   fusion: str = BOOTSTRAP, global_model=None) -> FusedModel:
    """Bootstrap (or late) fusion on precomputed universe responses.

    ``global_model`` may pass an already trained ``(ensembles, final_weights)``
    pair so bootstrap and late fusion can share one global stage.
    """
    if fusion not in (BOOTSTRAP, LATE):
        raise ValueError(f"unknown fusion {fusion!r}")
    g_iters = iterations if global_iterations is None else global_iterations
    if global_model is None:
        global_model = train_global(global_features, labels, g_iters, depth, seed)
    g_ens, finals = global_model
    initial = transfer_weights(finals, alpha) if fusion == BOOTSTRAP else None
    parts = train_shared(part_responses, labels, strategy, budget, iterations, depth, seed, initial)
    return FusedModel(
        global_ensembles=g_ens,
        part_model=parts,
        transfer_exponent=alpha,
        fusion=fusion,
        config={"global_iterations": g_iters, **parts.config, "alpha": alpha, "fusion": fusion},
    )


def bootstrap_fuse(global_features, images: Sequence[ImagePartSet], labels: LabelMatrix,
                   strategy: Optional[SamplerStrategy] = None, budget: int = 1, iterations: int = 100,
                   alpha: float = DEFAULT_TRANSFER_EXPONENT, seed=0, *, depth: int = DEFAULT_DEPTH,
                   global_iterations: Optional[int] = None, fusion: str = BOOTSTRAP,
                   universe: Optional[PartUniverse] = None,
                   shrinkage: float = DEFAULT_SHRINKAGE) -> FusedModel:
    """Train the global model, transfer its weights, then train the shared parts.

    ``fusion="late"`` resets the transferred weights to uniform (the late
    fusion baseline) while keeping everything else identical.
    """
    if len(images) != np.asarray(global_features).shape[0]:
        raise DimensionMismatch("global features and images are not aligned")
    universe = universe or PartUniverse.from_images(images, shrinkage)
    responses = universe.encode(images)
    model = fuse_responses(global_features, responses, labels, strategy or SamplerStrategy(), budget,
                           iterations, alpha=alpha, depth=depth, global_iterations=global_iterations,
                           seed=seed, fusion=fusion)
    attach_parts(model.part_model, universe)
    return model


def predict_fused(model: FusedModel, global_feature, image: ImagePartSet):
    """Summed per-category scores for one image, and the winning category."""
    g = np.atleast_2d(np.asarray(global_feature, dtype=np.float64))
    pm = model.part_model
    if pm.pool.selected:
        r = pm.lift(pm.pool_responses([image]))
    else:
        r = np.zeros((1, 0))
    scores = model.scores(g, r)[0]
    return scores, int(np.argmax(scores))


def early_fuse(global_features, pool_responses, labels: LabelMatrix, iterations: int,
               depth: int = DEFAULT_DEPTH):
    """Early-fusion baseline: one boosted model on [globals | selected part responses]."""
    g = np.asarray(global_features, dtype=np.float64)
    r = np.asarray(pool_responses, dtype=np.float64)
    x = np.hstack([g, r])
    ensembles = [boost(x, labels.column(l), iterations, depth, category=l)[0]
                 for l in range(labels.num_categories)]
    return ensembles, x
