"""Seeded synthetic datasets with planted part prototypes, plus oracles.

An image holds ``parts_per_image`` unit vectors laid out as vertical strips of
a virtual 100x100 image. For every category present in the image (its
labels, plus co-occurring unlabelled objects in multiclass mode) one noisy
copy of each prototype that category owns is planted, each with its own
ground-truth box equal to the part's strip. Context prototypes follow their
associated category without a box, and the remaining strips are isotropic
noise. Box geometry carries no signal: planted parts agree with a box
exactly (1) and everything else does not overlap any box (0).

``noise_sigma`` is the expected norm of the perturbation added to a unit
prototype before re-normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import GroundTruthBox
from .boosting import LabelMatrix, _exact_leaf, _MIN_GAIN
from .errors import InvalidConfig, TooLarge
from .part_model import ImagePartSet, PartFeature, l2_normalize

VIRTUAL_SIZE = 100


@dataclass(frozen=True)
class SynthConfig:
    num_images: int = 120
    num_categories: int = 3
    feature_dim: int = 32
    parts_per_image: int = 8
    num_prototypes: int = 3
    sharing_matrix: Optional[Tuple[Tuple[bool, ...], ...]] = None
    context_prototypes: int = 0
    cooccurrence: Optional[Tuple[Tuple[float, ...], ...]] = None
    noise_sigma: float = 0.0
    seed: int = 0
    mode: str = "multiclass"
    presence: float = 1.0
    shared_presence: Optional[float] = None
    context_on: float = 0.9
    context_off: float = 0.05
    global_dim: int = 16
    global_noise: float = 0.3
    ambiguous_groups: Tuple[Tuple[int, ...], ...] = ()
    num_test: int = 0

    def sharing(self) -> np.ndarray:
        if self.sharing_matrix is None:
            if self.num_prototypes != self.num_categories:
                raise InvalidConfig("default sharing matrix needs num_prototypes == num_categories")
            return np.eye(self.num_categories, dtype=bool)
        return np.asarray(self.sharing_matrix, dtype=bool)

    def cooc(self) -> np.ndarray:
        if self.cooccurrence is None:
            return np.zeros((self.num_categories, self.num_categories))
        return np.asarray(self.cooccurrence, dtype=np.float64)

    def validate(self) -> None:
        L, P = self.num_categories, self.num_prototypes
        if min(self.num_images, L, self.feature_dim, self.parts_per_image, P) < 1:
            raise InvalidConfig("sizes must be positive")
        if self.parts_per_image > VIRTUAL_SIZE:
            raise InvalidConfig("at most 100 parts per image fit the virtual image")
        share = self.sharing()
        if share.shape != (L, P):
            raise InvalidConfig(f"sharing matrix must be {L}x{P}, got {share.shape}")
        if not share.any(axis=1).all():
            raise InvalidConfig("every category needs at least one prototype")
        cooc = self.cooc()
        if cooc.shape != (L, L):
            raise InvalidConfig(f"co-occurrence matrix must be {L}x{L}")
        probs = [*cooc.ravel(), self.presence, self.context_on, self.context_off]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise InvalidConfig("probabilities must lie in [0, 1]")
        if self.noise_sigma < 0 or self.global_noise < 0:
            raise InvalidConfig("noise levels must be non-negative")
        if self.mode not in ("multiclass", "multilabel"):
            raise InvalidConfig(f"unknown mode {self.mode!r}")
        if self.parts_per_image < share.sum(axis=1).max():
            raise InvalidConfig("parts_per_image cannot hold one category's prototypes")
        for group in self.ambiguous_groups:
            if any(not 0 <= c < L for c in group):
                raise InvalidConfig(f"ambiguous group {group} names unknown categories")


@dataclass
class SynthDataset:
    images: List[ImagePartSet]
    global_features: np.ndarray
    labels: LabelMatrix
    boxes: List[GroundTruthBox]
    planted_prototypes: List[int]
    part_prototype: Dict[str, int]
    categories: List[str]
    config: SynthConfig
    # per image, the float32 part rows in slot order (what gets written to disk)
    raw_parts: List[np.ndarray] = field(default_factory=list)

    def boxes_by_image(self) -> Dict[str, List[GroundTruthBox]]:
        out: Dict[str, List[GroundTruthBox]] = {im.image_id: [] for im in self.images}
        for b in self.boxes:
            out[b.image_id].append(b)
        return out

    def take(self, indices: Sequence[int]) -> "SynthDataset":
        idx = list(indices)
        keep = {self.images[i].image_id for i in idx}
        return SynthDataset(
            images=[self.images[i] for i in idx],
            global_features=self.global_features[idx],
            labels=LabelMatrix(self.labels.labels[idx], self.labels.mode),
            boxes=[b for b in self.boxes if b.image_id in keep],
            planted_prototypes=list(self.planted_prototypes),
            part_prototype={k: v for k, v in self.part_prototype.items() if k.split("#")[0] in keep},
            categories=list(self.categories),
            config=self.config,
            raw_parts=[self.raw_parts[i] for i in idx] if self.raw_parts else [],
        )


def quantize(x: np.ndarray) -> np.ndarray:
    """Round through float32 (the on-disk precision)."""
    return np.asarray(x, dtype=np.float32).astype(np.float64)


def quantize_normalize(x: np.ndarray) -> np.ndarray:
    """What ingestion yields for vectors written as float32: normalize(float32(x))."""
    return l2_normalize(quantize(x))


def _image_categories(i: int, cfg: SynthConfig, rng, cooc: np.ndarray):
    L = cfg.num_categories
    primary = i % L
    extra = [j for j in range(L) if j != primary and rng.random() < cooc[primary, j]]
    if cfg.mode == "multilabel":
        return sorted([primary, *extra]), sorted([primary, *extra])
    return [primary], sorted([primary, *extra])


def generate(config: SynthConfig) -> SynthDataset:
    """Build images, global features, labels and boxes; deterministic per seed.

    When ``config.num_test`` is positive, that many extra images are appended
    (test split) after the ``num_images`` training images.
    """
    cfg = config
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    L, P, C, d, k = (cfg.num_categories, cfg.num_prototypes, cfg.context_prototypes,
                     cfg.feature_dim, cfg.parts_per_image)
    share, cooc = cfg.sharing(), cfg.cooc()
    prototypes = l2_normalize(rng.standard_normal((P + C, d)))
    context_of = [c % L for c in range(C)]
    owners = share.sum(axis=0)
    presence = np.where(
        owners > 1,
        cfg.presence if cfg.shared_presence is None else cfg.shared_presence,
        cfg.presence,
    )

    # global projection of the prototype indicator; ambiguous categories share rows
    proj = rng.standard_normal((P + C, cfg.global_dim)) / math.sqrt(cfg.global_dim)
    for group in cfg.ambiguous_groups:
        lead = group[0]
        lead_protos = np.flatnonzero(share[lead])
        for other in group[1:]:
            for q_other, q_lead in zip(np.flatnonzero(share[other]), lead_protos):
                if not share[lead, q_other]:
                    proj[q_other] = proj[q_lead]

    width = VIRTUAL_SIZE // k
    total = cfg.num_images + cfg.num_test
    images, boxes, part_proto, raw_parts = [], [], {}, []
    labels = -np.ones((total, L), dtype=np.int8)
    globals_ = np.zeros((total, cfg.global_dim))
    for i in range(total):
        image_id = f"img{i:05d}"
        positives, objects = _image_categories(i, cfg, rng, cooc)
        labels[i, positives] = 1
        entries = []  # (prototype or -1, owning category or None)
        for o in objects:
            for q in np.flatnonzero(share[o]):
                if rng.random() < presence[q]:
                    entries.append((int(q), o))
        for c in range(C):
            p_on = cfg.context_on if context_of[c] in positives else cfg.context_off
            if rng.random() < p_on:
                entries.append((P + c, None))
        entries = entries[:k]
        # the prototypes the image's categories own, whether or not they are visible
        indicator = share[positives].any(axis=0).astype(np.float64)
        indicator = np.concatenate([indicator, np.zeros(C)])
        vectors = []
        for q, _ in entries:
            vectors.append(prototypes[q] + cfg.noise_sigma / math.sqrt(d) * rng.standard_normal(d))
        while len(vectors) < k:
            vectors.append(rng.standard_normal(d))
            entries.append((-1, None))
        raw = np.stack(vectors).astype(np.float32)
        vectors = l2_normalize(raw.astype(np.float64))
        order = rng.permutation(k)
        raw_parts.append(raw[order])
        parts = []
        for slot, j in enumerate(order):
            rect = (slot * width, 0, (slot + 1) * width, VIRTUAL_SIZE)
            pid = f"{image_id}#{slot}"
            q, owner = entries[j]
            parts.append(PartFeature(vectors[j], pid, image_id, rect))
            part_proto[pid] = q
            if owner is not None:
                boxes.append(GroundTruthBox(image_id, owner, rect))
        g = indicator @ proj + cfg.global_noise * rng.standard_normal(cfg.global_dim)
        globals_[i] = quantize(g)
        images.append(ImagePartSet(image_id, tuple(parts), globals_[i]))
    return SynthDataset(
        images=images,
        global_features=globals_,
        labels=LabelMatrix(labels, cfg.mode),
        boxes=boxes,
        planted_prototypes=list(range(P)),
        part_prototype=part_proto,
        categories=[f"cat{l}" for l in range(L)],
        config=cfg,
        raw_parts=raw_parts,
    )


def split(dataset: SynthDataset) -> Tuple[SynthDataset, SynthDataset]:
    n = dataset.config.num_images
    return dataset.take(range(n)), dataset.take(range(n, len(dataset.images)))


def _pairs_shared(L: int) -> np.ndarray:
    share = np.zeros((L, L + L // 2), dtype=bool)
    share[np.arange(L), np.arange(L)] = True
    for l in range(L):
        share[l, L + l // 2] = True
    return share


def _tuple2(a) -> Tuple[Tuple, ...]:
    return tuple(tuple(x.item() if hasattr(x, "item") else x for x in row) for row in np.asarray(a).tolist())


PRESETS = ("planted", "cooccurrence", "ambiguous", "provenance")


def preset(name: str, seed: int = 0, **overrides) -> SynthConfig:
    """Named benchmark configurations.

    planted       noise-free, one private prototype per category (separable)
    cooccurrence  L=6, one private prototype per category plus one prototype
                  shared by each pair of categories; occluded, noisy copies;
                  images of category l often contain an l+1 object
    ambiguous     globals cannot tell paired categories apart; parts can
    provenance    multilabel with sharing, co-occurrence and context parts
    """
    if name == "planted":
        cfg = SynthConfig(num_images=60, num_categories=3, num_prototypes=3, feature_dim=32,
                          parts_per_image=6, noise_sigma=0.0, presence=1.0, num_test=60)
    elif name == "cooccurrence":
        L = 6
        # category l images often also show an (unlabelled) l+1 object
        cooc = np.zeros((L, L))
        cooc[np.arange(L), (np.arange(L) + 1) % L] = 0.5
        cfg = SynthConfig(num_images=180, num_categories=L, num_prototypes=L + L // 2,
                          sharing_matrix=_tuple2(_pairs_shared(L)), feature_dim=32,
                          parts_per_image=6, noise_sigma=0.1, presence=0.8,
                          cooccurrence=_tuple2(cooc), num_test=360)
    elif name == "ambiguous":
        L = 6
        cfg = SynthConfig(num_images=180, num_categories=L, num_prototypes=L, feature_dim=32,
                          parts_per_image=6, noise_sigma=0.35, presence=0.8,
                          ambiguous_groups=((0, 1), (2, 3)), global_noise=0.2, num_test=360)
    elif name == "provenance":
        L = 4
        cooc = np.full((L, L), 0.3)
        np.fill_diagonal(cooc, 0.0)
        cfg = SynthConfig(num_images=120, num_categories=L, num_prototypes=L + L // 2,
                          sharing_matrix=_tuple2(_pairs_shared(L)), feature_dim=32,
                          parts_per_image=10, noise_sigma=0.2, presence=0.8,
                          context_prototypes=L, cooccurrence=_tuple2(cooc),
                          mode="multilabel", num_test=120)
    else:
        raise InvalidConfig(f"unknown preset {name!r}; choose from {PRESETS}")
    return replace(cfg, seed=seed, **overrides)


# -- oracles -------------------------------------------------------------------

def brute_force_stump(responses, labels, weights):
    """Exhaustive best stump: every column, every midpoint, both polarities.

    Same conventions as ``fit_tree`` at depth 1: exact (fsum) errors, ties to
    the lowest column then lowest threshold, and ``(None, None, leaf_error)``
    when no stump beats the best constant prediction.
    """
    r = np.asarray(responses, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n, m = r.shape
    if n * m > 10**6:
        raise TooLarge(f"{n}x{m} exceeds the brute-force limit of 1e6 cells")
    _, leaf_err, pos, neg = _exact_leaf(y, w)
    node_weight = math.fsum((pos, neg))
    best = None
    for j in range(m):
        values = np.unique(r[:, j])
        if values.size < 2:
            continue
        thresholds = 0.5 * (values[:-1] + values[1:])
        left = r[:, j][None, :] <= thresholds[:, None]
        # polarity (-1 left, +1 right) errs on left positives and right negatives
        wrong = np.where(left, y > 0, y < 0)
        approx = np.stack([wrong @ w, (~wrong) @ w], axis=1)
        # dense sums are approximate; settle near-ties with exact sums in enumeration order
        cutoff = approx.min() + 1e-10 * max(node_weight, 1e-300)
        for t, polarity in zip(*np.nonzero(approx <= cutoff)):
            mask = wrong[t] if polarity == 0 else ~wrong[t]
            err = math.fsum(w[mask])
            if best is None or (err, j, thresholds[t]) < best:
                best = (err, j, float(thresholds[t]))
    if best is None or leaf_err - best[0] <= _MIN_GAIN * node_weight:
        return None, None, leaf_err
    err, j, thr = best
    return j, thr, err


def separating_columns(responses, label_col) -> List[int]:
    """Columns on which one threshold puts every positive above every negative."""
    r = np.asarray(responses, dtype=np.float64)
    y = np.asarray(label_col)
    pos, neg = r[y > 0], r[y < 0]
    if pos.size == 0 or neg.size == 0:
        return []
    return [int(j) for j in np.flatnonzero(pos.min(axis=0) > neg.max(axis=0))]
