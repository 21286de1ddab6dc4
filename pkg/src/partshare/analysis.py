"""Where do the selected parts come from, and how much does each one matter?

A part's provenance with respect to a category is read off the ground-truth
boxes of the image the part was cut from: Own if it lies on an object of
that category, Other if it lies on an object of a different category and
Context if it overlaps no labelled object at all.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .boosting import _exact_leaf, update_weights
from .errors import MissingBox, ModelResponseMismatch, ZeroAreaPart

Rect = Tuple[float, float, float, float]

DEFAULT_CONTEXT_THRESHOLD = 0.0
DEFAULT_BINS = 50


@dataclass(frozen=True)
class GroundTruthBox:
    image_id: str
    category: int
    rect: Rect

    def __post_init__(self):
        x0, y0, x1, y1 = self.rect
        if x1 <= x0 or y1 <= y0:
            raise ValueError(f"ground-truth box {self.rect} has no area")


class ProvenanceLabel(str, enum.Enum):
    OWN = "own"
    OTHER = "other"
    CONTEXT = "context"


def _area(rect) -> float:
    x0, y0, x1, y1 = rect
    return max(0.0, x1 - x0) * max(0.0, y1 - y0)


def box_agreement(part_rect, gt_rect) -> float:
    """Fraction of the part's area that lies inside the box: |p & b| / |p|."""
    area = _area(part_rect)
    if area <= 0:
        raise ZeroAreaPart(f"part rectangle {tuple(part_rect)} has no area")
    px0, py0, px1, py1 = part_rect
    bx0, by0, bx1, by1 = gt_rect
    inter = _area((max(px0, bx0), max(py0, by0), min(px1, bx1), min(py1, by1)))
    return min(1.0, inter / area)


def best_agreement(part_rect, boxes: Sequence[GroundTruthBox]) -> Tuple[float, Optional[int]]:
    """Highest agreement over ``boxes`` and the index of the box reaching it.

    Ties go to the lower box index; ``(0.0, None)`` when there are no boxes.
    """
    best, where = 0.0, None
    for i, b in enumerate(boxes):
        a = box_agreement(part_rect, b.rect)
        if where is None or a > best:
            best, where = a, i
    return best, where


def part_provenance(part, boxes: Sequence[GroundTruthBox], category: int,
                    threshold: float = DEFAULT_CONTEXT_THRESHOLD) -> ProvenanceLabel:
    """Own / Other / Context label of a boxed part for one category.

    ``part`` is a PartFeature or a bare rectangle. A part whose best agreement
    does not exceed ``threshold`` is Context, so the default of 0 means
    "overlaps no labelled object".
    """
    rect = getattr(part, "box", part)
    if rect is None:
        raise MissingBox(f"part {getattr(part, 'part_id', '?')!r} has no box")
    agreement, where = best_agreement(rect, boxes)
    if where is None or agreement <= threshold:
        return ProvenanceLabel.CONTEXT
    return ProvenanceLabel.OWN if boxes[where].category == category else ProvenanceLabel.OTHER


# -- importance ----------------------------------------------------------------

def _check_responses(model, responses, labels) -> Tuple[np.ndarray, np.ndarray]:
    r = np.asarray(responses, dtype=np.float64)
    y = labels.labels if hasattr(labels, "labels") else np.asarray(labels)
    y = np.atleast_2d(y).astype(np.float64)
    if r.ndim != 2 or r.shape[0] != y.shape[0]:
        raise ModelResponseMismatch(f"responses {r.shape} do not match {y.shape[0]} labelled images")
    if y.shape[1] != model.num_categories:
        raise ModelResponseMismatch(
            f"labels cover {y.shape[1]} categories, model has {model.num_categories}"
        )
    used = model.parts_used()
    if used and max(used) >= r.shape[1]:
        raise ModelResponseMismatch(f"model uses part {max(used)} but responses have {r.shape[1]} columns")
    if used and np.isnan(r[:, sorted(used)]).any():
        raise ModelResponseMismatch("responses are missing for parts the model uses")
    if model.initial_weights is not None and model.initial_weights.shape[1] != r.shape[0]:
        raise ModelResponseMismatch(
            f"model was trained on {model.initial_weights.shape[1]} images, got {r.shape[0]}"
        )
    return r, y


def _tree_contributions(tree, r, y, w) -> Dict[int, float]:
    """Per-part normalized error reduction of one tree under weights ``w``."""
    out: Dict[int, float] = {}
    stack = [(0, np.arange(r.shape[0]))]
    while stack:
        node, rows = stack.pop()
        part = int(tree.feature[node])
        if part < 0:
            continue
        _, leaf_err, pos, neg = _exact_leaf(y[rows], w[rows])
        total = math.fsum((pos, neg))
        go_left = r[rows, part] <= tree.threshold[node]
        left, right = rows[go_left], rows[~go_left]
        split_err = _exact_leaf(y[left], w[left])[1] + _exact_leaf(y[right], w[right])[1]
        if total > 0:
            out[part] = out.get(part, 0.0) + max(0.0, leaf_err - split_err) / total
        stack.append((int(tree.left[node]), left))
        stack.append((int(tree.right[node]), right))
    return out


def category_importance(model, responses, labels) -> List[Dict[int, float]]:
    """Importance of every used part, separately for each category's ensemble.

    The AdaBoost weights each tree was fitted with are recovered by replaying
    the updates from the model's initial distribution. Keys are universe
    part indices.
    """
    r, y = _check_responses(model, responses, labels)
    n = r.shape[0]
    out = []
    for l, ens in enumerate(model.ensembles):
        if model.initial_weights is not None:
            w = np.asarray(model.initial_weights[l], dtype=np.float64)
        else:
            w = np.full(n, 1.0 / n)
        acc: Dict[int, float] = {}
        for learner in ens.learners:
            for part, v in _tree_contributions(learner.tree, r, y[:, l], w).items():
                acc[part] = acc.get(part, 0.0) + v
            w = update_weights(w, learner.tree.predict(r), y[:, l], learner.alpha)
        out.append(acc)
    return out


def part_importance(model, responses, labels) -> Dict:
    """Summed normalized miss-classification reduction of every selected part.

    Keys are part ids when the model carries them (see ``attach_parts``),
    otherwise universe part indices. Parts in the pool that no tree uses
    get 0.
    """
    per_cat = category_importance(model, responses, labels)
    totals = {p: 0.0 for p in model.pool.selected}
    for acc in per_cat:
        for p, v in acc.items():
            totals[p] = totals.get(p, 0.0) + v
    if model.part_ids is None:
        return totals
    name = dict(zip(model.pool.selected, model.part_ids))
    return {name[p]: v for p, v in totals.items()}


# -- tables ----------------------------------------------------------------------

@dataclass(frozen=True)
class ProvenanceRow:
    part_id: str
    category: int
    agreement: float
    label: ProvenanceLabel
    importance: float


def provenance_table(model, responses, labels, boxes_by_image: Mapping[str, Sequence[GroundTruthBox]],
                     threshold: float = DEFAULT_CONTEXT_THRESHOLD) -> List[ProvenanceRow]:
    """One row per (category, part its ensemble uses).

    ``agreement`` is the part's best agreement with any labelled box of its
    source image. Requires source boxes on the model (``attach_parts``).
    """
    if model.part_boxes is None or model.part_images is None:
        raise MissingBox("model carries no source boxes; attach the part universe first")
    per_cat = category_importance(model, responses, labels)
    where = {p: k for k, p in enumerate(model.pool.selected)}
    rows = []
    for l, acc in enumerate(per_cat):
        for p in sorted(acc):
            k = where[p]
            rect = model.part_boxes[k]
            if rect is None:
                raise MissingBox(f"part {model.part_ids[k]!r} has no box")
            boxes = boxes_by_image.get(model.part_images[k], [])
            agreement, _ = best_agreement(rect, boxes)
            label = part_provenance(rect, boxes, l, threshold)
            rows.append(ProvenanceRow(model.part_ids[k], l, agreement, label, acc[p]))
    return rows


@dataclass(frozen=True)
class HistogramBin:
    low: float
    high: float
    own: float
    other: float
    context: float

    @property
    def total(self) -> float:
        return self.own + self.other + self.context


def importance_histogram(importances: Iterable[float], agreements: Iterable[float],
                         bins: int = DEFAULT_BINS, labels: Optional[Iterable] = None) -> List[HistogramBin]:
    """Importance summed over uniform agreement bins on [0, 1], split by provenance.

    Agreement 1 falls in the last bin. Without ``labels`` every part counts
    as Context.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    imp = list(importances)
    agr = list(agreements)
    lab = [ProvenanceLabel.CONTEXT] * len(imp) if labels is None else [ProvenanceLabel(x) for x in labels]
    if not len(imp) == len(agr) == len(lab):
        raise ValueError("importances, agreements and labels must have equal length")
    mass = {k: [[] for _ in range(bins)] for k in ProvenanceLabel}
    for v, a, k in zip(imp, agr, lab):
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"agreement {a} outside [0, 1]")
        b = min(int(a * bins), bins - 1)
        mass[k][b].append(v)
    return [
        HistogramBin(
            low=b / bins,
            high=(b + 1) / bins,
            own=math.fsum(mass[ProvenanceLabel.OWN][b]),
            other=math.fsum(mass[ProvenanceLabel.OTHER][b]),
            context=math.fsum(mass[ProvenanceLabel.CONTEXT][b]),
        )
        for b in range(bins)
    ]


def histogram_from_table(rows: Sequence[ProvenanceRow], bins: int = DEFAULT_BINS) -> List[HistogramBin]:
    return importance_histogram(
        [r.importance for r in rows], [r.agreement for r in rows], bins, [r.label for r in rows]
    )


def write_histogram_csv(hist: Sequence[HistogramBin], path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["bin_low", "bin_high", "own", "other", "context", "total"])
        for h in hist:
            out.writerow([repr(h.low), repr(h.high), repr(h.own), repr(h.other), repr(h.context), repr(h.total)])


def write_provenance_csv(rows: Sequence[ProvenanceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["part_id", "category", "agreement", "label", "importance"])
        for r in rows:
            out.writerow([r.part_id, r.category, repr(r.agreement), r.label.value, repr(r.importance)])
