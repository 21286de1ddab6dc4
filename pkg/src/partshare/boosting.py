"""Orthogonal decision trees and one-vs-rest AdaBoost ensembles.

Trees split on a single response column per node (``x <= threshold`` goes
left). Thresholds are midpoints between consecutive distinct values, and the
split search is exhaustive with ties broken by lowest column index, then
lowest threshold.

Candidate splits are scored with cumulative sums and the near-best ones are
re-scored with exactly rounded sums (``math.fsum``), so the chosen split and
its error do not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    DegenerateWeights,
    DimensionMismatch,
    EmptyAllowedSet,
    EmptyEnsemble,
    MissingPartResponse,
)

EPS_MIN = 1e-6
DEFAULT_DEPTH = 3
DEFAULT_ITERATIONS = 2000

# relative width of the window of fast-scored candidates that get re-scored exactly
_TIE_WINDOW = 1e-10
# a split must beat the leaf error by this fraction of node weight
_MIN_GAIN = 1e-12

EXPLORE = "explore"
EXPLOIT = "exploit"


@dataclass(frozen=True)
class LabelMatrix:
    labels: np.ndarray
    mode: str = "multiclass"

    def __post_init__(self):
        y = np.asarray(self.labels)
        if y.ndim != 2:
            raise DimensionMismatch(f"labels must be (N, L), got shape {y.shape}")
        if not np.all((y == 1) | (y == -1)):
            raise ValueError("label entries must be -1 or +1")
        if self.mode not in ("multiclass", "multilabel"):
            raise ValueError(f"unknown label mode {self.mode!r}")
        if self.mode == "multiclass" and not np.all((y == 1).sum(axis=1) == 1):
            raise ValueError("multiclass labels need exactly one +1 per row")
        object.__setattr__(self, "labels", y.astype(np.int8))

    @classmethod
    def from_classes(cls, classes, num_categories: int):
        classes = np.asarray(classes, dtype=np.intp)
        y = -np.ones((classes.shape[0], num_categories), dtype=np.int8)
        y[np.arange(classes.shape[0]), classes] = 1
        return cls(y, "multiclass")

    @property
    def num_images(self) -> int:
        return self.labels.shape[0]

    @property
    def num_categories(self) -> int:
        return self.labels.shape[1]

    def classes(self) -> np.ndarray:
        if self.mode != "multiclass":
            raise ValueError("class indices are only defined in multiclass mode")
        return np.argmax(self.labels, axis=1)

    def column(self, category: int) -> np.ndarray:
        return self.labels[:, category].astype(np.float64)

    def subset(self, categories: Sequence[int]) -> "LabelMatrix":
        return LabelMatrix(self.labels[:, list(categories)], "multilabel")


def uniform_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def check_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise DimensionMismatch(f"weights must be 1-D, got shape {w.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DegenerateWeights("weights must be finite and non-negative")
    if not np.any(w > 0):
        raise DegenerateWeights("all example weights are zero")
    return w


@dataclass(frozen=True)
class DecisionTree:
    """Array-backed binary tree. Leaves have ``feature == -1``.

    ``gain`` holds, per internal node, the weighted error reduction of its
    split (zero at leaves).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    depth: int

    @classmethod
    def leaf(cls, value: int, depth: int = 1) -> "DecisionTree":
        return cls(
            feature=np.array([-1], dtype=np.int64),
            threshold=np.zeros(1),
            left=np.array([-1], dtype=np.int64),
            right=np.array([-1], dtype=np.int64),
            value=np.array([value], dtype=np.int8),
            gain=np.zeros(1),
            depth=depth,
        )

    @classmethod
    def stump(cls, feature: int, threshold: float, left_value: int, right_value: int, gain: float = 0.0):
        return cls(
            feature=np.array([feature, -1, -1], dtype=np.int64),
            threshold=np.array([threshold, 0.0, 0.0]),
            left=np.array([1, -1, -1], dtype=np.int64),
            right=np.array([2, -1, -1], dtype=np.int64),
            value=np.array([0, left_value, right_value], dtype=np.int8),
            gain=np.array([gain, 0.0, 0.0]),
            depth=1,
        )

    @property
    def node_count(self) -> int:
        return int(self.feature.shape[0])

    @property
    def parts_used(self) -> frozenset:
        return frozenset(int(f) for f in self.feature if f >= 0)

    @property
    def max_part(self) -> int:
        return int(self.feature.max())

    def path_lengths(self) -> List[int]:
        out, stack = [], [(0, 0)]
        while stack:
            node, d = stack.pop()
            if self.feature[node] < 0:
                out.append(d)
            else:
                stack.append((int(self.left[node]), d + 1))
                stack.append((int(self.right[node]), d + 1))
        return out

    def apply(self, responses: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of a response matrix."""
        r = np.asarray(responses, dtype=np.float64)
        if r.ndim == 1:
            r = r[None, :]
        if self.max_part >= r.shape[1]:
            raise MissingPartResponse(
                f"tree splits on part {self.max_part} but responses have {r.shape[1]} columns"
            )
        node = np.zeros(r.shape[0], dtype=np.int64)
        rows = np.arange(r.shape[0])
        for _ in range(self.node_count):
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            vals = r[rows[inner], feat[inner]]
            if np.isnan(vals).any():
                raise MissingPartResponse("response needed by the tree is missing (NaN)")
            go_left = vals <= self.threshold[node[inner]]
            node[inner] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])
        return node

    def predict(self, responses: np.ndarray) -> np.ndarray:
        return self.value[self.apply(responses)].astype(np.float64)


def _exact_leaf(y: np.ndarray, w: np.ndarray) -> Tuple[int, float, float, float]:
    """Weighted-majority label of a node: (label, error, pos mass, neg mass)."""
    pos = math.fsum(w[y > 0])
    neg = math.fsum(w[y < 0])
    if pos > neg:
        return 1, neg, pos, neg
    return -1, pos, pos, neg


def _exact_split(x: np.ndarray, y: np.ndarray, w: np.ndarray, threshold: float):
    go_left = x <= threshold
    lv, le, _, _ = _exact_leaf(y[go_left], w[go_left])
    rv, re, _, _ = _exact_leaf(y[~go_left], w[~go_left])
    return math.fsum((le, re)), lv, rv


def best_split(responses: np.ndarray, y: np.ndarray, w: np.ndarray, rows: np.ndarray, allowed: np.ndarray):
    """Best single-column split for the examples ``rows``.

    Returns ``(part, threshold, error, left_value, right_value)`` or None when
    no column has two distinct values among the rows.
    """
    x = responses[np.ix_(rows, allowed)]
    yr, wr = y[rows], w[rows]
    if x.shape[0] < 2:
        return None
    order = np.argsort(x, axis=0, kind="stable")
    xs = np.take_along_axis(x, order, axis=0)
    wp = np.where(yr > 0, wr, 0.0)[order]
    wn = np.where(yr < 0, wr, 0.0)[order]
    cp = np.cumsum(wp, axis=0)
    cn = np.cumsum(wn, axis=0)
    lp, ln = cp[:-1], cn[:-1]
    rp, rn = cp[-1] - lp, cn[-1] - ln
    err = np.minimum(lp, ln) + np.minimum(rp, rn)
    err[xs[1:] <= xs[:-1]] = np.inf
    fast_best = err.min()
    if not np.isfinite(fast_best):
        return None
    total = float(wr.sum())
    window = fast_best + _TIE_WINDOW * max(total, 1e-300)
    cand_pos, cand_col = np.nonzero(err <= window)
    best = None
    for i, j in zip(cand_pos, cand_col):
        thr = 0.5 * (xs[i, j] + xs[i + 1, j])
        part = int(allowed[j])
        e, lv, rv = _exact_split(x[:, j], yr, wr, thr)
        key = (e, part, thr)
        if best is None or key < best[0]:
            best = (key, lv, rv)
    (e, part, thr), lv, rv = best
    return part, float(thr), e, lv, rv


class _TreeBuilder:
    def __init__(self, responses, y, w, allowed, depth):
        self.r, self.y, self.w = responses, y, w
        self.allowed = allowed
        self.depth = depth
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.gain = [], []

    def _new(self):
        for lst, v in (
            (self.feature, -1),
            (self.threshold, 0.0),
            (self.left, -1),
            (self.right, -1),
            (self.value, 0),
            (self.gain, 0.0),
        ):
            lst.append(v)
        return len(self.feature) - 1

    def grow(self, rows: np.ndarray, level: int) -> int:
        node = self._new()
        label, leaf_err, pos, neg = _exact_leaf(self.y[rows], self.w[rows])
        self.value[node] = label
        node_weight = math.fsum((pos, neg))
        if level >= self.depth or leaf_err <= 0.0:
            return node
        split = best_split(self.r, self.y, self.w, rows, self.allowed)
        if split is None:
            return node
        part, thr, err, _, _ = split
        if leaf_err - err <= _MIN_GAIN * node_weight:
            return node
        go_left = self.r[rows, part] <= thr
        self.feature[node] = part
        self.threshold[node] = thr
        self.value[node] = 0
        self.gain[node] = leaf_err - err
        self.left[node] = self.grow(rows[go_left], level + 1)
        self.right[node] = self.grow(rows[~go_left], level + 1)
        return node

    def finish(self) -> DecisionTree:
        return DecisionTree(
            feature=np.array(self.feature, dtype=np.int64),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=np.array(self.value, dtype=np.int8),
            gain=np.array(self.gain, dtype=np.float64),
            depth=self.depth,
        )


def weighted_error(predictions: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    return math.fsum(weights[predictions != labels])


def fit_tree(responses, label_col, weights, allowed, depth: int = DEFAULT_DEPTH):
    """Grow a tree greedily on the ``allowed`` response columns.

    Returns ``(tree, eps)`` where ``eps`` is the tree's weighted training
    error under ``weights``.
    """
    r = np.asarray(responses, dtype=np.float64)
    y = np.asarray(label_col, dtype=np.float64)
    w = check_weights(weights)
    if r.ndim != 2 or r.shape[0] != y.shape[0] or y.shape[0] != w.shape[0]:
        raise DimensionMismatch(
            f"responses {r.shape}, labels {y.shape} and weights {w.shape} disagree"
        )
    allowed = np.unique(np.fromiter((int(a) for a in allowed), dtype=np.int64))
    if allowed.size == 0:
        raise EmptyAllowedSet("no parts allowed for this tree")
    if allowed[0] < 0 or allowed[-1] >= r.shape[1]:
        raise MissingPartResponse(f"allowed parts exceed the {r.shape[1]} response columns")
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    builder = _TreeBuilder(r, y, w, allowed, depth)
    builder.grow(np.arange(r.shape[0]), 0)
    tree = builder.finish()
    return tree, weighted_error(tree.predict(r), y, w)


def learner_weight(eps: float, eps_min: float = EPS_MIN) -> float:
    e = min(max(float(eps), eps_min), 1.0 - eps_min)
    return 0.5 * math.log((1.0 - e) / e)


def clamp_error(eps: float, eps_min: float = EPS_MIN) -> float:
    return min(max(float(eps), eps_min), 1.0 - eps_min)


def update_weights(weights, predictions, labels, alpha: float) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    margin = np.asarray(labels, dtype=np.float64) * np.asarray(predictions, dtype=np.float64)
    w = w * np.exp(-alpha * margin)
    return w / w.sum()


@dataclass(frozen=True)
class WeakLearner:
    tree: DecisionTree
    alpha: float
    eps: float
    category: int
    iteration: int
    phase: str = EXPLOIT

    @property
    def parts_used(self) -> frozenset:
        return self.tree.parts_used

    @property
    def eps_clamped(self) -> float:
        return clamp_error(self.eps)


@dataclass
class CategoryEnsemble:
    category: int
    learners: List[WeakLearner] = field(default_factory=list)

    def append(self, learner: WeakLearner) -> None:
        if self.learners and learner.iteration <= self.learners[-1].iteration:
            raise ValueError("learners must be appended in increasing iteration order")
        self.learners.append(learner)

    @property
    def alpha_sum(self) -> float:
        return math.fsum(l.alpha for l in self.learners)

    @property
    def parts_used(self) -> frozenset:
        out = set()
        for l in self.learners:
            out |= l.parts_used
        return frozenset(out)

    def scores(self, responses: np.ndarray) -> np.ndarray:
        """Unnormalized ensemble score for each row of a response matrix."""
        r = np.asarray(responses, dtype=np.float64)
        if r.ndim == 1:
            r = r[None, :]
        total = np.zeros(r.shape[0])
        for l in self.learners:
            total += l.alpha * l.tree.predict(r)
        return total


ResponseLike = Union[np.ndarray, Sequence[float], Mapping[int, float]]


def _as_vector(v) -> np.ndarray:
    if hasattr(v, "responses"):
        v = v.responses
    if isinstance(v, Mapping):
        size = max(v) + 1 if v else 0
        out = np.full(size, np.nan)
        for k, val in v.items():
            out[int(k)] = val
        return out
    return np.asarray(v, dtype=np.float64)


def ensemble_score(ensemble: CategoryEnsemble, v: ResponseLike) -> float:
    if not ensemble.learners:
        return 0.0
    return float(ensemble.scores(_as_vector(v))[0])


def normalized_scores(ensembles: Sequence[CategoryEnsemble], responses: np.ndarray) -> np.ndarray:
    """Per-category ensemble scores divided by that category's alpha sum."""
    r = np.asarray(responses, dtype=np.float64)
    if r.ndim == 1:
        r = r[None, :]
    out = np.empty((r.shape[0], len(ensembles)))
    for l, ens in enumerate(ensembles):
        norm = ens.alpha_sum
        if not ens.learners or norm <= 0:
            raise EmptyEnsemble(f"category {ens.category} has no weighted learners")
        out[:, l] = ens.scores(r) / norm
    return out


def raw_scores(ensembles: Sequence[CategoryEnsemble], responses: np.ndarray) -> np.ndarray:
    r = np.asarray(responses, dtype=np.float64)
    if r.ndim == 1:
        r = r[None, :]
    return np.stack([ens.scores(r) for ens in ensembles], axis=1) if ensembles else np.zeros((r.shape[0], 0))


def predict_multiclass(ensembles: Sequence[CategoryEnsemble], v: ResponseLike) -> int:
    # np.argmax returns the first maximum: ties go to the lowest category
    return int(np.argmax(normalized_scores(ensembles, _as_vector(v))[0]))


def predict_multilabel(ensembles: Sequence[CategoryEnsemble], v: ResponseLike) -> np.ndarray:
    return raw_scores(ensembles, _as_vector(v))[0]


def boost(responses, label_col, iterations: int, depth: int = DEFAULT_DEPTH, initial_weights=None,
          allowed=None, category: int = 0):
    """Plain AdaBoost on one binary problem with every column available.

    Returns the ensemble and the final example-weight distribution.
    """
    r = np.asarray(responses, dtype=np.float64)
    y = np.asarray(label_col, dtype=np.float64)
    w = uniform_weights(r.shape[0]) if initial_weights is None else check_weights(initial_weights)
    w = w / w.sum()
    allowed = range(r.shape[1]) if allowed is None else allowed
    allowed = np.fromiter(allowed, dtype=np.int64)
    ens = CategoryEnsemble(category)
    for t in range(iterations):
        tree, eps = fit_tree(r, y, w, allowed, depth)
        alpha = learner_weight(eps)
        ens.append(WeakLearner(tree, alpha, eps, category, t, EXPLOIT))
        w = update_weights(w, tree.predict(r), y, alpha)
    return ens, w
