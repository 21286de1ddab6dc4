"""Evaluation metrics: all-points average precision and multiclass accuracy."""

from __future__ import annotations

import math

import numpy as np

from .boosting import LabelMatrix
from .errors import DimensionMismatch, ModeMismatch, NoPositives


def compute_ap(scores, labels) -> float:
    """All-points average precision.

    Examples are ranked by descending score, ties by ascending index; AP is
    the mean over positives of the precision at each positive's rank.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise DimensionMismatch(f"{s.size} scores but {y.size} labels")
    positives = int(np.sum(y > 0))
    if positives == 0:
        raise NoPositives("average precision is undefined without positives")
    order = np.argsort(-s, kind="stable")
    hits = y[order] > 0
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, positives + 1) / ranks
    return math.fsum(precision) / positives


def mean_ap(score_matrix, labels: LabelMatrix):
    """Per-category AP and their mean, skipping categories without positives."""
    s = np.asarray(score_matrix, dtype=np.float64)
    per = []
    for l in range(labels.num_categories):
        col = labels.column(l)
        per.append(compute_ap(s[:, l], col) if np.any(col > 0) else float("nan"))
    valid = [v for v in per if not math.isnan(v)]
    if not valid:
        raise NoPositives("no category has a positive example")
    return math.fsum(valid) / len(valid), per


def compute_accuracy(predictions, labels) -> float:
    """Fraction of images whose predicted category is the labelled one.

    ``labels`` is a multiclass LabelMatrix or an array of class indices.
    """
    if isinstance(labels, LabelMatrix):
        if labels.mode != "multiclass":
            raise ModeMismatch("accuracy needs multiclass labels")
        truth = labels.classes()
    else:
        truth = np.asarray(labels)
        if truth.ndim != 1:
            raise ModeMismatch("accuracy needs one class index per image")
    pred = np.asarray(predictions).ravel()
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"{pred.size} predictions but {truth.size} labels")
    if pred.size == 0:
        raise ValueError("no predictions to score")
    return float(np.count_nonzero(pred == truth)) / pred.size
