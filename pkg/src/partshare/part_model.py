"""Part features, whitening statistics, exemplar-LDA detectors and max-pooling.

Each training part becomes a linear detector ``w = S^-1 (psi(p) - mu)`` where
``mu`` and ``S`` are dataset-wide part statistics (category labels ignored).
An image is encoded by the best response of every detector over all of the
image's parts.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DimensionMismatch, EmptyImage, EmptySample, SingularCovariance

Box = Tuple[int, int, int, int]

DEFAULT_SHRINKAGE = 0.1


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Row-wise l2 normalization; all-zero rows are left at zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.sqrt(np.einsum("...i,...i->...", x, x))
    norms = np.where(norms > 0, norms, 1.0)
    return x / norms[..., None]


@dataclass(frozen=True)
class PartFeature:
    vector: np.ndarray
    part_id: str
    image_id: str
    box: Optional[Box] = None

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


@dataclass(frozen=True)
class ImagePartSet:
    image_id: str
    parts: Tuple[PartFeature, ...]
    global_feature: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.parts) == 0:
            raise EmptyImage(f"image {self.image_id!r} has no parts")
        for p in self.parts:
            if p.image_id != self.image_id:
                raise ValueError(
                    f"part {p.part_id!r} belongs to {p.image_id!r}, not {self.image_id!r}"
                )

    @classmethod
    def from_array(cls, image_id, vectors, boxes=None, global_feature=None, normalize=True):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise EmptyImage(f"image {image_id!r} has no parts")
        if normalize:
            vectors = l2_normalize(vectors)
        parts = tuple(
            PartFeature(
                vector=vectors[j],
                part_id=f"{image_id}#{j}",
                image_id=image_id,
                box=None if boxes is None else tuple(int(c) for c in boxes[j]),
            )
            for j in range(vectors.shape[0])
        )
        return cls(image_id=image_id, parts=parts, global_feature=global_feature)

    def matrix(self) -> np.ndarray:
        return np.stack([p.vector for p in self.parts])

    @property
    def dim(self) -> int:
        return self.parts[0].dim


def _as_sample_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        x = samples.astype(np.float64, copy=False)
        if x.ndim != 2:
            raise DimensionMismatch(f"expected an (n, d) sample matrix, got shape {x.shape}")
        if x.shape[0] == 0:
            raise EmptySample("no samples to estimate whitening statistics")
        return x
    rows = [s.vector if isinstance(s, PartFeature) else np.asarray(s, dtype=np.float64) for s in samples]
    if not rows:
        raise EmptySample("no samples to estimate whitening statistics")
    dims = {r.shape for r in rows}
    if len(dims) != 1:
        raise DimensionMismatch(f"samples have differing shapes: {sorted(dims)}")
    return np.stack(rows).astype(np.float64)


@dataclass(frozen=True)
class WhiteningModel:
    """Part mean and covariance with shrinkage toward a scaled identity.

    ``covariance`` is the empirical (1/n) covariance; detectors are solved
    against ``shrunk_covariance`` whose Cholesky factor is computed once.
    """

    mean: np.ndarray
    covariance: np.ndarray
    shrinkage: float
    sample_count: int
    estimator: str = "biased"
    _factor: tuple = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @property
    def shrunk_covariance(self) -> np.ndarray:
        return shrink_covariance(self.covariance, self.shrinkage)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return cho_solve(self._factor, rhs, check_finite=False)


def shrink_covariance(cov: np.ndarray, shrinkage: float) -> np.ndarray:
    d = cov.shape[0]
    target = np.trace(cov) / d
    out = (1.0 - shrinkage) * cov
    out[np.diag_indices(d)] += shrinkage * target
    return out


def fit_whitening(samples, shrinkage: float = DEFAULT_SHRINKAGE) -> WhiteningModel:
    """Estimate ``mu`` and the shrunk covariance from a sample of part features.

    Raises SingularCovariance when the shrunk covariance is not positive
    definite; with ``shrinkage > 0`` that only happens for a sample of
    identical vectors.
    """
    if not 0.0 <= shrinkage <= 1.0:
        raise ValueError(f"shrinkage must lie in [0, 1], got {shrinkage}")
    x = _as_sample_matrix(samples)
    n, d = x.shape
    if d == 0:
        raise DimensionMismatch("feature dimension must be positive")
    if n < d:
        warnings.warn(
            f"estimating a {d}x{d} covariance from {n} samples; relying on shrinkage",
            RuntimeWarning,
            stacklevel=2,
        )
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    cov = 0.5 * (cov + cov.T)
    shrunk = shrink_covariance(cov, shrinkage)
    try:
        factor = cho_factor(shrunk, lower=True, check_finite=True)
    except LinAlgError as exc:
        raise SingularCovariance(
            f"covariance is not positive definite at shrinkage={shrinkage}"
        ) from exc
    # cho_factor succeeds on some numerically singular matrices
    diag = np.abs(np.diag(factor[0]))
    if diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise SingularCovariance(f"covariance is singular at shrinkage={shrinkage}")
    return WhiteningModel(
        mean=mean, covariance=cov, shrinkage=float(shrinkage), sample_count=n, _factor=factor
    )


@dataclass(frozen=True)
class PartDetector:
    weights: np.ndarray
    source_part_id: str


def make_detector(model: WhiteningModel, exemplar) -> PartDetector:
    if isinstance(exemplar, PartFeature):
        vec, pid = exemplar.vector, exemplar.part_id
    else:
        vec, pid = np.asarray(exemplar, dtype=np.float64), ""
    if vec.shape != (model.dim,):
        raise DimensionMismatch(f"exemplar has shape {vec.shape}, whitening expects ({model.dim},)")
    return PartDetector(weights=model.solve(vec - model.mean), source_part_id=pid)


def make_detectors(model: WhiteningModel, exemplars: np.ndarray) -> np.ndarray:
    """Batch form of ``make_detector``: one detector per row, returned as rows."""
    x = np.asarray(exemplars, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise DimensionMismatch(f"exemplars have shape {x.shape}, whitening expects (*, {model.dim})")
    return model.solve((x - model.mean).T).T


def _detector_matrix(detectors) -> np.ndarray:
    if isinstance(detectors, np.ndarray):
        w = detectors.astype(np.float64, copy=False)
        if w.ndim == 1:
            w = w[None, :]
    else:
        detectors = list(detectors)
        if not detectors:
            raise ValueError("at least one detector is required")
        w = np.stack([d.weights for d in detectors])
    if w.shape[0] == 0:
        raise ValueError("at least one detector is required")
    return w


@dataclass(frozen=True)
class PartResponseVector:
    image_id: str
    responses: np.ndarray


def _encode_parts(w: np.ndarray, parts: np.ndarray) -> np.ndarray:
    return (parts @ w.T).max(axis=0)


def encode_image(detectors, image: ImagePartSet) -> PartResponseVector:
    """Max-pool every detector's dot product over the image's parts."""
    w = _detector_matrix(detectors)
    parts = image.matrix()
    if parts.shape[1] != w.shape[1]:
        raise DimensionMismatch(f"image {image.image_id!r} has dim {parts.shape[1]}, detectors {w.shape[1]}")
    return PartResponseVector(image_id=image.image_id, responses=_encode_parts(w, parts))


def encode_matrix(detectors, images: Sequence[ImagePartSet]) -> np.ndarray:
    w = _detector_matrix(detectors)
    out = np.empty((len(images), w.shape[0]), dtype=np.float64)
    for i, image in enumerate(images):
        parts = image.matrix()
        if parts.shape[1] != w.shape[1]:
            raise DimensionMismatch(
                f"image {image.image_id!r} has dim {parts.shape[1]}, detectors {w.shape[1]}"
            )
        out[i] = _encode_parts(w, parts)
    return out


@dataclass(frozen=True)
class PartUniverse:
    """Every training part turned into a detector (the candidate pool P_train).

    Column ``j`` of ``encode(images)`` is the response of detector ``j``;
    ``part_ids``, ``image_ids`` and ``boxes`` describe the source part of
    each detector.
    """

    whitening: WhiteningModel
    detectors: np.ndarray
    part_ids: Tuple[str, ...]
    image_ids: Tuple[str, ...]
    boxes: Tuple[Optional[Box], ...]

    @classmethod
    def from_images(cls, images: Iterable[ImagePartSet], shrinkage: float = DEFAULT_SHRINKAGE):
        parts = [p for image in images for p in image.parts]
        if not parts:
            raise EmptySample("no training parts")
        x = _as_sample_matrix(parts)
        whitening = fit_whitening(x, shrinkage)
        return cls(
            whitening=whitening,
            detectors=make_detectors(whitening, x),
            part_ids=tuple(p.part_id for p in parts),
            image_ids=tuple(p.image_id for p in parts),
            boxes=tuple(p.box for p in parts),
        )

    def __len__(self) -> int:
        return self.detectors.shape[0]

    def encode(self, images: Sequence[ImagePartSet]) -> np.ndarray:
        return encode_matrix(self.detectors, images)


