"""On-disk datasets: SPF1 feature files and the JSON manifest that ties them together.

SPF1 layout (all little-endian)::

    magic "SPF1" | u32 count | u32 dim | u32 flags
    count*dim float32, row-major
    count*4 u32 box coordinates (x0, y0, x1, y1), only when flags bit 0 is set

The manifest lists every image with its label vector, the feature file (and
row range) holding its parts, an optional row of the global feature file and
its ground-truth boxes. Paths are relative to the manifest. Image order in the
manifest is the example order everywhere downstream.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import GroundTruthBox
from .boosting import LabelMatrix
from .errors import ChecksumMismatch, DimensionMismatch, ParseError
from .part_model import ImagePartSet

MAGIC = b"SPF1"
HEADER = struct.Struct("<4sIII")
BOX_FLAG = 1
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class FeatureFile:
    vectors: np.ndarray  # float32, count x dim
    boxes: Optional[np.ndarray] = None  # uint32, count x 4

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


def encode_features(vectors, boxes=None) -> bytes:
    v = np.ascontiguousarray(vectors, dtype="<f4")
    if v.ndim != 2 or v.shape[1] == 0:
        raise DimensionMismatch(f"feature rows must be (count, dim>0), got {v.shape}")
    flags = 0
    tail = b""
    if boxes is not None:
        b = np.asarray(boxes)
        if b.shape != (v.shape[0], 4):
            raise DimensionMismatch(f"expected {v.shape[0]} boxes of 4 coordinates, got {b.shape}")
        if np.any(b < 0):
            raise ValueError("box coordinates must be non-negative")
        tail = np.ascontiguousarray(b, dtype="<u4").tobytes()
        flags |= BOX_FLAG
    return HEADER.pack(MAGIC, v.shape[0], v.shape[1], flags) + v.tobytes() + tail


def decode_features(data: bytes, path=None) -> FeatureFile:
    if len(data) < HEADER.size:
        raise ParseError(
            f"truncated header: expected {HEADER.size} bytes, got {len(data)}", path, len(data)
        )
    magic, count, dim, flags = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}", path, 0)
    if dim == 0:
        raise ParseError("feature dimension is 0", path, 8)
    if flags & ~BOX_FLAG:
        raise ParseError(f"unknown flag bits 0x{flags:08x}", path, 12)
    expected = HEADER.size + 4 * count * dim + (16 * count if flags & BOX_FLAG else 0)
    if len(data) != expected:
        raise ParseError(
            f"file length {len(data)} does not match header (expected {expected} bytes "
            f"for {count}x{dim}{' with boxes' if flags & BOX_FLAG else ''})",
            path,
            min(len(data), expected),
        )
    body = HEADER.size + 4 * count * dim
    vectors = np.frombuffer(data, dtype="<f4", count=count * dim, offset=HEADER.size)
    vectors = vectors.reshape(count, dim).astype(np.float32)
    if not np.all(np.isfinite(vectors)):
        bad = int(np.flatnonzero(~np.isfinite(vectors.ravel()))[0])
        raise ParseError("non-finite feature value", path, HEADER.size + 4 * bad)
    boxes = None
    if flags & BOX_FLAG:
        boxes = np.frombuffer(data, dtype="<u4", count=4 * count, offset=body).reshape(count, 4)
        boxes = boxes.astype(np.int64)
    return FeatureFile(vectors, boxes)


def write_features(path, vectors, boxes=None) -> None:
    Path(path).write_bytes(encode_features(vectors, boxes))


def read_features(path) -> FeatureFile:
    return decode_features(Path(path).read_bytes(), path)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- manifest ------------------------------------------------------------------

@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    labels: Tuple[int, ...]
    parts: str
    rows: Optional[Tuple[int, int]] = None
    global_row: Optional[int] = None
    boxes: Tuple[Tuple[int, Tuple[int, int, int, int]], ...] = ()


@dataclass(frozen=True)
class DatasetManifest:
    mode: str
    categories: Tuple[str, ...]
    images: Tuple[ImageEntry, ...]
    global_features: Optional[str] = None
    checksums: Dict[str, str] = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def to_json(self) -> dict:
        out = {
            "version": self.version,
            "mode": self.mode,
            "categories": list(self.categories),
        }
        if self.global_features is not None:
            out["global_features"] = self.global_features
        out["images"] = []
        for e in self.images:
            item = {"image_id": e.image_id, "labels": list(e.labels), "parts": e.parts}
            if e.rows is not None:
                item["rows"] = list(e.rows)
            if e.global_row is not None:
                item["global_row"] = e.global_row
            if e.boxes:
                item["boxes"] = [{"category": c, "rect": list(r)} for c, r in e.boxes]
            out["images"].append(item)
        if self.checksums:
            out["checksums"] = dict(sorted(self.checksums.items()))
        return out


def _require(obj, key, kind, path, what):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"{what} is missing {key!r}", path)
    value = obj[key]
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ParseError(f"{what}: {key!r} has the wrong type", path)
    return value


def parse_manifest(text: str, path=None) -> DatasetManifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.pos) from exc
    version = _require(doc, "version", int, path, "manifest")
    if version != MANIFEST_VERSION:
        raise ParseError(f"unsupported manifest version {version}", path)
    mode = _require(doc, "mode", str, path, "manifest")
    if mode not in ("multiclass", "multilabel"):
        raise ParseError(f"unknown mode {mode!r}", path)
    categories = tuple(_require(doc, "categories", list, path, "manifest"))
    if not categories or not all(isinstance(c, str) for c in categories):
        raise ParseError("categories must be a non-empty list of names", path)
    entries = []
    seen = set()
    for k, item in enumerate(_require(doc, "images", list, path, "manifest")):
        what = f"image #{k}"
        image_id = _require(item, "image_id", str, path, what)
        if image_id in seen:
            raise ParseError(f"duplicate image id {image_id!r}", path)
        seen.add(image_id)
        labels = tuple(_require(item, "labels", list, path, what))
        if len(labels) != len(categories) or any(v not in (-1, 1) for v in labels):
            raise ParseError(f"{what}: labels must be {len(categories)} values of +-1", path)
        if mode == "multiclass" and labels.count(1) != 1:
            raise ParseError(f"{what}: a multiclass label vector needs exactly one +1", path)
        parts = _require(item, "parts", str, path, what)
        rows = None
        if "rows" in item:
            rows = tuple(_require(item, "rows", list, path, what))
            if len(rows) != 2 or not all(isinstance(r, int) for r in rows) or not 0 <= rows[0] < rows[1]:
                raise ParseError(f"{what}: rows must be [start, stop) with start < stop", path)
        global_row = item.get("global_row")
        if global_row is not None and (not isinstance(global_row, int) or global_row < 0):
            raise ParseError(f"{what}: global_row must be a non-negative integer", path)
        boxes = []
        for b in item.get("boxes", []):
            cat = _require(b, "category", int, path, what)
            rect = _require(b, "rect", list, path, what)
            if not 0 <= cat < len(categories) or len(rect) != 4:
                raise ParseError(f"{what}: malformed box {b!r}", path)
            boxes.append((cat, tuple(int(c) for c in rect)))
        entries.append(ImageEntry(image_id, labels, parts, rows, global_row, tuple(boxes)))
    if not entries:
        raise ParseError("manifest lists no images", path)
    global_file = doc.get("global_features")
    if global_file is not None and not isinstance(global_file, str):
        raise ParseError("global_features must be a file name", path)
    checksums = doc.get("checksums", {})
    if not isinstance(checksums, dict):
        raise ParseError("checksums must map file names to sha256 digests", path)
    return DatasetManifest(mode, categories, tuple(entries), global_file, dict(checksums), version)


def load_manifest(path) -> DatasetManifest:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read manifest: {exc.strerror}", path) from exc
    return parse_manifest(text, path)


def write_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1) + "\n")


# -- ingestion -------------------------------------------------------------------

@dataclass
class Dataset:
    images: List[ImagePartSet]
    labels: LabelMatrix
    categories: List[str]
    global_features: Optional[np.ndarray] = None
    boxes: List[GroundTruthBox] = field(default_factory=list)

    def boxes_by_image(self) -> Dict[str, List[GroundTruthBox]]:
        out: Dict[str, List[GroundTruthBox]] = {im.image_id: [] for im in self.images}
        for b in self.boxes:
            out[b.image_id].append(b)
        return out


class _FileCache:
    def __init__(self, root: Path, checksums: Dict[str, str]):
        self.root = root
        self.checksums = checksums
        self.files: Dict[str, FeatureFile] = {}

    def get(self, name: str) -> FeatureFile:
        if name not in self.files:
            path = self.root / name
            try:
                data = path.read_bytes()
            except OSError as exc:
                raise ParseError(f"cannot read feature file: {exc.strerror}", path) from exc
            want = self.checksums.get(name)
            if want is not None:
                got = hashlib.sha256(data).hexdigest()
                if got != want:
                    raise ChecksumMismatch(f"{path}: sha256 {got} does not match manifest {want}")
            self.files[name] = decode_features(data, path)
        return self.files[name]


def ingest(manifest_path) -> Dataset:
    """Load a dataset; part features are l2-normalized on load."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    cache = _FileCache(manifest_path.parent, manifest.checksums)
    globals_ = cache.get(manifest.global_features) if manifest.global_features else None
    images, boxes, g_rows = [], [], []
    dim = None
    for e in manifest.images:
        ff = cache.get(e.parts)
        start, stop = e.rows if e.rows is not None else (0, ff.count)
        if stop > ff.count:
            raise ParseError(f"{e.image_id}: rows [{start}, {stop}) exceed the {ff.count} rows of {e.parts}",
                             manifest_path)
        if dim is None:
            dim = ff.dim
        elif ff.dim != dim:
            raise DimensionMismatch(f"{e.parts} has dim {ff.dim}, expected {dim}")
        rects = None if ff.boxes is None else ff.boxes[start:stop]
        g = None
        if globals_ is not None:
            if e.global_row is None:
                raise ParseError(f"{e.image_id}: global features present but no global_row", manifest_path)
            if e.global_row >= globals_.count:
                raise ParseError(f"{e.image_id}: global_row {e.global_row} outside {globals_.count} rows",
                                 manifest_path)
            g = globals_.vectors[e.global_row].astype(np.float64)
            g_rows.append(g)
        images.append(ImagePartSet.from_array(
            e.image_id, ff.vectors[start:stop].astype(np.float64), rects, g, normalize=True
        ))
        boxes.extend(GroundTruthBox(e.image_id, c, r) for c, r in e.boxes)
    labels = LabelMatrix(np.array([e.labels for e in manifest.images], dtype=np.int8), manifest.mode)
    return Dataset(
        images=images,
        labels=labels,
        categories=list(manifest.categories),
        global_features=np.stack(g_rows) if g_rows else None,
        boxes=boxes,
    )


def write_dataset(directory, image_ids: Sequence[str], part_rows: Sequence[np.ndarray], labels: LabelMatrix,
                  categories: Sequence[str], part_boxes: Optional[Sequence] = None,
                  global_features: Optional[np.ndarray] = None,
                  boxes: Sequence[GroundTruthBox] = (), name: str = "dataset") -> Path:
    """Write ``<name>.json`` plus one part file and one global file into ``directory``.

    ``part_rows[i]`` holds image i's part features exactly as they should be
    stored (float32). Returns the manifest path. Checksums are recorded.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    counts = [len(r) for r in part_rows]
    if any(c == 0 for c in counts):
        raise ValueError("every image needs at least one part")
    stacked = np.concatenate([np.asarray(r, dtype=np.float32) for r in part_rows])
    rects = None if part_boxes is None else np.concatenate([np.asarray(b) for b in part_boxes])
    parts_name = f"{name}.parts.spf"
    write_features(root / parts_name, stacked, rects)
    checksums = {parts_name: sha256_file(root / parts_name)}
    global_name = None
    if global_features is not None:
        global_name = f"{name}.global.spf"
        write_features(root / global_name, global_features)
        checksums[global_name] = sha256_file(root / global_name)
    by_image: Dict[str, list] = {i: [] for i in image_ids}
    for b in boxes:
        by_image[b.image_id].append((int(b.category), tuple(int(c) for c in b.rect)))
    entries, start = [], 0
    for i, image_id in enumerate(image_ids):
        stop = start + counts[i]
        entries.append(ImageEntry(
            image_id=image_id,
            labels=tuple(int(v) for v in labels.labels[i]),
            parts=parts_name,
            rows=(start, stop),
            global_row=i if global_features is not None else None,
            boxes=tuple(by_image[image_id]),
        ))
        start = stop
    manifest = DatasetManifest(labels.mode, tuple(categories), tuple(entries), global_name, checksums)
    path = root / f"{name}.json"
    write_manifest(manifest, path)
    return path


def write_synthetic(dataset, directory, name: str = "dataset") -> Path:
    """Write a ``synthgen`` dataset so that ``ingest`` reproduces it exactly."""
    if not dataset.raw_parts:
        raise ValueError("dataset carries no raw part rows to write")
    return write_dataset(
        directory,
        [im.image_id for im in dataset.images],
        dataset.raw_parts,
        dataset.labels,
        dataset.categories,
        part_boxes=[[p.box for p in im.parts] for im in dataset.images],
        global_features=dataset.global_features,
        boxes=dataset.boxes,
        name=name,
    )
