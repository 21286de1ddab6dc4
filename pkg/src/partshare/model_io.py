"""Model archives.

A model file is a zip holding ``meta.json`` (format tag, version, config and
per-learner scalars) and ``.npy`` tables: tree nodes of every ensemble, the
selected detectors and the initial weight distribution. Entry order,
timestamps and permissions are fixed so equal models give equal bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path
from typing import Dict, List

import numpy as np

from .boosting import EXPLOIT, EXPLORE, CategoryEnsemble, DecisionTree, WeakLearner
from .errors import ModelFormatError
from .fusion import FusedModel
from .sampling import SharedPartPool, SharedPartsModel

FORMAT = "partshare-model"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)
_PHASES = (EXPLOIT, EXPLORE)


def _npy(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(array), allow_pickle=False)
    return buf.getvalue()


def _load_npy(data: bytes) -> np.ndarray:
    return np.load(io.BytesIO(data), allow_pickle=False)


def _ensemble_tables(ensembles: List[CategoryEnsemble], prefix: str) -> Dict[str, np.ndarray]:
    trees = [x.tree for e in ensembles for x in e.learners]
    counts = [len(e.learners) for e in ensembles]
    sizes = [t.node_count for t in trees]

    def cat(attr, dtype):
        if not trees:
            return np.zeros(0, dtype=dtype)
        return np.concatenate([getattr(t, attr).astype(dtype) for t in trees])

    learners = [x for e in ensembles for x in e.learners]
    return {
        f"{prefix}learners_per_category": np.array(counts, dtype=np.int64),
        f"{prefix}nodes_per_tree": np.array(sizes, dtype=np.int64),
        f"{prefix}tree_depth": np.array([t.depth for t in trees], dtype=np.int64),
        f"{prefix}feature": cat("feature", np.int64),
        f"{prefix}threshold": cat("threshold", np.float64),
        f"{prefix}left": cat("left", np.int64),
        f"{prefix}right": cat("right", np.int64),
        f"{prefix}value": cat("value", np.int8),
        f"{prefix}gain": cat("gain", np.float64),
        f"{prefix}alpha": np.array([x.alpha for x in learners], dtype=np.float64),
        f"{prefix}eps": np.array([x.eps for x in learners], dtype=np.float64),
        f"{prefix}iteration": np.array([x.iteration for x in learners], dtype=np.int64),
        f"{prefix}phase": np.array([_PHASES.index(x.phase) for x in learners], dtype=np.int8),
    }


def _ensembles_from(tables: Dict[str, np.ndarray], prefix: str) -> List[CategoryEnsemble]:
    t = {k[len(prefix):]: v for k, v in tables.items() if k.startswith(prefix)}
    out, tree_i, node_i = [], 0, 0
    for l, count in enumerate(t["learners_per_category"]):
        ens = CategoryEnsemble(l)
        for _ in range(int(count)):
            n = int(t["nodes_per_tree"][tree_i])
            s = slice(node_i, node_i + n)
            tree = DecisionTree(
                feature=t["feature"][s].copy(),
                threshold=t["threshold"][s].copy(),
                left=t["left"][s].copy(),
                right=t["right"][s].copy(),
                value=t["value"][s].copy(),
                gain=t["gain"][s].copy(),
                depth=int(t["tree_depth"][tree_i]),
            )
            ens.append(WeakLearner(
                tree=tree,
                alpha=float(t["alpha"][tree_i]),
                eps=float(t["eps"][tree_i]),
                category=l,
                iteration=int(t["iteration"][tree_i]),
                phase=_PHASES[int(t["phase"][tree_i])],
            ))
            tree_i += 1
            node_i += n
        out.append(ens)
    return out


def _part_meta(model: SharedPartsModel) -> dict:
    return {
        "mode": model.mode,
        "budget": model.pool.budget,
        "universe_size": model.pool.universe_size,
        "selected": list(model.pool.selected),
        "part_ids": model.part_ids,
        "part_images": model.part_images,
        "part_boxes": None if model.part_boxes is None else [
            None if b is None else [int(c) for c in b] for b in model.part_boxes
        ],
        "config": model.config,
    }


def _part_tables(model: SharedPartsModel) -> Dict[str, np.ndarray]:
    tables = _ensemble_tables(model.ensembles, "parts/")
    if model.detectors is not None:
        tables["parts/detectors"] = np.asarray(model.detectors, dtype=np.float64)
    if model.initial_weights is not None:
        tables["parts/initial_weights"] = np.asarray(model.initial_weights, dtype=np.float64)
    return tables


def _write_zip(path, meta: dict, tables: Dict[str, np.ndarray]) -> None:
    entries = [("meta.json", (json.dumps(meta, sort_keys=True, indent=1) + "\n").encode())]
    entries += [(f"{name}.npy", _npy(arr)) for name, arr in sorted(tables.items())]
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for name, data in entries:
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            info.create_system = 3
            zf.writestr(info, data)
    Path(path).write_bytes(buf.getvalue())


def save_model(model, path, extra: dict = None) -> None:
    """Write a SharedPartsModel or FusedModel; ``extra`` lands in the metadata."""
    if isinstance(model, FusedModel):
        meta = {
            "format": FORMAT,
            "version": VERSION,
            "kind": "fused",
            "parts": _part_meta(model.part_model),
            "transfer_exponent": model.transfer_exponent,
            "fusion": model.fusion,
            "config": model.config,
        }
        tables = _part_tables(model.part_model)
        tables.update(_ensemble_tables(model.global_ensembles, "global/"))
    elif isinstance(model, SharedPartsModel):
        meta = {"format": FORMAT, "version": VERSION, "kind": "parts", "parts": _part_meta(model)}
        tables = _part_tables(model)
    else:
        raise TypeError(f"cannot save {type(model).__name__}")
    meta["extra"] = extra or {}
    _write_zip(path, meta, tables)


def _read_zip(path):
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise ModelFormatError(f"{path}: not a model archive ({exc})") from exc
    with zf:
        names = zf.namelist()
        if "meta.json" not in names:
            raise ModelFormatError(f"{path}: archive has no meta.json")
        try:
            meta = json.loads(zf.read("meta.json"))
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"{path}: corrupt metadata ({exc.msg})") from exc
        tables = {n[:-4]: _load_npy(zf.read(n)) for n in names if n.endswith(".npy")}
    if meta.get("format") != FORMAT:
        raise ModelFormatError(f"{path}: format tag {meta.get('format')!r} is not {FORMAT!r}")
    if meta.get("version") != VERSION:
        raise ModelFormatError(f"{path}: model version {meta.get('version')} is not supported")
    return meta, tables


def _parts_from(meta: dict, tables) -> SharedPartsModel:
    pool = SharedPartPool(meta["budget"], meta["universe_size"], list(meta["selected"]))
    boxes = meta["part_boxes"]
    return SharedPartsModel(
        ensembles=_ensembles_from(tables, "parts/"),
        pool=pool,
        mode=meta["mode"],
        detectors=tables.get("parts/detectors"),
        part_ids=meta["part_ids"],
        part_images=meta["part_images"],
        part_boxes=None if boxes is None else [None if b is None else tuple(b) for b in boxes],
        initial_weights=tables.get("parts/initial_weights"),
        config=meta["config"],
    )


def load_model(path):
    """Inverse of ``save_model``; returns ``(model, extra)``."""
    meta, tables = _read_zip(path)
    try:
        parts = _parts_from(meta["parts"], tables)
        if meta["kind"] == "parts":
            return parts, meta.get("extra", {})
        if meta["kind"] == "fused":
            model = FusedModel(
                global_ensembles=_ensembles_from(tables, "global/"),
                part_model=parts,
                transfer_exponent=meta["transfer_exponent"],
                fusion=meta["fusion"],
                config=meta["config"],
            )
            return model, meta.get("extra", {})
    except KeyError as exc:
        raise ModelFormatError(f"{path}: missing model field {exc}") from exc
    raise ModelFormatError(f"{path}: unknown model kind {meta['kind']!r}")
