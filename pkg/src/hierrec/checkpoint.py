"""Checkpoint serialization shared by both model kinds.

One JSON document: {format_version, config:{model_kind, schema, model},
vocab, tensors:{name: {rows, cols, values}}}. Values are written with nine
significant digits, which round-trips 32-bit floats exactly, and keys are
sorted so identical models serialize to identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import FeatureSchema, Vocabulary
from .errors import CheckpointError

FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)


def _tensor_doc(value: np.ndarray) -> dict:
    arr32 = value.astype(np.float32)
    return {
        "rows": int(arr32.shape[0]),
        "cols": int(arr32.shape[1]),
        "values": [float(f"{v:.9g}") for v in arr32.ravel()],
    }


def save_checkpoint(model, path: str | Path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": {
            "model_kind": model.kind,
            "schema": model.schema.to_dict(),
            "model": model.config.to_dict(),
        },
        "vocab": model.vocab.to_dict(),
        "tensors": {
            name: _tensor_doc(entry.value)
            for name, entry in model.store.entries.items()
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, separators=(",", ":")))


def load_checkpoint(path: str | Path):
    """Rebuild a model from a checkpoint; returns the ready model object."""
    from .model import HierRecConfig, HierRecModel
    from .shared_bottom import SharedBottomConfig, SharedBottomModel

    raw = Path(path).read_text()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as err:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint: {err}") from err
    version = doc.get("format_version")
    if version not in SUPPORTED_VERSIONS:
        raise CheckpointError(
            f"{path}: format_version {version!r} not supported "
            f"(supported: {list(SUPPORTED_VERSIONS)})"
        )
    try:
        config = doc["config"]
        kind = config["model_kind"]
        schema = FeatureSchema.from_dict(config["schema"])
        vocab = Vocabulary.from_dict(doc.get("vocab", {}))
        tensors = doc["tensors"]
    except KeyError as err:
        raise CheckpointError(f"{path}: missing checkpoint section {err}") from err

    if kind == "hierrec":
        model = HierRecModel(HierRecConfig.from_dict(config["model"]), schema, vocab)
    elif kind == "shared_bottom":
        model = SharedBottomModel(
            SharedBottomConfig.from_dict(config["model"]), schema, vocab
        )
    else:
        raise CheckpointError(f"{path}: unknown model_kind {kind!r}")

    expected = set(model.store.names())
    present = set(tensors)
    if expected != present:
        missing = sorted(expected - present)
        extra = sorted(present - expected)
        raise CheckpointError(
            f"{path}: tensor set mismatch (missing {missing}, unexpected {extra})"
        )
    for name, doc_t in tensors.items():
        entry = model.store.get(name)
        shape = (int(doc_t["rows"]), int(doc_t["cols"]))
        if entry.value.shape != shape:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {shape}, "
                f"expected {entry.value.shape}"
            )
        vals = np.asarray(doc_t["values"], dtype=np.float32)
        if vals.size != shape[0] * shape[1]:
            raise CheckpointError(f"{path}: tensor {name!r} value count mismatch")
        np.copyto(entry.value, vals.astype(np.float64).reshape(shape))
    return model
