"""Checkpoint container: one JSON manifest line, then a raw little-endian blob.

Layout::

    {"format_version": 1, "precision": "float32", "tensors": [...], ...}\\n
    <tensor bytes, concatenated in manifest order>

Each tensor entry carries ``name``, ``shape`` and ``offset``/``nbytes``
relative to the start of the blob.
"""

from __future__ import annotations

import json
import math
from typing import Dict, Optional

import numpy as np

from ._io import atomic_write_bytes
from .errors import CheckpointIOError, ShapeMismatch, VersionMismatch
from .model import ModelConfig, parameter_shapes

FORMAT_VERSION = 1
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def save_tensors(path, tensors: Dict[str, np.ndarray], metadata: dict) -> None:
    dtypes = {np.dtype(t.dtype).name for t in tensors.values()}
    if len(dtypes) > 1 or not dtypes <= set(_DTYPES):
        raise ValueError(f"all tensors must share one of {sorted(_DTYPES)}, got {sorted(dtypes)}")
    precision = dtypes.pop() if dtypes else "float32"
    le = _DTYPES[precision]
    entries, chunks, offset = [], [], 0
    for name, t in tensors.items():
        raw = np.ascontiguousarray(t, dtype=le).tobytes()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = dict(metadata)
    manifest.update(format_version=FORMAT_VERSION, precision=precision, tensors=entries)
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    atomic_write_bytes(path, header + b"\n" + b"".join(chunks))


def load_tensors(path):
    """``(tensors, manifest)`` from a checkpoint file."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    nl = raw.find(b"\n")
    if nl < 0:
        raise CheckpointIOError(f"{path}: missing manifest terminator")
    try:
        manifest = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointIOError(f"{path}: manifest is not valid JSON") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format_version {version!r}, expected {FORMAT_VERSION}")
    precision = manifest.get("precision")
    if precision not in _DTYPES:
        raise CheckpointIOError(f"{path}: unsupported precision {precision!r}")
    dtype = _DTYPES[precision]
    blob = memoryview(raw)[nl + 1:]
    tensors = {}
    for e in manifest["tensors"]:
        shape = tuple(int(s) for s in e["shape"])
        nbytes = math.prod(shape) * dtype.itemsize
        if e["nbytes"] != nbytes or e["offset"] < 0 or e["offset"] + nbytes > len(blob):
            raise CheckpointIOError(f"{path}: tensor {e['name']} lies outside the blob")
        arr = np.frombuffer(blob[e["offset"]:e["offset"] + nbytes], dtype=dtype).reshape(shape)
        tensors[e["name"]] = arr.astype(dtype.newbyteorder("="), copy=True)
    return tensors, manifest


def validate_params(tensors: Dict[str, np.ndarray], config: ModelConfig) -> dict:
    """Check parameter tensors against the shapes ``config`` implies."""
    expected = parameter_shapes(config)
    out = {}
    for name, shape in expected.items():
        if name not in tensors:
            raise ShapeMismatch(f"checkpoint lacks tensor {name}")
        if tensors[name].shape != shape:
            raise ShapeMismatch(f"tensor {name}: stored {tensors[name].shape}, config expects {shape}")
        out[name] = tensors[name]
    extra = sorted(set(tensors) - set(expected))
    if extra:
        raise ShapeMismatch(f"checkpoint has tensors not in config: {extra[:5]}")
    return out


def save_model(path, params, config: ModelConfig, class_names: Optional[list] = None) -> None:
    save_tensors(path, dict(params), {"model_config": config.to_dict(), "class_names": class_names})


def load_model(path):
    """``(params, config, manifest)`` for any checkpoint written by this package."""
    tensors, manifest = load_tensors(path)
    try:
        config = ModelConfig.from_dict(manifest["model_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointIOError(f"{path}: invalid model_config ({exc})") from exc
    params = validate_params({k: v for k, v in tensors.items() if not k.startswith("adam.")}, config)
    return params, config, manifest
