"""Checkpoint directories: a JSON manifest plus one array file per tensor.

Layout:
    <dir>/manifest.json   -- schema version, kind, step, config, tensor table
    <dir>/arrays/<name>.npy -- little-endian float32 (parameters) or uint8 (rng)

Round-trips are bit-exact: loading a checkpoint and saving it again produces
byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .field import FaceFieldModel, FieldConfig

SCHEMA_VERSION = 1
_DTYPES = {"float32": "<f4", "uint8": "|u1", "int64": "<i8"}


def _array_name(name: str) -> str:
    return name.replace("/", "_") + ".npy"


def save_arrays(path: Path, tensors: dict[str, torch.Tensor]) -> dict:
    """Write each tensor as an .npy file; returns the manifest tensor table."""
    arrays_dir = path / "arrays"
    arrays_dir.mkdir(parents=True, exist_ok=True)
    table = {}
    for name, tensor in tensors.items():
        arr = tensor.detach().cpu().numpy()
        if arr.dtype == np.float64 or arr.dtype == np.float32:
            arr = arr.astype("<f4")
            dtype = "float32"
        elif arr.dtype == np.uint8:
            arr = arr.astype("|u1")
            dtype = "uint8"
        elif arr.dtype in (np.int64, np.int32):
            arr = arr.astype("<i8")
            dtype = "int64"
        else:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for tensor '{name}'")
        np.save(arrays_dir / _array_name(name), arr)
        table[name] = {"file": f"arrays/{_array_name(name)}", "shape": list(arr.shape), "dtype": dtype}
    return table


def load_arrays(path: Path, table: dict) -> dict[str, torch.Tensor]:
    """Load every tensor referenced by a manifest table; fails atomically."""
    out = {}
    for name, entry in table.items():
        file = path / entry["file"]
        if not file.exists():
            raise CheckpointError(f"checkpoint array missing: {file}")
        try:
            arr = np.load(file)
        except Exception as exc:
            raise CheckpointError(f"cannot read checkpoint array {file}: {exc}") from exc
        if list(arr.shape) != entry["shape"]:
            raise CheckpointError(
                f"shape mismatch for '{name}': manifest {entry['shape']}, file {list(arr.shape)}"
            )
        expected = _DTYPES.get(entry["dtype"])
        if expected is None or arr.dtype != np.dtype(expected):
            raise CheckpointError(f"dtype mismatch for '{name}': {arr.dtype} != {entry['dtype']}")
        out[name] = torch.from_numpy(arr.copy())
    return out


def write_manifest(path: Path, manifest: dict):
    text = json.dumps(manifest, indent=2, sort_keys=True)
    (path / "manifest.json").write_text(text + "\n")


def read_manifest(path: Path, expect_kind: str | None = None) -> dict:
    file = Path(path) / "manifest.json"
    if not file.exists():
        raise CheckpointError(f"no manifest at {file}")
    try:
        manifest = json.loads(file.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt manifest {file}: {exc}") from exc
    if manifest.get("schema") != SCHEMA_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint schema {manifest.get('schema')!r}, expected {SCHEMA_VERSION}"
        )
    if expect_kind is not None and manifest.get("kind") != expect_kind:
        raise CheckpointError(f"expected checkpoint kind {expect_kind!r}, got {manifest.get('kind')!r}")
    return manifest


def save_model(model: FaceFieldModel, path, step: int = 0, extra: dict | None = None):
    """Persist a field model (weights + config) to a checkpoint directory."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    table = save_arrays(path, dict(model.state_dict()))
    manifest = {
        "schema": SCHEMA_VERSION,
        "kind": "facefield-model",
        "step": step,
        "config": model.config.to_dict(),
        "tensors": table,
    }
    if extra:
        manifest.update(extra)
    write_manifest(path, manifest)


def load_model(path) -> tuple[FaceFieldModel, dict]:
    """Rebuild a field model from a checkpoint directory; returns (model, manifest)."""
    path = Path(path)
    manifest = read_manifest(path)
    config = FieldConfig.from_dict(manifest["config"])
    model = FaceFieldModel(config)
    tensors = load_arrays(path, manifest["tensors"])
    model_keys = {k for k in tensors if k in model.state_dict()}
    state = {k: tensors[k].reshape(model.state_dict()[k].shape) for k in model_keys}
    missing = set(model.state_dict()) - model_keys
    if missing:
        raise CheckpointError(f"checkpoint lacks model tensors: {sorted(missing)[:5]} ...")
    model.load_state_dict(state)
    return model, manifest
