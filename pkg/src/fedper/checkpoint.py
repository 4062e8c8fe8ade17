"""Weight checkpoint IO: a JSON manifest (layer shapes + split index) next to
a flat little-endian float64 blob, weights then bias per layer in order."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError, ShapeError
from .nn import WeightSet, weights_blob

MANIFEST_SUFFIX = ".json"
BLOB_SUFFIX = ".bin"


def save_weights(prefix: str | Path, weights: WeightSet, split_index: int) -> tuple[Path, Path]:
    """Write <prefix>.json and <prefix>.bin; returns the two paths.

    split_index is the number of base layers among the layers stored here
    (len(weights) for a base-only file, 0 for a personal-only file).
    """
    prefix = Path(prefix)
    if not 0 <= split_index <= len(weights):
        raise ShapeError(f"split index {split_index} out of range for {len(weights)} layers")
    manifest = {
        "dtype": "<f8",
        "layer_shapes": [[int(w.shape[0]), int(w.shape[1])] for w, _ in weights.layers],
        "split_index": int(split_index),
    }
    manifest_path = Path(str(prefix) + MANIFEST_SUFFIX)
    blob_path = Path(str(prefix) + BLOB_SUFFIX)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    blob_path.write_bytes(weights_blob(weights))
    return manifest_path, blob_path


def load_weights(prefix: str | Path) -> tuple[WeightSet, int]:
    """Inverse of save_weights; round-trips bit-exactly."""
    prefix = Path(prefix)
    manifest_path = Path(str(prefix) + MANIFEST_SUFFIX)
    blob_path = Path(str(prefix) + BLOB_SUFFIX)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: invalid manifest: {exc}") from exc
    shapes = [(int(o), int(i)) for o, i in manifest["layer_shapes"]]
    split_index = int(manifest["split_index"])

    raw = np.frombuffer(blob_path.read_bytes(), dtype="<f8")
    expected = sum(o * i + o for o, i in shapes)
    if raw.size != expected:
        raise ParseError(f"{blob_path}: blob holds {raw.size} floats, manifest implies {expected}")
    layers = []
    pos = 0
    for out_dim, in_dim in shapes:
        w = raw[pos : pos + out_dim * in_dim].reshape(out_dim, in_dim).copy()
        pos += out_dim * in_dim
        b = raw[pos : pos + out_dim].copy()
        pos += out_dim
        layers.append((w, b))
    return WeightSet(layers), split_index
