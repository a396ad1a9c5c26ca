"""Embedding export for external visualisation (t-SNE and the like).

File layout, little endian::

    b"M3DE" | u32 version | u32 N | u32 D | N*D float32 (row-major) | N u8 labels
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from ..datakit import FaceSet, iterate_batches
from ..errors import InvalidInputError

MAGIC = b"M3DE"
VERSION = 1
LAYERS = ("fused", "rgb_branch")


@torch.no_grad()
def embed(model, data: FaceSet, layer: str = "fused", batch_size: int = 64) -> np.ndarray:
    if layer not in LAYERS:
        raise InvalidInputError(f"unknown embedding layer {layer!r}; choose from {LAYERS}")
    model.eval()
    rows = []
    for images, _, _ in iterate_batches(data, batch_size, shuffle=False):
        feats = model.features(images)
        rows.append(feats.fused.values if layer == "fused" else feats.rgb.values)
    if not rows:
        return np.zeros((0, 0), dtype=np.float32)
    return torch.cat(rows).numpy().astype(np.float32)


def write_embeddings(path: str | Path, matrix: np.ndarray, labels) -> Path:
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1)
    if matrix.ndim != 2 or matrix.shape[0] != labels.shape[0]:
        raise InvalidInputError(f"matrix {matrix.shape} and {labels.shape[0]} labels disagree")
    n, d = matrix.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(MAGIC + struct.pack("<III", VERSION, n, d) + matrix.tobytes() + labels.tobytes())
    return path


def load_embeddings(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise InvalidInputError(f"{path} is not an embedding file")
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != VERSION:
        raise InvalidInputError(f"embedding file version {version}, expected {VERSION}")
    expected = 16 + 4 * n * d + n
    if len(raw) != expected:
        raise InvalidInputError(f"{path}: expected {expected} bytes, found {len(raw)}")
    matrix = np.frombuffer(raw, dtype="<f4", count=n * d, offset=16).reshape(n, d).copy()
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=16 + 4 * n * d).copy()
    return matrix, labels


def export_embeddings(model, data: FaceSet, layer: str, path: str | Path,
                      split: str | None = "test") -> Path:
    subset = data.subset(split) if split else data
    return write_embeddings(path, embed(model, subset, layer), subset.labels.numpy())
