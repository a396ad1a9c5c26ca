"""Ground-truth sidecar files for synthetic faces.

Layout (little endian)::

    b"M3DS" | u32 version | u32 height | u32 width
    | depth  float32[height * width]        (row-major)
    | albedo float32[3 * height * width]    (channel, row, column)
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import M3DError

MAGIC = b"M3DS"
VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_sidecar(path: str | Path, depth: np.ndarray, albedo: np.ndarray) -> None:
    depth = np.asarray(depth, dtype="<f4").reshape(-1, *np.shape(depth)[-2:])
    h, w = depth.shape[-2:]
    albedo = np.asarray(albedo, dtype="<f4")
    if depth.shape != (1, h, w) or albedo.shape != (3, h, w):
        raise M3DError(f"sidecar expects depth (1,H,W)/(H,W) and albedo (3,H,W), "
                       f"got {depth.shape} and {albedo.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, h, w))
        fh.write(depth.tobytes(order="C"))
        fh.write(albedo.tobytes(order="C"))


def read_sidecar(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(depth (1,H,W), albedo (3,H,W))`` as float32 arrays."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise M3DError(f"{path}: truncated sidecar")
    magic, version, h, w = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise M3DError(f"{path}: bad sidecar magic {magic!r}")
    if version != VERSION:
        raise M3DError(f"{path}: unsupported sidecar version {version}")
    n = h * w
    if len(data) != _HEADER.size + 4 * 4 * n:
        raise M3DError(f"{path}: sidecar size does not match {h}x{w}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return body[:n].reshape(1, h, w).copy(), body[n:].reshape(3, h, w).copy()
