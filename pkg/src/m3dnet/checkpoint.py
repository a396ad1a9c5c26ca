"""Checkpoint container.

Layout (little endian)::

    b"M3DC" | u32 format version | u64 header length | header (UTF-8 JSON)
    | tensor blob | 32-byte SHA-256 of everything before it

The JSON header holds ``kind``, ``metadata`` and an encoded ``payload`` tree
whose tensors point into the blob by offset. Encoding is deterministic, so
saving a loaded checkpoint reproduces the original bytes. Writes go to a
temporary file that is renamed into place.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from .errors import (
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointKindError,
    CheckpointShapeError,
    CheckpointVersionError,
)

MAGIC = b"M3DC"
FORMAT_VERSION = 1
_DTYPES = {
    torch.float32: "float32", torch.float64: "float64", torch.float16: "float16",
    torch.int64: "int64", torch.int32: "int32", torch.uint8: "uint8", torch.bool: "bool",
}
_NP_DTYPES = {v: np.dtype(v) for v in _DTYPES.values()}
_TORCH_DTYPES = {v: k for k, v in _DTYPES.items()}


def _encode(obj: Any, blob: io.BytesIO) -> Any:
    if isinstance(obj, torch.Tensor):
        t = obj.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported tensor dtype {t.dtype}")
        data = t.numpy().tobytes()
        offset = blob.tell()
        blob.write(data)
        return {"__tensor__": [_DTYPES[t.dtype], list(t.shape), offset, len(data)]}
    if isinstance(obj, dict):
        if all(isinstance(k, str) for k in obj):
            return {k: _encode(obj[k], blob) for k in sorted(obj)}
        items = sorted(obj.items(), key=lambda kv: (str(type(kv[0])), kv[0]))
        return {"__dict__": [[k, _encode(v, blob)] for k, v in items]}
    if isinstance(obj, tuple):
        return {"__tuple__": [_encode(v, blob) for v in obj]}
    if isinstance(obj, list):
        return [_encode(v, blob) for v in obj]
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise CheckpointError(f"cannot serialise {type(obj).__name__}")


def _decode(obj: Any, blob: memoryview) -> Any:
    if isinstance(obj, dict):
        if "__tensor__" in obj:
            dtype, shape, offset, nbytes = obj["__tensor__"]
            arr = np.frombuffer(blob[offset:offset + nbytes], dtype=_NP_DTYPES[dtype]).copy()
            return torch.from_numpy(arr).reshape(shape).to(_TORCH_DTYPES[dtype])
        if "__dict__" in obj:
            return {k: _decode(v, blob) for k, v in obj["__dict__"]}
        if "__tuple__" in obj:
            return tuple(_decode(v, blob) for v in obj["__tuple__"])
        return {k: _decode(v, blob) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v, blob) for v in obj]
    return obj


def dumps(kind: str, payload: dict[str, Any], metadata: dict[str, Any] | None = None) -> bytes:
    blob = io.BytesIO()
    header = {"format_version": FORMAT_VERSION, "kind": kind,
              "metadata": metadata or {}, "payload": _encode(payload, blob)}
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(head)) + head + blob.getvalue()
    return body + hashlib.sha256(body).digest()


def loads(data: bytes, expected_kind: str | None = None) -> dict[str, Any]:
    """Decode a checkpoint; returns ``{"kind", "metadata", "payload"}``."""
    if len(data) < 4 + 12 + 32 or data[:4] != MAGIC:
        raise CheckpointIntegrityError("not an m3dnet checkpoint (bad magic or truncated)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError("checkpoint checksum mismatch (file is corrupt)")
    version, head_len = struct.unpack("<IQ", body[4:16])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    try:
        header = json.loads(body[16:16 + head_len].decode())
    except ValueError as exc:
        raise CheckpointIntegrityError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(f"header format version {header.get('format_version')}")
    if expected_kind is not None and header["kind"] != expected_kind:
        raise CheckpointKindError(f"expected a {expected_kind!r} checkpoint, got {header['kind']!r}")
    blob = memoryview(body)[16 + head_len:]
    return {"kind": header["kind"], "metadata": header["metadata"],
            "payload": _decode(header["payload"], blob)}


def save(path: str | os.PathLike, kind: str, payload: dict[str, Any],
         metadata: dict[str, Any] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dumps(kind, payload, metadata)
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def load(path: str | os.PathLike, expected_kind: str | None = None) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return loads(path.read_bytes(), expected_kind)


def file_digest(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_groups_into(modules: dict[str, nn.Module], groups: dict[str, dict[str, torch.Tensor]]) -> None:
    """Load named state dicts after checking group names, keys and shapes."""
    if set(modules) != set(groups):
        raise CheckpointShapeError(
            f"parameter groups differ: expected {sorted(modules)}, got {sorted(groups)}")
    for name, module in modules.items():
        current = module.state_dict()
        incoming = groups[name]
        if set(current) != set(incoming):
            missing = sorted(set(current) - set(incoming))
            extra = sorted(set(incoming) - set(current))
            raise CheckpointShapeError(f"group {name!r}: missing {missing}, unexpected {extra}")
        for key, tensor in current.items():
            if tuple(tensor.shape) != tuple(incoming[key].shape):
                raise CheckpointShapeError(
                    f"group {name!r} tensor {key!r}: shape {tuple(incoming[key].shape)}, "
                    f"expected {tuple(tensor.shape)}")
    for name, module in modules.items():
        module.load_state_dict(groups[name])
