import pytest
import torch
from hypothesis import given, strategies as st
from torch import nn

from m3dnet import checkpoint as ckpt
from m3dnet.errors import (
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointKindError,
    CheckpointShapeError,
    CheckpointVersionError,
)


def _payload():
    g = torch.Generator().manual_seed(0)
    return {"groups": {"a": {"w": torch.randn(3, 4, generator=g), "n": torch.tensor(5)}},
            "misc": (1, 2.5, "x", None, True), "list": [torch.zeros(2, dtype=torch.uint8)],
            "optim": {0: {"step": torch.tensor(3.0)}, 1: {}}}


def test_round_trip_values():
    data = ckpt.loads(ckpt.dumps("k", _payload(), {"epoch": 3}), "k")
    assert data["kind"] == "k" and data["metadata"] == {"epoch": 3}
    p = data["payload"]
    assert torch.equal(p["groups"]["a"]["w"], _payload()["groups"]["a"]["w"])
    assert p["misc"] == (1, 2.5, "x", None, True)
    assert p["list"][0].dtype == torch.uint8
    assert set(p["optim"]) == {0, 1}


def test_encoding_is_byte_deterministic(tmp_path):
    a = ckpt.save(tmp_path / "a.m3dc", "k", _payload(), {"x": 1})
    loaded = ckpt.load(a, "k")
    b = ckpt.save(tmp_path / "b.m3dc", "k", loaded["payload"], loaded["metadata"])
    assert a.read_bytes() == b.read_bytes()
    assert not list(tmp_path.glob("*.tmp"))


@given(st.lists(st.integers(1, 4), min_size=0, max_size=3), st.sampled_from(["float32", "float64", "int64", "bool"]))
def test_tensor_round_trip_property(shape, dtype):
    t = (torch.arange(int(torch.tensor(shape).prod()) if shape else 1) % 3).reshape(shape).to(getattr(torch, dtype))
    back = ckpt.loads(ckpt.dumps("k", {"t": t}))["payload"]["t"]
    assert back.dtype == t.dtype and torch.equal(back, t)


def test_corruption_detected():
    raw = bytearray(ckpt.dumps("k", _payload()))
    raw[40] ^= 0xFF
    with pytest.raises(CheckpointIntegrityError):
        ckpt.loads(bytes(raw))
    with pytest.raises(CheckpointIntegrityError):
        ckpt.loads(b"nope")


def test_version_and_kind_errors():
    import hashlib
    import struct

    raw = ckpt.dumps("k", {})
    body = raw[:-32]
    bumped = body[:4] + struct.pack("<I", ckpt.FORMAT_VERSION + 1) + body[8:]
    with pytest.raises(CheckpointVersionError):
        ckpt.loads(bumped + hashlib.sha256(bumped).digest())
    with pytest.raises(CheckpointKindError):
        ckpt.loads(raw, "other")
    with pytest.raises(CheckpointError):
        ckpt.load("/nonexistent/file.m3dc")


def test_load_groups_shape_checks():
    mods = {"a": nn.Linear(2, 3)}
    good = {"a": {k: v.clone() for k, v in mods["a"].state_dict().items()}}
    ckpt.load_groups_into(mods, good)
    with pytest.raises(CheckpointShapeError):
        ckpt.load_groups_into(mods, {"b": good["a"]})
    with pytest.raises(CheckpointShapeError):
        ckpt.load_groups_into(mods, {"a": {"weight": torch.zeros(3, 2)}})
    with pytest.raises(CheckpointShapeError):
        ckpt.load_groups_into(mods, {"a": {"weight": torch.zeros(2, 2), "bias": torch.zeros(3)}})
