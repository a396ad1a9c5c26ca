import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from PIL import Image

from m3dnet.config import AugmentConfig
from m3dnet.datakit import (
    FaceSet,
    ManifestEntry,
    SynthFaceSpec,
    augment,
    iterate_batches,
    load_manifest,
    preprocess,
    read_sidecar,
    synth_faces,
    write_manifest,
    write_sidecar,
)
from m3dnet.errors import ConfigError, ImageDecodeError, M3DError, ManifestError


def test_synth_counts_labels_and_ranges(synth16):
    assert len(synth16) == 16
    assert int(synth16.labels.sum()) == 8
    assert synth16.images.shape == (16, 3, 64, 64)
    assert float(synth16.images.min()) >= 0 and float(synth16.images.max()) <= 1
    assert set(synth16.splits) <= {"train", "val", "test"}
    assert len(synth16.depth) == 8


def test_synth_reals_are_symmetric_and_depth_in_range(synth16):
    for i, depth in synth16.depth.items():
        assert torch.equal(depth, depth.flip(-1))
        assert float(depth.min()) > 0.9 and float(depth.max()) < 1.1
        img = synth16.images[i]
        assert torch.allclose(img, img.flip(-1), atol=1e-6)


def test_fakes_differ_only_inside_their_mask(synth16):
    for j, src in synth16.source.items():
        diff = (synth16.images[j] - synth16.images[src]).abs().amax(0)
        mask = synth16.tamper_mask[j]
        assert float(diff[~mask].max()) == 0.0
        assert float(diff[mask].max()) > 0.0
        assert synth16.splits[j] == synth16.splits[src]


def test_synth_is_deterministic():
    a = synth_faces(SynthFaceSpec(count=4, image_size=32, seed=3, tamper_kind="local_warp"))
    b = synth_faces(SynthFaceSpec(count=4, image_size=32, seed=3, tamper_kind="local_warp"))
    assert torch.equal(a.images, b.images)


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        synth_faces(SynthFaceSpec(count=3))
    with pytest.raises(ConfigError):
        synth_faces(SynthFaceSpec(count=4, tamper_kind="nope"))


def test_write_and_reload_round_trip(tmp_path):
    ds = synth_faces(SynthFaceSpec(count=4, image_size=32, seed=1))
    manifest = ds.write(tmp_path)
    entries = load_manifest(manifest)
    assert [e.label for e in entries] == ["real", "real", "fake", "fake"]
    reloaded = FaceSet.from_manifest(manifest, 32)
    # PNG quantisation is the only loss
    assert float((reloaded.images - ds.images).abs().max()) <= 0.5 / 255 + 1e-6
    depth, albedo = read_sidecar(tmp_path / "images" / "real_0000.m3ds")
    assert np.array_equal(depth, ds.depth[0].numpy()) and np.array_equal(albedo, ds.albedo[0].numpy())


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 1000))
def test_sidecar_round_trip(tmp_path_factory, h, w, seed):
    rng = np.random.default_rng(seed)
    depth = rng.random((h, w), dtype=np.float32)
    albedo = rng.random((3, h, w), dtype=np.float32)
    path = tmp_path_factory.mktemp("sc") / "x.m3ds"
    write_sidecar(path, depth, albedo)
    d, a = read_sidecar(path)
    assert np.array_equal(d[0], depth) and np.array_equal(a, albedo)


def test_sidecar_rejects_corruption(tmp_path):
    path = tmp_path / "x.m3ds"
    write_sidecar(path, np.zeros((2, 2), np.float32), np.zeros((3, 2, 2), np.float32))
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(M3DError):
        read_sidecar(path)
    path.write_bytes(raw[:-1])
    with pytest.raises(M3DError):
        read_sidecar(path)


def _png(path, size=8):
    Image.fromarray(np.zeros((size, size, 3), np.uint8)).save(path)
    return path


def test_manifest_errors_name_the_row(tmp_path):
    _png(tmp_path / "a.png")
    bad = tmp_path / "m.csv"
    bad.write_text("path,label,split,dataset_id\na.png,real,train,d\na.png,maybe,train,d\n")
    with pytest.raises(ManifestError, match="row 3"):
        load_manifest(bad)
    bad.write_text("path,label,split,dataset_id\nmissing.png,real,train,d\n")
    with pytest.raises(ManifestError, match="row 2"):
        load_manifest(bad)
    bad.write_text("file,label\n")
    with pytest.raises(ManifestError, match="row 1"):
        load_manifest(bad)
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "absent.csv")


def test_manifest_round_trip_with_frames(tmp_path):
    p = _png(tmp_path / "v.png")
    entries = [ManifestEntry(p, "fake", "test", "ds", 3), ManifestEntry(p, "real", "val", "ds")]
    write_manifest(tmp_path / "m.csv", entries)
    back = load_manifest(tmp_path / "m.csv")
    assert [(e.label, e.split, e.frame) for e in back] == [("fake", "test", 3), ("real", "val", None)]
    assert FaceSet.from_entries(back, 16).ids == ["v#3", "v"]


def test_preprocess_resizes_and_rejects_garbage(tmp_path):
    x = preprocess(_png(tmp_path / "a.png", 20), 16)
    assert x.shape == (3, 16, 16) and x.dtype == torch.float32
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image")
    with pytest.raises(ImageDecodeError):
        preprocess(junk)


def test_augment_is_reproducible_and_in_range():
    img = torch.rand(3, 32, 32)
    cfg = AugmentConfig(blur_prob=1.0)
    a, b = augment(img, cfg, 7), augment(img, cfg, 7)
    assert torch.equal(a, b)
    assert float(a.min()) >= 0 and float(a.max()) <= 1
    assert not torch.equal(augment(img, cfg, 7), augment(img, cfg, 8))


def test_iterate_batches_order_and_coverage(synth16):
    seen = [i for _, _, idx in iterate_batches(synth16, 5, seed=1, epoch=2) for i in idx]
    assert sorted(seen) == list(range(16))
    again = [i for _, _, idx in iterate_batches(synth16, 5, seed=1, epoch=2) for i in idx]
    assert seen == again
    other = [i for _, _, idx in iterate_batches(synth16, 5, seed=1, epoch=3) for i in idx]
    assert seen != other
    plain = [i for _, _, idx in iterate_batches(synth16, 5, shuffle=False) for i in idx]
    assert plain == list(range(16))


def test_subset_filters(synth16):
    reals = synth16.subset("train", 0)
    assert all(s == "train" for s in reals.splits) and int(reals.labels.sum()) == 0
