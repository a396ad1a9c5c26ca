import json
import shutil

import pytest
import torch

from m3dnet import desk_config
from m3dnet import checkpoint as ckpt
from m3dnet.errors import CheckpointError, CheckpointKindError, ConfigError
from m3dnet.trainer import (
    RunDir,
    build_detector,
    load_detector,
    load_recon,
    pretrain_recon,
    train_detector,
)


def _recon_cfg(**kw):
    return desk_config({"train.pretrain_epochs": 3, "train.checkpoint_every": 1, **kw})


@pytest.mark.parametrize("every,expected", [(1, [1, 2, 3]), (2, [2, 3])])
def test_pretrain_checkpoint_cadence(tmp_path, synth16, every, expected):
    res = pretrain_recon(_recon_cfg(**{"train.checkpoint_every": every}), synth16, tmp_path)
    assert RunDir(tmp_path).checkpoint_epochs("recon") == expected
    assert res.checkpoint.name == "recon_epoch003.m3dc"
    assert json.loads((tmp_path / "config.json").read_text())["train"]["checkpoint_every"] == every
    recs = RunDir(tmp_path).records()
    assert [r["epoch"] for r in recs if r["kind"] == "epoch"] == [1, 2, 3]
    for r in recs:
        if r["kind"] == "step":
            assert set(r) >= {"l_pixel", "l_perc", "l_rec", "lambda_f", "lambda_p", "step"}


def test_pretrain_resume_matches_uninterrupted_run(tmp_path, synth16):
    full = tmp_path / "full"
    pretrain_recon(_recon_cfg(), synth16, full)
    cut = tmp_path / "cut"
    shutil.copytree(full, cut)
    (cut / "checkpoints" / "recon_epoch003.m3dc").unlink()
    with (cut / "metrics.jsonl").open("a") as fh:
        fh.write(json.dumps({"phase": "pretrain", "kind": "step", "epoch": 3, "step": 999}) + "\n")
    pretrain_recon(_recon_cfg(), synth16, cut, resume=True)
    assert (cut / "metrics.jsonl").read_text() == (full / "metrics.jsonl").read_text()
    a = ckpt.load(full / "checkpoints" / "recon_epoch003.m3dc")
    b = ckpt.load(cut / "checkpoints" / "recon_epoch003.m3dc")
    for group, tensors in a["payload"]["groups"].items():
        for k, v in tensors.items():
            assert torch.equal(v, b["payload"]["groups"][group][k]), f"{group}.{k}"


def test_recon_checkpoint_round_trip(recon_ckpt, synth16):
    m = load_recon(recon_ckpt)
    m2 = load_recon(recon_ckpt)
    x = synth16.images[:2]
    m.eval(), m2.eval()
    assert torch.equal(m.predict_depth(x), m2.predict_depth(x))
    with pytest.raises(CheckpointKindError):
        load_detector(recon_ckpt)


def test_missing_recon_checkpoint_is_a_startup_error(tmp_path, synth16):
    with pytest.raises(ConfigError):
        train_detector(desk_config(), synth16, tmp_path / "absent.m3dc", tmp_path / "run")
    with pytest.raises(ConfigError):
        build_detector(desk_config(), tmp_path / "absent.m3dc")


def test_detector_training_leaves_recon_untouched(tmp_path, synth16, recon_ckpt):
    before = ckpt.load(recon_ckpt)["payload"]["groups"]
    res = train_detector(desk_config({"train.epochs": 2}), synth16, recon_ckpt, tmp_path)
    after = res.model.recon.model.group_state()
    for group, tensors in before.items():
        for k, v in tensors.items():
            assert torch.equal(v, after[group][k]), f"{group}.{k}"
    assert res.best_checkpoint is not None and res.best_checkpoint.is_file()
    assert [r["epoch"] for r in res.epoch_records] == [1, 2]
    assert all({"loss_mean", "train_auc", "val_auc", "best"} <= set(r) for r in res.epoch_records)


def test_detector_resume_matches_uninterrupted_run(tmp_path, synth16, recon_ckpt):
    cfg = desk_config({"train.epochs": 3})
    full = tmp_path / "full"
    train_detector(cfg, synth16, recon_ckpt, full)
    cut = tmp_path / "cut"
    shutil.copytree(full, cut)
    (cut / "checkpoints" / "detector_epoch003.m3dc").unlink()
    train_detector(cfg, synth16, recon_ckpt, cut, resume=True)
    assert (cut / "metrics.jsonl").read_text() == (full / "metrics.jsonl").read_text()
    a = ckpt.load(full / "checkpoints" / "detector_epoch003.m3dc")["payload"]["groups"]
    b = ckpt.load(cut / "checkpoints" / "detector_epoch003.m3dc")["payload"]["groups"]
    for group, tensors in a.items():
        for k, v in tensors.items():
            assert torch.equal(v, b[group][k]), f"{group}.{k}"


def test_load_detector_checks_recon_identity(tmp_path, synth16, recon_ckpt):
    res = train_detector(desk_config({"train.epochs": 1}), synth16, recon_ckpt, tmp_path / "run")
    model = load_detector(res.checkpoint, recon_ckpt)
    x = synth16.images[:2]
    res.model.eval()
    assert torch.allclose(model(x).logits, res.model(x).logits)
    other = pretrain_recon(desk_config({"train.pretrain_epochs": 1, "train.seed": 5}), synth16,
                           tmp_path / "other").checkpoint
    with pytest.raises(CheckpointError):
        load_detector(res.checkpoint, other)


def test_cadence_longer_than_run_rejected(tmp_path, synth16):
    with pytest.raises(ConfigError):
        pretrain_recon(desk_config({"train.pretrain_epochs": 1, "train.checkpoint_every": 2}),
                       synth16, tmp_path)
