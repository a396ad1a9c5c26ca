import json
import subprocess
import sys

import pytest

from m3dnet.cli import main
from m3dnet.evalkit import load_embeddings

FAST = ["--recon.width", "4", "--recon.perceptual_width", "4", "--recon.image_size", "32",
        "--backbone.tier", "tiny", "--backbone.output_dim", "16", "--mfm.width", "16",
        "--pfm.stem_width", "4", "--pfm.fusion_width", "8", "--train.batch_size", "8",
        "--train.pretrain_batch_size", "4", "--train.checkpoint_every", "1"]


def test_unknown_verb_suggests(capsys):
    assert main(["trian"]) == 2
    assert "'train'" in capsys.readouterr().err


def test_unknown_option_suggests(capsys):
    assert main(["synth", "--count", "2", "--out", "x", "--mfm.head", "3"]) == 2
    assert "--mfm.heads" in capsys.readouterr().err


def test_bad_value_is_a_domain_error(tmp_path, capsys):
    assert main(["synth", "--count", "2", "--out", str(tmp_path), "--mfm.heads", "lots"]) == 1


def test_help_config_lists_keys(capsys):
    assert main(["--help-config"]) == 0
    assert "mfm.heads" in capsys.readouterr().out


def test_missing_recon_checkpoint(tmp_path, capsys):
    assert main(["synth", "--count", "4", "--out", str(tmp_path / "d"), "--image-size", "32"]) == 0
    rc = main(["train", "--manifest", str(tmp_path / "d" / "manifest.csv"), "--out", str(tmp_path / "r")])
    assert rc == 1
    assert "--recon-checkpoint" in capsys.readouterr().err
    # the configuration snapshot is written before any work happens
    assert (tmp_path / "r" / "config.json").is_file()


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("mfm.heads = 2\n")
    assert main(["synth", "--count", "2", "--out", str(tmp_path / "d"), "--config", str(cfg),
                 "--train.seed", "3"]) == 0
    snap = json.loads((tmp_path / "d" / "config.json").read_text())
    assert snap["mfm"]["heads"] == 2 and snap["train"]["seed"] == 3


@pytest.mark.slow
def test_full_pipeline(tmp_path):
    d, pre, det, ev, ab = (tmp_path / n for n in ("data", "pre", "det", "eval", "abl"))
    assert main(["synth", "--count", "12", "--out", str(d), "--image-size", "32"]) == 0
    manifest = str(d / "manifest.csv")
    assert main(["pretrain", "--manifest", manifest, "--out", str(pre), "--train.pretrain_epochs", "1", *FAST]) == 0
    recon = str(pre / "checkpoints" / "recon_epoch001.m3dc")
    assert main(["train", "--manifest", manifest, "--recon-checkpoint", recon, "--out", str(det),
                 "--train.epochs", "1", *FAST]) == 0
    ckpt = str(det / "checkpoints" / "detector_epoch001.m3dc")
    assert main(["eval", "--checkpoint", ckpt, "--manifest", manifest, "--recon-checkpoint", recon,
                 "--out", str(ev), *FAST]) == 0
    report = json.loads((ev / "report.json").read_text())
    assert 0.0 <= report["auc"] <= 1.0 and report["metadata"]["aggregation"] == "frame"
    emb = tmp_path / "emb.m3de"
    assert main(["embed", "--checkpoint", ckpt, "--manifest", manifest, "--recon-checkpoint", recon,
                 "--out", str(emb), "--split", ""]) == 0
    matrix, labels = load_embeddings(emb)
    assert matrix.shape == (12, 16) and labels.sum() == 6
    assert main(["ablate", "--manifest", manifest, "--recon-checkpoint", recon, "--out", str(ab),
                 "--axes", "heads,pfm", "--axis-values", "heads=2,4", "--train.epochs", "1", *FAST]) == 0
    grid = json.loads((ab / "grid.json").read_text())
    assert len(grid["cells"]) == 4 and all(c["status"] == "ok" for c in grid["cells"])


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "m3dnet", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "synth" in out.stdout
