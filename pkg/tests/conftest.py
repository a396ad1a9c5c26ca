from __future__ import annotations

import pytest
import torch
from hypothesis import settings

from m3dnet import desk_config
from m3dnet.datakit import SynthFaceSpec, synth_faces

settings.register_profile("m3d", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("m3d")

torch.set_num_threads(1)

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def cfg():
    return desk_config()


@pytest.fixture(scope="session")
def synth16():
    return synth_faces(SynthFaceSpec(count=16, seed=0))


@pytest.fixture(scope="session")
def recon_ckpt(tmp_path_factory, synth16):
    """A one-epoch Recon3D checkpoint, enough to build detectors on."""
    from m3dnet.trainer import pretrain_recon

    run = tmp_path_factory.mktemp("recon_run")
    c = desk_config({"train.pretrain_epochs": 1})
    return pretrain_recon(c, synth16, run).checkpoint


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_frozen_recon(cfg):
    """A seeded, untrained Recon3D marked ready and frozen (for wiring tests)."""
    from m3dnet.recon3d import Recon3D

    model = Recon3D(cfg.recon)
    model.weights_ready = True
    return model.freeze()


@pytest.fixture
def detector(cfg):
    from m3dnet.detector import M3DNet

    return M3DNet(cfg, make_frozen_recon(cfg))
