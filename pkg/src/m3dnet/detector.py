"""The assembled dual-stream detector.

image ─┬─ frozen Recon3D ─ (albedo, depth) ─ PFM ─ backbone_3d ─┐
       └──────────────────────────────────────── backbone_rgb ─┴─ MFM ─ head ─ logits
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .backbone import build_backbone
from .config import Config
from .errors import ConfigError, InvalidInputError, M3DError, ModuleContractError
from .features import GlobalFeature
from .mfm import FusedFeature, build_mfm
from .pfm import build_pfm
from .recon3d import FrozenRecon3D

GROUPS = ("pfm", "backbone_rgb", "backbone_3d", "mfm", "head")
REAL, FAKE = 0, 1


@dataclass
class DetectionOutput:
    logits: torch.Tensor  # (B, 2), index 1 = fake

    @property
    def prob_fake(self) -> torch.Tensor:
        return torch.softmax(self.logits, dim=-1)[:, FAKE]


@dataclass
class StreamFeatures:
    rgb: GlobalFeature
    recon: GlobalFeature
    fused: FusedFeature


def _stage(name: str, fn, *args):
    try:
        return fn(*args)
    except ModuleContractError:
        raise
    except (M3DError, RuntimeError, ValueError) as exc:
        raise ModuleContractError(name, exc) from exc


class M3DNet(nn.Module):
    """Detector built around an already-frozen reconstruction network."""

    def __init__(self, cfg: Config, recon: FrozenRecon3D, recon_id: str = ""):
        super().__init__()
        if not isinstance(recon, FrozenRecon3D):
            raise ConfigError("M3DNet needs a frozen Recon3D handle (call Recon3D.freeze())")
        cfg.validate()
        self.cfg = cfg
        self.recon_id = recon_id
        seed = cfg.train.seed
        size = cfg.recon.image_size
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.pfm = build_pfm(cfg.pfm, size)
        self.backbone_rgb = build_backbone(cfg.backbone, 3, seed + 1, "rgb")
        self.backbone_3d = build_backbone(cfg.backbone, cfg.pfm.fusion_width, seed + 2, "recon")
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed + 3)
            self.mfm = build_mfm(cfg.backbone.output_dim, cfg.mfm)
            self.head = nn.Linear(cfg.mfm.width, 2)
        self.recon = recon

    def parameter_groups(self) -> dict[str, nn.Module]:
        return {name: getattr(self, name) for name in GROUPS}

    def trainable_parameters(self):
        for module in self.parameter_groups().values():
            yield from module.parameters()

    def features(self, image: torch.Tensor) -> StreamFeatures:
        if image.dim() != 4 or image.shape[1] != 3:
            raise InvalidInputError(f"expected (B, 3, H, W) images, got {tuple(image.shape)}")
        albedo, depth = _stage("recon3d", self.recon, image)
        fused_map = _stage("pfm", self.pfm, albedo, depth)
        f3d = _stage("backbone_3d", self.backbone_3d, fused_map.values)
        frgb = _stage("backbone_rgb", self.backbone_rgb, image)
        fused = _stage("mfm", self.mfm, frgb, f3d)
        return StreamFeatures(frgb, f3d, fused)

    def forward(self, image: torch.Tensor) -> DetectionOutput:
        fused = self.features(image).fused
        logits = _stage("head", self.head, fused.values)
        if not bool(torch.isfinite(logits).all()):
            raise ModuleContractError("head", InvalidInputError("non-finite logits"))
        return DetectionOutput(logits)

    def group_state(self) -> dict[str, dict[str, torch.Tensor]]:
        return {name: {k: v.detach().clone() for k, v in mod.state_dict().items()}
                for name, mod in self.parameter_groups().items()}

    def load_group_state(self, groups: dict[str, dict[str, torch.Tensor]]) -> None:
        from .checkpoint import load_groups_into

        load_groups_into(self.parameter_groups(), groups)


def detection_loss(out: DetectionOutput | torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean two-class cross-entropy; labels are 0 (real) / 1 (fake)."""
    logits = out.logits if isinstance(out, DetectionOutput) else out
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device).reshape(-1)
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) > 1):
        raise InvalidInputError("labels must be 0 (real) or 1 (fake)")
    return F.cross_entropy(logits.reshape(-1, 2), labels)
