"""Pre-fusion of the reconstructed albedo and depth into one spatial map.

Albedo features are recalibrated by a multiplicative weight path and an
additive bias path; depth features pass through a single path. The two
are aligned, concatenated, projected, and refined with selective-kernel
attention.
"""
from __future__ import annotations

import torch
from torch import nn
import torch.nn.functional as F

from .config import PFMConfig
from .errors import ConfigError, InvalidInputError
from .features import SpatialFeature


class DepthwiseSeparableConv(nn.Module):
    """Per-channel k x k conv followed by a 1x1 pointwise conv (both biased)."""

    def __init__(self, channels: int, kernel_size: int = 3):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ConfigError(f"depthwise kernel must be odd, got {kernel_size}")
        self.channels = channels
        self.depthwise = nn.Conv2d(channels, channels, kernel_size, padding=kernel_size // 2,
                                   groups=channels)
        self.pointwise = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.channels:
            raise ConfigError(f"expected {self.channels} channels, got {x.shape[1]}")
        return self.pointwise(self.depthwise(x))


def _group_norm(c: int) -> nn.GroupNorm:
    return nn.GroupNorm(max(1, min(8, c // 4)), c)


class SKAttention(nn.Module):
    """Selective-kernel attention: a softmax over kernel-size branches per channel.

    ``min_spatial`` is the smallest map side the block will see; kernels
    larger than it are rejected at build time.
    """

    def __init__(self, channels: int, kernel_sizes=(1, 3, 5, 7), reduction_ratio: int = 8,
                 min_spatial: int | None = None, min_reduced: int = 4):
        super().__init__()
        kernel_sizes = tuple(kernel_sizes)
        if not kernel_sizes or any(k < 1 or k % 2 == 0 for k in kernel_sizes):
            raise ConfigError(f"SK kernel sizes must be odd and positive, got {kernel_sizes}")
        if reduction_ratio < 1:
            raise ConfigError("SK reduction_ratio must be >= 1")
        if min_spatial is not None and max(kernel_sizes) > min_spatial:
            raise ConfigError(f"SK kernel {max(kernel_sizes)} exceeds the {min_spatial}px feature map")
        self.channels = channels
        self.kernel_sizes = kernel_sizes
        self.reduced = max(channels // reduction_ratio, min_reduced)
        self.branches = nn.ModuleList(
            nn.Sequential(nn.Conv2d(channels, channels, k, padding=k // 2, bias=False),
                          _group_norm(channels), nn.ReLU(inplace=True))
            for k in kernel_sizes)
        self.reduce = nn.Sequential(nn.Linear(channels, self.reduced), nn.ReLU(inplace=True))
        self.expand = nn.Linear(self.reduced, channels * len(kernel_sizes))

    def branch_outputs(self, x: torch.Tensor) -> torch.Tensor:
        """Stack of branch maps, (B, K, C, H, W)."""
        if x.shape[1] != self.channels:
            raise ConfigError(f"SK block expects {self.channels} channels, got {x.shape[1]}")
        if max(self.kernel_sizes) > min(x.shape[-2:]):
            raise ConfigError(f"SK kernel {max(self.kernel_sizes)} exceeds input {tuple(x.shape[-2:])}")
        return torch.stack([branch(x) for branch in self.branches], dim=1)

    def select(self, feats: torch.Tensor, return_weights: bool = False):
        """Fuse precomputed branch maps (B, K, C, H, W) by their per-channel softmax."""
        b, k, c = feats.shape[:3]
        descriptor = feats.sum(dim=1).mean(dim=(2, 3))
        logits = self.expand(self.reduce(descriptor)).view(b, k, c)
        weights = torch.softmax(logits, dim=1)
        out = (weights[..., None, None] * feats).sum(dim=1)
        return (out, weights) if return_weights else out

    def forward(self, x: torch.Tensor, return_weights: bool = False):
        return self.select(self.branch_outputs(x), return_weights)


def _stem(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True))


def align(a: torch.Tensor, d: torch.Tensor, allow_resample: bool) -> tuple[torch.Tensor, torch.Tensor]:
    """Bring two maps to a common grid by resampling the smaller one upward."""
    if a.shape[-2:] == d.shape[-2:]:
        return a, d
    if not allow_resample:
        raise InvalidInputError(f"albedo {tuple(a.shape[-2:])} and depth {tuple(d.shape[-2:])} "
                                "grids differ and pfm.allow_resample is off")
    if a.shape[-2] * a.shape[-1] >= d.shape[-2] * d.shape[-1]:
        return a, F.interpolate(d, size=a.shape[-2:], mode="bilinear", align_corners=False)
    return F.interpolate(a, size=d.shape[-2:], mode="bilinear", align_corners=False), d


class _Stems(nn.Module):
    """Shallow conv stems for albedo (3 ch) and depth (1 ch), or pass-through."""

    def __init__(self, cfg: PFMConfig):
        super().__init__()
        if cfg.input_mode == "stem":
            self.albedo_stem = _stem(3, cfg.stem_width)
            self.depth_stem = _stem(1, cfg.stem_width)
            self.albedo_channels = self.depth_channels = cfg.stem_width
        else:
            self.albedo_stem = nn.Identity()
            self.depth_stem = nn.Identity()
            self.albedo_channels, self.depth_channels = 3, 1

    def embed(self, albedo: torch.Tensor, depth: torch.Tensor) -> tuple[SpatialFeature, SpatialFeature]:
        return (SpatialFeature(self.albedo_stem(albedo), "albedo"),
                SpatialFeature(self.depth_stem(depth), "depth"))


class PreFusionModule(_Stems):
    """Albedo recalibration, depth processing, alignment and SK-refined fusion."""

    def __init__(self, cfg: PFMConfig | None = None, image_size: int | None = None):
        cfg = cfg or PFMConfig()
        cfg.validate()
        super().__init__(cfg)
        self.cfg = cfg
        ca, cd = self.albedo_channels, self.depth_channels
        self.albedo_weight = DepthwiseSeparableConv(ca)
        self.albedo_bias = DepthwiseSeparableConv(ca)
        self.depth_path = DepthwiseSeparableConv(cd)
        self.project = nn.Conv2d(ca + cd, cfg.fusion_width, 1)
        self.sk = SKAttention(cfg.fusion_width, cfg.kernel_sizes, cfg.reduction_ratio,
                              min_spatial=image_size)

    def recalibrate_albedo(self, f: SpatialFeature) -> SpatialFeature:
        x = f.expect("albedo").values
        if x.shape[1] != self.albedo_channels:
            raise ConfigError(f"albedo feature has {x.shape[1]} channels, PFM expects {self.albedo_channels}")
        gate = 2 * torch.sigmoid(self.albedo_weight(x))
        return SpatialFeature(gate * x + self.albedo_bias(x), "albedo")

    def process_depth(self, f: SpatialFeature) -> SpatialFeature:
        x = f.expect("depth").values
        if x.shape[1] != self.depth_channels:
            raise ConfigError(f"depth feature has {x.shape[1]} channels, PFM expects {self.depth_channels}")
        return SpatialFeature(self.depth_path(x), "depth")

    def pre_fuse(self, a: SpatialFeature, d: SpatialFeature, return_weights: bool = False):
        a_x, d_x = align(a.expect("albedo").values, d.expect("depth").values, self.cfg.allow_resample)
        projected = self.project(torch.cat([a_x, d_x], dim=1))
        out = self.sk(projected, return_weights=return_weights)
        if return_weights:
            return SpatialFeature(out[0], "fused"), out[1]
        return SpatialFeature(out, "fused")

    def forward(self, albedo: torch.Tensor, depth: torch.Tensor) -> SpatialFeature:
        a, d = self.embed(albedo, depth)
        return self.pre_fuse(self.recalibrate_albedo(a), self.process_depth(d))


class ConcatProjectFusion(_Stems):
    """PFM-off substitute: stems, channel concat and a 1x1 projection only."""

    def __init__(self, cfg: PFMConfig | None = None, image_size: int | None = None):
        cfg = cfg or PFMConfig()
        cfg.validate()
        super().__init__(cfg)
        self.cfg = cfg
        self.project = nn.Conv2d(self.albedo_channels + self.depth_channels, cfg.fusion_width, 1)

    def forward(self, albedo: torch.Tensor, depth: torch.Tensor) -> SpatialFeature:
        a, d = self.embed(albedo, depth)
        a_x, d_x = align(a.values, d.values, self.cfg.allow_resample)
        return SpatialFeature(self.project(torch.cat([a_x, d_x], dim=1)), "fused")


def build_pfm(cfg: PFMConfig, image_size: int | None = None) -> nn.Module:
    return PreFusionModule(cfg, image_size) if cfg.enabled else ConcatProjectFusion(cfg, image_size)
