"""Backbones shared by the RGB and 3D streams.

Two families (EfficientNet-style inverted residuals and Xception-style
separable residuals), each in three tiers. ``tiny`` and ``small`` are
reduced-depth versions for CPU work; ``b4-class`` is the full-size
architecture (torchvision's EfficientNet-B4, or a complete Xception).
Every tier ends in a 1x1 head to ``output_dim`` channels, so the
interface does not depend on the tier.
"""
from __future__ import annotations

from pathlib import Path

import torch
from torch import nn

from .config import BackboneConfig
from .errors import ConfigError, InvalidInputError
from .features import GlobalFeature, SpatialFeature

EFFICIENTNET_B4_URL = "https://download.pytorch.org/models/efficientnet_b4_rwightman-23ab8bcd.pth"


def _gn(c: int) -> nn.GroupNorm:
    return nn.GroupNorm(max(1, min(8, c // 4)), c)


def _conv_norm_act(cin, cout, k=3, stride=1, groups=1, act=nn.SiLU):
    return nn.Sequential(nn.Conv2d(cin, cout, k, stride, k // 2, groups=groups, bias=False),
                         _gn(cout), act(inplace=True))


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int, squeeze: int):
        super().__init__()
        self.fc1 = nn.Conv2d(channels, max(1, squeeze), 1)
        self.fc2 = nn.Conv2d(max(1, squeeze), channels, 1)

    def forward(self, x):
        s = torch.relu(self.fc1(x.mean(dim=(2, 3), keepdim=True)))
        return x * torch.sigmoid(self.fc2(s))


class MBConv(nn.Module):
    """Inverted residual: expand, depthwise, squeeze-excite, project."""

    def __init__(self, cin: int, cout: int, expand: int, k: int, stride: int):
        super().__init__()
        mid = cin * expand
        layers = [] if expand == 1 else [_conv_norm_act(cin, mid, 1)]
        layers += [_conv_norm_act(mid, mid, k, stride, groups=mid), SqueezeExcite(mid, cin // 4),
                   nn.Conv2d(mid, cout, 1, bias=False), _gn(cout)]
        self.block = nn.Sequential(*layers)
        self.residual = stride == 1 and cin == cout

    def forward(self, x):
        out = self.block(x)
        return out + x if self.residual else out


class SeparableConv(nn.Sequential):
    def __init__(self, cin: int, cout: int, k: int = 3):
        super().__init__(nn.Conv2d(cin, cin, k, padding=k // 2, groups=cin, bias=False),
                         nn.Conv2d(cin, cout, 1, bias=False))


class XceptionBlock(nn.Module):
    """Separable-conv residual block; ``stride=2`` ends in a 3x3 max-pool."""

    def __init__(self, cin: int, cout: int, reps: int, stride: int = 1, norm=_gn,
                 start_with_relu: bool = True, grow_first: bool = True):
        super().__init__()
        layers = []
        c = cin
        for i in range(reps):
            target = cout if (grow_first and i == 0) or (not grow_first and i == reps - 1) else c
            if i > 0 or start_with_relu:
                layers.append(nn.ReLU(inplace=False))
            layers += [SeparableConv(c, target), norm(target)]
            c = target
        if stride != 1:
            layers.append(nn.MaxPool2d(3, stride, 1))
        self.body = nn.Sequential(*layers)
        self.skip = None
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), norm(cout))

    def forward(self, x):
        return self.body(x) + (x if self.skip is None else self.skip(x))


# (expand, kernel, stride, out_channels, repeats)
_EFFNET_TIERS = {
    "tiny": (16, [(1, 3, 1, 16, 1), (4, 3, 2, 24, 1), (4, 5, 2, 40, 1), (4, 3, 2, 64, 1)]),
    "small": (24, [(1, 3, 1, 24, 1), (4, 3, 2, 32, 2), (4, 5, 2, 48, 2), (4, 3, 2, 80, 2),
                   (4, 5, 1, 112, 2)]),
}
# (out_channels, repeats-per-block, blocks)
_XCEPTION_TIERS = {
    "tiny": (16, [(32, 2, 1), (64, 2, 1), (96, 2, 1)]),
    "small": (24, [(48, 2, 1), (96, 2, 1), (160, 2, 1), (160, 3, 2)]),
}


def _efficientnet_small(cin: int, tier: str) -> tuple[nn.Module, int, int]:
    stem_c, stages = _EFFNET_TIERS[tier]
    layers = [_conv_norm_act(cin, stem_c, 3, 2)]
    c = stem_c
    stride = 2
    for expand, k, s, cout, reps in stages:
        for r in range(reps):
            layers.append(MBConv(c, cout, expand, k, s if r == 0 else 1))
            c = cout
        stride *= s
    return nn.Sequential(*layers), c, stride


def _xception_small(cin: int, tier: str) -> tuple[nn.Module, int, int]:
    stem_c, stages = _XCEPTION_TIERS[tier]
    layers = [_conv_norm_act(cin, stem_c, 3, 2, act=nn.ReLU)]
    c = stem_c
    stride = 2
    for cout, reps, blocks in stages:
        for b in range(blocks):
            down = b == 0 and c != cout
            layers.append(XceptionBlock(c, cout, reps, 2 if down else 1))
            stride *= 2 if down else 1
            c = cout
    return nn.Sequential(*layers), c, stride


class Xception(nn.Module):
    """Full Xception feature extractor (entry, 8 middle blocks, exit), stride 32, 2048 ch."""

    def __init__(self, cin: int = 3):
        super().__init__()
        bn = nn.BatchNorm2d
        self.entry = nn.Sequential(
            nn.Conv2d(cin, 32, 3, 2, 0, bias=False), bn(32), nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, bias=False), bn(64), nn.ReLU(inplace=True),
            XceptionBlock(64, 128, 2, 2, bn, start_with_relu=False),
            XceptionBlock(128, 256, 2, 2, bn),
            XceptionBlock(256, 728, 2, 2, bn),
        )
        self.middle = nn.Sequential(*[XceptionBlock(728, 728, 3, 1, bn) for _ in range(8)])
        self.exit = nn.Sequential(
            XceptionBlock(728, 1024, 2, 2, bn, grow_first=False),
            SeparableConv(1024, 1536), bn(1536), nn.ReLU(inplace=True),
            SeparableConv(1536, 2048), bn(2048), nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.exit(self.middle(self.entry(x)))


def _efficientnet_b4(cin: int, cfg: BackboneConfig) -> tuple[nn.Module, int, int]:
    from torchvision.models import efficientnet_b4

    net = efficientnet_b4(weights=None)
    if cfg.pretrained:
        net.load_state_dict(_pretrained_state(cfg, EFFICIENTNET_B4_URL))
    features = net.features
    if cin != 3:
        # pretrained RGB filters do not transfer to other inputs; re-initialise the stem
        old = features[0][0]
        features[0][0] = nn.Conv2d(cin, old.out_channels, old.kernel_size, old.stride,
                                   old.padding, bias=False)
    return features, 1792, 32


def _xception_b4(cin: int, cfg: BackboneConfig) -> tuple[nn.Module, int, int]:
    net = Xception(cin)
    if cfg.pretrained:
        net.load_state_dict(_pretrained_state(cfg, None))
    return net, 2048, 32


def _pretrained_state(cfg: BackboneConfig, url: str | None) -> dict:
    if cfg.weights_path:
        path = Path(cfg.weights_path)
        if not path.is_file():
            raise ConfigError(f"backbone.weights_path {path} does not exist")
        return torch.load(path, map_location="cpu", weights_only=True)
    if url is None:
        raise ConfigError(f"backbone.pretrained=true for {cfg.family}/{cfg.tier} needs "
                          "backbone.weights_path (a state dict for this architecture)")
    try:
        return torch.hub.load_state_dict_from_url(url, map_location="cpu", progress=False)
    except Exception as exc:  # noqa: BLE001 - network/cache failures become startup errors
        raise ConfigError(f"cannot fetch pretrained weights from {url} ({exc}); download it "
                          "manually and set backbone.weights_path") from exc


class Backbone(nn.Module):
    """Feature trunk plus a 1x1 head to ``output_dim`` channels and global pooling."""

    def __init__(self, cfg: BackboneConfig, in_channels: int = 3, seed: int = 0, source: str = "rgb"):
        super().__init__()
        cfg.validate()
        if cfg.pretrained and cfg.tier != "b4-class" and not cfg.weights_path:
            raise ConfigError(f"no published weights for the {cfg.tier} tier; set "
                              "backbone.weights_path or backbone.pretrained=false")
        self.cfg = cfg
        self.in_channels = in_channels
        self.source = source
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            if cfg.tier == "b4-class":
                build = _efficientnet_b4 if cfg.family == "efficientnet" else _xception_b4
                self.trunk, trunk_c, self.stride = build(in_channels, cfg)
            else:
                build = _efficientnet_small if cfg.family == "efficientnet" else _xception_small
                self.trunk, trunk_c, self.stride = build(in_channels, cfg.tier)
                if cfg.pretrained:
                    self.trunk.load_state_dict(_pretrained_state(cfg, None))
            self.head = _conv_norm_act(trunk_c, cfg.output_dim, 1)

    @property
    def output_dim(self) -> int:
        return self.cfg.output_dim

    def forward(self, x: torch.Tensor) -> GlobalFeature:
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise InvalidInputError(f"backbone expects (B, {self.in_channels}, H, W), got {tuple(x.shape)}")
        if min(x.shape[-2:]) < self.stride:
            raise InvalidInputError(f"input {tuple(x.shape[-2:])} is below the backbone's stride "
                                    f"budget of {self.stride}px")
        spatial = self.head(self.trunk(x))
        return GlobalFeature(spatial.mean(dim=(2, 3)), self.source,
                             SpatialFeature(spatial, self.source))

    def extract(self, x: torch.Tensor | SpatialFeature) -> GlobalFeature:
        return self(x.values if isinstance(x, SpatialFeature) else x)


def build_backbone(cfg: BackboneConfig, in_channels: int = 3, seed: int = 0,
                   source: str = "rgb") -> Backbone:
    return Backbone(cfg, in_channels, seed, source)
