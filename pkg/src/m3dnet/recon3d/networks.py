from __future__ import annotations

from pathlib import Path

import torch
from torch import nn
import torch.nn.functional as F

from ..errors import ConfigError

VGG16_URL = "https://download.pytorch.org/models/vgg16-397923af.pth"
STRIDE = 16  # four stride-2 stages


def _norm(c: int) -> nn.GroupNorm:
    return nn.GroupNorm(max(1, min(8, c // 4)), c)


def _down(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.Conv2d(cin, cout, 4, stride=2, padding=1, bias=False),
                         _norm(cout), nn.LeakyReLU(0.2, inplace=True))


def _up(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(nn.ConvTranspose2d(cin, cout, 4, stride=2, padding=1, bias=False),
                         _norm(cout), nn.ReLU(inplace=True))


class Encoder(nn.Module):
    """Four stride-2 blocks, then a valid conv collapsing the S/16 grid to a 1x1 code."""

    def __init__(self, cin: int, width: int, image_size: int = 64, code: bool = True):
        super().__init__()
        w = width
        k = image_size // STRIDE
        layers = [_down(cin, w), _down(w, 2 * w), _down(2 * w, 4 * w), _down(4 * w, 8 * w)]
        if code:
            layers += [nn.Conv2d(8 * w, 8 * w, k), nn.LeakyReLU(0.2, inplace=True)]
        self.blocks = nn.Sequential(*layers)

    def forward(self, x):
        return self.blocks(x)


class EncoderDecoder(nn.Module):
    """Conv encoder / transposed-conv decoder returning a raw (pre-activation) map."""

    def __init__(self, cin: int, cout: int, width: int = 16, image_size: int = 64):
        super().__init__()
        w = width
        k = image_size // STRIDE
        self.encoder = Encoder(cin, w, image_size)
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(8 * w, 8 * w, k), nn.ReLU(inplace=True),
            _up(8 * w, 4 * w), _up(4 * w, 2 * w), _up(2 * w, w), _up(w, w),
            nn.Conv2d(w, w, 3, padding=1), nn.ReLU(inplace=True),
        )
        self.head = nn.Conv2d(w, cout, 5, padding=2)

    def forward(self, x):
        return self.head(self.decoder(self.encoder(x)))


class ConfidenceNet(nn.Module):
    """Raw confidence maps at full resolution and at the feature-extractor grid.

    Returns (B, 2, H, W) and (B, 2, H/4, W/4) pre-activation maps; the caller
    applies the positivity transform and any grid resizing.
    """

    def __init__(self, cin: int = 3, width: int = 16, image_size: int = 64):
        super().__init__()
        w = width
        k = image_size // STRIDE
        self.encoder = Encoder(cin, w, image_size)
        self.up_coarse = nn.Sequential(nn.ConvTranspose2d(8 * w, 8 * w, k), nn.ReLU(inplace=True),
                                       _up(8 * w, 4 * w), _up(4 * w, 2 * w))
        self.coarse_head = nn.Conv2d(2 * w, 2, 3, padding=1)
        self.up_fine = nn.Sequential(_up(2 * w, w), _up(w, w))
        self.fine_head = nn.Conv2d(w, 2, 5, padding=2)

    def forward(self, x):
        coarse = self.up_coarse(self.encoder(x))
        return self.fine_head(self.up_fine(coarse)), self.coarse_head(coarse)


class ViewLightNet(nn.Module):
    """Shared encoder regressing 6 view and 4 light values (raw, zero-centred)."""

    def __init__(self, cin: int = 3, width: int = 16, image_size: int = 64):
        super().__init__()
        self.encoder = Encoder(cin, width, image_size)
        self.fc = nn.Linear(8 * width, 10)
        nn.init.normal_(self.fc.weight, std=1e-3)
        nn.init.zeros_(self.fc.bias)

    def forward(self, x):
        h = self.encoder(x).mean(dim=(2, 3))
        out = self.fc(h)
        return out[:, :6], out[:, 6:]


class RandomFeatureExtractor(nn.Module):
    """VGG16-shaped conv stack up to relu3_3 with fixed random weights.

    Stride 4, like relu3_3. Weights are drawn from ``seed`` so every build is
    identical without any download.
    """

    def __init__(self, width: int = 16, seed: int = 0):
        super().__init__()
        w = width
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.features = nn.Sequential(
                nn.Conv2d(3, w, 3, padding=1), nn.ReLU(),
                nn.Conv2d(w, w, 3, padding=1), nn.ReLU(),
                nn.MaxPool2d(2),
                nn.Conv2d(w, 2 * w, 3, padding=1), nn.ReLU(),
                nn.Conv2d(2 * w, 2 * w, 3, padding=1), nn.ReLU(),
                nn.MaxPool2d(2),
                nn.Conv2d(2 * w, 4 * w, 3, padding=1), nn.ReLU(),
                nn.Conv2d(4 * w, 4 * w, 3, padding=1), nn.ReLU(),
                nn.Conv2d(4 * w, 4 * w, 3, padding=1), nn.ReLU(),
            )
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        return self.features(x * 2 - 1)


class VGGRelu33(nn.Module):
    """Pretrained VGG16 truncated at relu3_3, loaded from a local state dict."""

    MEAN = (0.485, 0.456, 0.406)
    STD = (0.229, 0.224, 0.225)

    def __init__(self, weights_path: str):
        super().__init__()
        from torchvision.models import vgg16

        path = Path(weights_path) if weights_path else None
        if path is None or not path.is_file():
            raise ConfigError(
                "recon.perceptual=vgg16 needs recon.perceptual_weights pointing at a torchvision "
                f"VGG16 state dict; fetch it from {VGG16_URL}")
        net = vgg16(weights=None)
        try:
            net.load_state_dict(torch.load(path, map_location="cpu", weights_only=True))
        except Exception as exc:  # noqa: BLE001 - surfaced as a startup error
            raise ConfigError(f"cannot load VGG16 weights from {path}: {exc}") from exc
        self.features = net.features[:16]
        self.register_buffer("mean", torch.tensor(self.MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(self.STD).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        return self.features((x - self.mean) / self.std)


def build_extractor(kind: str, width: int = 16, seed: int = 0, weights_path: str = "") -> nn.Module:
    if kind == "random":
        return RandomFeatureExtractor(width, seed)
    if kind == "vgg16":
        return VGGRelu33(weights_path)
    raise ConfigError(f"unknown perceptual extractor {kind!r}")


def extractor_grid(extractor: nn.Module, image_size: int) -> tuple[int, int]:
    """Spatial dims of the extractor output for a square input."""
    probe_dtype = next(extractor.buffers(), next(extractor.parameters())).dtype
    with torch.no_grad():
        out = extractor(torch.zeros(1, 3, image_size, image_size, dtype=probe_dtype))
    return int(out.shape[-2]), int(out.shape[-1])


def resize_to(x: torch.Tensor, size: tuple[int, int]) -> torch.Tensor:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)
