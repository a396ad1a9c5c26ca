"""Tagged feature containers passed between the detector's stages."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvalidInputError

SOURCES = ("albedo", "depth", "fused", "rgb", "recon")


@dataclass
class SpatialFeature:
    """A (B, C, h, w) feature map with a provenance tag."""

    values: torch.Tensor
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise InvalidInputError(f"unknown feature source {self.source!r}")
        if self.values.dim() != 4 or min(self.values.shape[1:]) <= 0:
            raise InvalidInputError(f"spatial feature must be (B, C, h, w) with C, h, w > 0, "
                                    f"got {tuple(self.values.shape)}")

    @property
    def channels(self) -> int:
        return int(self.values.shape[1])

    @property
    def hw(self) -> tuple[int, int]:
        return int(self.values.shape[2]), int(self.values.shape[3])

    def expect(self, source: str) -> "SpatialFeature":
        if self.source != source:
            raise InvalidInputError(f"expected a {source!r} feature, got {self.source!r}")
        return self


@dataclass
class GlobalFeature:
    """Pooled (B, D) vector, optionally with the last-stage spatial map it came from."""

    values: torch.Tensor
    source: str
    spatial: SpatialFeature | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise InvalidInputError(f"unknown feature source {self.source!r}")
        if self.values.dim() != 2:
            raise InvalidInputError(f"global feature must be (B, D), got {tuple(self.values.shape)}")

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])


def require_finite(x: torch.Tensor, what: str) -> torch.Tensor:
    if not bool(torch.isfinite(x).all()):
        raise InvalidInputError(f"{what} contains non-finite values")
    return x
