from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from ..errors import ImageDecodeError


def resize(image: torch.Tensor, size: int) -> torch.Tensor:
    """Plain bilinear resize (half-pixel centres, no antialiasing) of (C, H, W) or (B, C, H, W)."""
    batched = image.dim() == 4
    x = image if batched else image.unsqueeze(0)
    if tuple(x.shape[-2:]) != (size, size):
        x = F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)
    return x if batched else x[0]


def preprocess(path: str | Path, size: int = 64) -> torch.Tensor:
    """Decode an image file to a (3, size, size) float32 tensor in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise ImageDecodeError(f"cannot decode image {path}: {exc}") from exc
    x = torch.from_numpy(arr.copy()).permute(2, 0, 1).contiguous()
    return resize(x, size).clamp(0.0, 1.0)


def save_png(image: torch.Tensor, path: str | Path) -> None:
    arr = (image.detach().clamp(0, 1).permute(1, 2, 0).cpu().numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)
