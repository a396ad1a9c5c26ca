"""Training-time augmentation: flip, rotation, blur, brightness.

Randomness is drawn from ``numpy.random.default_rng([seed, index])`` so a
given (seed, sample index) pair always produces the same image.
"""
from __future__ import annotations

import numpy as np
import torch
import torchvision.transforms.functional as TF

from ..config import AugmentConfig


def hflip(image: torch.Tensor) -> torch.Tensor:
    return image.flip(-1)


def rotate(image: torch.Tensor, degrees: float) -> torch.Tensor:
    if degrees == 0:
        return image.clone()
    return TF.rotate(image, float(degrees), interpolation=TF.InterpolationMode.BILINEAR)


def blur(image: torch.Tensor, sigma: float) -> torch.Tensor:
    k = max(3, 2 * int(round(2 * sigma)) + 1)
    return TF.gaussian_blur(image, [k, k], [sigma, sigma])


def adjust_brightness(image: torch.Tensor, delta: float) -> torch.Tensor:
    return (image + delta).clamp(0.0, 1.0)


def augment(image: torch.Tensor, cfg: AugmentConfig, index: int) -> torch.Tensor:
    """Apply the configured random augmentations to one (3, H, W) image."""
    rng = np.random.default_rng([cfg.seed, index])
    flip_u, angle_u, blur_u, sigma_u, bright_u = rng.random(5)
    out = image
    if flip_u < cfg.flip_prob:
        out = hflip(out)
    if cfg.rotate_max_deg > 0:
        out = rotate(out, (2 * angle_u - 1) * cfg.rotate_max_deg)
    if blur_u < cfg.blur_prob:
        out = blur(out, 0.5 + sigma_u)
    if cfg.brightness_delta > 0:
        out = adjust_brightness(out, (2 * bright_u - 1) * cfg.brightness_delta)
    return out.clamp(0.0, 1.0)
