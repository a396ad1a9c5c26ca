"""Confidence-weighted reconstruction objectives.

Both photometric terms are negative log-likelihoods with a predicted
per-location scale ``sigma``:

* pixel term, Laplacian:  sqrt(2) * l1 / sigma + ln(sqrt(2) * sigma)
* feature term, Gaussian: l2^2 / (2 sigma^2) + ln(sqrt(2 pi) * sigma)

``l1`` is the channel-mean absolute difference at a pixel and ``l2^2`` the
channel-mean squared difference at a feature cell. Both maps are averaged
over all locations (and the batch).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from ..errors import InvalidInputError

SQRT2 = math.sqrt(2.0)
LOG_SQRT2 = math.log(SQRT2)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _batched(*tensors: torch.Tensor) -> list[torch.Tensor]:
    return [t.unsqueeze(0) if t.dim() == 3 else t for t in tensors]


def _check_sigma(sigma: torch.Tensor, name: str = "sigma") -> None:
    if not bool((sigma > 0).all()):
        raise InvalidInputError(f"{name} must be strictly positive everywhere")


def _check_pair(recon: torch.Tensor, orig: torch.Tensor, sigma: torch.Tensor) -> None:
    if recon.shape != orig.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(recon.shape)} vs {tuple(orig.shape)}")
    if sigma.dim() != 4 or sigma.shape[1] != 1:
        raise InvalidInputError(f"sigma must have one channel, got {tuple(sigma.shape)}")
    if sigma.shape[0] != recon.shape[0] or sigma.shape[-2:] != recon.shape[-2:]:
        raise InvalidInputError(
            f"sigma {tuple(sigma.shape)} does not match input grid {tuple(recon.shape)}")


def laplacian_nll_map(recon: torch.Tensor, orig: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Per-pixel Laplacian NLL, shape (B, 1, H, W)."""
    recon, orig, sigma = _batched(recon, orig, sigma)
    _check_pair(recon, orig, sigma)
    _check_sigma(sigma)
    l1 = (recon - orig).abs().mean(dim=1, keepdim=True)
    return SQRT2 * l1 / sigma + torch.log(sigma) + LOG_SQRT2


def pixel_loss(recon: torch.Tensor, orig: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Mean Laplacian NLL between a reconstruction and the original image."""
    return laplacian_nll_map(recon, orig, sigma).mean()


def gaussian_nll_map(feat_recon: torch.Tensor, feat_orig: torch.Tensor,
                     sigma: torch.Tensor) -> torch.Tensor:
    """Per-cell Gaussian NLL on feature maps, shape (B, 1, h, w)."""
    feat_recon, feat_orig, sigma = _batched(feat_recon, feat_orig, sigma)
    _check_pair(feat_recon, feat_orig, sigma)
    _check_sigma(sigma, "sigma_k")
    sq = (feat_recon - feat_orig).pow(2).mean(dim=1, keepdim=True)
    return sq / (2 * sigma.pow(2)) + torch.log(sigma) + LOG_SQRT_2PI


def feature_loss(feat_recon: torch.Tensor, feat_orig: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    return gaussian_nll_map(feat_recon, feat_orig, sigma).mean()


def perceptual_loss(recon: torch.Tensor, orig: torch.Tensor, sigma_k: torch.Tensor,
                    extractor: nn.Module) -> torch.Tensor:
    """Gaussian NLL between frozen-extractor features of ``recon`` and ``orig``."""
    recon, orig = _batched(recon, orig)
    return feature_loss(extractor(recon), extractor(orig), sigma_k)


def symmetric_pixel_loss(recon: torch.Tensor, recon_flip: torch.Tensor, orig: torch.Tensor,
                         sigma_pixel: torch.Tensor, lambda_f: float) -> torch.Tensor:
    """Original-view term plus ``lambda_f`` times the flipped-reconstruction term.

    ``sigma_pixel`` carries two channels: 0 scores ``recon``, 1 scores ``recon_flip``.
    """
    if lambda_f < 0:
        raise InvalidInputError("lambda_f must be >= 0")
    (sigma_pixel,) = _batched(sigma_pixel)
    if sigma_pixel.shape[1] != 2:
        raise InvalidInputError(f"sigma_pixel needs 2 channels, got {sigma_pixel.shape[1]}")
    loss = pixel_loss(recon, orig, sigma_pixel[:, :1])
    return loss + lambda_f * pixel_loss(recon_flip, orig, sigma_pixel[:, 1:])


@dataclass
class ReconLossTerms:
    l_pixel: torch.Tensor
    l_perc: torch.Tensor
    l_rec: torch.Tensor
    lambda_f: float
    lambda_p: float

    def as_floats(self) -> dict[str, float]:
        return {"l_pixel": float(self.l_pixel), "l_perc": float(self.l_perc),
                "l_rec": float(self.l_rec), "lambda_f": self.lambda_f, "lambda_p": self.lambda_p}


def total_recon_loss(l_pixel: torch.Tensor, l_perc: torch.Tensor, lambda_f: float,
                     lambda_p: float) -> ReconLossTerms:
    """Combine the symmetric pixel term and the perceptual term."""
    l_pixel = torch.as_tensor(l_pixel)
    l_perc = torch.as_tensor(l_perc)
    return ReconLossTerms(l_pixel, l_perc, l_pixel + lambda_p * l_perc, lambda_f, lambda_p)
