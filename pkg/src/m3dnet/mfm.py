"""Multimodal fusion of the RGB and 3D streams with bidirectional cross-attention.

Both streams are projected to token sequences of width ``d``. Cross-attention
runs in both directions, the two results are concatenated per token along
the feature axis, refined by self-attention, mean-pooled, and mapped back to
``d`` by a linear layer followed by layer normalization. No positional
encodings are used, so attention is permutation-equivariant in its queries
and invariant to the order of keys/values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .config import AttentionConfig
from .errors import ConfigError, InvalidInputError
from .features import GlobalFeature, SpatialFeature


@dataclass
class TokenSequence:
    tokens: torch.Tensor  # (B, T, d)
    modality: str

    @property
    def length(self) -> int:
        return int(self.tokens.shape[1])


@dataclass
class FusedFeature:
    values: torch.Tensor  # (B, d), after the layer-norm affine
    normalized: torch.Tensor  # (B, d), before the affine
    run_id: str = ""


class MultiHeadAttention(nn.Module):
    """Scaled dot-product attention with ``heads`` heads and separate q/k/v/out maps."""

    def __init__(self, width: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if heads < 1 or width % heads:
            raise ConfigError(f"attention width {width} is not divisible by {heads} heads")
        self.width, self.heads = width, heads
        self.head_dim = width // heads
        self.q_proj = nn.Linear(width, width)
        self.k_proj = nn.Linear(width, width)
        self.v_proj = nn.Linear(width, width)
        self.out_proj = nn.Linear(width, width)
        self.dropout = nn.Dropout(dropout)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.head_dim).transpose(1, 2)

    def forward(self, q: torch.Tensor, kv: torch.Tensor, return_weights: bool = False):
        if q.shape[-1] != self.width or kv.shape[-1] != self.width:
            raise InvalidInputError(f"attention width is {self.width}, got q {q.shape[-1]} / kv {kv.shape[-1]}")
        if kv.shape[1] == 0:
            raise InvalidInputError("cannot attend over an empty key/value sequence")
        qh = self._split(self.q_proj(q))
        kh = self._split(self.k_proj(kv))
        vh = self._split(self.v_proj(kv))
        scores = qh @ kh.transpose(-2, -1) / math.sqrt(self.head_dim)
        weights = torch.softmax(scores, dim=-1)  # (B, heads, Tq, Tk)
        ctx = self.dropout(weights) @ vh
        ctx = ctx.transpose(1, 2).reshape(q.shape[0], q.shape[1], self.width)
        out = self.out_proj(ctx)
        return (out, weights) if return_weights else out


def layer_norm_parts(x: torch.Tensor, norm: nn.LayerNorm) -> tuple[torch.Tensor, torch.Tensor]:
    """(pre-affine normalized, post-affine) outputs of ``norm``."""
    z = F.layer_norm(x, norm.normalized_shape, eps=norm.eps)
    return z, z * norm.weight + norm.bias


class _Projections(nn.Module):
    def __init__(self, in_dim: int, width: int):
        super().__init__()
        self.in_dim = in_dim
        self.proj_rgb = nn.Linear(in_dim, width)
        self.proj_3d = nn.Linear(in_dim, width)

    def project(self, f: GlobalFeature | SpatialFeature | torch.Tensor, modality: str) -> TokenSequence:
        """Spatial maps become h*w tokens (row-major), vectors a single token."""
        if isinstance(f, GlobalFeature):
            x = f.spatial.values if f.spatial is not None else f.values
        elif isinstance(f, SpatialFeature):
            x = f.values
        else:
            x = f
        if x.dim() == 4:
            tokens = x.flatten(2).transpose(1, 2)
        elif x.dim() == 2:
            tokens = x[:, None, :]
        else:
            raise InvalidInputError(f"cannot tokenise a tensor of shape {tuple(x.shape)}")
        if tokens.shape[-1] != self.in_dim:
            raise ConfigError(f"feature width {tokens.shape[-1]} does not match the configured {self.in_dim}")
        if not bool(torch.isfinite(tokens).all()):
            raise InvalidInputError(f"{modality} features contain non-finite values")
        layer = self.proj_rgb if modality == "rgb" else self.proj_3d
        return TokenSequence(layer(tokens), modality)

    @staticmethod
    def _check_modalities(rgb, recon) -> None:
        if getattr(rgb, "source", "rgb") == getattr(recon, "source", "recon"):
            raise InvalidInputError("fuse_multimodal needs one RGB and one 3D feature, "
                                    f"got two {getattr(rgb, 'source', '?')!r} inputs")


class MultimodalFusion(_Projections):
    """Projection, dual cross-attention, concat, self-attention, linear + layer norm."""

    def __init__(self, in_dim: int, cfg: AttentionConfig | None = None):
        cfg = cfg or AttentionConfig()
        cfg.validate()
        super().__init__(in_dim, cfg.width)
        self.cfg = cfg
        d = cfg.width
        self.cross_rgb_to_3d = MultiHeadAttention(d, cfg.heads, cfg.dropout)
        self.cross_3d_to_rgb = MultiHeadAttention(d, cfg.heads, cfg.dropout)
        self.self_attn = MultiHeadAttention(2 * d, cfg.heads, cfg.dropout)
        self.fuse_linear = nn.Linear(2 * d, d)
        self.norm = nn.LayerNorm(d, eps=cfg.norm_eps)

    def cross_attend(self, q: TokenSequence, kv: TokenSequence, return_weights: bool = False):
        """``kv``'s modality flows into ``q``'s tokens."""
        layer = self.cross_rgb_to_3d if kv.modality == "rgb" else self.cross_3d_to_rgb
        return layer(q.tokens, kv.tokens, return_weights)

    def self_attend(self, t: torch.Tensor, return_weights: bool = False):
        return self.self_attn(t, t, return_weights)

    def forward(self, rgb: GlobalFeature, recon: GlobalFeature) -> FusedFeature:
        self._check_modalities(rgb, recon)
        t_rgb = self.project(rgb, "rgb")
        t_3d = self.project(recon, "recon")
        if t_rgb.length != t_3d.length:
            raise InvalidInputError(f"token counts differ (rgb {t_rgb.length}, 3d {t_3d.length}); "
                                    "both streams must share a grid for feature-axis concatenation")
        a = self.cross_attend(t_3d, t_rgb)  # RGB -> 3D
        b = self.cross_attend(t_rgb, t_3d)  # 3D -> RGB
        refined = self.self_attend(torch.cat([a, b], dim=-1))
        z, out = layer_norm_parts(self.fuse_linear(refined.mean(dim=1)), self.norm)
        return FusedFeature(out, z)


class ConcatLinearFusion(_Projections):
    """Attention-off substitute: projections, mean-pool, concat, linear + layer norm."""

    def __init__(self, in_dim: int, cfg: AttentionConfig | None = None):
        cfg = cfg or AttentionConfig()
        cfg.validate()
        super().__init__(in_dim, cfg.width)
        self.cfg = cfg
        self.concat_linear = nn.Linear(2 * cfg.width, cfg.width)
        self.norm = nn.LayerNorm(cfg.width, eps=cfg.norm_eps)

    def forward(self, rgb: GlobalFeature, recon: GlobalFeature) -> FusedFeature:
        self._check_modalities(rgb, recon)
        a = self.project(rgb, "rgb").tokens.mean(dim=1)
        b = self.project(recon, "recon").tokens.mean(dim=1)
        z, out = layer_norm_parts(self.concat_linear(torch.cat([a, b], dim=-1)), self.norm)
        return FusedFeature(out, z)


def build_mfm(in_dim: int, cfg: AttentionConfig) -> nn.Module:
    return MultimodalFusion(in_dim, cfg) if cfg.attention_enabled else ConcatLinearFusion(in_dim, cfg)
