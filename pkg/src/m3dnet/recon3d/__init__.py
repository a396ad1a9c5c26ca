"""Self-supervised single-view face decomposition (depth, albedo, view, light)."""
from .losses import (
    ReconLossTerms,
    feature_loss,
    gaussian_nll_map,
    laplacian_nll_map,
    perceptual_loss,
    pixel_loss,
    symmetric_pixel_loss,
    total_recon_loss,
)
from .model import (
    GROUPS,
    ConfidencePair,
    FrozenRecon3D,
    Recon3D,
    ReconBundle,
    albedo_activation,
    depth_activation,
    light_from_raw,
    view_from_raw,
)
from .renderer import LightParams, ViewParams, depth_to_normals, render, shading

__all__ = [
    "GROUPS", "ConfidencePair", "FrozenRecon3D", "LightParams", "Recon3D", "ReconBundle",
    "ReconLossTerms", "ViewParams", "albedo_activation", "depth_activation", "depth_to_normals",
    "feature_loss", "gaussian_nll_map", "laplacian_nll_map", "light_from_raw", "perceptual_loss",
    "pixel_loss", "render", "shading", "symmetric_pixel_loss", "total_recon_loss", "view_from_raw",
]
