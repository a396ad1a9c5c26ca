"""Differentiable depth/albedo renderer.

A lightweight stand-in for a mesh rasterizer: the depth map is unprojected
through a pinhole camera, normals come from central differences of the
resulting point grid, shading is Lambertian, and the viewpoint change is
applied as a backward reprojection warp sampled bilinearly.

Conventions
-----------
* Camera at the origin looking down +z; pixel (u, v) with u along width.
* Normals and light directions live in a viewer-facing frame whose +z axis
  points back toward the camera, so a fronto-parallel surface has normal
  (0, 0, 1) and the neutral light direction is (0, 0, 1).
* The object rotates about the point (0, 0, 1), the nominal face centre.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from ..errors import InvalidInputError

ROTATION_CENTER_DEPTH = 1.0


@dataclass
class ViewParams:
    """Per-sample rigid pose: rotation (B, 3) radians and translation (B, 3)."""

    rotation: torch.Tensor
    translation: torch.Tensor

    @classmethod
    def identity(cls, batch: int, dtype=torch.float32, device=None) -> "ViewParams":
        z = torch.zeros(batch, 3, dtype=dtype, device=device)
        return cls(z, z.clone())

    def detach(self) -> "ViewParams":
        return ViewParams(self.rotation.detach(), self.translation.detach())


@dataclass
class LightParams:
    """Ambient/diffuse strengths (B,) and the x/y light components (B, 2)."""

    ambient: torch.Tensor
    diffuse: torch.Tensor
    direction_xy: torch.Tensor

    @property
    def direction(self) -> torch.Tensor:
        """Unit light direction (B, 3); z is filled in so the norm is one."""
        xy = self.direction_xy
        d = torch.cat([xy, torch.ones_like(xy[:, :1])], dim=1)
        return d / d.norm(dim=1, keepdim=True)

    @classmethod
    def neutral(cls, batch: int, ambient: float = 0.5, diffuse: float = 0.5,
                dtype=torch.float32, device=None) -> "LightParams":
        kw = dict(dtype=dtype, device=device)
        return cls(torch.full((batch,), ambient, **kw), torch.full((batch,), diffuse, **kw),
                   torch.zeros(batch, 2, **kw))

    def detach(self) -> "LightParams":
        return LightParams(self.ambient.detach(), self.diffuse.detach(), self.direction_xy.detach())


def focal_length(size: int, fov_deg: float) -> float:
    return ((size - 1) / 2.0) / math.tan(math.radians(fov_deg) / 2.0)


def _pixel_grid(h: int, w: int, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    v = torch.arange(h, dtype=like.dtype, device=like.device).view(1, h, 1).expand(1, h, w)
    u = torch.arange(w, dtype=like.dtype, device=like.device).view(1, 1, w).expand(1, h, w)
    return u, v


def depth_to_points(depth: torch.Tensor, fov_deg: float = 10.0) -> torch.Tensor:
    """Unproject a (B, 1, H, W) depth map to camera-space points (B, 3, H, W)."""
    _, _, h, w = depth.shape
    f = focal_length(w, fov_deg)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    u, v = _pixel_grid(h, w, depth)
    d = depth[:, 0]
    x = (u - cx) / f * d
    y = (v - cy) / f * d
    return torch.stack([x, y, d], dim=1)


def depth_to_normals(depth: torch.Tensor, fov_deg: float = 10.0) -> torch.Tensor:
    """Unit normals (B, 3, H, W) in the viewer-facing frame.

    Border pixels use one-sided differences (replicate padding). Where the
    cross product vanishes the normal falls back to (0, 0, 1).
    """
    pts = depth_to_points(depth, fov_deg)
    padded = F.pad(pts, (1, 1, 1, 1), mode="replicate")
    du = padded[:, :, 1:-1, 2:] - padded[:, :, 1:-1, :-2]
    dv = padded[:, :, 2:, 1:-1] - padded[:, :, :-2, 1:-1]
    n = torch.cross(dv, du, dim=1)
    n = torch.cat([n[:, :2], -n[:, 2:]], dim=1)
    norm = n.norm(dim=1, keepdim=True)
    facing = torch.zeros_like(n)
    facing[:, 2] = 1.0
    return torch.where(norm > 1e-12, n / norm.clamp_min(1e-12), facing)


def shading(normals: torch.Tensor, light: LightParams) -> torch.Tensor:
    """Lambertian shading map (B, 1, H, W): ambient + diffuse * max(0, <l, n>)."""
    l_dir = light.direction[:, :, None, None]
    cos = (normals * l_dir).sum(dim=1, keepdim=True).clamp_min(0.0)
    return light.ambient.view(-1, 1, 1, 1) + light.diffuse.view(-1, 1, 1, 1) * cos


def euler_to_matrix(rotation: torch.Tensor) -> torch.Tensor:
    """(B, 3) angles about x, y, z to rotation matrices R = Rz @ Ry @ Rx."""
    rx, ry, rz = rotation.unbind(dim=1)
    one, zero = torch.ones_like(rx), torch.zeros_like(rx)
    cx, sx = torch.cos(rx), torch.sin(rx)
    cy, sy = torch.cos(ry), torch.sin(ry)
    cz, sz = torch.cos(rz), torch.sin(rz)
    mx = torch.stack([one, zero, zero, zero, cx, -sx, zero, sx, cx], 1).view(-1, 3, 3)
    my = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy], 1).view(-1, 3, 3)
    mz = torch.stack([cz, -sz, zero, sz, cz, zero, zero, zero, one], 1).view(-1, 3, 3)
    return mz @ my @ mx


def reprojection_offsets(depth: torch.Tensor, view: ViewParams,
                         fov_deg: float = 10.0) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel offsets (B, H, W) mapping each posed pixel back into the canonical frame.

    The posed depth at a pixel is approximated by the canonical depth at the
    same pixel. The canonical point is ``R^T (P - c - t) + c``; the offset is
    written as ``(R^T - I)(P - c) - R^T t`` so the identity pose yields offsets
    that are exactly zero.
    """
    b, _, h, w = depth.shape
    f = focal_length(w, fov_deg)
    pts = depth_to_points(depth, fov_deg).flatten(2)  # B,3,N
    center = torch.zeros(1, 3, 1, dtype=depth.dtype, device=depth.device)
    center[0, 2, 0] = ROTATION_CENTER_DEPTH
    rt = euler_to_matrix(view.rotation).transpose(1, 2)
    eye = torch.eye(3, dtype=depth.dtype, device=depth.device)
    delta = (rt - eye) @ (pts - center) - rt @ view.translation.unsqueeze(2)
    x, y, z = pts.unbind(1)
    dx, dy, dz = delta.unbind(1)
    zc = z + dz
    if bool((zc <= 0).any()):
        raise InvalidInputError("view moves surface points behind the camera")
    du = f * ((x + dx) / zc - x / z)
    dv = f * ((y + dy) / zc - y / z)
    return du.view(b, h, w), dv.view(b, h, w)


def bilinear_sample(image: torch.Tensor, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Sample (B, C, H, W) at pixel coordinates (B, H, W) with border clamping.

    Exact (no blending) when the coordinates are integers.
    """
    b, c, h, w = image.shape
    x = x.clamp(0, w - 1)
    y = y.clamp(0, h - 1)
    x0 = x.detach().floor().clamp(max=w - 2 if w > 1 else 0)
    y0 = y.detach().floor().clamp(max=h - 2 if h > 1 else 0)
    wx = (x - x0).unsqueeze(1)
    wy = (y - y0).unsqueeze(1)
    x0l, y0l = x0.long(), y0.long()
    x1l = (x0l + 1).clamp(max=w - 1)
    y1l = (y0l + 1).clamp(max=h - 1)
    flat = image.flatten(2)

    def gather(yy, xx):
        idx = (yy * w + xx).flatten(1).unsqueeze(1).expand(b, c, -1)
        return flat.gather(2, idx).view(b, c, h, w)

    top = gather(y0l, x0l) * (1 - wx) + gather(y0l, x1l) * wx
    bottom = gather(y1l, x0l) * (1 - wx) + gather(y1l, x1l) * wx
    return top * (1 - wy) + bottom * wy


def warp(image: torch.Tensor, depth: torch.Tensor, view: ViewParams,
         fov_deg: float = 10.0) -> torch.Tensor:
    """Re-render a canonical-frame image under ``view``."""
    _, _, h, w = image.shape
    du, dv = reprojection_offsets(depth, view, fov_deg)
    u, v = _pixel_grid(h, w, depth)
    return bilinear_sample(image, u + du, v + dv)


def render(depth: torch.Tensor, albedo: torch.Tensor, view: ViewParams, light: LightParams,
           fov_deg: float = 10.0) -> torch.Tensor:
    """Render (B, 3, H, W) images in [0, 1] from depth (B, 1, H, W) and albedo (B, 3, H, W)."""
    if depth.dim() != 4 or depth.shape[1] != 1:
        raise InvalidInputError(f"depth must be (B, 1, H, W), got {tuple(depth.shape)}")
    if albedo.dim() != 4 or albedo.shape[1] != 3:
        raise InvalidInputError(f"albedo must be (B, 3, H, W), got {tuple(albedo.shape)}")
    if depth.shape[-2:] != albedo.shape[-2:] or depth.shape[0] != albedo.shape[0]:
        raise InvalidInputError(
            f"depth {tuple(depth.shape)} and albedo {tuple(albedo.shape)} disagree on batch/size")
    normals = depth_to_normals(depth, fov_deg)
    canonical = (shading(normals, light) * albedo).clamp(0.0, 1.0)
    return warp(canonical, depth, view, fov_deg)
