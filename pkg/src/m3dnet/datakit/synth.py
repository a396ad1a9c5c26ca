"""Procedural synthetic faces with ground-truth depth and albedo.

Real samples are ellipsoidal heads with a textured albedo, rendered through
the same differentiable renderer used for reconstruction (identity view,
light confined to the vertical plane). Depth, albedo and therefore the
image are exactly left-right symmetric. Fake samples are real samples with
a local, one-sided manipulation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from ..errors import ConfigError
from ..recon3d.renderer import LightParams, ViewParams, bilinear_sample, render
from .dataset import FaceSet
from .images import save_png
from .manifest import ManifestEntry, write_manifest
from .sidecar import write_sidecar

TAMPER_KINDS = ("region_paste", "local_warp")
BACKGROUND_DEPTH = 1.06


@dataclass
class SynthFaceSpec:
    count: int
    image_size: int = 64
    tamper_kind: str = "region_paste"
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15)
    dataset_id: str = "synth"

    def validate(self) -> None:
        if self.count < 2 or self.count % 2:
            raise ConfigError(f"synthetic count must be even and >= 2, got {self.count}")
        if self.image_size < 16 or self.image_size % 16:
            raise ConfigError("synthetic image_size must be a multiple of 16")
        if self.tamper_kind not in TAMPER_KINDS:
            raise ConfigError(f"tamper_kind must be one of {TAMPER_KINDS}, got {self.tamper_kind!r}")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ConfigError("split_fractions must be non-negative and sum to 1")


@dataclass
class SynthDataset(FaceSet):
    depth: dict[int, torch.Tensor] = field(default_factory=dict)
    albedo: dict[int, torch.Tensor] = field(default_factory=dict)
    light: dict[int, tuple[float, float, float]] = field(default_factory=dict)
    source: dict[int, int] = field(default_factory=dict)
    tamper_mask: dict[int, torch.Tensor] = field(default_factory=dict)

    def write(self, out_dir: str | Path, manifest_name: str = "manifest.csv") -> Path:
        """Write PNG images, ``.m3ds`` ground-truth sidecars for reals, and a manifest."""
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        entries = []
        for i in range(len(self)):
            name = f"{self.ids[i]}.png"
            save_png(self.images[i], out / "images" / name)
            if i in self.depth:
                write_sidecar(out / "images" / f"{self.ids[i]}.m3ds",
                              self.depth[i].numpy(), self.albedo[i].numpy())
            label = "fake" if int(self.labels[i]) else "real"
            entries.append(ManifestEntry(out / "images" / name, label, self.splits[i],
                                         self.dataset_ids[i]))
        manifest = out / manifest_name
        write_manifest(manifest, entries)
        return manifest


def _symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a[..., ::-1])


def _coords(n: int) -> tuple[np.ndarray, np.ndarray]:
    c = (n - 1) / 2.0
    t = (np.arange(n) - c) / c
    return np.meshgrid(t, t, indexing="xy")  # x varies along columns


def _blob(x, y, cx, cy, sx, sy):
    return np.exp(-(((x - cx) / sx) ** 2 + ((y - cy) / sy) ** 2))


def face_geometry(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric depth (1, n, n) and albedo (3, n, n) for one procedural head."""
    x, y = _coords(n)
    ax, by = rng.uniform(0.5, 0.68), rng.uniform(0.68, 0.85)
    cy = rng.uniform(-0.06, 0.06)
    amp = rng.uniform(0.08, 0.12)
    r2 = (x / ax) ** 2 + ((y - cy) / by) ** 2
    inside = np.clip(1.0 - r2, 0.0, None)
    bulge = np.sqrt(inside)
    eye_y = cy - rng.uniform(0.12, 0.2)
    eye_x = rng.uniform(0.2, 0.3)
    nose = rng.uniform(0.015, 0.03) * _blob(x, y, 0.0, cy + 0.05, 0.07, 0.15)
    sockets = rng.uniform(0.005, 0.015) * (_blob(x, y, eye_x, eye_y, 0.1, 0.07)
                                           + _blob(x, y, -eye_x, eye_y, 0.1, 0.07))
    depth = BACKGROUND_DEPTH - amp * bulge - (nose - sockets) * (inside > 0)
    depth = _symmetrize(np.clip(depth, 0.91, 1.09))

    skin = np.array([rng.uniform(0.6, 0.85), rng.uniform(0.45, 0.65), rng.uniform(0.35, 0.55)])
    bg = np.full(3, rng.uniform(0.15, 0.45)) + rng.uniform(-0.05, 0.05, size=3)
    mask = (r2 < 1.0).astype(float)
    soft = gaussian_filter(mask, 1.0)
    texture = gaussian_filter(rng.normal(size=(n, n)), 2.0)
    texture = 0.08 * texture / (np.abs(texture).max() + 1e-12)
    eyes = np.clip(_blob(x, y, eye_x, eye_y, 0.07, 0.04) + _blob(x, y, -eye_x, eye_y, 0.07, 0.04), 0, 1)
    brows = np.clip(_blob(x, y, eye_x, eye_y - 0.12, 0.1, 0.025)
                    + _blob(x, y, -eye_x, eye_y - 0.12, 0.1, 0.025), 0, 1)
    mouth = _blob(x, y, 0.0, cy + rng.uniform(0.3, 0.4), rng.uniform(0.12, 0.2), 0.04)
    albedo = np.empty((3, n, n))
    lip = np.array([0.6, 0.2, 0.2])
    for c in range(3):
        face = skin[c] + texture
        face = face * (1 - 0.8 * eyes) * (1 - 0.6 * brows)
        face = face * (1 - mouth) + lip[c] * mouth
        albedo[c] = soft * face + (1 - soft) * bg[c]
    albedo = _symmetrize(np.clip(albedo, 0.02, 0.98))
    return depth[None].astype(np.float32), albedo.astype(np.float32)


def _paste(image: torch.Tensor, donor: torch.Tensor, rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    n = image.shape[-1]
    size = int(rng.integers(n // 5, n // 3))
    side = rng.choice([-1, 1])
    cx = n // 2 + side * int(rng.integers(n // 8, n // 4))
    cy = int(rng.integers(n // 3, 2 * n // 3))
    x0 = int(np.clip(cx - size // 2, 0, n - size))
    y0 = int(np.clip(cy - size // 2, 0, n - size))
    # donor patch comes from a horizontally shifted location so it never matches the source
    dx = int(np.clip(x0 + side * size // 2, 0, n - size))
    out = image.clone()
    out[:, y0:y0 + size, x0:x0 + size] = donor[:, y0:y0 + size, dx:dx + size]
    mask = torch.zeros(n, n, dtype=torch.bool)
    mask[y0:y0 + size, x0:x0 + size] = True
    return out, mask


def _local_warp(image: torch.Tensor, rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    n = image.shape[-1]
    side = rng.choice([-1, 1])
    cx = (n - 1) / 2 + side * rng.uniform(n / 8, n / 4)
    cy = rng.uniform(n / 3, 2 * n / 3)
    radius = rng.uniform(n / 8, n / 5)
    strength = rng.uniform(0.3, 0.5)
    v, u = torch.meshgrid(torch.arange(n, dtype=torch.float32), torch.arange(n, dtype=torch.float32),
                          indexing="ij")
    du, dv = u - cx, v - cy
    r = torch.sqrt(du ** 2 + dv ** 2)
    mask = r < radius
    # pinch: sample from farther out near the centre; falls to zero at the rim
    scale = torch.where(mask, strength * (1 - r / radius) ** 2, torch.zeros_like(r))
    src_u = torch.where(mask, u + du * scale, u)
    src_v = torch.where(mask, v + dv * scale, v)
    out = bilinear_sample(image[None], src_u[None], src_v[None])[0]
    out = torch.where(mask[None], out, image)
    return out, mask


def synth_faces(spec: SynthFaceSpec) -> SynthDataset:
    """Generate ``count // 2`` real faces and one tampered fake per real."""
    spec.validate()
    n_real = spec.count // 2
    n = spec.image_size
    depths, albedos, lights = [], [], []
    for i in range(n_real):
        rng = np.random.default_rng([spec.seed, i])
        d, a = face_geometry(rng, n)
        lights.append((rng.uniform(0.1, 0.2), rng.uniform(0.7, 0.9), rng.uniform(-0.8, 0.8)))
        depths.append(torch.from_numpy(d))
        albedos.append(torch.from_numpy(a))
    depth = torch.stack(depths)
    albedo = torch.stack(albedos)
    light = LightParams(torch.tensor([l[0] for l in lights], dtype=torch.float32),
                        torch.tensor([l[1] for l in lights], dtype=torch.float32),
                        torch.tensor([[0.0, l[2]] for l in lights], dtype=torch.float32))
    with torch.no_grad():
        reals = render(depth, albedo, ViewParams.identity(n_real), light)

    fakes, masks, sources = [], [], []
    for i in range(n_real):
        rng = np.random.default_rng([spec.seed, n_real + i, 7])
        if spec.tamper_kind == "region_paste":
            donor = reals[(i + 1 + int(rng.integers(0, max(1, n_real - 1)))) % n_real] if n_real > 1 else reals[i].flip(-1)
            fake, mask = _paste(reals[i], donor, rng)
        else:
            fake, mask = _local_warp(reals[i], rng)
        fakes.append(fake)
        masks.append(mask)
        sources.append(i)

    split_rng = np.random.default_rng([spec.seed, 99])
    order = split_rng.permutation(n_real)
    n_train = int(round(spec.split_fractions[0] * n_real))
    n_val = int(round(spec.split_fractions[1] * n_real))
    pair_split = {}
    for rank, idx in enumerate(order):
        pair_split[int(idx)] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")

    images = torch.cat([reals, torch.stack(fakes)])
    labels = torch.cat([torch.zeros(n_real, dtype=torch.long), torch.ones(n_real, dtype=torch.long)])
    splits = [pair_split[i] for i in range(n_real)] + [pair_split[i] for i in range(n_real)]
    ids = [f"real_{i:04d}" for i in range(n_real)] + [f"fake_{i:04d}" for i in range(n_real)]
    return SynthDataset(
        images=images.contiguous(), labels=labels, splits=splits, ids=ids,
        dataset_ids=[spec.dataset_id] * spec.count,
        depth={i: depth[i] for i in range(n_real)}, albedo={i: albedo[i] for i in range(n_real)},
        light={i: lights[i] for i in range(n_real)},
        source={n_real + i: sources[i] for i in range(n_real)},
        tamper_mask={n_real + i: masks[i] for i in range(n_real)},
    )
