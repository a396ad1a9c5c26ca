from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import torch

from ..config import AugmentConfig
from .augment import augment
from .images import preprocess
from .manifest import ManifestEntry, load_manifest


@dataclass
class FaceSet:
    """An in-memory image collection with labels (0 real, 1 fake) and split tags."""

    images: torch.Tensor
    labels: torch.Tensor
    splits: list[str]
    ids: list[str]
    dataset_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.dataset_ids:
            self.dataset_ids = ["unknown"] * len(self.ids)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def select(self, indices: list[int]) -> "FaceSet":
        idx = torch.as_tensor(indices, dtype=torch.long)
        return FaceSet(self.images[idx], self.labels[idx], [self.splits[i] for i in indices],
                       [self.ids[i] for i in indices], [self.dataset_ids[i] for i in indices])

    def subset(self, split: str | None = None, label: int | None = None) -> "FaceSet":
        keep = [i for i in range(len(self))
                if (split is None or self.splits[i] == split)
                and (label is None or int(self.labels[i]) == label)]
        return self.select(keep)

    @classmethod
    def from_entries(cls, entries: list[ManifestEntry], image_size: int = 64) -> "FaceSet":
        images = torch.stack([preprocess(e.path, image_size) for e in entries]) if entries else \
            torch.zeros(0, 3, image_size, image_size)
        return cls(images, torch.tensor([e.is_fake for e in entries], dtype=torch.long),
                   [e.split for e in entries],
                   [Path(e.path).stem if e.frame is None else f"{Path(e.path).stem}#{e.frame}"
                    for e in entries],
                   [e.dataset_id for e in entries])

    @classmethod
    def from_manifest(cls, path: str | Path, image_size: int = 64) -> "FaceSet":
        return cls.from_entries(load_manifest(path), image_size)


def iterate_batches(data: FaceSet, batch_size: int, *, seed: int = 0, epoch: int = 0,
                    shuffle: bool = True, augment_cfg: AugmentConfig | None = None,
                    ) -> Iterator[tuple[torch.Tensor, torch.Tensor, list[int]]]:
    """Yield ``(images, labels, indices)`` batches in a seed/epoch-determined order.

    Augmentation uses sample index ``epoch * len(data) + i`` so each epoch
    draws fresh but reproducible transforms.
    """
    n = len(data)
    if shuffle:
        g = torch.Generator().manual_seed(seed * 1_000_003 + epoch)
        order = torch.randperm(n, generator=g).tolist()
    else:
        order = list(range(n))
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        imgs = data.images[idx]
        if augment_cfg is not None and augment_cfg.enabled:
            cfg = replace(augment_cfg, seed=augment_cfg.seed + seed)
            imgs = torch.stack([augment(img, cfg, epoch * n + i) for img, i in zip(imgs, idx)])
        yield imgs, data.labels[idx], idx
