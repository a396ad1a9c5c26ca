"""Scoring a trained detector on a manifest's test split."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import torch

from ..datakit import FaceSet
from ..errors import InvalidInputError
from .metrics import compute_auc, roc_curve

# Full-scale results published for the method, kept as context for readers of
# reports. Desk-scale runs are not expected to approach them.
REFERENCE_AUC = {"FF++ (c23)": 0.9746, "CDFv1": 0.8184}

REPORT_KEYS = ("dataset_id", "split", "auc", "roc", "n_real", "n_fake", "ids", "scores", "labels",
               "metadata")


@dataclass
class EvalReport:
    dataset_id: str
    auc: float
    roc: list[tuple[float, float, float]]
    n_real: int
    n_fake: int
    split: str = "test"
    ids: list[str] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        # JSON has no infinity; the ROC's first threshold is written as null
        d["roc"] = [[fpr, tpr, None if thr == float("inf") else thr] for fpr, tpr, thr in self.roc]
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EvalReport":
        d = dict(d)
        d["roc"] = [(fpr, tpr, float("inf") if thr is None else thr) for fpr, tpr, thr in d["roc"]]
        return cls(**d)

    def table(self) -> str:
        lines = [f"dataset     {self.dataset_id}",
                 f"split       {self.split}",
                 f"samples     {self.n_real} real / {self.n_fake} fake",
                 f"AUC         {self.auc:.4f}",
                 "",
                 "reference AUC at full scale (context only):"]
        lines += [f"  {name:<12}{value:.4f}" for name, value in REFERENCE_AUC.items()]
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, stem: str = "report") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        js, txt = out / f"{stem}.json", out / f"{stem}.txt"
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        txt.write_text(self.table())
        return js, txt


def evaluate_model(model, data: FaceSet, split: str = "test", batch_size: int = 64,
                   metadata: dict[str, Any] | None = None) -> EvalReport:
    """Score every ``split`` item once (frame level) and summarise."""
    from ..trainer import score

    subset = data.subset(split) if split else data
    if len(subset) == 0:
        raise InvalidInputError(f"no {split!r} entries to evaluate")
    scores = score(model, subset, batch_size)
    labels = subset.labels.tolist()
    ids = sorted(set(subset.dataset_ids))
    meta = {"aggregation": "frame", "reference_auc": REFERENCE_AUC, **(metadata or {})}
    return EvalReport(dataset_id="+".join(ids), auc=compute_auc(scores.tolist(), labels),
                      roc=roc_curve(scores.tolist(), labels),
                      n_real=labels.count(0), n_fake=labels.count(1), split=split,
                      ids=list(subset.ids), scores=[float(s) for s in scores], labels=labels,
                      metadata=meta)


def evaluate(checkpoint: str | Path, data: FaceSet | str | Path, split: str = "test",
             recon_checkpoint: str | Path | None = None, image_size: int | None = None) -> EvalReport:
    """Load a detector checkpoint and evaluate it on a FaceSet or manifest file."""
    from ..checkpoint import file_digest
    from ..trainer import load_detector

    model = load_detector(checkpoint, recon_checkpoint)
    if not isinstance(data, FaceSet):
        data = FaceSet.from_manifest(data, image_size or model.cfg.recon.image_size)
    with torch.no_grad():
        return evaluate_model(model, data, split, metadata={
            "checkpoint": str(Path(checkpoint).resolve()), "checkpoint_id": file_digest(checkpoint),
            "recon_id": model.recon_id, "seed": model.cfg.train.seed})
