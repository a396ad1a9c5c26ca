"""Ablation grid: one short train + eval per cell, with failures isolated per cell."""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..config import Config
from ..datakit import FaceSet
from .report import EvalReport, evaluate_model

log = logging.getLogger(__name__)

# axis name -> (config key, value parser)
AXES: dict[str, tuple[str, Any]] = {
    "heads": ("mfm.heads", int),
    "pfm": ("pfm.enabled", lambda v: v in (True, "on", "true", "1", 1)),
    "attention": ("mfm.attention_enabled", lambda v: v in (True, "on", "true", "1", 1)),
    "backbone": ("backbone.family", str),
    "tier": ("backbone.tier", str),
}
DEFAULT_AXES: dict[str, list[Any]] = {
    "heads": [2, 4, 8, 16],
    "pfm": ["on", "off"],
    "attention": ["on", "off"],
}


@dataclass
class AblationCell:
    params: dict[str, Any]
    status: str = "pending"  # ok | failed
    reason: str = ""
    report: EvalReport | None = None
    structure: dict[str, list[str]] = field(default_factory=dict)
    final_train_auc: float | None = None

    @property
    def key(self) -> str:
        return ",".join(f"{k}={v}" for k, v in self.params.items())

    def to_dict(self) -> dict[str, Any]:
        return {"params": self.params, "status": self.status, "reason": self.reason,
                "report": self.report.to_dict() if self.report else None,
                "structure": self.structure, "final_train_auc": self.final_train_auc}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AblationCell":
        report = EvalReport.from_dict(d["report"]) if d["report"] else None
        return cls(d["params"], d["status"], d["reason"], report, d["structure"], d["final_train_auc"])


@dataclass
class AblationGrid:
    axes: dict[str, list[Any]]
    cells: list[AblationCell]
    metadata: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"axes": self.axes, "cells": [c.to_dict() for c in self.cells],
                           "metadata": self.metadata}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AblationGrid":
        d = json.loads(text)
        return cls(d["axes"], [AblationCell.from_dict(c) for c in d["cells"]], d["metadata"])

    def complete(self) -> bool:
        expected = 1
        for values in self.axes.values():
            expected *= len(values)
        return len(self.cells) == expected and all(c.status in ("ok", "failed") for c in self.cells)

    def table(self) -> str:
        lines = [f"{'cell':<40}{'status':<8}{'test AUC':>10}"]
        for c in self.cells:
            auc = f"{c.report.auc:.4f}" if c.report else "-"
            lines.append(f"{c.key:<40}{c.status:<8}{auc:>10}")
        return "\n".join(lines) + "\n"


def cell_overrides(params: dict[str, Any]) -> dict[str, Any]:
    out = {}
    for name, value in params.items():
        if name not in AXES:
            raise KeyError(f"unknown ablation axis {name!r}; known: {sorted(AXES)}")
        key, parse = AXES[name]
        out[key] = parse(value)
    return out


def enumerate_cells(axes: dict[str, list[Any]]) -> list[dict[str, Any]]:
    names = list(axes)
    return [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]


def module_structure(model) -> dict[str, list[str]]:
    """Child-module names of the swappable groups, for wiring inspection."""
    return {"pfm": [n for n, _ in model.pfm.named_children()],
            "mfm": [n for n, _ in model.mfm.named_children()],
            "pfm_class": [type(model.pfm).__name__], "mfm_class": [type(model.mfm).__name__]}


def run_ablation(axes: dict[str, list[Any]] | None, base: Config, data: FaceSet,
                 recon_checkpoint: str | Path, out_dir: str | Path, split: str = "test") -> AblationGrid:
    """Train and evaluate each cell of ``axes`` on top of ``base``.

    Every cell gets its own run directory under ``out_dir/cells``; the grid is
    rewritten to ``out_dir/grid.json`` after each cell so partial progress
    survives interruption.
    """
    from ..trainer import train_detector

    axes = {k: list(v) for k, v in (axes or DEFAULT_AXES).items()}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = AblationGrid(axes, [], {"base_config": base.to_dict(), "split": split,
                                   "recon_checkpoint": str(Path(recon_checkpoint).resolve())})
    for i, params in enumerate(enumerate_cells(axes)):
        cell = AblationCell(params)
        try:
            cfg = base.with_overrides(cell_overrides(params)).validate()
            result = train_detector(cfg, data, recon_checkpoint, out / "cells" / f"cell{i:03d}")
            cell.structure = module_structure(result.model)
            cell.final_train_auc = result.epoch_records[-1]["train_auc"]
            cell.report = evaluate_model(result.model, data, split, metadata={"cell": params})
            cell.status = "ok"
        except Exception as exc:  # noqa: BLE001 - a failing cell must not stop the grid
            cell.status = "failed"
            cell.reason = f"{type(exc).__name__}: {exc}"
            log.warning("ablation cell %s failed: %s", params, cell.reason)
        grid.cells.append(cell)
        (out / "grid.json").write_text(grid.to_json() + "\n")
    (out / "grid.txt").write_text(grid.table())
    return grid
