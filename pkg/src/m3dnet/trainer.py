"""Two-phase training: reconstruction pretraining, then detection with Recon3D frozen.

A run directory holds::

    config.json        full configuration snapshot (written before anything else)
    metrics.jsonl      one JSON record per step and per epoch, in order
    checkpoints/       <phase>_epoch<NNN>.m3dc at the configured cadence and at
                       the final epoch; best.m3dc for the detector's best val AUC

Both phases resume from the newest epoch checkpoint in the run directory;
records logged after that checkpoint are dropped so the log matches an
uninterrupted run.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import torch

from . import checkpoint as ckpt
from .config import Config
from .datakit import FaceSet, iterate_batches
from .detector import M3DNet, detection_loss
from .errors import (
    CheckpointError,
    ConfigError,
    FrozenParameterError,
    NonFiniteError,
    UndefinedAUCError,
)
from .evalkit.metrics import compute_auc
from .recon3d import Recon3D

log = logging.getLogger(__name__)

RECON_KIND = "recon3d"
DETECTOR_KIND = "detector"
_EPOCH_CKPT = re.compile(r"^(?P<phase>recon|detector)_epoch(?P<epoch>\d+)\.m3dc$")


def make_optimizer(params: Iterable[torch.nn.Parameter], lr: float, weight_decay: float,
                   amsgrad: bool = True) -> torch.optim.Adam:
    """Adam over ``params``; frozen Recon3D parameters are refused outright."""
    params = list(params)
    frozen = [p for p in params if getattr(p, "_m3d_frozen", False)]
    if frozen:
        raise FrozenParameterError(f"{len(frozen)} frozen parameter tensors were passed to the optimizer")
    return torch.optim.Adam(params, lr=lr, weight_decay=weight_decay, amsgrad=amsgrad)


class RunDir:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.checkpoints = self.path / "checkpoints"
        self.metrics = self.path / "metrics.jsonl"
        self.config = self.path / "config.json"

    def create(self, cfg: Config) -> "RunDir":
        self.checkpoints.mkdir(parents=True, exist_ok=True)
        self.config.write_text(cfg.to_json() + "\n")
        return self

    def append(self, record: dict[str, Any]) -> None:
        with self.metrics.open("a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def records(self) -> list[dict[str, Any]]:
        if not self.metrics.is_file():
            return []
        return [json.loads(line) for line in self.metrics.read_text().splitlines() if line.strip()]

    def truncate_after(self, phase: str, epoch: int) -> None:
        """Keep only this phase's records up to ``epoch`` (other phases untouched)."""
        kept = [r for r in self.records() if r["phase"] != phase or r["epoch"] <= epoch]
        self.metrics.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in kept))

    def epoch_checkpoint(self, phase: str, epoch: int) -> Path:
        return self.checkpoints / f"{phase}_epoch{epoch:03d}.m3dc"

    def latest_checkpoint(self, phase: str) -> tuple[int, Path] | None:
        found = []
        for p in self.checkpoints.glob("*.m3dc") if self.checkpoints.is_dir() else []:
            m = _EPOCH_CKPT.match(p.name)
            if m and m["phase"] == phase:
                found.append((int(m["epoch"]), p))
        return max(found) if found else None

    def checkpoint_epochs(self, phase: str) -> list[int]:
        return sorted(int(m["epoch"]) for p in self.checkpoints.glob("*.m3dc")
                      if (m := _EPOCH_CKPT.match(p.name)) and m["phase"] == phase)


@dataclass
class TrainResult:
    checkpoint: Path
    run_dir: Path
    epoch_records: list[dict[str, Any]] = field(default_factory=list)
    model: Any = None
    best_checkpoint: Path | None = None


def _cadence(epoch: int, every: int, last: int) -> bool:
    return epoch % every == 0 or epoch == last


# --------------------------------------------------------------------- pretraining

def recon_metadata(model: Recon3D, cfg: Config, epoch: int) -> dict[str, Any]:
    return {"format": ckpt.FORMAT_VERSION, "step": model.step_count, "epoch": epoch,
            "lambda_f": model.cfg.lambda_f, "lambda_p": model.cfg.lambda_p,
            "seed": cfg.train.seed, "config": cfg.to_dict()}


def save_recon(path: Path, model: Recon3D, optimizer, cfg: Config, epoch: int) -> Path:
    payload = {"groups": model.group_state(),
               "optimizer": optimizer.state_dict() if optimizer is not None else None}
    return ckpt.save(path, RECON_KIND, payload, recon_metadata(model, cfg, epoch))


def load_recon(path: str | Path, cfg: Config | None = None) -> Recon3D:
    """Rebuild a Recon3D from a checkpoint (config taken from it unless given)."""
    data = ckpt.load(path, RECON_KIND)
    if cfg is None:
        cfg = Config.from_dict(data["metadata"]["config"])
    model = Recon3D(cfg.recon)
    model.load_group_state(data["payload"]["groups"])
    model.step_count = int(data["metadata"].get("step", 0))
    return model


def pretrain_recon(cfg: Config, data: FaceSet, run_dir: str | Path, *, resume: bool = False,
                   on_epoch: Callable[[dict[str, Any]], None] | None = None) -> TrainResult:
    """Optimise the reconstruction objective on the train-split real images."""
    cfg.validate()
    tc = cfg.train
    if tc.checkpoint_every > tc.pretrain_epochs:
        raise ConfigError("train.checkpoint_every exceeds train.pretrain_epochs")
    reals = data.subset("train", 0)
    if len(reals) == 0:
        raise ConfigError("no train-split real images to pretrain on")
    run = RunDir(run_dir)
    model = Recon3D(cfg.recon)
    optimizer = make_optimizer(model.trainable_parameters(), tc.pretrain_lr, tc.weight_decay, tc.amsgrad)
    start = 1
    latest = run.latest_checkpoint("recon") if resume else None
    if latest is not None:
        epoch, path = latest
        state = ckpt.load(path, RECON_KIND)
        model.load_group_state(state["payload"]["groups"])
        optimizer.load_state_dict(state["payload"]["optimizer"])
        model.step_count = int(state["metadata"]["step"])
        run.truncate_after("pretrain", epoch)
        start = epoch + 1
        log.info("resuming pretraining after epoch %d from %s", epoch, path)
    else:
        run.create(cfg)
        run.truncate_after("pretrain", 0)

    last_path = run.latest_checkpoint("recon")[1] if latest is not None else None
    for epoch in range(start, tc.pretrain_epochs + 1):
        sums: dict[str, float] = {}
        n_batches = 0
        for images, _, idx in iterate_batches(reals, tc.pretrain_batch_size, seed=tc.seed, epoch=epoch):
            try:
                terms = model.pretrain_step(images, optimizer, batch_id=(epoch, idx))
            except NonFiniteError as exc:
                raise NonFiniteError(f"pretraining aborted at step {model.step_count + 1}: {exc}") from exc
            values = terms.as_floats()
            run.append({"phase": "pretrain", "kind": "step", "epoch": epoch,
                        "step": model.step_count, **values})
            for k in ("l_pixel", "l_perc", "l_rec"):
                sums[k] = sums.get(k, 0.0) + values[k]
            n_batches += 1
        record = {"phase": "pretrain", "kind": "epoch", "epoch": epoch, "step": model.step_count,
                  **{f"{k}_mean": v / n_batches for k, v in sums.items()}}
        run.append(record)
        if on_epoch:
            on_epoch(record)
        if _cadence(epoch, tc.checkpoint_every, tc.pretrain_epochs):
            last_path = save_recon(run.epoch_checkpoint("recon", epoch), model, optimizer, cfg, epoch)
    epochs = [r for r in run.records() if r["phase"] == "pretrain" and r["kind"] == "epoch"]
    return TrainResult(last_path, run.path, epochs, model)


# ------------------------------------------------------------------- detection

@torch.no_grad()
def score(model: M3DNet, data: FaceSet, batch_size: int = 64) -> torch.Tensor:
    """prob_fake for every item of ``data``, in order (eval mode, no augmentation)."""
    was_training = model.training
    model.eval()
    out = [model(images).prob_fake for images, _, _ in
           iterate_batches(data, batch_size, shuffle=False)]
    model.train(was_training)
    return torch.cat(out) if out else torch.zeros(0)


def _auc_or_none(scores: torch.Tensor, labels: torch.Tensor) -> float | None:
    try:
        return compute_auc(scores.tolist(), labels.tolist())
    except UndefinedAUCError:
        return None


def build_detector(cfg: Config, recon_checkpoint: str | Path) -> M3DNet:
    path = Path(recon_checkpoint)
    if not path.is_file():
        raise ConfigError(f"recon checkpoint not found: {path} (run pretraining first)")
    recon = load_recon(path, cfg)
    return M3DNet(cfg, recon.freeze(), recon_id=ckpt.file_digest(path))


def detector_metadata(model: M3DNet, cfg: Config, epoch: int, recon_path: Path,
                      extra: dict[str, Any] | None = None) -> dict[str, Any]:
    return {"format": ckpt.FORMAT_VERSION, "epoch": epoch, "seed": cfg.train.seed,
            "recon_checkpoint": str(Path(recon_path).resolve()), "recon_id": model.recon_id,
            "config": cfg.to_dict(), **(extra or {})}


def save_detector(path: Path, model: M3DNet, optimizer, cfg: Config, epoch: int,
                  recon_path: Path, extra: dict[str, Any] | None = None) -> Path:
    payload = {"groups": model.group_state(),
               "optimizer": optimizer.state_dict() if optimizer is not None else None}
    return ckpt.save(path, DETECTOR_KIND, payload, detector_metadata(model, cfg, epoch, recon_path, extra))


def load_detector(path: str | Path, recon_checkpoint: str | Path | None = None) -> M3DNet:
    """Rebuild a trained detector; the recon checkpoint digest must match the recorded one."""
    data = ckpt.load(path, DETECTOR_KIND)
    meta = data["metadata"]
    cfg = Config.from_dict(meta["config"]).validate()
    recon_path = Path(recon_checkpoint or meta["recon_checkpoint"])
    if not recon_path.is_file():
        raise ConfigError(f"recon checkpoint {recon_path} referenced by {path} is missing")
    digest = ckpt.file_digest(recon_path)
    if meta.get("recon_id") and digest != meta["recon_id"]:
        raise CheckpointError(f"recon checkpoint {recon_path} does not match the one this detector "
                              "was trained with")
    model = build_detector(cfg, recon_path)
    model.load_group_state(data["payload"]["groups"])
    model.eval()
    return model


def train_detector(cfg: Config, data: FaceSet, recon_checkpoint: str | Path, run_dir: str | Path, *,
                   resume: bool = False,
                   on_epoch: Callable[[dict[str, Any]], None] | None = None) -> TrainResult:
    """Cross-entropy training of everything except the frozen Recon3D."""
    cfg.validate()
    tc = cfg.train
    train = data.subset("train")
    val = data.subset("val")
    if len(train) == 0:
        raise ConfigError("no train-split images")
    recon_path = Path(recon_checkpoint)
    model = build_detector(cfg, recon_path)
    optimizer = make_optimizer(model.trainable_parameters(), tc.lr, tc.weight_decay, tc.amsgrad)
    run = RunDir(run_dir)
    start, step = 1, 0
    best = -1.0
    latest = run.latest_checkpoint("detector") if resume else None
    if latest is not None:
        epoch, path = latest
        state = ckpt.load(path, DETECTOR_KIND)
        model.load_group_state(state["payload"]["groups"])
        optimizer.load_state_dict(state["payload"]["optimizer"])
        step = int(state["metadata"]["step"])
        best = float(state["metadata"]["best_selection_auc"])
        run.truncate_after("detect", epoch)
        start = epoch + 1
        log.info("resuming detector training after epoch %d from %s", epoch, path)
    else:
        if not run.config.is_file():
            run.create(cfg)
        run.checkpoints.mkdir(parents=True, exist_ok=True)
        run.truncate_after("detect", 0)

    last_path = latest[1] if latest is not None else None
    best_path = run.checkpoints / "best.m3dc"
    for epoch in range(start, tc.epochs + 1):
        model.train()
        losses = []
        for images, labels, _ in iterate_batches(train, tc.batch_size, seed=tc.seed, epoch=epoch,
                                                 augment_cfg=cfg.augment):
            optimizer.zero_grad(set_to_none=True)
            loss = detection_loss(model(images), labels)
            if not bool(torch.isfinite(loss)):
                raise NonFiniteError(f"non-finite detection loss at step {step + 1}")
            loss.backward()
            optimizer.step()
            step += 1
            losses.append(float(loss.detach()))
            run.append({"phase": "detect", "kind": "step", "epoch": epoch, "step": step,
                        "loss": losses[-1]})
        train_auc = _auc_or_none(score(model, train), train.labels)
        val_auc = _auc_or_none(score(model, val), val.labels) if len(val) else None
        selection = val_auc if val_auc is not None else (train_auc if train_auc is not None else 0.0)
        record = {"phase": "detect", "kind": "epoch", "epoch": epoch, "step": step,
                  "loss_mean": sum(losses) / len(losses), "train_auc": train_auc, "val_auc": val_auc}
        is_best = selection > best
        best = max(best, selection)
        extra = {"step": step, "best_selection_auc": best, "train_auc": train_auc, "val_auc": val_auc}
        if is_best:
            save_detector(best_path, model, None, cfg, epoch, recon_path, extra)
        record["best"] = is_best
        run.append(record)
        if on_epoch:
            on_epoch(record)
        if _cadence(epoch, tc.checkpoint_every, tc.epochs):
            last_path = save_detector(run.epoch_checkpoint("detector", epoch), model, optimizer, cfg,
                                      epoch, recon_path, extra)
    epochs = [r for r in run.records() if r["phase"] == "detect" and r["kind"] == "epoch"]
    return TrainResult(last_path, run.path, epochs, model, best_path if best_path.is_file() else None)
