"""CSV manifests: ``path,label,split,dataset_id[,frame]`` with a header row.

Relative paths resolve against the manifest's directory. Row numbers in
error messages count the header as row 1.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from ..errors import ManifestError

LABELS = ("real", "fake")
SPLITS = ("train", "val", "test")
HEADER = ["path", "label", "split", "dataset_id", "frame"]


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    label: str
    split: str
    dataset_id: str
    frame: int | None = None

    @property
    def is_fake(self) -> int:
        return int(self.label == "fake")


def load_manifest(path: str | Path, check_files: bool = True) -> list[ManifestEntry]:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    root = path.parent
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ManifestError(f"{path}: empty manifest (header row required)")
    header = [c.strip() for c in rows[0]]
    if header[:4] != HEADER[:4] or header not in (HEADER[:4], HEADER):
        raise ManifestError(f"{path}: row 1: header must be {','.join(HEADER[:4])}[,frame], got {header}")
    entries = []
    for rowno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) not in (4, 5):
            raise ManifestError(f"{path}: row {rowno}: expected 4 or 5 fields, got {len(row)}")
        fields = [c.strip() for c in row]
        rel, label, split, dataset_id = fields[:4]
        if label not in LABELS:
            raise ManifestError(f"{path}: row {rowno}: unknown label {label!r} (expected real/fake)")
        if split not in SPLITS:
            raise ManifestError(f"{path}: row {rowno}: unknown split {split!r} (expected {'/'.join(SPLITS)})")
        if not rel or not dataset_id:
            raise ManifestError(f"{path}: row {rowno}: path and dataset_id must be non-empty")
        frame = None
        if len(fields) == 5 and fields[4]:
            try:
                frame = int(fields[4])
            except ValueError:
                raise ManifestError(f"{path}: row {rowno}: frame must be an integer, got {fields[4]!r}") from None
        file_path = Path(rel) if Path(rel).is_absolute() else root / rel
        if check_files and not file_path.is_file():
            raise ManifestError(f"{path}: row {rowno}: file does not exist: {file_path}")
        entries.append(ManifestEntry(file_path, label, split, dataset_id, frame))
    return entries


def write_manifest(path: str | Path, entries: list[ManifestEntry]) -> None:
    path = Path(path)
    root = path.parent.resolve()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HEADER)
        for e in entries:
            p = Path(e.path)
            try:
                rel = p.resolve().relative_to(root)
            except ValueError:
                rel = p
            writer.writerow([rel.as_posix(), e.label, e.split, e.dataset_id,
                             "" if e.frame is None else e.frame])
