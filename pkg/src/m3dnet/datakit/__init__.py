"""Data ingestion, preprocessing, augmentation and synthetic faces."""
from .augment import adjust_brightness, augment, blur, hflip, rotate
from .dataset import FaceSet, iterate_batches
from .images import preprocess, resize, save_png
from .manifest import ManifestEntry, load_manifest, write_manifest
from .sidecar import read_sidecar, write_sidecar
from .synth import SynthDataset, SynthFaceSpec, synth_faces

__all__ = [
    "FaceSet", "ManifestEntry", "SynthDataset", "SynthFaceSpec", "adjust_brightness", "augment",
    "blur", "hflip", "iterate_batches", "load_manifest", "preprocess", "read_sidecar", "resize",
    "rotate", "save_png", "synth_faces", "write_manifest", "write_sidecar",
]
