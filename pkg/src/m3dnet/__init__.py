"""Dual-stream deepfake detection with self-supervised 3D face decomposition."""
from .config import Config, desk_config, load_config

__version__ = "0.1.0"

__all__ = ["Config", "desk_config", "load_config", "__version__"]
