"""Lossy image compression with universal quantization and soft rounding."""

from .codec import compress, decompress, psnr
from .model import MODES, LinearModel
from .training import RdConfig, train

__version__ = "0.1.0"

__all__ = ["LinearModel", "MODES", "RdConfig", "compress", "decompress", "psnr", "train"]
