"""PNG/JPEG reading and PNG writing; pixels are float64 in [0, 1]."""

import warnings
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

EXTENSIONS = (".png", ".jpg", ".jpeg")


def read_image(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def write_png(path, image):
    pixels = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels, "RGB").save(path, format="PNG")


def image_files(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in EXTENSIONS)


def load_corpus(directory):
    """All decodable images in ``directory``, sorted by file name."""
    images = []
    for path in image_files(directory):
        try:
            images.append(read_image(path))
        except (OSError, UnidentifiedImageError) as exc:
            warnings.warn(f"skipping unreadable image {path.name}: {exc}")
    if not images:
        raise ValueError(f"no readable images in {directory}")
    return images
