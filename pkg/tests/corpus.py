"""Deterministic image corpora built from the images bundled with scikit-image."""

import numpy as np
from skimage import data, transform

from uqcodec.imageio import write_png

COLOUR = ("astronaut", "coffee", "chelsea", "rocket", "immunohistochemistry", "hubble_deep_field",
          "retina", "colorwheel", "cat")
GREY = ("camera", "coins", "moon", "brick", "grass", "gravel", "page", "text")


def source_images():
    out = {}
    for name in COLOUR:
        out[name] = getattr(data, name)() / 255.0
    left, right = data.stereo_motorcycle()[:2]
    out["motorcycle_left"] = left / 255.0
    out["motorcycle_right"] = right / 255.0
    out["logo"] = data.logo()[..., :3] / 255.0
    for name in GREY:
        g = getattr(data, name)() / 255.0
        out[name] = np.repeat(g[..., None], 3, axis=2)
    return out


def crops(n, size=128, seed=0):
    """``n`` named ``size x size`` crops, cycling over the source images."""
    rng = np.random.default_rng(seed)
    sources = sorted(source_images().items())
    out = []
    for i in range(n):
        name, img = sources[i % len(sources)]
        if min(img.shape[:2]) < size:
            img = transform.resize(img, (max(size, img.shape[0]), max(size, img.shape[1])), order=1)
        r = rng.integers(img.shape[0] - size + 1)
        c = rng.integers(img.shape[1] - size + 1)
        crop = img[r:r + size, c:c + size]
        if rng.random() < 0.5:
            crop = crop[:, ::-1]
        out.append((f"{i:03d}_{name}.png", np.ascontiguousarray(crop)))
    return out


def write_crops(directory, n, size=128, seed=0):
    directory.mkdir(parents=True, exist_ok=True)
    for name, img in crops(n, size, seed):
        write_png(directory / name, img)
    return directory


def image_512x768():
    left = data.stereo_motorcycle()[0] / 255.0
    return transform.resize(left, (512, 768), order=1, anti_aliasing=False)
