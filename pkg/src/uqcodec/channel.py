"""Uniform-noise channel implemented with shared dither.

Encoder and decoder hold the same ``DitherStream``. The encoder sends
``K = round(y - U)``; the decoder outputs ``K + U``, which is distributed
exactly like ``y`` plus fresh uniform noise. Also provides the lattice and
Gaussian scale-mixture variants.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .prng import (PRNG_ID_PHILOX4X32_10, philox4x32, random_words, split_seed,
                   words_to_centered_uniform, words_to_open_uniform)

DITHER_STREAM = 0
SCALE_STREAM = 1
LATTICE_STREAM = 2

#: Largest symbol magnitude the coder can carry through its escape path.
MAX_SYMBOL = 2**31 - 1


class SymbolRangeError(ValueError):
    pass


def round_half_away(x):
    return ad.round_half_away(x)


class DitherStream:
    """Seeded, stateless source of offsets in ``[-0.5, 0.5)``.

    ``offsets(i)`` depends only on ``(seed, i)``, so any index range can be
    regenerated independently.
    """

    prng_id = PRNG_ID_PHILOX4X32_10

    def __init__(self, seed, stream=DITHER_STREAM):
        split_seed(seed)
        self.seed = int(seed)
        self.stream = stream

    def __repr__(self):
        return f"DitherStream(seed={self.seed}, stream={self.stream})"

    def words(self, indices):
        return random_words(self.seed, indices, self.stream)

    def offsets(self, indices):
        return words_to_centered_uniform(self.words(indices))

    def offsets_for_shape(self, shape, start=0):
        n = int(np.prod(shape))
        return self.offsets(np.arange(start, start + n, dtype=np.uint64)).reshape(shape)

    def block(self, indices, extra=0):
        """All four Philox words for each index; ``extra`` selects a sub-stream."""
        idx = np.asarray(indices, dtype=np.uint64)
        ctr = np.zeros(idx.shape + (4,), dtype=np.uint32)
        ctr[..., 0] = (idx & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        ctr[..., 1] = (idx >> np.uint64(32)).astype(np.uint32)
        ctr[..., 2] = np.uint32(self.stream)
        ctr[..., 3] = np.uint32(extra)
        return philox4x32(ctr, split_seed(self.seed))


def common_shift_offsets(dither, shape):
    """Every coefficient shares offset 0. Kept only to show it differs from independent noise."""
    return np.full(shape, dither.offsets(np.array([0], dtype=np.uint64))[0])


def universal_quantize(y, u, max_abs=MAX_SYMBOL):
    """``K = round(y - u)`` with ties rounded away from zero."""
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("coefficients must be finite")
    k = round_half_away(y - u)
    over = np.abs(k) > max_abs
    if np.any(over):
        i = int(np.flatnonzero(over.ravel())[0])
        raise SymbolRangeError(f"coefficient {i} ({y.ravel()[i]!r}) exceeds the symbol range")
    return k.astype(np.int64)


def channel_reconstruct(k, u):
    return np.asarray(k, dtype=np.float64) + u


def train_channel_sample(y, u):
    """``y + u`` on the tape; the gradient w.r.t. ``y`` is the identity."""
    return ad.add(y, np.asarray(u, dtype=np.float64))


# Lattices ---------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeSpec:
    name: str
    basis: np.ndarray  # rows are generator vectors
    box: tuple  # half-widths of a box containing the Voronoi cell

    @property
    def dim(self):
        return self.basis.shape[0]

    @property
    def cell_volume(self):
        return abs(np.linalg.det(self.basis))

    def nearest(self, y):
        """Nearest lattice point to each row of ``y``; returns (coords, points)."""
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if y.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim}-dimensional points, got {y.shape[-1]}")
        inv = np.linalg.inv(self.basis)
        base = np.floor(y @ inv)
        best_d = np.full(len(y), np.inf)
        best_c = np.zeros_like(base)
        for off in _neighbourhood(self.dim):
            c = base + off
            d = np.sum((c @ self.basis - y) ** 2, axis=1)
            better = d < best_d
            best_d = np.where(better, d, best_d)
            best_c[better] = c[better]
        return best_c.astype(np.int64), best_c @ self.basis


def _neighbourhood(dim):
    grids = np.meshgrid(*[np.arange(-1, 3)] * dim, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.float64)


def integer_lattice():
    return LatticeSpec("Z2", np.eye(2), (0.5, 0.5))


def hexagonal_lattice():
    basis = np.array([[1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0]])
    return LatticeSpec("A2", basis, (0.5, 1.0 / np.sqrt(3.0)))


SUPPORTED_LATTICES = {"Z2": integer_lattice, "A2": hexagonal_lattice}


def voronoi_offsets(lattice, dither, n, start=0):
    """Offsets uniform over the lattice's Voronoi cell, by rejection from its bounding box.

    Attempt ``j`` for sample ``i`` uses Philox counter ``(i, stream, j)``, so
    each sample is a pure function of the seed and its index.
    """
    if lattice.name not in SUPPORTED_LATTICES:
        raise ValueError(f"unsupported lattice {lattice.name!r}")
    stream = DitherStream(dither.seed, LATTICE_STREAM)
    idx = np.arange(start, start + n, dtype=np.uint64)
    out = np.empty((n, 2))
    pending = np.arange(n)
    half = np.array(lattice.box)
    attempt = 0
    while pending.size:
        if attempt > 200:
            raise RuntimeError("Voronoi rejection sampling did not terminate")
        words = stream.block(idx[pending], extra=attempt)
        cand = (words_to_centered_uniform(words[:, :2]) * 2.0) * half
        coords, _ = lattice.nearest(cand)
        ok = np.all(coords == 0, axis=1)
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
        attempt += 1
    return out


def lattice_universal_quantize(y, lattice, dither, start=0):
    """Returns lattice coordinates of ``Q(y - U)`` and the reconstruction ``Q(y - U) + U``."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[1] != lattice.dim:
        raise ValueError(f"expected {lattice.dim}-dimensional points, got {y.shape[1]}")
    if lattice.name == "Z2":
        u = dither.offsets_for_shape(y.shape, start=start * 2)
    else:
        u = voronoi_offsets(lattice, dither, len(y), start=start)
    coords, points = lattice.nearest(y - u)
    return coords, points + u


# Gaussian via uniform scale mixture ---------------------------------------------

@dataclass(frozen=True)
class ScaleMixtureSpec:
    """``S = 2 sigma sqrt(G)`` with ``G ~ Gamma(shape=3/2, rate=1/2)``."""

    sigma: float = 1.0
    gamma_shape: float = 1.5
    gamma_rate: float = 0.5

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


def shared_scales(spec, dither, n, start=0):
    """Draw ``S`` for ``n`` coefficients from the shared stream.

    Gamma(3/2, rate 1/2) is chi-squared with three degrees of freedom, built
    here from three Box-Muller normals so the draw is counter-addressable.
    """
    words = DitherStream(dither.seed, SCALE_STREAM).block(np.arange(start, start + n, dtype=np.uint64))
    u = words_to_open_uniform(words)
    r1 = np.sqrt(-2.0 * np.log(u[:, 0]))
    r2 = np.sqrt(-2.0 * np.log(u[:, 2]))
    z1 = r1 * np.cos(2.0 * np.pi * u[:, 1])
    z2 = r1 * np.sin(2.0 * np.pi * u[:, 1])
    z3 = r2 * np.cos(2.0 * np.pi * u[:, 3])
    g = z1 * z1 + z2 * z2 + z3 * z3
    return 2.0 * spec.sigma * np.sqrt(g)


def gaussian_channel(y, scale, u):
    """``K = round(y / S - U)``, reconstruction ``(K + U) S``."""
    y = np.asarray(y, dtype=np.float64)
    k = round_half_away(y / scale - u)
    return k.astype(np.int64), (k + u) * scale
