"""Philox4x32-10 counter-based generator.

Stateless: every output word is a pure function of ``(key, counter)``, so the
encoder and decoder can regenerate the dither for any coefficient index
without replaying a sequential state. Follows the Random123 reference
algorithm (Salmon et al., SC'11) and reproduces its known-answer vectors.
"""

import numpy as np

PHILOX_M0 = np.uint64(0xD2511F53)
PHILOX_M1 = np.uint64(0xCD9E8D57)
PHILOX_W0 = np.uint32(0x9E3779B9)
PHILOX_W1 = np.uint32(0xBB67AE85)
ROUNDS = 10

#: Identifier written into bitstream headers.
PRNG_ID_PHILOX4X32_10 = 1

_MASK32 = np.uint64(0xFFFFFFFF)


def _mulhilo(m, x):
    prod = m * x.astype(np.uint64)
    return (prod >> np.uint64(32)).astype(np.uint32), (prod & _MASK32).astype(np.uint32)


def philox4x32(counter, key):
    """Apply Philox4x32-10 to an array of counters.

    ``counter`` is an array of shape ``(..., 4)`` of uint32, ``key`` a pair of
    uint32. Returns an array of the same shape holding the output words.
    """
    ctr = np.asarray(counter, dtype=np.uint32)
    c0, c1, c2, c3 = (ctr[..., i].copy() for i in range(4))
    k0 = np.uint32(key[0])
    k1 = np.uint32(key[1])
    with np.errstate(over="ignore"):
        for i in range(ROUNDS):
            if i:
                k0 = np.uint32(k0 + PHILOX_W0)
                k1 = np.uint32(k1 + PHILOX_W1)
            hi0, lo0 = _mulhilo(PHILOX_M0, c0)
            hi1, lo1 = _mulhilo(PHILOX_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return np.stack([c0, c1, c2, c3], axis=-1)


def split_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def random_words(seed, indices, stream=0):
    """First Philox output word for each index, keyed by ``seed``.

    The counter is ``(index_lo, index_hi, stream, 0)``; distinct ``stream``
    values give independent sequences over the same indices.
    """
    idx = np.asarray(indices, dtype=np.uint64)
    ctr = np.zeros(idx.shape + (4,), dtype=np.uint32)
    ctr[..., 0] = (idx & _MASK32).astype(np.uint32)
    ctr[..., 1] = (idx >> np.uint64(32)).astype(np.uint32)
    ctr[..., 2] = np.uint32(stream)
    return philox4x32(ctr, split_seed(seed))[..., 0]


def words_to_centered_uniform(words):
    """Map 32-bit words to ``[-0.5, 0.5)`` by fixed-point scaling (exact in float64)."""
    return np.asarray(words, dtype=np.float64) * 2.0**-32 - 0.5


def words_to_open_uniform(words):
    """Map 32-bit words to ``(0, 1)``; never returns 0 so logs stay finite."""
    return (np.asarray(words, dtype=np.float64) + 0.5) * 2.0**-32
