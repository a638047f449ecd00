"""Range coding of integer symbols under dither-conditional PMFs.

The coder keeps a 32-bit range and a 64-bit ``low`` register whose bit 32
is the pending carry; bytes are shifted out one at a time when the range
drops below 2**24 (the LZMA construction). All frequency tables have total
2**16. Every coefficient gets its own table because ``P(k | u)`` depends on
that coefficient's dither value; tables are computed in numpy batches and
only the arithmetic runs per symbol.

Symbols outside a channel's ``[k_min, k_max]`` are sent as an escape symbol
followed by the value as 32 raw bits.
"""

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .density import pmf_table

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_CHUNK = 1 << 14


class CoderError(ValueError):
    pass


class TruncatedPayloadError(CoderError):
    pass


@dataclass
class QuantizedCdf:
    """Integer frequencies summing to ``TOTAL``; ``cdf[i]`` is the start of symbol ``i``."""

    freqs: np.ndarray
    cdf: np.ndarray

    @property
    def escape(self):
        return len(self.freqs) - 1


def quantize_pmf_rows(probs):
    """Quantize each row of ``probs`` to frequencies >= 1 summing to ``TOTAL``.

    Uses ``1 + floor(p (TOTAL - n))`` and hands the leftover counts to the
    largest fractional remainders (lowest index first on ties).
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    n = probs.shape[1]
    if n > TOTAL:
        raise CoderError(f"{n} symbols do not fit in {TOTAL} frequency slots")
    if np.any(probs <= 0):
        raise CoderError("probabilities must be positive")
    sums = probs.sum(axis=1, keepdims=True)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise CoderError("probability rows must sum to one")
    scaled = probs / sums * (TOTAL - n)
    base = np.floor(scaled)
    freqs = base.astype(np.int64) + 1
    left = TOTAL - freqs.sum(axis=1)
    order = np.argsort(-(scaled - base), axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.arange(n)[None, :].repeat(len(probs), 0), axis=1)
    freqs += ranks < left[:, None]
    return freqs


def quantize_pmf(row):
    freqs = quantize_pmf_rows(row)[0]
    return QuantizedCdf(freqs, np.concatenate([[0], np.cumsum(freqs)]))


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()

    def _shift_low(self):
        low = self.low
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = self.cache
            out = self.out
            while True:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if not self.cache_size:
                    break
            self.cache = (low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (low & 0x00FFFFFF) << 8

    def encode(self, start, freq):
        r = self.range >> PRECISION
        self.low += r * start
        self.range = r * freq
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_raw(self, value, bits=32):
        for shift in range(bits - PRECISION, -1, -PRECISION):
            self.encode((value >> shift) & (TOTAL - 1), 1)

    def finish(self):
        for _ in range(5):
            self._shift_low()
        # the first emitted byte is always the initial zero cache
        return bytes(self.out[1:])


class RangeDecoder:
    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next()

    def _next(self):
        if self.pos >= len(self.data):
            raise TruncatedPayloadError("payload ended before all symbols were decoded")
        b = self.data[self.pos]
        self.pos += 1
        return b

    def target(self):
        self._r = self.range >> PRECISION
        return min(self.code // self._r, TOTAL - 1)

    def consume(self, start, freq):
        r = self._r
        self.code -= r * start
        self.range = r * freq
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next()) & _MASK32
            self.range <<= 8

    def decode_raw(self, bits=32):
        value = 0
        for _ in range(bits // PRECISION):
            t = self.target()
            self.consume(t, 1)
            value = (value << PRECISION) | t
        return value


def _to_u32(k):
    return int(k) & _MASK32


def _from_u32(v):
    return v - (1 << 32) if v & 0x80000000 else v


def _channel_cdfs(density, channel, offsets, alpha, kmin, kmax):
    probs = pmf_table(density, channel, offsets, alpha, kmin, kmax)
    freqs = quantize_pmf_rows(probs)
    return np.concatenate([np.zeros((len(freqs), 1), dtype=np.int64), np.cumsum(freqs, axis=1)], axis=1)


def encode_symbols(symbols, offsets, density, alpha, k_range, encoder=None):
    """Range-code a ``(channels, N)`` integer array; returns the payload bytes.

    ``offsets`` holds the dither value of every symbol (zeros for plain
    quantization), ``alpha`` the soft-rounding sharpness or None, and
    ``k_range`` the per-channel ``[k_min, k_max]``. Symbols are coded
    channel-major, then in the order given within a channel.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if symbols.ndim != 2 or offsets.shape != symbols.shape:
        raise ValueError("symbols and offsets must both have shape (channels, N)")
    enc = RangeEncoder() if encoder is None else encoder
    for c in range(symbols.shape[0]):
        kmin, kmax = (int(v) for v in k_range[c])
        escape = kmax - kmin + 1
        for s in range(0, symbols.shape[1], _CHUNK):
            k = symbols[c, s:s + _CHUNK]
            cdf = _channel_cdfs(density, c, offsets[c, s:s + _CHUNK], alpha, kmin, kmax)
            idx = np.where((k >= kmin) & (k <= kmax), k - kmin, escape)
            rows = np.arange(len(k))
            starts = cdf[rows, idx].tolist()
            freqs = (cdf[rows, idx + 1] - cdf[rows, idx]).tolist()
            for j, (start, freq) in enumerate(zip(starts, freqs)):
                enc.encode(start, freq)
                if idx[j] == escape:
                    enc.encode_raw(_to_u32(k[j]))
    return enc.finish() if encoder is None else b""


def decode_symbols(payload, offsets, density, alpha, k_range):
    """Inverse of ``encode_symbols``; the output has the shape of ``offsets``."""
    offsets = np.asarray(offsets, dtype=np.float64)
    if offsets.ndim != 2:
        raise ValueError("offsets must have shape (channels, N)")
    dec = RangeDecoder(payload)
    out = np.empty(offsets.shape, dtype=np.int64)
    for c in range(offsets.shape[0]):
        kmin, kmax = (int(v) for v in k_range[c])
        escape = kmax - kmin + 1
        for s in range(0, offsets.shape[1], _CHUNK):
            cdf_rows = _channel_cdfs(density, c, offsets[c, s:s + _CHUNK], alpha, kmin, kmax).tolist()
            values = []
            for row in cdf_rows:
                t = dec.target()
                i = bisect_right(row, t) - 1
                dec.consume(row[i], row[i + 1] - row[i])
                values.append(_from_u32(dec.decode_raw()) if i == escape else kmin + i)
            out[c, s:s + len(values)] = values
    return out


def ideal_code_length(symbols, offsets, density, alpha, k_range):
    """``sum -log2 P(k | u)`` under the unquantized model, in bits."""
    symbols = np.asarray(symbols, dtype=np.int64)
    total = 0.0
    for c in range(symbols.shape[0]):
        kmin, kmax = (int(v) for v in k_range[c])
        escape = kmax - kmin + 1
        for s in range(0, symbols.shape[1], _CHUNK):
            k = symbols[c, s:s + _CHUNK]
            probs = pmf_table(density, c, offsets[c, s:s + _CHUNK], alpha, kmin, kmax)
            idx = np.where((k >= kmin) & (k <= kmax), k - kmin, escape)
            total -= np.log2(probs[np.arange(len(k)), idx]).sum()
            total += 32.0 * np.count_nonzero(idx == escape)
    return float(total)
