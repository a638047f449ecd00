"""The ``.uqc`` container: fixed little-endian header, payload, CRC32 trailer.

See ``docs/bitstream.md`` for the byte layout.
"""

import struct
import zlib
from dataclasses import dataclass

MAGIC = b"UQC1"
VERSION = 1

MODES = ("un-q", "un-uq", "un-uq-sr")

_HEADER = struct.Struct("<4sBBBQ8sfIIHQ")
HEADER_SIZE = _HEADER.size
CRC_SIZE = 4


class BitstreamError(ValueError):
    pass


class ChecksumError(BitstreamError):
    pass


class ModelMismatchError(BitstreamError):
    pass


@dataclass
class Bitstream:
    prng_id: int
    mode: str
    seed: int
    model_hash: bytes
    alpha: float
    width: int
    height: int
    channels: int
    payload: bytes
    version: int = VERSION

    def to_bytes(self):
        if self.mode not in MODES:
            raise BitstreamError(f"unknown mode {self.mode!r}")
        if len(self.model_hash) != 8:
            raise BitstreamError("model hash must be 8 bytes")
        head = _HEADER.pack(MAGIC, self.version, self.prng_id, MODES.index(self.mode), self.seed,
                            self.model_hash, self.alpha, self.width, self.height, self.channels,
                            len(self.payload))
        body = head + self.payload
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if len(data) < HEADER_SIZE + CRC_SIZE:
            raise BitstreamError("bitstream is shorter than its header")
        (magic, version, prng_id, mode, seed, model_hash, alpha, width, height, channels,
         length) = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}")
        if version != VERSION:
            raise BitstreamError(f"unsupported version {version}")
        if len(data) != HEADER_SIZE + length + CRC_SIZE:
            raise BitstreamError("payload length does not match the header")
        body = data[:-CRC_SIZE]
        (crc,) = struct.unpack("<I", data[-CRC_SIZE:])
        if zlib.crc32(body) != crc:
            raise ChecksumError("CRC32 mismatch")
        if mode >= len(MODES):
            raise BitstreamError(f"unknown mode byte {mode}")
        return cls(prng_id=prng_id, mode=MODES[mode], seed=seed, model_hash=model_hash,
                   alpha=alpha, width=width, height=height, channels=channels,
                   payload=body[HEADER_SIZE:], version=version)
