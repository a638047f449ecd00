"""Image compression and decompression with a trained ``LinearModel``."""

from dataclasses import dataclass

import numpy as np

from .bitstream import Bitstream, BitstreamError, ModelMismatchError
from .channel import DitherStream, universal_quantize
from .coder import decode_symbols, encode_symbols, ideal_code_length
from .model import BLOCK
from .prng import PRNG_ID_PHILOX4X32_10
from .softround import reconstruct_np, soft_round_np


@dataclass
class CompressResult:
    data: bytes
    bpp: float
    ideal_bits: float
    reconstruction: np.ndarray  # unclipped float reconstruction the decoder will produce


#: Inference sharpness for models trained without soft rounding.
DEFAULT_ALPHA = 16.0


def _f32(x):
    return float(np.float32(x))


def coding_alphas(model, mode, alpha=None):
    """(soft-rounding alpha, reconstruction alpha) used at inference."""
    if mode != "un-uq-sr":
        return None, None
    if alpha is None:
        alpha = model.config.get("alpha_end") or DEFAULT_ALPHA
    recon = model.config.get("recon_alpha") or alpha
    return _f32(alpha), recon


def _ensure_frozen(model):
    return model if model.symbol_range is not None else model.frozen()


def _dither_cm(seed, shape_cm):
    # raster order: channel-major, then block row, then block column
    return DitherStream(seed).offsets_for_shape(shape_cm)


def compress(image, model, mode="un-uq", seed=0, alpha=None):
    """Compress an ``(H, W, 3)`` image in [0, 1]; returns a ``CompressResult``."""
    model = _ensure_frozen(model)
    image = np.asarray(image, dtype=np.float64)
    coeffs = model.encode_blocks(image)
    hb, wb, c = coeffs.shape
    y = coeffs.reshape(-1, c).T
    s_alpha, r_alpha = coding_alphas(model, mode, alpha)
    if mode == "un-q":
        u = np.zeros_like(y)
        k = universal_quantize(y, u)
        z = k.astype(np.float64)
    elif mode in ("un-uq", "un-uq-sr"):
        u = _dither_cm(seed, y.shape)
        if mode == "un-uq-sr":
            y = soft_round_np(y, s_alpha)
        k = universal_quantize(y, u)
        z = k + u
        if mode == "un-uq-sr":
            z = reconstruct_np(z, r_alpha)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    payload = encode_symbols(k, u, model.density, s_alpha, model.symbol_range)
    stream = Bitstream(prng_id=PRNG_ID_PHILOX4X32_10, mode=mode, seed=seed, model_hash=model.hash(),
                       alpha=0.0 if s_alpha is None else s_alpha, width=image.shape[1],
                       height=image.shape[0], channels=c, payload=payload)
    recon = model.decode_blocks(z.T.reshape(hb, wb, c), image.shape[0], image.shape[1])
    pixels = image.shape[0] * image.shape[1]
    return CompressResult(stream.to_bytes(), 8.0 * len(payload) / pixels,
                          ideal_code_length(k, u, model.density, s_alpha, model.symbol_range),
                          recon)


def decompress(data, model, clip=True):
    """Decode a bitstream; returns the ``(H, W, 3)`` reconstruction."""
    model = _ensure_frozen(model)
    stream = Bitstream.from_bytes(data)
    if stream.model_hash != model.hash():
        raise ModelMismatchError("bitstream was produced with a different model")
    if stream.prng_id != PRNG_ID_PHILOX4X32_10:
        raise BitstreamError(f"unknown PRNG id {stream.prng_id}")
    if stream.channels != model.channels:
        raise BitstreamError("channel count does not match the model")
    hb = -(-stream.height // BLOCK)
    wb = -(-stream.width // BLOCK)
    shape_cm = (model.channels, hb * wb)
    if stream.mode == "un-q":
        u = np.zeros(shape_cm)
        s_alpha = r_alpha = None
    else:
        u = _dither_cm(stream.seed, shape_cm)
        s_alpha = stream.alpha if stream.mode == "un-uq-sr" else None
        r_alpha = (model.config.get("recon_alpha") or s_alpha) if s_alpha else None
    k = decode_symbols(stream.payload, u, model.density, s_alpha, model.symbol_range)
    z = k + u
    if stream.mode == "un-uq-sr":
        z = reconstruct_np(z, r_alpha)
    image = model.decode_blocks(z.T.reshape(hb, wb, model.channels), stream.height, stream.width)
    return np.clip(image, 0.0, 1.0) if clip else image


def psnr(mse):
    return float("inf") if mse <= 0 else -10.0 * np.log10(mse)
