"""Linear 8x8 block-transform codec and its rate-distortion loss."""

import hashlib
import json
import struct

import numpy as np

from . import autodiff as ad
from .density import FactorizedDensity, log2_likelihood, rate_term, symbol_range
from .softround import reconstruct, reconstruct_expected_grad, soft_round

BLOCK = 8
BLOCK_DIM = BLOCK * BLOCK * 3
#: Distortion is MSE on [0, 1] pixels times this factor (MSE on the 0..255 scale).
DISTORTION_SCALE = 255.0**2
PIXEL_OFFSET = 0.5

MODEL_MAGIC = b"UQCM"
MODEL_VERSION = 1
MODES = ("un-q", "un-uq", "un-uq-sr")


class ModelFormatError(ValueError):
    pass


def orthogonal(rows, cols, rng):
    """Random matrix with orthonormal rows (or columns), via sign-fixed QR."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.where(np.diag(r) < 0, -1.0, 1.0)
    return q.T if rows < cols else q[:rows, :cols]


def image_to_blocks(image):
    """``(H, W, 3)`` -> ``(H/8 * W/8, 192)``; each row is one block flattened (row, col, colour)."""
    h, w, c = image.shape
    blocks = image.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK, c).transpose(0, 2, 1, 3, 4)
    return blocks.reshape(-1, BLOCK_DIM)


def blocks_to_image(blocks, hb, wb):
    img = np.asarray(blocks).reshape(hb, wb, BLOCK, BLOCK, 3).transpose(0, 2, 1, 3, 4)
    return img.reshape(hb * BLOCK, wb * BLOCK, 3)


def pad_to_blocks(image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] == 0 or image.shape[1] == 0:
        raise ValueError(f"expected a non-empty (H, W, 3) image, got shape {image.shape}")
    h, w = image.shape[:2]
    ph, pw = -h % BLOCK, -w % BLOCK
    if ph or pw:
        mode = "reflect" if h > ph and w > pw else "symmetric"
        image = np.pad(image, ((0, ph), (0, pw), (0, 0)), mode=mode)
    return image


class LinearModel:
    """Analysis matrix ``A`` (C x 192), synthesis matrix ``B`` (192 x C) and a
    factorized density over the C coefficient channels."""

    def __init__(self, channels=32, seed=0, filters=(8, 8, 8), config=None, params=None,
                 tied=False):
        self.channels = int(channels)
        self.filters = tuple(filters)
        self.config = dict(config or {})
        if params is None:
            rng = np.random.default_rng(seed)
            analysis = orthogonal(self.channels, BLOCK_DIM, rng)
            synthesis = analysis.T.copy() if tied else orthogonal(BLOCK_DIM, self.channels, rng)
            params = {"analysis": analysis, "synthesis": synthesis}
            density_params = None
        else:
            density_params = {k: v for k, v in params.items() if k.startswith("density.")
                              and k != "density.symbol_range"}
        self.analysis = ad.Tensor(params["analysis"], requires_grad=True, name="analysis")
        self.synthesis = ad.Tensor(params["synthesis"], requires_grad=True, name="synthesis")
        if self.analysis.shape != (self.channels, BLOCK_DIM) or self.synthesis.shape != (BLOCK_DIM, self.channels):
            raise ModelFormatError("transform matrices have inconsistent shapes")
        self.density = FactorizedDensity(self.channels, self.filters, seed=seed, params=density_params)
        k_range = params.get("density.symbol_range")
        self.symbol_range = None if k_range is None else np.asarray(k_range).astype(np.int64)

    # parameters ----------------------------------------------------------------

    def transform_parameters(self):
        return [self.analysis, self.synthesis]

    def parameters(self):
        return self.transform_parameters() + self.density.parameters()

    def state(self):
        out = {"analysis": self.analysis.data, "synthesis": self.synthesis.data}
        out.update(self.density.state())
        return out

    def frozen(self):
        """Copy with float32-rounded parameters and a computed symbol range.

        Encoder and decoder both work from this form, which is exactly what
        the model file stores.
        """
        params = {k: v.astype(np.float32).astype(np.float64) for k, v in self.state().items()}
        model = LinearModel(self.channels, filters=self.filters, config=self.config, params=params)
        model.symbol_range = symbol_range(model.density)
        return model

    # transforms ------------------------------------------------------------------

    def analyze(self, blocks):
        """``(N, 192)`` pixel blocks -> ``(N, C)`` coefficients (Tensor-aware)."""
        if isinstance(blocks, ad.Tensor):
            return ad.matmul(ad.add(blocks, -PIXEL_OFFSET), ad.transpose(self.analysis))
        return (np.asarray(blocks) - PIXEL_OFFSET) @ self.analysis.data.T

    def synthesize(self, coeffs):
        if isinstance(coeffs, ad.Tensor):
            return ad.add(ad.matmul(coeffs, ad.transpose(self.synthesis)), PIXEL_OFFSET)
        return np.asarray(coeffs) @ self.synthesis.data.T + PIXEL_OFFSET

    def encode_blocks(self, image):
        """``(H, W, 3)`` image -> ``(H/8, W/8, C)`` coefficients; pads by reflection."""
        padded = pad_to_blocks(image)
        hb, wb = padded.shape[0] // BLOCK, padded.shape[1] // BLOCK
        return self.analyze(image_to_blocks(padded)).reshape(hb, wb, self.channels)

    def decode_blocks(self, coeffs, height=None, width=None):
        hb, wb, _ = coeffs.shape
        img = blocks_to_image(self.synthesize(coeffs.reshape(-1, self.channels)), hb, wb)
        return img[:height, :width]

    # serialization ---------------------------------------------------------------

    def to_bytes(self):
        model = self if self.symbol_range is not None else self.frozen()
        tensors = {k: v.astype(np.float32) for k, v in model.state().items()}
        tensors["density.symbol_range"] = model.symbol_range.astype(np.float32)
        config = dict(model.config, channels=model.channels, filters=list(model.filters))
        blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
        out = bytearray(MODEL_MAGIC)
        out += struct.pack("<BI", MODEL_VERSION, len(blob)) + blob
        out += struct.pack("<I", len(tensors))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f4")
            key = name.encode("utf-8")
            out += struct.pack("<H", len(key)) + key
            out += struct.pack("<BB", 0, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
            out += arr.tobytes()
        out += hashlib.sha256(out).digest()
        return bytes(out)

    @classmethod
    def from_bytes(cls, data):
        data = bytes(data)
        if len(data) < 4 + 32 or data[:4] != MODEL_MAGIC:
            raise ModelFormatError("not a model file")
        body, digest = data[:-32], data[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise ModelFormatError("model file checksum mismatch")
        version, n = struct.unpack_from("<BI", body, 4)
        if version != MODEL_VERSION:
            raise ModelFormatError(f"unsupported model version {version}")
        pos = 9
        config = json.loads(body[pos:pos + n].decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + klen].decode("utf-8")
            pos += klen
            dtype, ndim = struct.unpack_from("<BB", body, pos)
            pos += 2
            if dtype != 0:
                raise ModelFormatError(f"unsupported dtype code {dtype}")
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) * 4
            params[name] = np.frombuffer(body[pos:pos + size], dtype="<f4").reshape(shape).astype(np.float64)
            pos += size
        channels = config.pop("channels")
        filters = tuple(config.pop("filters"))
        return cls(channels, filters=filters, config=config, params=params)

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def hash(self):
        """First 8 bytes of the SHA-256 of the serialized model."""
        return hashlib.sha256(self.to_bytes()).digest()[:8]


def rd_loss(model, blocks, mode, lam, u, alpha=None, recon_alpha=None, expected_grads=True):
    """Rate (bits per pixel) plus ``lam`` times scaled MSE, on the tape.

    ``blocks`` is ``(N, 192)`` pixels in [0, 1]; ``u`` is ``(N, C)`` noise.
    UN modes use ``y + u``; the SR mode soft-rounds first and reconstructs
    with ``reconstruct``. Returns ``(loss, parts)`` where ``parts`` holds
    float values of the rate, MSE and loss.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    x = ad.as_tensor(blocks)
    n_pixels = x.shape[0] * BLOCK * BLOCK
    y = model.analyze(x)
    if mode == "un-uq-sr":
        if alpha is None:
            raise ValueError("soft rounding mode needs alpha")
        recon_alpha = alpha if recon_alpha is None else recon_alpha
        y = soft_round(y, alpha)
        density_alpha = alpha
    elif mode in ("un-uq", "un-q"):
        density_alpha = None
    else:
        raise ValueError(f"unknown mode {mode!r}")
    # the density works channel-major: (C, N)
    y_cm = ad.transpose(y)
    u_cm = np.asarray(u, dtype=np.float64).T
    try:
        rate = rate_term(y_cm, u_cm, model.density, density_alpha, expected_grad=expected_grads)
        bpp = ad.mul(rate, 1.0 / n_pixels)
    except ad.AutodiffError as exc:
        raise ad.AutodiffError(f"rate term: {exc}") from exc
    try:
        if mode == "un-uq-sr":
            if expected_grads:
                z = reconstruct_expected_grad(y, u, recon_alpha)
            else:
                z = reconstruct(ad.add(y, u), recon_alpha)
        else:
            z = ad.add(y, u)
        dist = ad.mse(model.synthesize(z), x)
    except ad.AutodiffError as exc:
        raise ad.AutodiffError(f"distortion term: {exc}") from exc
    loss = ad.add(bpp, ad.mul(dist, lam * DISTORTION_SCALE))
    parts = {"rate_bpp": float(bpp.data), "mse": float(dist.data), "loss": float(loss.data)}
    return loss, parts


def quantized_rd_loss(model, blocks, lam):
    """Hard-quantization loss: ``round(y)`` coded under the ``u = 0`` PMF."""
    y = model.analyze(np.asarray(blocks))
    k = ad.round_half_away(y)
    bits = -log2_likelihood(model.density, k.T, None).data.sum()
    x_hat = model.synthesize(k)
    mse = float(np.mean((x_hat - blocks) ** 2))
    bpp = bits / (len(blocks) * BLOCK * BLOCK)
    return {"rate_bpp": bpp, "mse": mse, "loss": bpp + lam * DISTORTION_SCALE * mse}
