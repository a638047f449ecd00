"""Rate-distortion evaluation of trained models."""

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .codec import coding_alphas, compress, decompress, psnr
from .model import DISTORTION_SCALE, image_to_blocks, pad_to_blocks, quantized_rd_loss, rd_loss

EVAL_FIELDS = ("image", "mode", "lam", "alpha", "bpp", "psnr", "mse")


@dataclass
class EvalRecord:
    image: str
    mode: str
    lam: float
    alpha: float
    bpp: float
    psnr: float
    mse: float

    def __post_init__(self):
        if self.bpp < 0:
            raise ValueError("bpp must be non-negative")


def evaluate_image(model, name, image, mode, seed=0, lam=math.nan, alpha=None, output=None):
    """Compress and decode one image; ``output`` optionally receives the bitstream."""
    result = compress(image, model, mode, seed=seed, alpha=alpha)
    if output is not None:
        with open(output, "wb") as f:
            f.write(result.data)
    recon = decompress(result.data, model)
    mse = float(np.mean((recon - image) ** 2))
    used_alpha = coding_alphas(model, mode, alpha)[0]
    return EvalRecord(name, mode, lam, math.nan if used_alpha is None else used_alpha, result.bpp, psnr(mse), mse)


def _evaluate_job(args):
    return evaluate_image(*args)


def evaluate(model, named_images, modes, seed=0, lam=math.nan, alpha=None, jobs=1):
    """One record per (image, mode), in sorted image order, then per-mode means."""
    tasks = [(model, name, img, mode, seed, lam, alpha)
             for name, img in sorted(named_images, key=lambda t: t[0]) for mode in modes]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(jobs) as pool:
            records = list(pool.map(_evaluate_job, tasks))
    else:
        records = [_evaluate_job(t) for t in tasks]
    return records + summarize(records, modes)


def summarize(records, modes):
    out = []
    for mode in modes:
        rs = [r for r in records if r.mode == mode]
        if not rs:
            continue
        mse = float(np.mean([r.mse for r in rs]))
        out.append(EvalRecord("mean", mode, rs[0].lam, rs[0].alpha,
                              float(np.mean([r.bpp for r in rs])),
                              float(np.mean([r.psnr for r in rs])), mse))
    return out


def write_records(path, records):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EVAL_FIELDS)
        for r in records:
            w.writerow(format_record(r))


def format_record(r):
    d = asdict(r)
    return [d[k] if isinstance(d[k], str) else ("" if math.isnan(d[k]) else f"{d[k]:.6g}")
            for k in EVAL_FIELDS]


def train_test_losses(model, image, lam, seed, alpha=None):
    """Training-objective loss vs the losses actually achieved at test time.

    ``train`` is the noisy loss with fresh uniform noise (what training
    minimizes); ``uq`` compresses with universal quantization and charges
    ``-log2 P(K | U)`` plus the distortion of the decoded, unclipped image;
    ``q`` uses hard rounding coded under the ``u = 0`` PMF. Actual payload
    bits of the ``uq`` stream are returned as ``uq_payload_bpp``.
    """
    mode = "un-uq-sr" if alpha is not None else "un-uq"
    padded = pad_to_blocks(image)
    blocks = image_to_blocks(padded)
    pixels = padded.shape[0] * padded.shape[1]
    rng = np.random.default_rng([seed, 99])
    u = rng.uniform(-0.5, 0.5, (len(blocks), model.channels))
    _, train = rd_loss(model, blocks, mode, lam, u, alpha=alpha)
    result = compress(padded, model, mode, seed=seed, alpha=alpha)
    uq_bpp = result.ideal_bits / pixels
    uq_mse = float(np.mean((result.reconstruction - padded) ** 2))
    q = quantized_rd_loss(model, blocks, lam)
    return {"train": train["loss"], "uq": uq_bpp + lam * DISTORTION_SCALE * uq_mse, "q": q["loss"],
            "train_bpp": train["rate_bpp"], "uq_bpp": uq_bpp, "q_bpp": q["rate_bpp"],
            "uq_payload_bpp": result.bpp}
