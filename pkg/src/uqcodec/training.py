"""Training loop for the linear codec: Adam on the rate-distortion loss."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .imageio import load_corpus
from .model import MODES, LinearModel, image_to_blocks, rd_loss
from .softround import SoftRoundParams

logger = logging.getLogger(__name__)

LOG_FIELDS = ("step", "rate_bpp", "mse", "loss", "alpha", "lambda")


@dataclass
class RdConfig:
    lam: float = 0.01
    mode: str = "un-uq"
    channels: int = 32
    steps: int = 20000
    batch_size: int = 8
    crop: int = 64
    learning_rate: float = 1e-3
    # fractions of ``steps``; the paper's 100k/200k of 2M steps, 5k warm-up, decay at 1.6M
    lam_decay_at: tuple = (0.05, 0.1)
    lam_decay_factor: float = 0.5
    lr_decay_at: float = 0.8
    lr_decay_factor: float = 0.1
    warmup_fraction: float = 0.0025
    alpha_start: float = 1.0
    alpha_end: float = 16.0
    recon_alpha: float = None
    expected_grads: bool = True
    density_filters: tuple = (8, 8, 8)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    checkpoint_every: int = 1000
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        self.lam_decay_at = tuple(self.lam_decay_at)
        self.density_filters = tuple(self.density_filters)

    @property
    def alpha_schedule(self):
        return SoftRoundParams(self.alpha_start, self.alpha_end, self.steps)

    def alpha(self, step):
        return self.alpha_schedule.alpha(step) if self.mode == "un-uq-sr" else None

    def lam_at(self, step):
        n = sum(step >= int(round(f * self.steps)) for f in self.lam_decay_at)
        return self.lam * self.lam_decay_factor**n

    def lr_at(self, step):
        lr = self.learning_rate
        if step >= int(round(self.lr_decay_at * self.steps)):
            lr *= self.lr_decay_factor
        return lr

    def warmup_steps(self):
        return int(round(self.warmup_fraction * self.steps))

    def to_dict(self):
        d = asdict(self)
        d["lam_decay_at"] = list(self.lam_decay_at)
        d["density_filters"] = list(self.density_filters)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, state=None):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {p.name: np.zeros(p.shape) for p in params}
        self.v = {p.name: np.zeros(p.shape) for p in params}
        if state:
            self.t = state["t"]
            self.m.update(state["m"])
            self.v.update(state["v"])

    def step(self, lrs):
        """``lrs`` maps parameter name to learning rate (0 freezes it)."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p in self.params:
            g = np.zeros(p.shape) if p.grad is None else p.grad
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1.0 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1.0 - self.beta2) * g * g
            lr = lrs[p.name]
            if lr:
                p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class BatchSampler:
    """Seeded random crops; step ``t`` always yields the same batch."""

    def __init__(self, images, crop, batch_size, seed):
        self.images = [im for im in images if im.shape[0] >= crop and im.shape[1] >= crop]
        if not self.images:
            raise ValueError(f"no images of at least {crop}x{crop} pixels")
        self.crop = crop
        self.batch_size = batch_size
        self.seed = seed

    def batch(self, step):
        rng = np.random.default_rng([self.seed, step])
        out = []
        for _ in range(self.batch_size):
            im = self.images[rng.integers(len(self.images))]
            i = rng.integers(im.shape[0] - self.crop + 1)
            j = rng.integers(im.shape[1] - self.crop + 1)
            out.append(image_to_blocks(im[i:i + self.crop, j:j + self.crop]))
        return np.concatenate(out)


def noise(seed, step, shape):
    return np.random.default_rng([seed, step, 1]).uniform(-0.5, 0.5, shape)


class TrainingDiverged(RuntimeError):
    pass


def train(data, config, out_dir=None, resume=None, log_every=1):
    """Train a ``LinearModel``.

    ``data`` is a directory of images or a list of ``(H, W, 3)`` arrays in
    [0, 1]. With ``out_dir`` a checkpoint (``model.uqcm``) and
    ``train_log.csv`` are written there. ``resume`` is a checkpoint path;
    its stored configuration replaces ``config`` and the schedules continue
    from its stored step. Returns ``(model, log)``.
    """
    images = load_corpus(data) if isinstance(data, (str, Path)) else list(data)
    start = 0
    if resume is not None:
        model = LinearModel.load(resume)
        saved = dict(model.config)
        config = RdConfig.from_dict(saved["rd_config"])
        start = saved["step"]
        model = LinearModel(config.channels, filters=config.density_filters,
                            config=model.config, params=model.state())
    else:
        model = LinearModel(config.channels, seed=config.seed, filters=config.density_filters)
    sampler = BatchSampler(images, config.crop, config.batch_size, config.seed)
    optimizer = Adam(model.parameters(), config.beta1, config.beta2, config.eps)
    transform_names = {p.name for p in model.transform_parameters()}
    log = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        if resume is not None and (out_dir / "train_log.csv").exists():
            log = [r for r in read_log(out_dir / "train_log.csv") if r["step"] < start]
    last_good = None

    for step in range(start, config.steps):
        alpha = config.alpha(step)
        lam = config.lam_at(step)
        blocks = sampler.batch(step)
        u = noise(config.seed, step, (len(blocks), config.channels))
        ad.zero_grad(model.parameters())
        try:
            loss, parts = rd_loss(model, blocks, config.mode, lam, u, alpha=alpha,
                                  recon_alpha=config.recon_alpha, expected_grads=config.expected_grads)
            ad.backward(loss)
        except ad.AutodiffError as exc:
            if out_dir is not None and last_good is not None:
                (out_dir / "model.uqcm").write_bytes(last_good)
            raise TrainingDiverged(f"step {step}: {exc}") from exc
        lr = config.lr_at(step)
        warm = step < config.warmup_steps()
        optimizer.step({p.name: (0.0 if warm and p.name in transform_names else lr)
                        for p in model.parameters()})
        if step % log_every == 0 or step == config.steps - 1:
            log.append({"step": step, "rate_bpp": parts["rate_bpp"], "mse": parts["mse"],
                        "loss": parts["loss"], "alpha": math.nan if alpha is None else alpha,
                        "lambda": lam})
        done = step + 1
        if out_dir is not None and (done % config.checkpoint_every == 0 or done == config.steps):
            last_good = _checkpoint(model, config, done).to_bytes()
            (out_dir / "model.uqcm").write_bytes(last_good)
            write_log(out_dir / "train_log.csv", log)
    return _checkpoint(model, config, config.steps), log


def _checkpoint(model, config, step):
    cfg = dict(model.config)
    cfg.update(rd_config=config.to_dict(), step=step, mode=config.mode,
               alpha_end=config.alpha_end if config.mode == "un-uq-sr" else None,
               recon_alpha=config.recon_alpha)
    m = LinearModel(model.channels, filters=model.filters, config=cfg, params=model.state())
    return m.frozen()


def read_log(path):
    with open(path, newline="") as f:
        return [{k: (int(v) if k == "step" else float(v) if v else math.nan) for k, v in r.items()}
                for r in csv.DictReader(f)]


def write_log(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in LOG_FIELDS})


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6g}"
    return v
