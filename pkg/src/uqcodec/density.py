"""Per-channel entropy models.

Every model is parameterized through a CDF ``c(y) = sigmoid(logits(y))``.
The density of ``Y + U`` is ``c(y + 0.5) - c(y - 0.5)``, and the density of
``s(Y) + U`` for an invertible, unit-periodic ``s`` is
``c(s^-1(z + 0.5)) - c(s^-1(z - 0.5))``. Evaluated at ``k + u`` the same
expression is the coding probability of symbol ``k`` given dither ``u``, so
the loss and the coder share one function.
"""

import logging
import re

import numpy as np

from . import autodiff as ad
from .softround import soft_round_inverse, soft_round_inverse_np

logger = logging.getLogger(__name__)

#: Probability floor for a single symbol or density value (log2 = -120).
LOG2_FLOOR = -120.0
PROB_FLOOR = 2.0**LOG2_FLOOR


class CdfModel:
    """Base class: subclasses implement ``logits`` over ``(channels, N)`` inputs."""

    channels = 0

    def parameters(self):
        return []

    def logits(self, x, channel=None):
        raise NotImplementedError

    def logits_np(self, x, channel=None):
        return self.logits(ad.Tensor(x, op="const", check=False), channel).data

    def cdf_np(self, x, channel=None):
        return ad._sigmoid(self.logits_np(x, channel))

    def quantile(self, p, iters=100):
        """Per-channel ``y`` with ``c(y) = p``, by bisection on the logits."""
        target = np.log(p) - np.log1p(-p)
        lo = np.full((self.channels, 1), -2.0**24)
        hi = np.full((self.channels, 1), 2.0**24)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            below = self.logits_np(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return (0.5 * (lo + hi))[:, 0]


class LogisticDensity(CdfModel):
    """Logistic baseline, ``logits = (y - loc) / scale`` per channel."""

    def __init__(self, loc, scale):
        self.loc = np.atleast_1d(np.asarray(loc, dtype=np.float64))
        self.scale = np.atleast_1d(np.asarray(scale, dtype=np.float64))
        if np.any(self.scale <= 0):
            raise ValueError("scale must be positive")
        self.loc, self.scale = np.broadcast_arrays(self.loc, self.scale)
        self.channels = len(self.loc)

    def logits(self, x, channel=None):
        x = ad.as_tensor(x)
        if channel is None:
            loc, scale = self.loc[:, None], self.scale[:, None]
        else:
            loc, scale = self.loc[channel], self.scale[channel]
        return ad.mul(ad.add(x, -loc), 1.0 / scale)


class FactorizedDensity(CdfModel):
    """Non-parametric monotone CDF, one small network per channel.

    Each layer is ``v <- softplus(H) v + b`` followed, except for the last,
    by ``v <- v + tanh(a) * tanh(v)``. Positive weights and ``tanh(a) > -1``
    keep every layer increasing, so the CDF is strictly increasing.
    """

    def __init__(self, channels, filters=(8, 8, 8), init_scale=10.0, seed=0, params=None):
        self.channels = int(channels)
        self.filters = tuple(int(f) for f in filters)
        dims = (1,) + self.filters + (1,)
        self.depth = len(dims) - 1
        if params is None:
            rng = np.random.default_rng(seed)
            scale = init_scale ** (1.0 / self.depth)
            params = {}
            for i in range(self.depth):
                init = np.log(np.expm1(1.0 / scale / dims[i + 1]))
                params[f"density.matrix{i}"] = np.full((self.channels, dims[i + 1], dims[i]), init)
                params[f"density.bias{i}"] = rng.uniform(-0.5, 0.5, (self.channels, dims[i + 1], 1))
                if i < self.depth - 1:
                    params[f"density.factor{i}"] = np.zeros((self.channels, dims[i + 1], 1))
        self.tensors = {name: ad.Tensor(np.asarray(v, dtype=np.float64), requires_grad=True, name=name)
                        for name, v in sorted(params.items())}
        for name, t in self.tensors.items():
            expected = self._shape(name, dims)
            if t.shape != expected:
                raise ValueError(f"{name}: expected shape {expected}, got {t.shape}")

    def _shape(self, name, dims):
        i = int(re.search(r"(\d+)$", name).group(1))
        if "matrix" in name:
            return (self.channels, dims[i + 1], dims[i])
        return (self.channels, dims[i + 1], 1)

    def parameters(self):
        return list(self.tensors.values())

    def state(self):
        return {name: t.data for name, t in self.tensors.items()}

    def logits(self, x, channel=None):
        x = ad.as_tensor(x)
        shape = x.shape
        if channel is None:
            p = self.tensors
            c = self.channels
        else:
            p = {n: ad.Tensor(t.data[channel:channel + 1], op="const") for n, t in self.tensors.items()}
            c = 1
        v = ad.reshape(x, (c, 1, -1))
        for i in range(self.depth):
            v = ad.add(ad.matmul(ad.softplus(p[f"density.matrix{i}"]), v), p[f"density.bias{i}"])
            if i < self.depth - 1:
                v = ad.add(v, ad.mul(ad.tanh(p[f"density.factor{i}"]), ad.tanh(v)))
        return ad.reshape(v, shape)


class SoftRoundAdapter:
    """Density of ``soft_round(Y) + U`` for a base CDF model of ``Y``."""

    def __init__(self, base, alpha):
        self.base = base
        self.alpha = alpha

    def log2_prob(self, z, channel=None):
        return log2_likelihood(self.base, z, self.alpha, channel)

    def pmf(self, k, u, channel=None):
        return pmf_given_dither(k, u, self.alpha, self.base, channel)


def _interval(z, alpha):
    if alpha is None:
        return ad.add(z, -0.5)
    return soft_round_inverse(ad.add(z, -0.5), alpha)


def _bucket_probability(lower_logits, upper_logits):
    # evaluate the CDF difference on whichever tail keeps precision
    flip = np.where(lower_logits.data + upper_logits.data > 0, -1.0, 1.0)
    diff = ad.add(ad.sigmoid(ad.mul(upper_logits, flip)), ad.neg(ad.sigmoid(ad.mul(lower_logits, flip))))
    return ad.mul(diff, flip)


def log2_likelihood(density, z, alpha=None, channel=None):
    """``log2`` of the density of ``Y + U`` (``alpha=None``) or ``s_alpha(Y) + U`` at ``z``.

    Values below the floor are clamped to ``LOG2_FLOOR``; the count is logged.
    """
    z = ad.as_tensor(z)
    lower = _interval(z, alpha)
    upper = ad.add(lower, 1.0)
    p = _bucket_probability(density.logits(lower, channel), density.logits(upper, channel))
    clamped = int(np.count_nonzero(p.data <= PROB_FLOOR))
    if clamped:
        logger.debug("likelihood floor hit for %d values", clamped)
    return ad.log2(ad.lower_bound(p, PROB_FLOOR))


def noisy_log_density(z, density, channel=None):
    """``log2 p_{Y+U}(z)`` as a numpy array."""
    return log2_likelihood(density, np.asarray(z, dtype=np.float64), None, channel).data


def softround_log_density(z, alpha, density, channel=None):
    """``log2 p_{s(Y)+U}(z)`` as a numpy array."""
    return log2_likelihood(density, np.asarray(z, dtype=np.float64), alpha, channel).data


def pmf_given_dither(k, u, alpha, density, channel=None):
    """``P(K = k | U = u)``; equals the noisy density at ``k + u``."""
    z = np.asarray(k, dtype=np.float64) + np.asarray(u, dtype=np.float64)
    return np.exp2(log2_likelihood(density, z, alpha, channel).data)


def rate_term(y, u, density, alpha=None, expected_grad=True):
    """Total bits ``-sum log2 p(y + u)`` over a ``(channels, N)`` array.

    With ``expected_grad`` the derivative w.r.t. ``y`` is replaced by the
    exact derivative of the expectation over ``u``; density parameters keep
    their sampled-point gradient.
    """
    y = ad.as_tensor(y)
    if y.size == 0:
        return ad.Tensor(0.0)

    def bits(z):
        return ad.neg(log2_likelihood(density, z, alpha))

    if expected_grad:
        per_element = ad.expected_grad_wrap(bits, y, u)
    else:
        per_element = bits(ad.add(y, np.asarray(u, dtype=np.float64)))
    return ad.sum_(per_element)


def symbol_range(density, tail_mass=1e-9, max_width=4096):
    """Per-channel ``[k_min, k_max]`` covering all but ``tail_mass`` of the model."""
    lo = density.quantile(tail_mass / 2.0)
    hi = density.quantile(1.0 - tail_mass / 2.0)
    kmin = np.floor(lo) - 1
    kmax = np.ceil(hi) + 1
    centre = np.round(0.5 * (kmin + kmax))
    half = max_width // 2 - 1
    kmin = np.maximum(kmin, centre - half)
    kmax = np.minimum(kmax, centre + half)
    return np.stack([kmin, kmax], axis=1).astype(np.int64)


def pmf_table(density, channel, offsets, alpha, kmin, kmax):
    """Rows of ``P(k | u)`` for ``k in [kmin, kmax]`` plus a final escape column.

    The escape column holds the mass outside the range, so every row sums to
    one by telescoping. All entries are floored at ``PROB_FLOOR``.
    """
    u = np.asarray(offsets, dtype=np.float64).reshape(-1, 1)
    n = int(kmax - kmin + 1)
    start = kmin + u - 0.5
    if alpha is not None:
        start = soft_round_inverse_np(start, alpha)
    grid = start + np.arange(n + 1, dtype=np.float64)
    logits = density.logits_np(grid, channel)
    lower, upper = logits[:, :-1], logits[:, 1:]
    flip = np.where(lower + upper > 0, -1.0, 1.0)
    probs = flip * (ad._sigmoid(flip * upper) - ad._sigmoid(flip * lower))
    escape = ad._sigmoid(logits[:, :1]) + ad._sigmoid(-logits[:, -1:])
    return np.maximum(np.concatenate([probs, escape], axis=1), PROB_FLOOR)
