"""Statistical checks of the channel identities and the gradient estimators."""

import numpy as np
from scipy import integrate, stats

from .channel import (DitherStream, ScaleMixtureSpec, channel_reconstruct, gaussian_channel,
                      hexagonal_lattice, lattice_universal_quantize, shared_scales,
                      universal_quantize, voronoi_offsets)
from .density import LogisticDensity, softround_log_density
from .softround import soft_round_np


def uq_identity(y, n, seed=0):
    """KS test of ``round(y - U) + U`` against ``y + U'`` with independent ``U'``."""
    u = DitherStream(seed).offsets_for_shape((n,))
    u2 = DitherStream(seed, stream=7).offsets_for_shape((n,))
    k = universal_quantize(np.full(n, y), u)
    recon = channel_reconstruct(k, u)
    res = stats.ks_2samp(recon, y + u2)
    return float(res.statistic), float(res.pvalue)


def energy_distance_test(a, b, directions=6, permutations=199, seed=0):
    """Two-sample permutation test on a 2-D energy statistic.

    The statistic averages the 1-D energy distance ``2 * int (F - G)^2`` of
    the projections onto ``directions`` evenly spaced unit vectors, which is
    proportional to the 2-D energy distance up to quadrature over
    directions. Labels are permuted on a fixed sort so each permutation is
    linear time.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    pooled = np.concatenate([a, b])
    n = len(a)
    labels = np.zeros(len(pooled), dtype=bool)
    labels[n:] = True
    angles = np.pi * np.arange(directions) / directions
    sorted_views = []
    for t in angles:
        proj = pooled @ np.array([np.cos(t), np.sin(t)])
        order = np.argsort(proj, kind="stable")
        sorted_views.append((order, np.diff(proj[order])))

    def statistic(lab):
        total = 0.0
        for order, gaps in sorted_views:
            lb = lab[order][:-1]
            f = np.cumsum(~lb) / n
            g = np.cumsum(lb) / (len(lab) - n)
            total += 2.0 * np.sum((f - g) ** 2 * gaps)
        return total / directions

    observed = statistic(labels)
    rng = np.random.default_rng(seed)
    exceed = sum(statistic(rng.permutation(labels)) >= observed for _ in range(permutations))
    return observed, (1 + exceed) / (permutations + 1)


def hexagonal_equivalence(n, seed=0, y=(0.0, 0.0)):
    """Energy test of ``Q(y - U) + U`` against ``y + U'`` on the hexagonal lattice."""
    lattice = hexagonal_lattice()
    dither = DitherStream(seed)
    _, recon = lattice_universal_quantize(np.tile(np.asarray(y, dtype=np.float64), (n, 1)), lattice, dither)
    direct = np.asarray(y) + voronoi_offsets(lattice, DitherStream(seed + 1), n)
    return energy_distance_test(recon, direct, seed=seed)


def gaussian_channel_moments(n, sigma=1.0, seed=0, y=0.3):
    """Moments and KS p-value of ``reconstruction - y`` for the scale-mixture channel."""
    dither = DitherStream(seed)
    s = shared_scales(ScaleMixtureSpec(sigma), dither, n)
    u = dither.offsets_for_shape((n,))
    _, recon = gaussian_channel(np.full(n, y), s, u)
    err = recon - y
    ks = stats.kstest(err, "norm", args=(0.0, sigma))
    return {"mean": float(err.mean()), "variance": float(err.var()),
            "excess_kurtosis": float(stats.kurtosis(err)), "ks_pvalue": float(ks.pvalue)}


def logistic_rate_gradients(alpha, n, seed=0, loc=0.0, scale=1.0, y=None):
    """Per-coefficient gradients of the soft-rounded logistic rate term.

    ``h(z) = -log2 p_{s(Y)+U}(z)``. The pathwise estimate is ``h'(y + u)``
    (central difference, step 1e-6); the expected estimate is
    ``h(y + 0.5) - h(y - 0.5)``. ``y`` defaults to ``s_alpha`` of logistic
    draws, otherwise it is held fixed and only the noise varies.
    """
    rng = np.random.default_rng(seed)
    density = LogisticDensity(loc, scale)

    def h(z):
        return -softround_log_density(z, alpha, density, channel=0)

    if y is None:
        y = soft_round_np(rng.logistic(loc, scale, n), alpha)
    else:
        y = np.full(n, float(y))
    u = rng.uniform(-0.5, 0.5, n)
    eps = 1e-6
    pathwise = (h(y + u + eps) - h(y + u - eps)) / (2.0 * eps)
    expected = h(y + 0.5) - h(y - 0.5)
    return pathwise, expected


def gradient_variance_ratio(alpha, n=10_000, seed=0):
    pathwise, expected = logistic_rate_gradients(alpha, n, seed)
    return float(np.var(pathwise) / np.var(expected)), float(np.var(pathwise)), float(np.var(expected))


def softround_density_chi2(alpha, n, seed=0, lo=-6.0, hi=6.0, bins=120):
    """Chi-squared test of simulated ``s(Y) + U`` (logistic ``Y``) against the adapter density."""
    rng = np.random.default_rng(seed)
    density = LogisticDensity(0.0, 1.0)
    z = soft_round_np(rng.logistic(0.0, 1.0, n), alpha) + rng.uniform(-0.5, 0.5, n)
    edges = np.linspace(lo, hi, bins + 1)
    observed = np.histogram(z, edges)[0].astype(np.float64)

    def p(v):
        return np.exp2(softround_log_density(np.atleast_1d(v), alpha, density, channel=0))

    probs = np.array([integrate.quad(lambda v: p(v)[0], a, b, limit=200, epsabs=1e-13)[0]
                      for a, b in zip(edges[:-1], edges[1:])])
    outside = 1.0 - probs.sum()
    observed = np.append(observed, n - observed.sum())
    expected = np.append(probs, outside) * n
    keep = expected >= 5
    # fold sparse cells into the outside cell
    obs = np.append(observed[keep], observed[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] < 5:
        obs[-2] += obs[-1]
        exp[-2] += exp[-1]
        obs, exp = obs[:-1], exp[:-1]
    chi2 = float(np.sum((obs - exp) ** 2 / exp))
    return chi2, float(stats.chi2.sf(chi2, len(obs) - 1))
