"""Independent high-precision reference values (mpmath), written without the package."""

import mpmath as mp

mp.mp.dps = 40


def soft_round(y, alpha):
    y, a = mp.mpf(y), mp.mpf(alpha)
    f = mp.floor(y)
    r = y - f - mp.mpf("0.5")
    return f + mp.tanh(a * r) / (2 * mp.tanh(a / 2)) + mp.mpf("0.5")


def soft_round_inverse(z, alpha):
    z, a = mp.mpf(z), mp.mpf(alpha)
    f = mp.floor(z)
    t = (z - f - mp.mpf("0.5")) * 2 * mp.tanh(a / 2)
    return f + mp.atanh(t) / a + mp.mpf("0.5")


def logistic_cdf(x, loc=0, scale=1):
    return 1 / (1 + mp.exp(-(mp.mpf(x) - loc) / scale))


def logistic_noisy_density(z, loc=0, scale=1):
    """p_{Y+U}(z) = c(z + 1/2) - c(z - 1/2)."""
    z = mp.mpf(z)
    return logistic_cdf(z + mp.mpf("0.5"), loc, scale) - logistic_cdf(z - mp.mpf("0.5"), loc, scale)


def logistic_softround_density(z, alpha, loc=0, scale=1):
    """Density of s(Y) + U at z: c(s^-1(z + 1/2)) - c(s^-1(z - 1/2))."""
    z = mp.mpf(z)
    hi = soft_round_inverse(z + mp.mpf("0.5"), alpha)
    lo = soft_round_inverse(z - mp.mpf("0.5"), alpha)
    return logistic_cdf(hi, loc, scale) - logistic_cdf(lo, loc, scale)


def noisy_entropy_bits(loc=0, scale=1, span=60):
    """Differential entropy h[Y + U] in bits for logistic Y, by quadrature."""
    def integrand(z):
        p = logistic_noisy_density(z, loc, scale)
        return -p * mp.log(p, 2) if p > 0 else mp.mpf(0)
    return float(mp.quad(integrand, mp.linspace(loc - span, loc + span, 121)))


def uniform_prior_posterior_mean(z, alpha, lo=-2.0, hi=2.0):
    """E[Y | s(Y) + U = z] for Y uniform on [lo, hi] and U uniform on [-1/2, 1/2).

    The posterior is the prior restricted to s(Y) in (z - 1/2, z + 1/2].
    """
    a = max(mp.mpf(lo), soft_round_inverse(mp.mpf(z) - mp.mpf("0.5"), alpha))
    b = min(mp.mpf(hi), soft_round_inverse(mp.mpf(z) + mp.mpf("0.5"), alpha))
    return float((a + b) / 2)
