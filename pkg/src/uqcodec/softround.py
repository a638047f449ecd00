"""Soft rounding, its inverse and the conditional-mean reconstruction.

All functions are periodic in the sense ``f(y + 1) = f(y) + 1``, which is
what makes the expected derivative under uniform noise exactly one.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

#: Above this sharpness ``tanh(alpha / 2)`` is evaluated through exponentials.
STABLE_ALPHA = 30.0


def _check_alpha(alpha):
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")


def _tanh_half(alpha):
    if alpha > STABLE_ALPHA:
        e = np.exp(-alpha)
        return (1.0 - e) / (1.0 + e)
    return np.tanh(alpha / 2.0)


def _one_minus_tanh_half(alpha):
    # 1 - tanh(a/2) = 2 / (exp(a) + 1), kept positive for large a
    return 2.0 / (np.exp(min(alpha, 700.0)) + 1.0)


def soft_round_np(y, alpha):
    _check_alpha(alpha)
    y = np.asarray(y, dtype=np.float64)
    n = np.floor(y)
    r = y - n - 0.5
    # numerator is exactly zero at integers (tanh is odd), so fixed points are exact
    return n + (np.tanh(alpha * r) + np.tanh(alpha / 2.0)) / (2.0 * _tanh_half(alpha))


def soft_round_inverse_np(z, alpha):
    _check_alpha(alpha)
    z = np.asarray(z, dtype=np.float64)
    n = np.floor(z)
    frac = z - n
    t = _tanh_half(alpha)
    eps = _one_minus_tanh_half(alpha)
    # artanh((2 frac - 1) t) without forming 1 +/- t directly
    lo = eps + 2.0 * frac * t
    hi = eps + 2.0 * (1.0 - frac) * t
    r = 0.5 * (np.log(lo) - np.log(hi)) / alpha
    # at integers r = -1/2 only up to rounding; pin the fixed point
    return np.where(frac == 0.0, n, n + r + 0.5)


def soft_round_derivative_np(y, alpha):
    _check_alpha(alpha)
    y = np.asarray(y, dtype=np.float64)
    r = y - np.floor(y) - 0.5
    with np.errstate(over="ignore"):
        sech2 = 1.0 / np.cosh(alpha * r) ** 2
    return 0.5 * alpha * sech2 / _tanh_half(alpha)


def soft_round_inverse_derivative_np(z, alpha):
    _check_alpha(alpha)
    z = np.asarray(z, dtype=np.float64)
    frac = z - np.floor(z)
    t = _tanh_half(alpha)
    eps = _one_minus_tanh_half(alpha)
    lo = eps + 2.0 * frac * t
    hi = eps + 2.0 * (1.0 - frac) * t
    return 2.0 * t / (alpha * lo * hi)


def reconstruct_np(z, alpha):
    return soft_round_inverse_np(np.asarray(z, dtype=np.float64) - 0.5, alpha) + 0.5


def integer_derivative(alpha):
    """Closed-form slope of the soft rounding function at any integer."""
    t = _tanh_half(alpha)
    return 0.5 * alpha * _one_minus_tanh_half(alpha) * (1.0 + t) / t


def soft_round(y, alpha):
    """Soft rounding; differentiable for Tensors."""
    if isinstance(y, ad.Tensor):
        return ad.elementwise(y, lambda v: soft_round_np(v, alpha),
                              lambda v: soft_round_derivative_np(v, alpha), "soft_round")
    return soft_round_np(y, alpha)


def soft_round_inverse(z, alpha):
    if isinstance(z, ad.Tensor):
        return ad.elementwise(z, lambda v: soft_round_inverse_np(v, alpha),
                              lambda v: soft_round_inverse_derivative_np(v, alpha),
                              "soft_round_inverse")
    return soft_round_inverse_np(z, alpha)


def reconstruct(z, alpha):
    """Approximate conditional mean of y given ``soft_round(y) + u = z``."""
    if isinstance(z, ad.Tensor):
        return ad.elementwise(z, lambda v: reconstruct_np(v, alpha),
                              lambda v: soft_round_inverse_derivative_np(v - 0.5, alpha),
                              "reconstruct")
    return reconstruct_np(z, alpha)


def soft_round_expected_grad(y, u, alpha):
    """``soft_round(y + u)`` whose backward multiplier is exactly one."""
    return ad.expected_grad_wrap(lambda v: soft_round(v, alpha), y, u, multiplier=1.0)


def reconstruct_expected_grad(y, u, alpha):
    """``reconstruct(y + u)`` whose backward multiplier is exactly one."""
    return ad.expected_grad_wrap(lambda v: reconstruct(v, alpha), y, u, multiplier=1.0)


@dataclass(frozen=True)
class SoftRoundParams:
    """Sharpness schedule, linear in the global step."""

    alpha_start: float = 1.0
    alpha_end: float = 16.0
    total_steps: int = 1

    def __post_init__(self):
        _check_alpha(self.alpha_start)
        _check_alpha(self.alpha_end)
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")

    def alpha(self, step):
        t = min(max(step, 0), self.total_steps) / self.total_steps
        return self.alpha_start + (self.alpha_end - self.alpha_start) * t
