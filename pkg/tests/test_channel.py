import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from uqcodec import autodiff as ad
from uqcodec.channel import (DitherStream, LatticeSpec, ScaleMixtureSpec, SymbolRangeError,
                             channel_reconstruct, common_shift_offsets, gaussian_channel,
                             hexagonal_lattice, integer_lattice, lattice_universal_quantize,
                             shared_scales, train_channel_sample, universal_quantize, voronoi_offsets)
from uqcodec.diagnostics import energy_distance_test, hexagonal_equivalence, uq_identity


def test_quantize_examples():
    assert universal_quantize(np.array([3.7]), np.array([0.4]))[0] == 3
    k = universal_quantize(np.array([0.0]), np.array([0.2]))
    assert k[0] == 0
    assert channel_reconstruct(k, np.array([0.2]))[0] == pytest.approx(0.2)


def test_reconstruct_examples():
    assert channel_reconstruct(np.array([3]), np.array([0.4]))[0] == pytest.approx(3.4)
    assert channel_reconstruct(np.array([0]), np.array([-0.5]))[0] == -0.5


def test_ties_round_away_from_zero():
    k = universal_quantize(np.array([1.0, -1.0, 0.0]), np.array([-0.5, 0.5, -0.5]))
    np.testing.assert_array_equal(k, [2, -2, 1])


def test_range_error_names_index():
    with pytest.raises(SymbolRangeError, match="coefficient 2"):
        universal_quantize(np.array([0.0, 1.0, 1e12]), np.zeros(3), max_abs=2**31 - 1)


def test_dither_range_and_determinism():
    d = DitherStream(7)
    u = d.offsets_for_shape((1000,))
    assert u.min() >= -0.5 and u.max() < 0.5
    np.testing.assert_array_equal(u[100:200], d.offsets(np.arange(100, 200, dtype=np.uint64)))
    np.testing.assert_array_equal(u, DitherStream(7).offsets_for_shape((1000,)))
    assert not np.array_equal(u, DitherStream(8).offsets_for_shape((1000,)))


def test_dither_independence_across_indices():
    u = DitherStream(11).offsets_for_shape((1_000_000,))
    for lag in (1, 2, 192):
        assert abs(np.corrcoef(u[:-lag], u[lag:])[0, 1]) < 0.01
    assert abs(u.mean()) < 0.002
    assert u.var() == pytest.approx(1 / 12, rel=0.01)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=20), st.integers(0, 2**64 - 1))
def test_quantization_error_in_half_open_interval(values, seed):
    y = np.array(values)
    u = DitherStream(seed).offsets_for_shape(y.shape)
    err = channel_reconstruct(universal_quantize(y, u), u) - y
    assert np.all(err >= -0.5) and np.all(err < 0.5 + 1e-9 * np.maximum(1, np.abs(y)))


def test_uq_identity_at_037():
    _, p = uq_identity(0.37, 100_000, seed=3)
    assert p > 0.01


def test_common_shift_is_not_independent_noise():
    # with one offset shared by all coefficients the errors of equal inputs coincide
    y = np.array([0.3, 0.3])
    errs = []
    for seed in range(2000):
        u = common_shift_offsets(DitherStream(seed), y.shape)
        errs.append(channel_reconstruct(universal_quantize(y, u), u) - y)
    errs = np.array(errs)
    assert np.corrcoef(errs.T)[0, 1] > 0.99
    u = DitherStream(0).offsets_for_shape((2000, 2))
    indep = channel_reconstruct(universal_quantize(np.tile(y, (2000, 1)), u), u) - y
    assert abs(np.corrcoef(indep.T)[0, 1]) < 0.1


def test_train_channel_sample():
    y = ad.Tensor(np.array([1.0]), requires_grad=True)
    out = train_channel_sample(y, np.array([-0.25]))
    assert out.data[0] == 0.75
    ad.backward(ad.sum_(out))
    assert y.grad[0] == 1.0


def test_train_channel_moments():
    n = 100_000
    u = DitherStream(4).offsets_for_shape((n,))
    out = train_channel_sample(ad.Tensor(np.full(n, 2.0)), u).data
    assert abs(out.mean() - 2.0) < 3 * np.sqrt(1 / 12 / n)
    assert np.var(out - 2.0) == pytest.approx(1 / 12, rel=0.01)


# lattices -------------------------------------------------------------------------

def test_integer_lattice_is_separable():
    rng = np.random.default_rng(0)
    y = rng.uniform(-3, 3, (500, 2))
    d = DitherStream(9)
    _, recon = lattice_universal_quantize(y, integer_lattice(), d)
    u = d.offsets_for_shape(y.shape)
    np.testing.assert_array_equal(recon, channel_reconstruct(universal_quantize(y, u), u))


@pytest.mark.parametrize("make", [integer_lattice, hexagonal_lattice])
def test_nearest_is_idempotent_on_lattice_points(make):
    lat = make()
    coords = np.random.default_rng(1).integers(-50, 50, (100, 2))
    pts = coords @ lat.basis
    c2, p2 = lat.nearest(pts)
    np.testing.assert_array_equal(c2, coords)
    np.testing.assert_allclose(p2, pts)


def test_nearest_minimizes_distance():
    lat = hexagonal_lattice()
    y = np.random.default_rng(2).uniform(-5, 5, (300, 2))
    _, p = lat.nearest(y)
    best = np.sum((p - y) ** 2, axis=1)
    coords = np.stack(np.meshgrid(np.arange(-12, 13), np.arange(-12, 13)), -1).reshape(-1, 2)
    cand = coords @ lat.basis
    brute = np.min(np.sum((y[:, None, :] - cand[None]) ** 2, axis=2), axis=1)
    np.testing.assert_allclose(best, brute, atol=1e-12)


def test_voronoi_offsets_lie_in_cell():
    lat = hexagonal_lattice()
    u = voronoi_offsets(lat, DitherStream(5), 5000)
    coords, _ = lat.nearest(u)
    assert np.all(coords == 0)
    np.testing.assert_allclose(u.mean(axis=0), 0.0, atol=0.01)
    np.testing.assert_array_equal(u, voronoi_offsets(lat, DitherStream(5), 5000))


def test_hexagonal_equivalence_small():
    _, p = hexagonal_equivalence(20_000, seed=1)
    assert p > 0.01


def test_energy_test_detects_difference():
    rng = np.random.default_rng(0)
    a = rng.uniform(-0.5, 0.5, (3000, 2))
    b = rng.uniform(-0.5, 0.5, (3000, 2)) * 1.2
    _, p = energy_distance_test(a, b, permutations=99)
    assert p <= 0.02


def test_unsupported_lattice():
    odd = LatticeSpec("skew", np.array([[1.0, 0.0], [0.3, 1.0]]), (1.0, 1.0))
    with pytest.raises(ValueError, match="unsupported"):
        lattice_universal_quantize(np.zeros((3, 2)), odd, DitherStream(0))


def test_lattice_dimension_mismatch():
    with pytest.raises(ValueError):
        lattice_universal_quantize(np.zeros((3, 3)), hexagonal_lattice(), DitherStream(0))


# gaussian scale mixture -------------------------------------------------------------

def test_scales_positive_and_deterministic():
    s = shared_scales(ScaleMixtureSpec(1.0), DitherStream(3), 10_000)
    assert np.all(s > 0)
    np.testing.assert_array_equal(s, shared_scales(ScaleMixtureSpec(1.0), DitherStream(3), 10_000))
    # S^2 / 4 ~ chi-squared with 3 degrees of freedom
    assert stats.kstest(s**2 / 4, "chi2", args=(3,)).pvalue > 0.01


def test_gaussian_channel_ks():
    n = 100_000
    d = DitherStream(12)
    for sigma in (1.0, 0.3):
        s = shared_scales(ScaleMixtureSpec(sigma), d, n)
        u = d.offsets_for_shape((n,))
        _, recon = gaussian_channel(np.full(n, 0.7), s, u)
        assert stats.kstest(recon - 0.7, "norm", args=(0, sigma)).pvalue > 0.01


def test_gaussian_channel_boundary():
    u = np.array([0.5 - 1e-12])
    k, recon = gaussian_channel(np.array([0.3]), np.array([2.0]), u)
    assert np.isfinite(recon[0])
    assert recon[0] == (k[0] + u[0]) * 2.0


def test_sigma_must_be_positive():
    with pytest.raises(ValueError):
        ScaleMixtureSpec(0.0)
