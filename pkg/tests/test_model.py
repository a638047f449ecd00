import numpy as np
import pytest

from uqcodec import autodiff as ad
from uqcodec.codec import compress, decompress
from uqcodec.model import (BLOCK_DIM, DISTORTION_SCALE, LinearModel, image_to_blocks, orthogonal,
                           pad_to_blocks, quantized_rd_loss, rd_loss)


def test_orthogonal_init():
    m = LinearModel(channels=32, seed=0)
    a, b = m.analysis.data, m.synthesis.data
    assert a.shape == (32, BLOCK_DIM) and b.shape == (BLOCK_DIM, 32)
    np.testing.assert_allclose(a @ a.T, np.eye(32), atol=1e-5)
    np.testing.assert_allclose(b.T @ b, np.eye(32), atol=1e-5)
    np.testing.assert_array_equal(a, LinearModel(channels=32, seed=0).analysis.data)


def test_orthogonal_is_sign_fixed():
    q1 = orthogonal(6, 6, np.random.default_rng(3))
    q2 = orthogonal(6, 6, np.random.default_rng(3))
    np.testing.assert_array_equal(q1, q2)
    np.testing.assert_allclose(q1.T @ q1, np.eye(6), atol=1e-12)


def test_constant_image_gives_identical_blocks():
    m = LinearModel(channels=16, seed=1)
    coeffs = m.encode_blocks(np.full((32, 40, 3), 0.3))
    assert coeffs.shape == (4, 5, 16)
    np.testing.assert_allclose(coeffs, np.broadcast_to(coeffs[0, 0], coeffs.shape), atol=1e-12)


def test_tied_full_rank_model_is_lossless_without_channel():
    m = LinearModel(channels=BLOCK_DIM, seed=2, tied=True)
    x = np.random.default_rng(0).uniform(0, 1, (24, 32, 3))
    y = m.encode_blocks(x)
    assert np.mean((m.decode_blocks(y) - x) ** 2) < 1e-8


def test_shape_contract_and_padding():
    m = LinearModel(channels=8, seed=0)
    assert m.encode_blocks(np.zeros((16, 16, 3))).shape == (2, 2, 8)
    assert m.encode_blocks(np.zeros((17, 9, 3))).shape == (3, 2, 8)
    assert pad_to_blocks(np.zeros((3, 5, 3))).shape == (8, 8, 3)
    with pytest.raises(ValueError):
        m.encode_blocks(np.zeros((0, 8, 3)))


def test_blockwise_locality():
    m = LinearModel(channels=8, seed=0)
    x = np.random.default_rng(1).uniform(0, 1, (24, 24, 3))
    x2 = x.copy()
    x2[8:16, 16:24] += 0.1
    d = np.abs(m.encode_blocks(x2) - m.encode_blocks(x)).sum(axis=2)
    changed = np.argwhere(d > 0)
    assert changed.tolist() == [[1, 2]]


def test_serialization_is_stable(tmp_path):
    m = LinearModel(channels=8, seed=4, config={"lam": 0.01}).frozen()
    m.save(tmp_path / "a.uqcm")
    loaded = LinearModel.load(tmp_path / "a.uqcm")
    loaded.save(tmp_path / "b.uqcm")
    assert (tmp_path / "a.uqcm").read_bytes() == (tmp_path / "b.uqcm").read_bytes()
    assert loaded.config["lam"] == 0.01
    np.testing.assert_array_equal(loaded.symbol_range, m.symbol_range)
    assert loaded.hash() == m.hash() and len(m.hash()) == 8


def test_corrupt_model_file_rejected(tmp_path):
    data = bytearray(LinearModel(channels=4, seed=0).to_bytes())
    data[40] ^= 1
    with pytest.raises(ValueError):
        LinearModel.from_bytes(bytes(data))


# loss ----------------------------------------------------------------------------

def reference_loss(model, block, u, lam, alpha):
    """Straight-line re-implementation of the loss for one block (numpy only)."""
    params = model.state()
    depth = len(model.filters) + 1

    def softplus(v):
        return np.log1p(np.exp(-abs(v))) + np.maximum(v, 0)

    def cdf(c, t):
        v = np.array([[t]])
        for i in range(depth):
            v = softplus(params[f"density.matrix{i}"][c]) @ v + params[f"density.bias{i}"][c]
            if i < depth - 1:
                v = v + np.tanh(params[f"density.factor{i}"][c]) * np.tanh(v)
        return 1.0 / (1.0 + np.exp(-v[0, 0]))

    def sr(t):
        n = np.floor(t)
        return n + 0.5 + np.tanh(alpha * (t - n - 0.5)) / (2 * np.tanh(alpha / 2))

    def sr_inv(t):
        n = np.floor(t)
        return n + 0.5 + np.arctanh((t - n - 0.5) * 2 * np.tanh(alpha / 2)) / alpha

    y = model.analysis.data @ (block - 0.5)
    if alpha is not None:
        y = np.array([sr(v) for v in y])
    z = y + u
    bits = 0.0
    for c in range(model.channels):
        lo = z[c] - 0.5 if alpha is None else sr_inv(z[c] - 0.5)
        hi = lo + 1.0 if alpha is None else sr_inv(z[c] + 0.5)
        bits -= np.log2(cdf(c, hi) - cdf(c, lo))
    zr = z if alpha is None else np.array([sr_inv(v - 0.5) + 0.5 for v in z])
    x_hat = model.synthesis.data @ zr + 0.5
    return bits / 64 + lam * DISTORTION_SCALE * np.mean((x_hat - block) ** 2)


@pytest.mark.parametrize("mode,alpha", [("un-uq", None), ("un-uq-sr", 3.0)])
def test_loss_matches_reference(mode, alpha):
    m = LinearModel(channels=6, seed=5)
    rng = np.random.default_rng(6)
    block = rng.uniform(0, 1, BLOCK_DIM)
    u = rng.uniform(-0.5, 0.5, 6)
    _, parts = rd_loss(m, block[None], mode, 0.01, u[None], alpha=alpha)
    assert parts["loss"] == pytest.approx(reference_loss(m, block, u, 0.01, alpha), abs=1e-6)


def test_zero_lambda_leaves_synthesis_without_gradient():
    m = LinearModel(channels=8, seed=0)
    blocks = np.random.default_rng(0).uniform(0, 1, (4, BLOCK_DIM))
    u = np.random.default_rng(1).uniform(-0.5, 0.5, (4, 8))
    loss, parts = rd_loss(m, blocks, "un-uq", 0.0, u)
    grads = ad.backward(loss)
    assert parts["loss"] == parts["rate_bpp"]
    np.testing.assert_array_equal(grads["synthesis"], 0.0)


def test_large_lambda_is_distortion_dominated():
    m = LinearModel(channels=BLOCK_DIM, seed=0, tied=True)
    blocks = np.random.default_rng(0).uniform(0, 1, (4, BLOCK_DIM))
    u = np.random.default_rng(1).uniform(-0.5, 0.5, (4, BLOCK_DIM))
    _, parts = rd_loss(m, blocks, "un-uq", 1e3, u)
    dist = 1e3 * DISTORTION_SCALE * parts["mse"]
    assert dist > 100 * parts["rate_bpp"]
    # noise passes through an orthogonal B: per-pixel MSE equals the noise power
    assert parts["mse"] == pytest.approx(np.mean(u**2), rel=1e-9)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_loss_errors_are_attributed():
    m = LinearModel(channels=4, seed=0)
    m.synthesis.data = m.synthesis.data * 1e308
    blocks = np.full((1, BLOCK_DIM), 0.9)
    with pytest.raises(ad.AutodiffError, match="distortion term"):
        rd_loss(m, blocks, "un-uq", 0.01, np.full((1, 4), 0.4))
    with pytest.raises(ValueError):
        rd_loss(m, blocks, "un-uq-sr", 0.01, np.zeros((1, 4)))


def test_quantized_loss_uses_rounding():
    m = LinearModel(channels=8, seed=0).frozen()
    blocks = np.random.default_rng(0).uniform(0, 1, (5, BLOCK_DIM))
    q = quantized_rd_loss(m, blocks, 0.01)
    k = np.round(m.analyze(blocks))
    assert q["mse"] == pytest.approx(np.mean((m.synthesize(k) - blocks) ** 2))


# codec on a trained model ---------------------------------------------------------------

@pytest.fixture(scope="module")
def image():
    from corpus import crops
    return crops(1, size=64, seed=99)[0][1]


def test_compress_is_deterministic(trained_model, image):
    a = compress(image, trained_model, "un-uq", seed=5)
    b = compress(image, trained_model, "un-uq", seed=5)
    assert a.data == b.data
    np.testing.assert_array_equal(decompress(a.data, trained_model), decompress(b.data, trained_model))
    assert compress(image, trained_model, "un-uq", seed=6).data != a.data


def test_decoder_reproduces_encoder_reconstruction(trained_model, image):
    for mode, alpha in (("un-q", None), ("un-uq", None), ("un-uq-sr", 6.0)):
        r = compress(image, trained_model, mode, seed=1, alpha=alpha)
        np.testing.assert_array_equal(decompress(r.data, trained_model, clip=False), r.reconstruction)


def test_uq_and_q_differ(trained_model, image):
    uq = compress(image, trained_model, "un-uq", seed=2)
    q = compress(image, trained_model, "un-q", seed=2)
    assert (uq.bpp, float(np.mean((uq.reconstruction - image) ** 2))) != \
        (q.bpp, float(np.mean((q.reconstruction - image) ** 2)))


def test_bpp_matches_ideal_code_length(trained_model, image):
    r = compress(image, trained_model, "un-uq", seed=3)
    pixels = image.shape[0] * image.shape[1]
    assert r.bpp == 8 * (len(r.data) - 49) / pixels
    assert r.bpp == pytest.approx(r.ideal_bits / pixels, rel=0.02)


def test_sharp_soft_rounding_approaches_hard_quantization(trained_model, image):
    sr = compress(image, trained_model, "un-uq-sr", seed=4, alpha=100.0)
    q = compress(image, trained_model, "un-q", seed=4)
    assert np.mean((sr.reconstruction - q.reconstruction) ** 2) < 1e-3


def test_image_blocks_round_trip():
    from uqcodec.model import blocks_to_image
    x = np.random.default_rng(0).uniform(0, 1, (16, 24, 3))
    np.testing.assert_array_equal(blocks_to_image(image_to_blocks(x), 2, 3), x)
