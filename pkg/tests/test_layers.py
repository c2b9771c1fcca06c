import numpy as np
import pytest

from caoloc.nn import ParamStore, ResidualBlock, conv_backward, conv_forward, softmax, softmax_cross_entropy
from caoloc.nn import layers as L
from caoloc.nn.model import residual_block_forward
from gradcheck import LAYER_CHECKS

SEEDS = range(5)


def naive_conv1d(x, w, b, stride):
    """Direct nested-loop 'same' cross-correlation, (C, L) input."""
    C, n = x.shape
    O, _, K = w.shape
    out_len = -(-n // stride)
    total = max((out_len - 1) * stride + K - n, 0)
    left = total // 2
    out = np.zeros((O, out_len))
    for o in range(O):
        for t in range(out_len):
            acc = b[o]
            for c in range(C):
                for k in range(K):
                    i = t * stride + k - left
                    if 0 <= i < n:
                        acc += w[o, c, k] * x[c, i]
            out[o, t] = acc
    return out


def naive_conv2d(x, w, b, stride):
    C, H, W = x.shape
    O, _, kh, kw = w.shape
    Ho, Wo = -(-H // stride[0]), -(-W // stride[1])
    top = max((Ho - 1) * stride[0] + kh - H, 0) // 2
    left = max((Wo - 1) * stride[1] + kw - W, 0) // 2
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for r in range(Ho):
            for s in range(Wo):
                acc = b[o]
                for c in range(C):
                    for i in range(kh):
                        for j in range(kw):
                            y, z = r * stride[0] + i - top, s * stride[1] + j - left
                            if 0 <= y < H and 0 <= z < W:
                                acc += w[o, c, i, j] * x[c, y, z]
                out[o, r, s] = acc
    return out


# -- conv forward ---------------------------------------------------------------


def test_conv_zero_input_gives_bias():
    b = np.array([0.5, -2.0])
    out, _ = conv_forward(np.zeros((3, 11)), np.ones((2, 3, 5)), b)
    assert out.shape == (2, 11)
    assert np.all(out == b[:, None])


def test_conv_identity_kernel():
    out, _ = conv_forward(np.array([[1.0, 2, 3, 4, 5]]), np.array([[[0.0, 1, 0]]]))
    np.testing.assert_array_equal(out, [[1, 2, 3, 4, 5]])


@pytest.mark.parametrize("stride", [1, 2, 3])
@pytest.mark.parametrize("seed", SEEDS)
def test_conv1d_matches_naive_loop(seed, stride):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(3, 20)), rng.normal(size=(4, 3, 7)), rng.normal(size=4)
    out, _ = conv_forward(x, w, b, stride=stride)
    ref = naive_conv1d(x, w, b, stride)
    assert out.shape == (4, -(-20 // stride))
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("stride", [(1, 1), (1, 2), (2, 2)])
def test_conv2d_matches_naive_loop(stride):
    rng = np.random.default_rng(3)
    x, w, b = rng.normal(size=(2, 5, 9)), rng.normal(size=(3, 2, 3, 7)), rng.normal(size=3)
    out, _ = conv_forward(x, w, b, stride=stride)
    np.testing.assert_allclose(out, naive_conv2d(x, w, b, stride), rtol=0, atol=1e-12)


def test_conv_batched_equals_per_sample():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(3, 2, 15)), rng.normal(size=(4, 2, 5))
    out, _ = conv_forward(x, w, stride=2)
    for i in range(3):
        np.testing.assert_allclose(out[i], conv_forward(x[i], w, stride=2)[0], atol=1e-13)


def test_conv_shape_mismatch_names_both_shapes():
    with pytest.raises(ValueError) as err:
        conv_forward(np.zeros((3, 20)), np.zeros((4, 2, 7)))
    assert "(3, 20)" in str(err.value) and "(4, 2, 7)" in str(err.value)


def test_conv_rejects_other_padding():
    with pytest.raises(ValueError):
        conv_forward(np.zeros((1, 5)), np.zeros((1, 1, 3)), padding="valid")


# -- conv backward --------------------------------------------------------------


def test_conv_backward_zero_grad():
    rng = np.random.default_rng(0)
    out, cache = conv_forward(rng.normal(size=(2, 8)), rng.normal(size=(3, 2, 3)), np.zeros(3))
    dx, dw, db = conv_backward(np.zeros_like(out), cache)
    assert not dx.any() and not dw.any() and not db.any()


def test_conv_backward_is_linear():
    rng = np.random.default_rng(5)
    out, cache = conv_forward(rng.normal(size=(2, 3, 12)), rng.normal(size=(4, 3, 5)), rng.normal(size=4), stride=2)
    g = rng.normal(size=out.shape)
    one = conv_backward(g, cache)
    two = conv_backward(2 * g, cache)
    for a, b in zip(one, two):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-14, atol=0)


def test_conv_backward_shape_mismatch():
    out, cache = conv_forward(np.ones((2, 8)), np.ones((3, 2, 3)))
    with pytest.raises(ValueError):
        conv_backward(np.ones((3, 7)), cache)


# -- batch normalisation --------------------------------------------------------


def test_batchnorm_train_statistics():
    rng = np.random.default_rng(6)
    x = rng.normal(3.0, 2.5, size=(8, 1, 40, 5))
    c = 5
    out, _ = L.batchnorm_forward(x, np.ones(c), np.zeros(c), np.zeros(c), np.ones(c), train=True)
    flat = out.reshape(-1, c)
    assert np.all(np.abs(flat.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(flat.var(axis=0) - 1) < 1e-5)


def test_batchnorm_running_stats_update():
    rng = np.random.default_rng(7)
    x = rng.normal(2.0, 3.0, size=(16, 4))
    rm, rv = np.zeros(4), np.ones(4)
    L.batchnorm_forward(x, np.ones(4), np.zeros(4), rm, rv, train=True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=0))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=0))


# -- softmax cross-entropy ------------------------------------------------------


def test_cross_entropy_uniform_logits():
    loss, _ = softmax_cross_entropy(np.zeros((1, 2)), np.array([0]))
    assert loss == pytest.approx(np.log(2), abs=1e-15)


def test_cross_entropy_large_logits_stable():
    loss, grad = softmax_cross_entropy(np.array([[1000.0, -1000.0]]), np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 2)), np.array([0, 2]))
    with pytest.raises(ValueError):
        softmax_cross_entropy(np.zeros((2, 2)), np.array([-1, 0]))


def test_cross_entropy_gradient_formula():
    rng = np.random.default_rng(9)
    logits, labels, w = rng.normal(size=(4, 2)), np.array([0, 1, 1, 0]), rng.uniform(size=4)
    _, grad = softmax_cross_entropy(logits, labels, w)
    expected = w[:, None] * (softmax(logits) - np.eye(2)[labels]) / 4
    np.testing.assert_allclose(grad, expected, atol=1e-15)


# -- residual block -------------------------------------------------------------


def make_block(c_in, c_out, kernel, stride, seed=0):
    store = ParamStore(seed)
    block = ResidualBlock(store, "b", c_in, c_out, kernel, stride)
    return store, block


def test_residual_block_zero_branch_is_relu():
    store, block = make_block(4, 4, (7,), 1)
    for name, p in store.params.items():
        if name.endswith(".w") or name.endswith(".beta"):
            p[...] = 0.0
    x = np.random.default_rng(0).normal(size=(2, 4, 30))
    for train in (True, False):
        np.testing.assert_array_equal(residual_block_forward(block, x, train), np.maximum(x, 0))


@pytest.mark.parametrize("n", [30, 31])
def test_residual_block_stride_two_halves_length(n):
    store, block = make_block(4, 8, (7,), 2)
    assert block.proj is not None
    out = residual_block_forward(block, np.ones((2, 4, n)), True)
    assert out.shape == (2, 8, -(-n // 2))


def test_residual_block_rejects_channel_mismatch():
    _, block = make_block(4, 4, (7,), 1)
    with pytest.raises(ValueError):
        residual_block_forward(block, np.ones((2, 3, 20)))


# -- finite differences ---------------------------------------------------------

LAYER_ONLY = [k for k in LAYER_CHECKS if not k.startswith("model")]


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("layer", LAYER_ONLY)
def test_layer_gradient_finite_differences(layer, seed):
    # dense, relu, pooling and cross-entropy are exact to far tighter bounds
    tol = 1e-6 if layer in ("dense", "relu", "global_avg_pool", "softmax_cross_entropy") else 1e-5
    assert LAYER_CHECKS[layer](seed) < tol
