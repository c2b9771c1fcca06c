"""Finite-difference gradient checks shared by the layer, model and acceptance tests.

Each ``check_*`` function builds a random instance from ``seed`` and returns
the largest relative error between analytic and central-difference
gradients over every checked entry.
"""

import numpy as np

from caoloc.nn import Model, ModelConfig, ParamStore, ResidualBlock, Variant, conv_backward, conv_forward
from caoloc.nn import layers as L
from caoloc.nn.model import residual_block_backward, residual_block_forward
from conftest import numeric_grad, rel_error


def _projected(forward, shape, rng):
    """Scalar loss <forward(), proj> with a random projection."""
    proj = rng.normal(size=shape)
    return proj, lambda: float((forward() * proj).sum())


def check_conv(seed, two_d=False, stride=1):
    rng = np.random.default_rng(seed)
    if two_d:
        x, w = rng.normal(size=(2, 2, 4, 7)), rng.normal(size=(3, 2, 3, 3))
    else:
        x, w = rng.normal(size=(2, 8)), rng.normal(size=(3, 2, 3))
    b = rng.normal(size=3)
    out, cache = conv_forward(x, w, b, stride=stride)
    proj, f = _projected(lambda: conv_forward(x, w, b, stride=stride)[0], out.shape, rng)
    dx, dw, db = conv_backward(proj, cache)
    return max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, w)), rel_error(db, numeric_grad(f, b)))


def check_batchnorm(seed, train=True):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 1, 5, 4))
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    rm, rv = rng.normal(size=4), rng.uniform(0.5, 2, size=4)

    def fwd():
        return L.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train)[0]

    proj, f = _projected(fwd, x.shape, rng)
    _, cache = L.batchnorm_forward(x, gamma, beta, rm.copy(), rv.copy(), train)
    dx, dg, db = L.batchnorm_backward(proj, cache)
    return max(rel_error(dx, numeric_grad(f, x)), rel_error(dg, numeric_grad(f, gamma)), rel_error(db, numeric_grad(f, beta)))


def check_dense(seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(4, 6)), rng.normal(size=(3, 6)), rng.normal(size=3)
    proj, f = _projected(lambda: L.dense_forward(x, w, b)[0], (4, 3), rng)
    dx, dw, db = L.dense_backward(proj, x, w)
    return max(rel_error(dx, numeric_grad(f, x)), rel_error(dw, numeric_grad(f, w)), rel_error(db, numeric_grad(f, b)))


def check_relu(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(5, 7))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    proj, f = _projected(lambda: L.relu_forward(x)[0], x.shape, rng)
    _, mask = L.relu_forward(x)
    return rel_error(L.relu_backward(proj, mask), numeric_grad(f, x))


def check_pool(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 5, 4))
    proj, f = _projected(lambda: L.global_avg_pool_forward(x)[0], (2, 4), rng)
    _, shape = L.global_avg_pool_forward(x)
    return rel_error(L.global_avg_pool_backward(proj, shape), numeric_grad(f, x))


def check_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(6, 2)) * 3
    labels = rng.integers(0, 2, size=6)
    weights = rng.uniform(0.2, 3.0, size=6)
    _, grad = L.softmax_cross_entropy(logits, labels, weights)
    return rel_error(grad, numeric_grad(lambda: L.softmax_cross_entropy(logits, labels, weights)[0], logits))


def _randomize_affine(store, rng):
    """Non-trivial biases and BN scale/shift so every path carries gradient."""
    for name, p in store.params.items():
        if not name.endswith(".w"):
            p[...] = rng.normal(0.0, 0.5, size=p.shape) + (1.0 if name.endswith("gamma") else 0.0)


def check_residual_block(seed, two_d=False):
    if two_d:
        c_in, c_out, kernel, stride, shape = 1, 2, (3, 3), (1, 2), (2, 1, 3, 6)
    else:
        c_in, c_out, kernel, stride, shape = 3, 4, (3,), 2, (2, 3, 8)
    store = ParamStore(seed)
    block = ResidualBlock(store, "b", c_in, c_out, kernel, stride)
    rng = np.random.default_rng(seed + 500)
    _randomize_affine(store, rng)
    x = rng.normal(size=shape)
    out = residual_block_forward(block, x, True)
    proj, f = _projected(lambda: residual_block_forward(block, x, True), out.shape, rng)
    residual_block_forward(block, x, True)
    dx = residual_block_backward(block, proj)
    grads = dict(store.grads)
    err = rel_error(dx, numeric_grad(f, x))
    for name, p in store.params.items():
        err = max(err, rel_error(grads[name], numeric_grad(f, p)))
    return err


REDUCED = dict(stem_channels=4, block_channels=(4, 8), fc_hidden=8)


def _relu_masks(model):
    masks = [model._stem_mask, model._fc_mask] + [m for b in model.blocks for m in (b.mask1, b.mask2)]
    return np.concatenate([m.ravel() for m in masks])


def check_model(seed, variant=Variant.CONV1D, n_entries=4, length=32, with_kinks=False):
    """Full reduced-size model on a 2-sample batch over a random subset of
    entries per parameter tensor plus the input.

    Entries whose +h / -h evaluations fall on different sides of a ReLU kink
    have no defined central difference and are skipped. Returns the largest
    relative error, or ``(error, n_skipped, n_checked)`` with ``with_kinks``.
    """
    model = Model(ModelConfig(variant=variant, **REDUCED), seed=seed)
    rng = np.random.default_rng(seed + 900)
    _randomize_affine(model, rng)
    x = rng.normal(size=(2, 12, length))
    labels = np.array([0, 1])
    weights = rng.uniform(0.5, 2.0, size=2)
    h = 1e-5

    def f():
        return L.softmax_cross_entropy(model.forward(x, train=True), labels, weights)[0]

    _, g = L.softmax_cross_entropy(model.forward(x, train=True), labels, weights)
    dx = model.backward(g)
    grads = dict(model.grads)
    err, skipped, checked = 0.0, 0, 0
    for arr, analytic in [(x, dx)] + [(p, grads[n]) for n, p in model.params.items()]:
        for flat in rng.choice(arr.size, size=min(n_entries, arr.size), replace=False):
            i = np.unravel_index(flat, arr.shape)
            old = arr[i]
            arr[i] = old + h
            fp, mp = f(), _relu_masks(model)
            arr[i] = old - h
            fm, mm = f(), _relu_masks(model)
            arr[i] = old
            if not np.array_equal(mp, mm):
                skipped += 1
                continue
            checked += 1
            err = max(err, rel_error(analytic[i], (fp - fm) / (2 * h)))
    return (err, skipped, checked) if with_kinks else err


LAYER_CHECKS = {
    "conv1d": lambda s: check_conv(s),
    "conv1d_stride2": lambda s: check_conv(s, stride=2),
    "conv2d": lambda s: check_conv(s, two_d=True),
    "conv2d_stride12": lambda s: check_conv(s, two_d=True, stride=(1, 2)),
    "batchnorm_train": lambda s: check_batchnorm(s, True),
    "batchnorm_eval": lambda s: check_batchnorm(s, False),
    "dense": check_dense,
    "relu": check_relu,
    "global_avg_pool": check_pool,
    "softmax_cross_entropy": check_cross_entropy,
    "residual_block_1d": lambda s: check_residual_block(s),
    "residual_block_2d": lambda s: check_residual_block(s, two_d=True),
    # lighter sampling keeps the 50-seed sweep fast; test_model samples more per seed
    "model_1d": lambda s: check_model(s, Variant.CONV1D, n_entries=2, length=16),
    "model_2d": lambda s: check_model(s, Variant.CONV2D, n_entries=2, length=16),
}
