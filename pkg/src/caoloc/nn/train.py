"""Mini-batch Adam training and probability prediction."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .layers import softmax, softmax_cross_entropy
from .model import Model

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 30
    class_weighted: bool = True
    rng_seed: int = 0

    def validate(self):
        if not self.lr >= 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def inverse_frequency_weights(labels) -> np.ndarray:
    """Per-sample weights ``n / (k * n_class)`` so each class carries equal mass."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    per_class = dict(zip(classes.tolist(), (labels.size / (len(classes) * counts)).tolist()))
    return np.array([per_class[c] for c in labels.tolist()])


def train(model: Model, x, y, config: TrainConfig = TrainConfig()):
    """Train in place; returns ``(model, losses)`` with one mean loss per epoch.

    The per-epoch loss is the sample-weighted mean of the mini-batch losses
    seen during that epoch.
    """
    config.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.shape[0] == 0 or x.shape[0] != y.shape[0]:
        raise ValueError(f"need matching non-empty inputs, got {x.shape[0]} pulses and {y.shape[0]} labels")
    if np.unique(y).size < 2:
        raise ValueError("training data contains a single class; a binary stage cannot be trained")
    weights = inverse_frequency_weights(y) if config.class_weighted else np.ones(y.size)
    rng = np.random.Generator(np.random.PCG64(config.rng_seed))
    opt = Adam(model.params, config.lr, config.beta1, config.beta2, config.eps)
    n = x.shape[0]
    losses = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            logits = model.forward(x[idx], train=True)
            loss, grad = softmax_cross_entropy(logits, y[idx], weights[idx])
            model.backward(grad)
            opt.step(model.params, model.grads)
            total += loss * idx.size
        losses.append(total / n)
        model.check_finite()
        if not np.isfinite(losses[-1]):
            raise FloatingPointError(f"loss became non-finite at epoch {epoch}")
        log.debug("epoch %d loss %.6f", epoch, losses[-1])
    model.release()
    model.trained = True
    return model, losses


def predict_proba(model: Model, pulses, batch_size: int = 32) -> np.ndarray:
    """Probability of the positive class (logit index 1) per pulse, eval mode."""
    x = np.asarray(pulses, dtype=np.float64)
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], batch_size):
        logits = model.forward(x[start : start + batch_size], train=False)
        out[start : start + batch_size] = softmax(logits)[:, 1]
    model.release()
    return out
