"""ResNet-style pulse classifier in 1-D and 2-D convolution variants.

Topology: stem conv -> BN -> ReLU -> residual blocks -> global average
pooling -> dense hidden layer (ReLU) -> dense 2-logit head. Blocks after
the first halve the time axis with stride 2; a 1x1 projection conv carries
the skip path whenever the block changes shape.

The 1-D variant reads a pulse as 12 channels x L samples. The 2-D variant
reads it as a 1-channel image of 12 leads x L samples, so its 3x7 kernels
span neighbouring leads.
"""

from __future__ import annotations

import enum
import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import layers as L


class Variant(str, enum.Enum):
    CONV1D = "CONV1D"
    CONV2D = "CONV2D"

    @classmethod
    def parse(cls, value) -> "Variant":
        if isinstance(value, cls):
            return value
        v = str(value).upper()
        aliases = {"1D": cls.CONV1D, "2D": cls.CONV2D}
        return aliases.get(v) or cls(v)


@dataclass(frozen=True)
class ModelConfig:
    variant: Variant = Variant.CONV1D
    stem_channels: int = 16
    block_channels: tuple = (16, 32, 64)
    kernel_1d: int = 7
    kernel_2d: tuple = (3, 7)
    fc_hidden: int = 64
    n_outputs: int = 2
    n_leads: int = 12

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        object.__setattr__(self, "kernel_2d", tuple(int(k) for k in self.kernel_2d))
        if len(self.block_channels) < 1:
            raise ValueError("need at least one residual block")
        if self.n_outputs != 2:
            raise ValueError("stage classifiers have exactly 2 outputs")

    def to_json(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        d["block_channels"] = list(self.block_channels)
        d["kernel_2d"] = list(self.kernel_2d)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class _Conv:
    """Kernel stored as (O, C, K) for 1-D, (O, C, kh, kw) for 2-D."""

    def __init__(self, model, name, c_in, c_out, kernel, stride):
        self.m, self.name = model, name
        self.one_d = len(kernel) == 1
        self.stride = (1, stride) if self.one_d else tuple(stride) if isinstance(stride, tuple) else (stride, stride)
        fan_in = c_in * int(np.prod(kernel))
        model._add(f"{name}.w", model._rng.normal(0.0, np.sqrt(2.0 / fan_in), (c_out, c_in) + tuple(kernel)))
        model._add(f"{name}.b", np.zeros(c_out))

    def forward(self, x, train):
        w = self.m.params[f"{self.name}.w"]
        w4 = w[:, :, None, :] if self.one_d else w
        out, self.cache = L.conv2d_nhwc(x, w4, self.m.params[f"{self.name}.b"], self.stride)
        return out

    def backward(self, g):
        dx, dw, db = L.conv2d_nhwc_backward(g, self.cache)
        self.m.grads[f"{self.name}.w"] = dw[:, :, 0, :] if self.one_d else dw
        self.m.grads[f"{self.name}.b"] = db
        return dx


class _BatchNorm:
    def __init__(self, model, name, channels):
        self.m, self.name = model, name
        model._add(f"{name}.gamma", np.ones(channels))
        model._add(f"{name}.beta", np.zeros(channels))
        model.buffers[f"{name}.running_mean"] = np.zeros(channels)
        model.buffers[f"{name}.running_var"] = np.ones(channels)

    def forward(self, x, train):
        p, b = self.m.params, self.m.buffers
        out, self.cache = L.batchnorm_forward(
            x, p[f"{self.name}.gamma"], p[f"{self.name}.beta"],
            b[f"{self.name}.running_mean"], b[f"{self.name}.running_var"], train,
        )
        return out

    def backward(self, g):
        dx, dgamma, dbeta = L.batchnorm_backward(g, self.cache)
        self.m.grads[f"{self.name}.gamma"] = dgamma
        self.m.grads[f"{self.name}.beta"] = dbeta
        return dx


class _Dense:
    def __init__(self, model, name, n_in, n_out):
        self.m, self.name = model, name
        model._add(f"{name}.w", model._rng.normal(0.0, np.sqrt(2.0 / n_in), (n_out, n_in)))
        model._add(f"{name}.b", np.zeros(n_out))

    def forward(self, x, train):
        out, self.cache = L.dense_forward(x, self.m.params[f"{self.name}.w"], self.m.params[f"{self.name}.b"])
        return out

    def backward(self, g):
        dx, dw, db = L.dense_backward(g, self.cache, self.m.params[f"{self.name}.w"])
        self.m.grads[f"{self.name}.w"] = dw
        self.m.grads[f"{self.name}.b"] = db
        return dx


class ParamStore:
    """Named parameter / buffer / gradient storage shared by layers."""

    def __init__(self, seed: int = 0):
        self.params: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.buffers: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.grads: dict = {}
        self._rng = np.random.Generator(np.random.PCG64(seed))

    def _add(self, name, value):
        self.params[name] = np.ascontiguousarray(value, dtype=np.float64)


class ResidualBlock:
    """conv-BN-ReLU-conv-BN plus skip, then ReLU."""

    def __init__(self, model, name, c_in, c_out, kernel, stride):
        one = (1,) * len(kernel)
        self.conv1 = _Conv(model, f"{name}.conv1", c_in, c_out, kernel, stride)
        self.bn1 = _BatchNorm(model, f"{name}.bn1", c_out)
        self.conv2 = _Conv(model, f"{name}.conv2", c_out, c_out, kernel, 1)
        self.bn2 = _BatchNorm(model, f"{name}.bn2", c_out)
        strided = stride != 1 and stride != (1, 1)
        self.proj = _Conv(model, f"{name}.proj", c_in, c_out, one, stride) if (strided or c_in != c_out) else None

    def forward(self, x, train):
        h = self.bn1.forward(self.conv1.forward(x, train), train)
        h, self.mask1 = L.relu_forward(h)
        h = self.bn2.forward(self.conv2.forward(h, train), train)
        skip = self.proj.forward(x, train) if self.proj else x
        out, self.mask2 = L.relu_forward(h + skip)
        return out

    def backward(self, g):
        g = L.relu_backward(g, self.mask2)
        gx = self.proj.backward(g) if self.proj else g
        h = self.conv2.backward(self.bn2.backward(g))
        h = self.conv1.backward(self.bn1.backward(L.relu_backward(h, self.mask1)))
        return gx + h


class Model(ParamStore):
    """Parameters live in ``params``; BN running statistics in ``buffers``."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__(seed)
        self.config = config
        self.trained = False

        c = config
        if c.variant is Variant.CONV1D:
            kernel, c_in, down = (c.kernel_1d,), c.n_leads, 2
        else:
            kernel, c_in, down = c.kernel_2d, 1, (1, 2)
        self.stem = _Conv(self, "stem", c_in, c.stem_channels, kernel, 1)
        self.stem_bn = _BatchNorm(self, "stem_bn", c.stem_channels)
        self.blocks = []
        prev = c.stem_channels
        for i, ch in enumerate(c.block_channels):
            stride = 1 if i == 0 else down
            self.blocks.append(ResidualBlock(self, f"block{i}", prev, ch, kernel, stride))
            prev = ch
        self.fc1 = _Dense(self, "fc1", prev, c.fc_hidden)
        self.fc2 = _Dense(self, "fc2", c.fc_hidden, c.n_outputs)
        del self._rng

    def _prepare(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[1] != self.config.n_leads:
            raise ValueError(f"expected a batch of pulses (B, {self.config.n_leads}, L), got shape {x.shape}")
        if self.config.variant is Variant.CONV2D:
            return x[:, :, :, None]  # (B, leads, L, 1)
        return x.transpose(0, 2, 1)[:, None]  # (B, 1, L, leads)

    def forward(self, x, train=False):
        h = self.stem_bn.forward(self.stem.forward(self._prepare(x), train), train)
        h, self._stem_mask = L.relu_forward(h)
        for block in self.blocks:
            h = block.forward(h, train)
        h, self._pool_shape = L.global_avg_pool_forward(h)
        h, self._fc_mask = L.relu_forward(self.fc1.forward(h, train))
        return self.fc2.forward(h, train)

    def backward(self, grad_logits):
        """Fill ``self.grads`` and return the gradient w.r.t. the input."""
        self.grads = {}
        g = self.fc2.backward(grad_logits)
        g = self.fc1.backward(L.relu_backward(g, self._fc_mask))
        g = L.global_avg_pool_backward(g, self._pool_shape)
        for block in reversed(self.blocks):
            g = block.backward(g)
        g = self.stem.backward(self.stem_bn.backward(L.relu_backward(g, self._stem_mask)))
        if self.config.variant is Variant.CONV2D:
            return g[:, :, :, 0]
        return g[:, 0].transpose(0, 2, 1)

    def release(self) -> None:
        """Drop activations cached for backward."""
        for layer in self._layers():
            for attr in ("cache", "mask1", "mask2"):
                if hasattr(layer, attr):
                    delattr(layer, attr)
        for attr in ("_stem_mask", "_pool_shape", "_fc_mask"):
            self.__dict__.pop(attr, None)

    def _layers(self):
        yield from (self.stem, self.stem_bn, self.fc1, self.fc2)
        for b in self.blocks:
            yield b
            yield from (b.conv1, b.bn1, b.conv2, b.bn2)
            if b.proj:
                yield b.proj

    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def check_finite(self) -> None:
        for name, arr in list(self.params.items()) + list(self.buffers.items()):
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values in {name}")

    def copy(self) -> "Model":
        other = Model(self.config)
        other.params = OrderedDict((k, v.copy()) for k, v in self.params.items())
        other.buffers = OrderedDict((k, v.copy()) for k, v in self.buffers.items())
        other.trained = self.trained
        return other


def model_forward(model: Model, pulses, train: bool = False) -> np.ndarray:
    return model.forward(pulses, train=train)


def residual_block_forward(block: ResidualBlock, x, train: bool = False) -> np.ndarray:
    """Channel-first wrapper: ``x`` is (B, C, L) or (B, C, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return block.forward(x.transpose(0, 2, 1)[:, None], train)[:, 0].transpose(0, 2, 1)
    return np.moveaxis(block.forward(np.moveaxis(x, 1, -1), train), -1, 1)


def residual_block_backward(block: ResidualBlock, grad_out) -> np.ndarray:
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 3:
        return block.backward(g.transpose(0, 2, 1)[:, None])[:, 0].transpose(0, 2, 1)
    return np.moveaxis(block.backward(np.moveaxis(g, 1, -1)), -1, 1)


# -- model.bin -----------------------------------------------------------------

MAGIC = b"CAOM"
VERSION = 1


def save_model(model: Model, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps({"config": model.config.to_json(), "trained": model.trained}, sort_keys=True).encode("utf-8")
    tensors = [(n, a) for n, a in model.params.items()] + [(n, a) for n, a in model.buffers.items()]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path} is not a model checkpoint")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    model = Model(ModelConfig.from_json(header["config"]))
    model.trained = bool(header["trained"])
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    seen = set()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
        store = model.params if name in model.params else model.buffers if name in model.buffers else None
        if store is None:
            raise ValueError(f"checkpoint tensor {name!r} is not part of the configured model")
        if store[name].shape != arr.shape:
            raise ValueError(f"tensor {name!r} has shape {arr.shape}, config expects {store[name].shape}")
        store[name][...] = arr
        seen.add(name)
    missing = (set(model.params) | set(model.buffers)) - seen
    if missing:
        raise ValueError(f"checkpoint is missing tensors {sorted(missing)}")
    return model
