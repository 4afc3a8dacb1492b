"""Stateful layers built on :mod:`.functional`.

Each layer owns its parameters (``params``), their gradients (``grads``) and
non-trainable buffers (``buffers``, e.g. batch-norm running statistics).
``forward`` caches what ``backward`` needs, so a layer handles one
forward/backward pair at a time.
"""

from __future__ import annotations

import numpy as np

from . import functional as F


class Layer:
    kind = "layer"
    # set on a network's first layer: its input gradient is never used
    skip_input_grad = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def output_shape(self, shape: tuple) -> tuple:
        """Shape after this layer for a given input shape (batch dim excluded)."""
        return shape

    def describe(self) -> dict:
        return {"kind": self.kind}

    def astype(self, dtype) -> "Layer":
        for store in (self.params, self.buffers):
            for k in store:
                store[k] = store[k].astype(dtype)
        for _, child in self.children():
            child.astype(dtype)
        return self


class Conv2d(Layer):
    kind = "conv"

    def __init__(self, cin: int, cout: int, kernel: int = 3, stride: int = 1, pad: int | None = None):
        super().__init__()
        self.cin, self.cout, self.kernel, self.stride = cin, cout, kernel, stride
        self.pad = kernel // 2 if pad is None else pad
        self.params["weight"] = np.zeros((cout, cin, kernel, kernel), dtype=np.float32)
        self.params["bias"] = np.zeros(cout, dtype=np.float32)

    def forward(self, x, train=False, rng=None):
        out, self._cache = F.conv2d(x, self.params["weight"], self.params["bias"], self.stride, self.pad)
        return out

    def backward(self, dout):
        dx, dk, db = F.conv2d_backward(dout, self._cache, input_grad=not self.skip_input_grad)
        self._cache = None
        self.grads["weight"], self.grads["bias"] = dk, db
        return dx

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.cin:
            raise ValueError(f"conv expects {self.cin} channels, got {c}")
        return (self.cout, F._out_size(h, self.kernel, self.stride, self.pad),
                F._out_size(w, self.kernel, self.stride, self.pad))

    def describe(self):
        return {"kind": self.kind, "cin": self.cin, "cout": self.cout, "kernel": self.kernel,
                "stride": self.stride, "pad": self.pad}


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9):
        super().__init__()
        self.channels, self.eps, self.momentum = channels, eps, momentum
        self.params["gamma"] = np.ones(channels, dtype=np.float32)
        self.params["beta"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_mean"] = np.zeros(channels, dtype=np.float32)
        self.buffers["running_var"] = np.ones(channels, dtype=np.float32)

    def forward(self, x, train=False, rng=None):
        out, self._cache = F.batch_norm(x, self.params["gamma"], self.params["beta"],
                                        self.buffers["running_mean"], self.buffers["running_var"],
                                        train, self.eps, self.momentum)
        return out

    def backward(self, dout):
        dx, dg, db = F.batch_norm_backward(dout, self._cache)
        self._cache = None
        self.grads["gamma"], self.grads["beta"] = dg, db
        return dx

    def describe(self):
        return {"kind": self.kind, "channels": self.channels}

    def astype(self, dtype):
        for k in self.params:
            self.params[k] = self.params[k].astype(dtype)
        return self


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        out, self._mask = F.relu(x)
        return out

    def backward(self, dout):
        return F.relu_backward(dout, self._mask)


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, window: int = 2, stride: int = 2):
        super().__init__()
        self.window, self.stride = window, stride

    def forward(self, x, train=False, rng=None):
        out, self._cache = F.max_pool(x, self.window, self.stride)
        return out

    def backward(self, dout):
        return F.max_pool_backward(dout, self._cache)

    def output_shape(self, shape):
        c, h, w = shape
        return (c, h // self.window, w // self.window)

    def describe(self):
        return {"kind": self.kind, "window": self.window, "stride": self.stride}


class AvgPool(Layer):
    kind = "avgpool"

    def __init__(self, window: int = 3, stride: int = 2, pad: int = 1):
        super().__init__()
        self.window, self.stride, self.pad = window, stride, pad

    def forward(self, x, train=False, rng=None):
        out, self._cache = F.avg_pool(x, self.window, self.stride, self.pad)
        return out

    def backward(self, dout):
        return F.avg_pool_backward(dout, self._cache)

    def output_shape(self, shape):
        c, h, w = shape
        return (c, F._out_size(h, self.window, self.stride, self.pad),
                F._out_size(w, self.window, self.stride, self.pad))

    def describe(self):
        return {"kind": self.kind, "window": self.window, "stride": self.stride, "pad": self.pad}


class GlobalAvgPool(Layer):
    kind = "gap"

    def forward(self, x, train=False, rng=None):
        out, self._shape = F.global_avg_pool(x)
        return out

    def backward(self, dout):
        return F.global_avg_pool_backward(dout, self._shape)

    def output_shape(self, shape):
        return (shape[0],)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False, rng=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


class Dense(Layer):
    kind = "dense"

    def __init__(self, din: int, dout: int):
        super().__init__()
        self.din, self.dout = din, dout
        self.params["weight"] = np.zeros((dout, din), dtype=np.float32)
        self.params["bias"] = np.zeros(dout, dtype=np.float32)

    def forward(self, x, train=False, rng=None):
        out, self._cache = F.dense(x, self.params["weight"], self.params["bias"])
        return out

    def backward(self, dout):
        dx, dw, db = F.dense_backward(dout, self._cache)
        self._cache = None
        self.grads["weight"], self.grads["bias"] = dw, db
        return dx

    def output_shape(self, shape):
        if shape != (self.din,):
            raise ValueError(f"dense expects ({self.din},), got {shape}")
        return (self.dout,)

    def describe(self):
        return {"kind": self.kind, "din": self.din, "dout": self.dout}


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, p: float = 0.5):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = p

    def forward(self, x, train=False, rng=None):
        out, self._mask = F.dropout(x, self.p, train, rng)
        return out

    def backward(self, dout):
        return F.dropout_backward(dout, self._mask)

    def describe(self):
        return {"kind": self.kind, "p": self.p}


class ResidualBlock(Layer):
    """conv-BN-ReLU, conv-BN on the main path; identity or 1x1 projection shortcut; ReLU after the sum."""

    kind = "resblock"

    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.cin, self.cout, self.stride = cin, cout, stride
        self.conv1 = Conv2d(cin, cout, 3, stride, 1)
        self.bn1 = BatchNorm(cout)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(cout, cout, 3, 1, 1)
        self.bn2 = BatchNorm(cout)
        self.shortcut = Conv2d(cin, cout, 1, stride, 0) if (stride != 1 or cin != cout) else None

    def children(self):
        out = [("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)]
        if self.shortcut is not None:
            out.append(("shortcut", self.shortcut))
        return out

    def forward(self, x, train=False, rng=None):
        h = self.conv1.forward(x, train)
        self._pre1 = self.bn1.forward(h, train)
        h = self.relu1.forward(self._pre1, train)
        h = self.bn2.forward(self.conv2.forward(h, train), train)
        s = x if self.shortcut is None else self.shortcut.forward(x, train)
        if s.shape != h.shape:
            raise ValueError(f"residual branches disagree: {h.shape} vs {s.shape}")
        self._pre_out = h + s
        out, self._mask = F.relu(self._pre_out)
        return out

    def backward(self, dout):
        d = F.relu_backward(dout, self._mask)
        dmain = self.conv1.backward(self.bn1.backward(self.relu1.backward(
            self.conv2.backward(self.bn2.backward(d)))))
        dshort = d if self.shortcut is None else self.shortcut.backward(d)
        return dmain + dshort

    def relu_inputs(self) -> list[np.ndarray]:
        """Pre-activation arrays from the last forward (used to keep gradient checks off the kinks)."""
        return [self._pre1, self._pre_out]

    def output_shape(self, shape):
        shape_main = self.conv2.output_shape(self.conv1.output_shape(shape))
        if self.shortcut is not None:
            shape_short = self.shortcut.output_shape(shape)
        else:
            shape_short = shape
        if shape_main != shape_short:
            raise ValueError(f"residual branches disagree: {shape_main} vs {shape_short}")
        return shape_main

    def describe(self):
        return {"kind": self.kind, "cin": self.cin, "cout": self.cout, "stride": self.stride}


class Network(Layer):
    """Ordered stack of layers with parameter bookkeeping."""

    kind = "network"

    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = layers

    def children(self):
        return [(f"{i}", layer) for i, layer in enumerate(self.layers)]

    def forward(self, x, train=False, rng=None):
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
            if dout is None:
                break
        return dout

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def shape_walk(self, shape) -> list[tuple[str, tuple]]:
        out = []
        for layer in self.layers:
            shape = layer.output_shape(shape)
            out.append((layer.kind, shape))
        return out

    def describe(self):
        return {"kind": self.kind, "layers": [layer.describe() for layer in self.layers]}


def walk(layer: Layer, prefix: str = ""):
    """Yield (qualified name, layer) for ``layer`` and every descendant."""
    yield prefix, layer
    for name, child in layer.children():
        yield from walk(child, f"{prefix}.{name}" if prefix else name)


def named_params(layer: Layer) -> list[tuple[str, Layer, str]]:
    return [(name, lyr, key) for name, lyr in walk(layer) for key in lyr.params]


def named_buffers(layer: Layer) -> list[tuple[str, Layer, str]]:
    return [(name, lyr, key) for name, lyr in walk(layer) for key in lyr.buffers]


def count_params(layer: Layer) -> int:
    return sum(lyr.params[key].size for _, lyr, key in named_params(layer))
