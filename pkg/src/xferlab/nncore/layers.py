"""Layers with hand-written forward and backward passes.

Activations use (N, H, W, C) layout for images and (N, D) after flattening.
Every layer caches what its backward pass needs during ``forward``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


class Layer:
    kind = "layer"
    has_params = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.in_shape: tuple | None = None
        self.out_shape: tuple | None = None

    def build(self, in_shape, rng: np.random.Generator, dtype) -> tuple:
        self.in_shape = tuple(in_shape)
        self.out_shape = self._out_shape(self.in_shape)
        return self.out_shape

    def _out_shape(self, in_shape):
        return in_shape

    def forward(self, x, train: bool):
        raise NotImplementedError

    def backward(self, dy, param_grads: bool = True):
        raise NotImplementedError

    def clear_cache(self):
        for name in [k for k in vars(self) if k.startswith("_c_")]:
            setattr(self, name, None)

    def spec(self) -> dict:
        return {"kind": self.kind}


def _fan_in_uniform(rng, shape, fan_in, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Dense(Layer):
    kind = "dense"
    has_params = True

    def __init__(self, units: int):
        super().__init__()
        self.units = int(units)

    def _out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeMismatch(f"dense layer expects flat input, got {in_shape}")
        return (self.units,)

    def build(self, in_shape, rng, dtype):
        out = super().build(in_shape, rng, dtype)
        fan_in = in_shape[0]
        self.params = {
            "W": _fan_in_uniform(rng, (fan_in, self.units), fan_in, dtype),
            "b": _fan_in_uniform(rng, (self.units,), fan_in, dtype),
        }
        return out

    def forward(self, x, train):
        self._c_x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dy, param_grads=True):
        if param_grads:
            self.grads["W"] = self._c_x.T @ dy
            self.grads["b"] = dy.sum(axis=0)
        return dy @ self.params["W"].T

    def spec(self):
        return {"kind": self.kind, "size": self.units}


class SoftmaxOutput(Dense):
    """Output layer producing class logits; the softmax lives in the loss and in ``predict_proba``."""

    kind = "softmax_output"


class Conv2d(Layer):
    """3x3 convolution, stride 1, zero padding 1 (spatial size preserved)."""

    kind = "conv2d"
    has_params = True
    ksize = 3

    def __init__(self, filters: int):
        super().__init__()
        self.filters = int(filters)

    def _out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeMismatch(f"conv layer expects (H, W, C) input, got {in_shape}")
        h, w, _ = in_shape
        return (h, w, self.filters)

    def build(self, in_shape, rng, dtype):
        out = super().build(in_shape, rng, dtype)
        cin = in_shape[2]
        fan_in = cin * self.ksize * self.ksize
        self.params = {
            "W": _fan_in_uniform(rng, (self.ksize, self.ksize, cin, self.filters), fan_in, dtype),
            "b": _fan_in_uniform(rng, (self.filters,), fan_in, dtype),
        }
        return out

    def forward(self, x, train):
        n, h, w, c = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        win = sliding_window_view(xp, (3, 3), axis=(1, 2))          # (n, h, w, c, 3, 3)
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * h * w, 9 * c)
        self._c_cols = cols
        self._c_xshape = x.shape
        out = cols @ self.params["W"].reshape(9 * c, self.filters) + self.params["b"]
        return out.reshape(n, h, w, self.filters)

    def backward(self, dy, param_grads=True):
        n, h, w, c = self._c_xshape
        d2 = dy.reshape(n * h * w, self.filters)
        wmat = self.params["W"].reshape(9 * c, self.filters)
        if param_grads:
            self.grads["W"] = (self._c_cols.T @ d2).reshape(self.params["W"].shape)
            self.grads["b"] = d2.sum(axis=0)
        dcols = (d2 @ wmat.T).reshape(n, h, w, 3, 3, c)
        dxp = np.zeros((n, h + 2, w + 2, c), dtype=dy.dtype)
        for ky in range(3):
            for kx in range(3):
                dxp[:, ky:ky + h, kx:kx + w, :] += dcols[:, :, :, ky, kx, :]
        return dxp[:, 1:-1, 1:-1, :]

    def spec(self):
        return {"kind": self.kind, "size": self.filters}


class BatchNorm(Layer):
    """Normalises over every axis but the last; running statistics as in common frameworks."""

    kind = "batchnorm"
    has_params = True

    def __init__(self, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        # stored at f32 precision so checkpoints reproduce them exactly
        self.eps = float(np.float32(eps))
        self.momentum = float(np.float32(momentum))
        self.running_mean = None
        self.running_var = None

    def build(self, in_shape, rng, dtype):
        out = super().build(in_shape, rng, dtype)
        c = in_shape[-1]
        self.params = {"gamma": np.ones(c, dtype=dtype), "beta": np.zeros(c, dtype=dtype)}
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        return out

    def forward(self, x, train):
        axes = tuple(range(x.ndim - 1))
        if train:
            m = x.shape[0] if x.ndim == 2 else int(np.prod(x.shape[:-1]))
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            unbiased = var * (m / max(m - 1, 1))
            mom = self.momentum
            self.running_mean = ((1 - mom) * self.running_mean + mom * mean).astype(self.running_mean.dtype)
            self.running_var = ((1 - mom) * self.running_var + mom * unbiased).astype(self.running_var.dtype)
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        self._c_xhat, self._c_inv, self._c_train = xhat, inv, train
        return self.params["gamma"] * xhat + self.params["beta"]

    def backward(self, dy, param_grads=True):
        axes = tuple(range(dy.ndim - 1))
        xhat, inv = self._c_xhat, self._c_inv
        gamma = self.params["gamma"]
        if param_grads:
            self.grads["gamma"] = (dy * xhat).sum(axis=axes)
            self.grads["beta"] = dy.sum(axis=axes)
        if not self._c_train:
            return dy * (gamma * inv)
        m = dy.size // dy.shape[-1]
        dxhat = dy * gamma
        return (inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))

    def spec(self):
        return {"kind": self.kind, "eps": self.eps, "momentum": self.momentum}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train):
        self._c_mask = x > 0
        return np.where(self._c_mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dy, param_grads=True):
        return np.where(self._c_mask, dy, 0).astype(dy.dtype, copy=False)


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1/(1-rate) during training."""

    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(np.float32(rate))
        self.rng: np.random.Generator | None = None
        self.fixed_mask = None

    def forward(self, x, train):
        if not train or self.rate == 0.0:
            self._c_scale = None
            return x
        if self.fixed_mask is not None:
            keep = self.fixed_mask
        else:
            if self.rng is None:
                self.rng = np.random.default_rng(0)
            keep = self.rng.random(x.shape) >= self.rate
        scale = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        self._c_scale = scale
        return x * scale

    def backward(self, dy, param_grads=True):
        return dy if self._c_scale is None else dy * self._c_scale

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}


class MaxPool2x2(Layer):
    kind = "maxpool2x2"

    def _out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeMismatch(f"max pooling expects (H, W, C) input, got {in_shape}")
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise ShapeMismatch(f"input {in_shape} too small for 2x2 pooling")
        return (h // 2, w // 2, c)

    def forward(self, x, train):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        xr = x[:, :2 * h2, :2 * w2, :].reshape(n, h2, 2, w2, 2, c)
        xr = xr.transpose(0, 1, 3, 5, 2, 4).reshape(n, h2, w2, c, 4)
        idx = xr.argmax(axis=-1)
        self._c_idx, self._c_xshape = idx, x.shape
        return np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy, param_grads=True):
        n, h, w, c = self._c_xshape
        h2, w2 = h // 2, w // 2
        dr = np.zeros((n, h2, w2, c, 4), dtype=dy.dtype)
        np.put_along_axis(dr, self._c_idx[..., None], dy[..., None], axis=-1)
        dr = dr.reshape(n, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * h2, 2 * w2, c)
        if (2 * h2, 2 * w2) == (h, w):
            return dr
        dx = np.zeros((n, h, w, c), dtype=dy.dtype)
        dx[:, :2 * h2, :2 * w2, :] = dr
        return dx


class Flatten(Layer):
    kind = "flatten"

    def _out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train):
        self._c_xshape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy, param_grads=True):
        return dy.reshape(self._c_xshape)


LAYER_KINDS = {cls.kind: cls for cls in (Dense, SoftmaxOutput, Conv2d, BatchNorm, ReLU, Dropout,
                                        MaxPool2x2, Flatten)}
TRAINABLE_KINDS = ("dense", "conv2d", "softmax_output")


def layer_from_spec(spec: dict) -> Layer:
    kind = spec["kind"]
    if kind in ("dense", "softmax_output"):
        return LAYER_KINDS[kind](spec["size"])
    if kind == "conv2d":
        return Conv2d(spec["size"])
    if kind == "batchnorm":
        return BatchNorm(spec.get("eps", 1e-5), spec.get("momentum", 0.1))
    if kind == "dropout":
        return Dropout(spec["rate"])
    if kind in LAYER_KINDS:
        return LAYER_KINDS[kind]()
    raise ValueError(f"unknown layer kind {kind!r}")


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy via log-sum-exp and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    grad = np.exp(z - lse[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
