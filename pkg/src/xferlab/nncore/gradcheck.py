"""Finite-difference checks of the hand-written backward passes.

Each check builds one layer in float64 with a random small configuration,
uses the scalar loss ``sum(out * R)`` for a fixed random ``R`` (softmax
cross-entropy for the output layer) and compares analytic parameter and
input gradients with central differences.
"""
from __future__ import annotations

import numpy as np

from ..numkit import RngStream, as_generator
from .layers import (BatchNorm, Conv2d, Dense, Dropout, Flatten, MaxPool2x2, ReLU, SoftmaxOutput,
                     softmax_cross_entropy)

KINDS = ("dense", "conv2d", "batchnorm", "relu", "dropout", "maxpool2x2", "flatten", "softmax_output")


def max_relative_error(analytic, numeric) -> float:
    """``max|a - n| / max(max|a|, max|n|)``: the worst absolute error relative to the gradient's scale."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def _random_config(kind, g):
    n = int(g.integers(2, 6))
    if kind in ("dense", "softmax_output"):
        return {"n": n, "in": int(g.integers(2, 10)), "out": int(g.integers(2, 8))}
    if kind == "conv2d":
        return {"n": int(g.integers(1, 4)), "h": int(g.integers(3, 7)), "w": int(g.integers(3, 7)),
                "cin": int(g.integers(1, 4)), "filters": int(g.integers(1, 4))}
    if kind == "batchnorm":
        if g.random() < 0.5:
            return {"shape": (int(g.integers(3, 10)), int(g.integers(2, 6))), "train": True}
        return {"shape": (n, int(g.integers(2, 5)), int(g.integers(2, 5)), int(g.integers(1, 4))), "train": True}
    if kind == "maxpool2x2":
        return {"shape": (n, 2 * int(g.integers(1, 4)), 2 * int(g.integers(1, 4)), int(g.integers(1, 4)))}
    if kind in ("relu", "dropout", "flatten"):
        return {"shape": (n, int(g.integers(2, 5)), int(g.integers(2, 5)), int(g.integers(1, 3)))}
    raise ValueError(f"unknown layer kind {kind!r}")


def _make(kind, cfg, g):
    """Return (layer, per-sample input shape, input batch)."""
    if kind in ("dense", "softmax_output"):
        layer = (Dense if kind == "dense" else SoftmaxOutput)(cfg["out"])
        x = g.standard_normal((cfg["n"], cfg["in"]))
        return layer, (cfg["in"],), x
    if kind == "conv2d":
        layer = Conv2d(cfg["filters"])
        x = g.standard_normal((cfg["n"], cfg["h"], cfg["w"], cfg["cin"]))
        return layer, x.shape[1:], x
    shape = tuple(cfg["shape"])
    if kind == "batchnorm":
        layer = BatchNorm()
        x = g.standard_normal(shape) * 1.5 + 0.3
    elif kind == "relu":
        layer = ReLU()
        # keep every input well clear of the kink relative to the step size
        x = g.choice([-1.0, 1.0], size=shape) * g.uniform(0.05, 1.0, size=shape)
    elif kind == "maxpool2x2":
        layer = MaxPool2x2()
        # distinct values spaced far more than the step size, so argmax never flips
        x = (g.permutation(int(np.prod(shape))).reshape(shape) * 0.05).astype(np.float64)
    elif kind == "dropout":
        layer = Dropout(float(g.uniform(0.1, 0.6)))
        x = g.standard_normal(shape)
    else:
        layer = Flatten()
        x = g.standard_normal(shape)
    return layer, shape[1:], x


def gradient_check(kind: str, rng: RngStream | np.random.Generator | None = None,
                   h: float = 1e-3, **overrides) -> float:
    """Max relative error between analytic and central-difference gradients for one layer.

    ``overrides`` replace entries of the randomly drawn configuration, e.g.
    ``gradient_check("dense", rng, **{"in": 7, "out": 5})``.
    """
    g = as_generator(rng if rng is not None else RngStream(0))
    cfg = _random_config(kind, g)
    cfg.update(overrides)
    layer, in_shape, x = _make(kind, cfg, g)
    layer.build(in_shape, g, np.float64)
    for name in layer.params:
        layer.params[name] = layer.params[name] + 0.1 * g.standard_normal(layer.params[name].shape)
    train = bool(cfg.get("train", True))
    if isinstance(layer, Dropout):
        layer.fixed_mask = g.random(x.shape) >= layer.rate

    if kind == "softmax_output":
        labels = g.integers(0, cfg["out"], size=x.shape[0])

        def loss_fn():
            return softmax_cross_entropy(layer.forward(x, train), labels)[0]

        out = layer.forward(x, train)
        _, dout = softmax_cross_entropy(out, labels)
    else:
        out = layer.forward(x, train)
        proj = g.standard_normal(out.shape)

        def loss_fn():
            return float((layer.forward(x, train) * proj).sum())

        dout = proj
    out = layer.forward(x, train)
    dx = layer.backward(dout, param_grads=True)
    analytic = {name: layer.grads[name].copy() for name in layer.params}
    analytic["__input__"] = dx

    errors = []
    targets = [(name, layer.params[name]) for name in layer.params] + [("__input__", x)]
    for name, arr in targets:
        numeric = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = arr[i]
            arr[i] = old + h
            plus = loss_fn()
            arr[i] = old - h
            minus = loss_fn()
            arr[i] = old
            numeric[i] = (plus - minus) / (2 * h)
        errors.append(max_relative_error(analytic[name], numeric))
    return max(errors)
