"""Integrated-gradients attributions against a black baseline, plus left/right half summaries."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import OddWidth, ShapeMismatch
from .nncore.layers import softmax
from .nncore.network import Network, to_input

BASELINE_BLACK = "black"


@dataclass
class AttributionMap:
    """Attribution of one input, in the network's (H, W, C) input layout."""

    values: np.ndarray
    target_class: int
    baseline: str
    steps: int
    completeness_gap: float     # |sum(values) - (F(x) - F(baseline))|
    output_delta: float         # F(x) - F(baseline)
    space: str = "logit"

    @property
    def relative_gap(self) -> float:
        denom = abs(self.output_delta)
        if denom == 0.0:
            return 0.0 if self.completeness_gap == 0.0 else float("inf")
        return self.completeness_gap / denom


def _output_and_grad(net: Network, xs, targets, space):
    """Target outputs for a batch and their gradient with respect to the (scaled) input."""
    logits = net.logits(xs, train=False)
    n = len(xs)
    rows = np.arange(n)
    if space == "logit":
        out = logits[rows, targets]
        dlogits = np.zeros_like(logits)
        dlogits[rows, targets] = 1.0
    else:
        p = softmax(logits)
        out = p[rows, targets]
        dlogits = -p * out[:, None]
        dlogits[rows, targets] += out
    grad = net.backward(dlogits, input_grad=True, param_grads=False)
    return out.astype(np.float64), grad


def integrated_gradients_batch(net: Network, xs, targets, steps: int = 128, space: str = "logit",
                               chunk_rows: int = 2048) -> list[AttributionMap]:
    """Integrated gradients for several inputs at once (midpoint rule on the straight path from black)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if space not in ("logit", "prob"):
        raise ValueError(f"space must be 'logit' or 'prob', got {space!r}")
    xs = to_input(xs, net.dtype)
    if xs.ndim != len(net.input_shape) + 1 or tuple(xs.shape[1:]) != net.input_shape:
        raise ShapeMismatch(f"expected inputs of shape (n, {', '.join(map(str, net.input_shape))}), got {xs.shape}")
    targets = np.broadcast_to(np.asarray(targets, dtype=np.int64), (len(xs),))
    alphas = ((np.arange(1, steps + 1) - 0.5) / steps).astype(net.dtype)
    per_chunk = max(1, chunk_rows // steps)
    maps = []
    for start in range(0, len(xs), per_chunk):
        xb = xs[start:start + per_chunk]
        tb = targets[start:start + per_chunk]
        nb = len(xb)
        path = alphas[None, :, None] * xb.reshape(nb, 1, -1)            # (nb, steps, D)
        path = path.reshape((nb * steps,) + net.input_shape)
        _, grads = _output_and_grad(net, path, np.repeat(tb, steps), space)
        avg = grads.reshape(nb, steps, -1).astype(np.float64).mean(axis=1)
        ends = np.concatenate([xb, np.zeros_like(xb)])
        f_ends, _ = _output_and_grad(net, ends, np.concatenate([tb, tb]), space)
        net.clear_cache()
        for j in range(nb):
            values = (xb[j].reshape(-1).astype(np.float64) * avg[j]).reshape(net.input_shape)
            delta = float(f_ends[j] - f_ends[nb + j])
            gap = abs(float(values.sum()) - delta)
            maps.append(AttributionMap(values, int(tb[j]), BASELINE_BLACK, steps, gap, delta, space))
    return maps


def integrated_gradients(net: Network, x, target_class: int, steps: int = 128,
                         space: str = "logit") -> AttributionMap:
    """Attribution of the target class output for one (H, W, C) input.

    ``space="logit"`` differentiates the pre-softmax logit; ``"prob"`` the
    softmax probability. Pixels at zero get exactly zero attribution.
    """
    x = np.asarray(x)
    if tuple(x.shape) != net.input_shape:
        raise ShapeMismatch(f"expected an input of shape {net.input_shape}, got {x.shape}")
    return integrated_gradients_batch(net, x[None], [target_class], steps, space)[0]


@dataclass(frozen=True)
class SideSummary:
    left_mean: float
    right_mean: float


def side_means(a, absolute: bool = False) -> SideSummary:
    """Mean attribution over the left columns ``[0, W/2)`` and the right columns ``[W/2, W)``.

    Channels are averaged together with the pixels of each half.
    """
    values = a.values if isinstance(a, AttributionMap) else np.asarray(a, dtype=np.float64)
    if values.ndim == 2:
        values = values[:, :, None]
    w = values.shape[1]
    if w % 2:
        raise OddWidth(f"image width {w} is odd, halves are undefined")
    if absolute:
        values = np.abs(values)
    return SideSummary(float(values[:, :w // 2].mean()), float(values[:, w // 2:].mean()))


@dataclass
class SideHistograms:
    bin_edges: np.ndarray
    left_density: np.ndarray
    right_density: np.ndarray

    def overlap(self) -> float:
        """Overlap coefficient: area under the pointwise minimum of the two densities."""
        widths = np.diff(self.bin_edges)
        return float(np.sum(np.minimum(self.left_density, self.right_density) * widths))

    def to_dict(self) -> dict:
        return {"bin_edges": self.bin_edges.tolist(), "left_density": self.left_density.tolist(),
                "right_density": self.right_density.tolist()}


def side_histograms(summaries, bins: int = 30, value_range=None) -> SideHistograms:
    """Density histograms (area 1) of the left and right means over one shared range."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    left = np.array([s.left_mean for s in summaries], dtype=np.float64)
    right = np.array([s.right_mean for s in summaries], dtype=np.float64)
    if value_range is None:
        both = np.concatenate([left, right])
        value_range = (float(both.min()), float(both.max()))
    edges = np.histogram_bin_edges(np.concatenate([left, right]), bins=bins, range=value_range)
    ld, _ = np.histogram(left, bins=edges, density=True)
    rd, _ = np.histogram(right, bins=edges, density=True)
    return SideHistograms(edges, ld, rd)


def write_attributions_csv(path, maps) -> None:
    """One row per sample: target class, then the flattened (H, W, C) values."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        if maps:
            writer.writerow(["target_class"] + [f"v{i}" for i in range(maps[0].values.size)])
        for m in maps:
            writer.writerow([m.target_class] + [f"{v:.6g}" for v in m.values.ravel()])


def write_histograms_json(path, hist: SideHistograms) -> None:
    with open(path, "w") as f:
        json.dump(hist.to_dict(), f, indent=2)
