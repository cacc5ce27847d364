"""Mini-batch SGD with momentum, learning-rate schedules, evaluation and fine-tuning."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import NonFiniteLoss
from ..numkit import RngStream
from .layers import softmax_cross_entropy
from .network import FreezePlan, Network

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    lr: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 256
    epochs: int = 15
    schedule: str = "constant"     # or "cosine"
    lr_end: float = 0.0

    def __post_init__(self):
        if min(self.lr, self.momentum, self.weight_decay, self.lr_end) < 0:
            raise ValueError("optimizer settings must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    def to_dict(self):
        return asdict(self)


def cosine_lr(t: int, total: int, start: float, end: float) -> float:
    if total <= 0:
        return start
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside 0..{total}")
    return end + (start - end) * (1.0 + math.cos(math.pi * t / total)) / 2.0


class SGD:
    """SGD with heavy-ball momentum and L2 weight decay added to the gradient."""

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.buffers: dict[int, np.ndarray] = {}

    def step(self, layers, lr: float):
        for layer in layers:
            for name, p in layer.params.items():
                g = layer.grads[name]
                if self.weight_decay:
                    g = g + self.weight_decay * p
                key = id(p)
                buf = self.buffers.get(key)
                if buf is None:
                    buf = g.astype(p.dtype, copy=True)
                else:
                    buf *= self.momentum
                    buf += g
                self.buffers[key] = buf
                p -= p.dtype.type(lr) * buf


@dataclass
class TrainingLog:
    epochs: list = field(default_factory=list)

    def add(self, **row):
        self.epochs.append(row)

    @property
    def final_loss(self):
        return self.epochs[-1]["loss"] if self.epochs else float("nan")


def _epoch_data(data_source, epoch):
    return data_source(epoch) if callable(data_source) else data_source


def train(net: Network, data_source, target: str, opt: OptimizerConfig,
          plan: FreezePlan | None = None, rng: RngStream | None = None) -> TrainingLog:
    """Train ``net`` in place on the ``target`` labels ("alice" or "bob").

    ``data_source`` is either a fixed dataset (reshuffled each epoch) or a
    callable mapping an epoch index to a freshly sampled dataset.
    """
    rng = rng or RngStream(0)
    net.apply_plan(plan)
    net.set_dropout_rng(rng.derive("dropout").generator())
    shuffle = rng.derive("shuffle")
    layers = net.trainable_layers()
    sgd = SGD(opt.momentum, opt.weight_decay)
    result = TrainingLog()
    total_steps = None
    step = 0
    for epoch in range(opt.epochs):
        data = _epoch_data(data_source, epoch)
        y_all = data.labels(target)
        n = len(data)
        steps_per_epoch = math.ceil(n / opt.batch_size)
        if total_steps is None:
            total_steps = steps_per_epoch * opt.epochs
        order = np.arange(n) if callable(data_source) else shuffle.derive(epoch).generator().permutation(n)
        loss_sum = 0.0
        correct = 0
        lr = opt.lr
        for b in range(steps_per_epoch):
            idx = order[b * opt.batch_size:(b + 1) * opt.batch_size]
            if opt.schedule == "cosine":
                lr = cosine_lr(min(step, total_steps), total_steps, opt.lr, opt.lr_end)
            logits = net.logits(data.x[idx], train=True)
            loss, dlogits = softmax_cross_entropy(logits, y_all[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss is {loss} at epoch {epoch}, step {b} (lr={lr:g}); "
                                    "the learning rate is probably too large")
            net.backward(dlogits.astype(net.dtype, copy=False))
            sgd.step(layers, lr)
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y_all[idx]).sum())
            step += 1
        result.add(epoch=epoch, loss=loss_sum / n, accuracy=100.0 * correct / n, lr=lr)
        log.debug("epoch %d loss %.4f acc %.2f", epoch, loss_sum / n, 100.0 * correct / n)
    net.clear_cache()
    net.apply_plan(None)
    return result


def predict(net: Network, x, batch_size: int = 1000) -> np.ndarray:
    out = []
    for start in range(0, len(x), batch_size):
        out.append(net.logits(x[start:start + batch_size], train=False).argmax(axis=1))
    net.clear_cache()
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(net: Network, dataset, target: str, batch_size: int = 1000) -> float:
    """Argmax accuracy in percent against Alice's or Bob's labels, always in inference mode."""
    pred = predict(net, dataset.x, batch_size)
    return 100.0 * float(np.mean(pred == dataset.labels(target)))


def finetune(alice_net: Network, data_source, opt: OptimizerConfig, ell: int | None = None,
             rng: RngStream | None = None, reinit_head: bool = True) -> tuple[Network, TrainingLog]:
    """Bob's fine-tuning on a copy of Alice's network.

    Layers ``1..ell-1`` stay frozen; ``ell`` defaults to ``m + 1`` (output
    layer only). With ``reinit_head`` the output layer starts from a fresh
    random initialisation instead of Alice's head.
    """
    rng = rng or RngStream(0)
    net = alice_net.copy()
    ell = net.num_blocks if ell is None else ell
    if reinit_head:
        net.reset_output_layer(rng.derive("head"))
    log_ = train(net, data_source, "bob", opt, FreezePlan(ell), rng)
    return net, log_


def layer_sweep(alice_net: Network, data_source, test_set, ells, opt: OptimizerConfig,
                rng: RngStream | None = None) -> list[dict]:
    """Bob's test accuracy for each freeze depth, each run from a fresh copy of Alice's network."""
    rows = []
    for ell in ells:
        if not 1 <= ell <= alice_net.num_blocks:
            raise ValueError(f"ell must lie in 1..{alice_net.num_blocks}, got {ell}")
        bob, _ = finetune(alice_net, data_source, opt, ell, rng)
        rows.append({"ell": int(ell), "bob_acc": evaluate(bob, test_set, "bob")})
    return rows
