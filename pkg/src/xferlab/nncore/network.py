"""Network container, the two reference architectures and freeze plans."""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..numkit import RngStream, as_generator
from .layers import (TRAINABLE_KINDS, BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool2x2,
                     ReLU, SoftmaxOutput, softmax)


class Arch(str, enum.Enum):
    FULLY_CONNECTED = "fc"
    CONVOLUTIONAL = "conv"


class Init(str, enum.Enum):
    STANDARD = "standard"
    ZERO_RIGHT_HALF = "zero_right_half"


@dataclass(frozen=True)
class ScaleProfile:
    name: str
    conv_mult: float
    dense_mult: float

    def conv(self, n):
        return max(1, int(round(n * self.conv_mult)))

    def dense(self, n):
        return max(1, int(round(n * self.dense_mult)))


PAPER = ScaleProfile("paper", 1.0, 1.0)
DESK = ScaleProfile("desk", 1 / 8, 1 / 4)
PROFILES = {"paper": PAPER, "desk": DESK}


@dataclass(frozen=True)
class FreezePlan:
    """Freeze the first ``ell - 1`` trainable layers; ``ell = m + 1`` trains only the output layer."""

    ell: int


def fully_connected_layers(profile: ScaleProfile = PAPER, num_classes: int = 10) -> list[Layer]:
    return [
        Flatten(),
        Dense(profile.dense(1024)), BatchNorm(), ReLU(), Dropout(0.25),
        Dense(profile.dense(512)), BatchNorm(), ReLU(),
        SoftmaxOutput(num_classes),
    ]


def convolutional_layers(profile: ScaleProfile = PAPER, num_classes: int = 10) -> list[Layer]:
    layers: list[Layer] = []
    for i, f in enumerate((32, 64, 128, 256, 512, 1024)):
        layers += [Conv2d(profile.conv(f)), BatchNorm(), ReLU()]
        if i % 2 == 1:
            layers += [MaxPool2x2(), Dropout(0.25)]
    layers += [
        Flatten(),
        Dense(profile.dense(1024)), ReLU(), Dropout(0.25),
        Dense(profile.dense(512)), ReLU(),
        SoftmaxOutput(num_classes),
    ]
    return layers


class Network:
    """An ordered layer list grouped into blocks, one per trainable layer.

    Block ``b`` (1-based) holds the b-th trainable layer plus the
    normalisation, activation, pooling and dropout layers that follow it;
    parameter-free layers ahead of the first trainable layer join block 1.
    The last block is the softmax output layer, so ``m = num_blocks - 1``.
    """

    def __init__(self, layers: list[Layer], input_shape, rng=None, dtype=np.float32):
        if not layers or not isinstance(layers[-1], SoftmaxOutput):
            raise ValueError("the last layer must be the softmax output layer")
        if sum(isinstance(l, SoftmaxOutput) for l in layers) != 1:
            raise ValueError("exactly one softmax output layer is required")
        self.layers = layers
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        g = as_generator(rng if rng is not None else RngStream(0))
        shape = self.input_shape
        for layer in layers:
            shape = layer.build(shape, g, self.dtype)
        self.block_of = []
        block = 0
        for layer in layers:
            if layer.kind in TRAINABLE_KINDS:
                block += 1
            self.block_of.append(max(block, 1))
        self.num_blocks = block
        self.frozen = [False] * self.num_blocks

    @property
    def m(self) -> int:
        return self.num_blocks - 1

    @property
    def num_classes(self) -> int:
        return self.layers[-1].units

    def apply_plan(self, plan: FreezePlan | None):
        if plan is None:
            self.frozen = [False] * self.num_blocks
            return
        ell = plan.ell
        if not 1 <= ell <= self.num_blocks:
            raise ValueError(f"ell must lie in 1..{self.num_blocks}, got {ell}")
        self.frozen = [b < ell for b in range(1, self.num_blocks + 1)]

    def layer_frozen(self, i: int) -> bool:
        return self.frozen[self.block_of[i] - 1]

    def trainable_layers(self):
        return [l for i, l in enumerate(self.layers) if l.has_params and not self.layer_frozen(i)]

    def set_dropout_rng(self, rng: np.random.Generator):
        for layer in self.layers:
            if isinstance(layer, Dropout):
                layer.rng = rng

    def _check(self, x):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"network expects inputs of shape {self.input_shape}, got {tuple(x.shape[1:])}")

    def logits(self, x, train: bool = False):
        """Pre-softmax outputs. In training, layers of frozen blocks still run in inference mode.

        ``uint8`` images are scaled to [0, 1] first.
        """
        x = to_input(x, self.dtype)
        self._check(x)
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, train and not self.layer_frozen(i))
        return x

    def forward(self, x, train: bool = False):
        return softmax(self.logits(x, train))

    def backward(self, dlogits, input_grad: bool = False, param_grads: bool = True):
        """Backpropagate from the logits.

        Without ``input_grad`` the pass stops at the first unfrozen layer, since
        frozen blocks always form a prefix and need no gradients.
        """
        stop = 0
        if not input_grad:
            unfrozen = [i for i in range(len(self.layers)) if not self.layer_frozen(i)]
            stop = unfrozen[0] if unfrozen else len(self.layers)
        d = dlogits
        for i in range(len(self.layers) - 1, stop - 1, -1):
            layer = self.layers[i]
            grads_here = param_grads and layer.has_params and not self.layer_frozen(i)
            if i == stop and not input_grad:
                if grads_here:
                    layer.backward(d, param_grads=True)
                return None
            d = layer.backward(d, param_grads=grads_here)
        return d

    def clear_cache(self):
        for layer in self.layers:
            layer.clear_cache()

    def copy(self) -> Network:
        self.clear_cache()
        dup = copy.deepcopy(self)
        for layer in dup.layers:
            if isinstance(layer, Dropout):
                layer.rng = None
        return dup

    def reset_output_layer(self, rng):
        out = self.layers[-1]
        out.build(out.in_shape, as_generator(rng), self.dtype)

    def parameter_snapshot(self) -> list[np.ndarray]:
        snap = []
        for layer in self.layers:
            for name in sorted(layer.params):
                snap.append(layer.params[name].copy())
            if isinstance(layer, BatchNorm):
                snap += [layer.running_mean.copy(), layer.running_var.copy()]
        return snap

    def block_snapshot(self, block: int) -> list[np.ndarray]:
        snap = []
        for i, layer in enumerate(self.layers):
            if self.block_of[i] != block:
                continue
            for name in sorted(layer.params):
                snap.append(layer.params[name].copy())
            if isinstance(layer, BatchNorm):
                snap += [layer.running_mean.copy(), layer.running_var.copy()]
        return snap


def to_input(x, dtype=np.float32):
    """Map uint8 pixels to [0, 1]; black stays exactly zero."""
    x = np.asarray(x)
    if x.dtype == np.uint8:
        return x.astype(dtype) / np.dtype(dtype).type(255)
    return x.astype(dtype, copy=False)


def right_half_mask(input_shape) -> np.ndarray:
    """Boolean mask over the flattened (H, W, C) input marking the right image half."""
    h, w, c = input_shape
    cols = np.broadcast_to(np.arange(w)[None, :, None], (h, w, c)).ravel()
    return cols >= w // 2


def build_network(arch, input_shape, rng, init=Init.STANDARD, profile: ScaleProfile = PAPER,
                  dtype=np.float32, num_classes: int = 10) -> Network:
    """Build one of the reference architectures, or a custom layer list.

    ``arch`` is an :class:`Arch` value or a list of layers ending with a
    :class:`SoftmaxOutput`. ``Init.ZERO_RIGHT_HALF`` zeroes the first dense
    layer's weights on every input coordinate in the right image half.
    """
    input_shape = tuple(input_shape)
    if len(input_shape) != 3:
        raise ShapeMismatch(f"input shape must be (H, W, C), got {input_shape}")
    if isinstance(arch, (list, tuple)):
        layers = list(arch)
    else:
        arch = Arch(arch)
        if arch is Arch.FULLY_CONNECTED:
            layers = fully_connected_layers(profile, num_classes)
        else:
            layers = convolutional_layers(profile, num_classes)
    net = Network(layers, input_shape, rng, dtype)
    init = Init(init)
    if init is Init.ZERO_RIGHT_HALF:
        first = next(l for l in net.layers if l.has_params)
        if not isinstance(first, Dense) or not isinstance(net.layers[0], Flatten):
            raise ValueError("zero_right_half init needs a fully-connected first layer on a flattened image")
        first.params["W"][right_half_mask(input_shape)] = 0
    return net
