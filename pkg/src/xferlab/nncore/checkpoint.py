"""XFN1 checkpoint format.

Layout, all little-endian::

    b"XFN1"  u32 version
    u32 ndim, u32 dims...                       input shape
    u32 num_layers, then per layer a 24-byte record:
        u8 kind, u8 frozen, u16 reserved, u32 size, f32 rate, f32 eps, f32 momentum, u32 reserved
    per parameter tensor (layer order, names sorted):   u32 ndim, u32 dims..., f32 data
    per BatchNorm layer: running mean then running variance, same tensor encoding
"""
from __future__ import annotations

import io
import struct

import numpy as np

from ..errors import BadMagic, Truncated
from .layers import BatchNorm, layer_from_spec
from .network import Network

MAGIC = b"XFN1"
VERSION = 1
KIND_CODES = {"flatten": 1, "dense": 2, "conv2d": 3, "batchnorm": 4, "relu": 5, "dropout": 6,
              "maxpool2x2": 7, "softmax_output": 8}
_KINDS_BY_CODE = {v: k for k, v in KIND_CODES.items()}
_RECORD = struct.Struct("<BBHIfffI")


def _write_tensor(buf, a):
    a = np.ascontiguousarray(a, dtype="<f4")
    buf.write(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
    buf.write(a.tobytes())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise Truncated(f"checkpoint ends at byte {len(self.raw)}, needed {self.pos + n}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def tensor(self):
        ndim = self.u32()
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        return np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).copy()


def dump_network(net: Network) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack(f"<I{len(net.input_shape)}I", len(net.input_shape), *net.input_shape))
    buf.write(struct.pack("<I", len(net.layers)))
    for i, layer in enumerate(net.layers):
        spec = layer.spec()
        buf.write(_RECORD.pack(KIND_CODES[layer.kind], int(net.layer_frozen(i)), 0, spec.get("size", 0),
                               spec.get("rate", 0.0), spec.get("eps", 0.0), spec.get("momentum", 0.0), 0))
    for layer in net.layers:
        for name in sorted(layer.params):
            _write_tensor(buf, layer.params[name])
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            _write_tensor(buf, layer.running_mean)
            _write_tensor(buf, layer.running_var)
    return buf.getvalue()


def parse_network(raw: bytes) -> Network:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise BadMagic("not an XFN1 checkpoint")
    version = r.u32()
    if version != VERSION:
        raise BadMagic(f"unsupported checkpoint version {version}")
    ndim = r.u32()
    input_shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
    layers, frozen = [], []
    for _ in range(r.u32()):
        code, is_frozen, _, size, rate, eps, momentum, _ = _RECORD.unpack(r.take(_RECORD.size))
        kind = _KINDS_BY_CODE.get(code)
        if kind is None:
            raise BadMagic(f"unknown layer code {code}")
        layers.append(layer_from_spec({"kind": kind, "size": size, "rate": float(rate),
                                       "eps": float(eps), "momentum": float(momentum)}))
        frozen.append(bool(is_frozen))
    net = Network(layers, input_shape, np.random.default_rng(0), np.float32)
    for layer in net.layers:
        for name in sorted(layer.params):
            t = r.tensor()
            if t.shape != layer.params[name].shape:
                raise BadMagic(f"tensor {layer.kind}.{name} has shape {t.shape}, expected {layer.params[name].shape}")
            layer.params[name] = t
    for layer in net.layers:
        if isinstance(layer, BatchNorm):
            layer.running_mean = r.tensor()
            layer.running_var = r.tensor()
    for i, flag in enumerate(frozen):
        net.frozen[net.block_of[i] - 1] = flag
    return net


def save_network(net: Network, path) -> None:
    with open(path, "wb") as f:
        f.write(dump_network(net))


def load_network(path) -> Network:
    with open(path, "rb") as f:
        return parse_network(f.read())
