"""Image domains: IDX ingestion and bilinear rescaling."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import BadMagic, CountMismatch, ShapeMismatch, Truncated

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
NUM_CLASSES = 10


@dataclass(eq=False)
class Domain:
    """A labelled pool of same-shaped ``uint8`` images in (N, H, W, C) layout."""

    images: np.ndarray
    labels: np.ndarray
    name: str = "domain"

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels).astype(np.uint8, copy=False)
        if self.images.dtype != np.uint8 or self.images.ndim != 4:
            raise ShapeMismatch(f"images must be uint8 (N, H, W, C), got {self.images.dtype} {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ShapeMismatch("one label per image required")
        if self.labels.size and self.labels.max() >= NUM_CLASSES:
            raise ValueError(f"labels must be class ids 0..{NUM_CLASSES - 1}")

    def __len__(self):
        return self.images.shape[0]

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=NUM_CLASSES)

    @cached_property
    def class_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(order, offsets, counts)``: sample ids of class c are ``order[offsets[c]:offsets[c] + counts[c]]``."""
        order = np.argsort(self.labels, kind="stable")
        counts = self.class_counts()
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
        return order, offsets, counts


def _read_bytes(path) -> bytes:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw: bytes, ndims: int, path) -> tuple[int, ...]:
    need = 4 * (1 + ndims)
    if len(raw) < need:
        raise Truncated(f"{path}: header needs {need} bytes, file has {len(raw)}")
    return struct.unpack(f">{1 + ndims}I", raw[:need])


def load_idx(images_path, labels_path, name: str | None = None) -> Domain:
    """Read an IDX image file (magic 0x803) and label file (magic 0x801)."""
    img_raw = _read_bytes(images_path)
    lab_raw = _read_bytes(labels_path)
    magic = _header(img_raw, 0, images_path)[0]
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagic(f"{images_path}: expected image magic 0x{IDX_IMAGES_MAGIC:08x}, got 0x{magic:08x}")
    magic = _header(lab_raw, 0, labels_path)[0]
    if magic != IDX_LABELS_MAGIC:
        raise BadMagic(f"{labels_path}: expected label magic 0x{IDX_LABELS_MAGIC:08x}, got 0x{magic:08x}")
    _, count, rows, cols = _header(img_raw, 3, images_path)
    _, lcount = _header(lab_raw, 1, labels_path)
    if count != lcount:
        raise CountMismatch(f"{count} images but {lcount} labels")
    size = count * rows * cols
    if len(img_raw) - 16 < size:
        raise Truncated(f"{images_path}: expected {size} pixel bytes, found {len(img_raw) - 16}")
    if len(lab_raw) - 8 < count:
        raise Truncated(f"{labels_path}: expected {count} label bytes, found {len(lab_raw) - 8}")
    images = np.frombuffer(img_raw, dtype=np.uint8, count=size, offset=16).reshape(count, rows, cols, 1)
    labels = np.frombuffer(lab_raw, dtype=np.uint8, count=count, offset=8)
    if name is None:
        name = os.path.basename(os.fspath(images_path))
    return Domain(images.copy(), labels.copy(), name)


def write_idx(images, labels, images_path, labels_path) -> None:
    """Write (N, H, W) or (N, H, W, 1) uint8 images and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim == 4:
        if images.shape[3] != 1:
            raise ShapeMismatch("IDX images are single-channel")
        images = images[..., 0]
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def _axis_weights(n_in: int, n_out: int):
    # align-corners mapping: output endpoints land exactly on input endpoints
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.floor(pos).astype(np.intp)
    lo = np.minimum(lo, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def rescale_domain(d: Domain, h: int, w: int, c: int) -> Domain:
    """Bilinear resize to (h, w); grayscale is replicated to ``c`` channels."""
    if min(h, w, c) < 1:
        raise ValueError("target dimensions must be positive")
    imgs = d.images
    _, hin, win, cin = imgs.shape
    if (hin, win) != (h, w):
        y0, y1, fy = _axis_weights(hin, h)
        x0, x1, fx = _axis_weights(win, w)
        f = imgs.astype(np.float64)
        fy = fy[None, :, None, None]
        fx = fx[None, None, :, None]
        top = f[:, y0][:, :, x0] * (1 - fx) + f[:, y0][:, :, x1] * fx
        bot = f[:, y1][:, :, x0] * (1 - fx) + f[:, y1][:, :, x1] * fx
        imgs = np.clip(np.rint(top * (1 - fy) + bot * fy), 0, 255).astype(np.uint8)
    if cin != c:
        if cin == 1:
            imgs = np.repeat(imgs, c, axis=3)
        elif c == 1:
            imgs = np.rint(imgs.mean(axis=3, keepdims=True)).astype(np.uint8)
        else:
            raise ShapeMismatch(f"cannot map {cin} channels to {c}")
    return Domain(np.ascontiguousarray(imgs), d.labels.copy(), d.name)
