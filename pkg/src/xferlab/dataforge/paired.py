"""Concatenated two-task datasets with a controlled task correlation ``beta``."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import BadMagic, DegenerateClass, EmptyClass, ShapeMismatch, Truncated
from ..numkit import RngStream
from .domain import NUM_CLASSES, Domain

CONTAINER_MAGIC = b"XFL1"


@dataclass(eq=False)
class PairedDataset:
    x: np.ndarray          # (n, h, w_left + w_right, c) uint8
    y_alice: np.ndarray
    y_bob: np.ndarray
    beta: float
    left_name: str = "left"
    right_name: str = "right"

    def __len__(self):
        return self.x.shape[0]

    @property
    def split_col(self) -> int:
        return self.x.shape[2] // 2

    def labels(self, target: str) -> np.ndarray:
        if target == "alice":
            return self.y_alice
        if target == "bob":
            return self.y_bob
        raise ValueError(f"target must be 'alice' or 'bob', got {target!r}")

    def subset(self, idx) -> PairedDataset:
        return PairedDataset(self.x[idx], self.y_alice[idx], self.y_bob[idx], self.beta,
                             self.left_name, self.right_name)


def sample_concat(beta: float, left: Domain, right: Domain, n: int,
                  rng: RngStream) -> PairedDataset:
    """Draw ``n`` samples following the task-correlation sampling procedure.

    For each sample: pick a left image uniformly, take its label for Alice;
    with probability ``beta`` pick a right image uniformly among those sharing
    that label, otherwise uniformly among all right images; Bob's label is the
    right image's label and the input is the two images side by side.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if len(left) == 0 or len(right) == 0:
        raise EmptyClass("both domains must be non-empty")
    if left.shape != right.shape:
        # the halves must match: downstream code splits inputs at width // 2
        raise ShapeMismatch(f"cannot concatenate {left.shape} with {right.shape}")
    order, offsets, counts = right.class_index
    if beta > 0 and np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise EmptyClass(f"right domain {right.name!r} has no samples of classes {missing}")

    g = rng.generator()
    i = g.integers(0, len(left), size=n)
    y_alice = left.labels[i]
    u = g.random(n)
    r = g.random(n)
    forced = u < beta
    j = np.minimum((r * len(right)).astype(np.int64), len(right) - 1)
    if forced.any():
        c = y_alice[forced]
        pick = np.minimum((r[forced] * counts[c]).astype(np.int64), counts[c] - 1)
        j[forced] = order[offsets[c] + pick]
    y_bob = right.labels[j]
    x = np.concatenate([left.images[i], right.images[j]], axis=2)
    return PairedDataset(x, y_alice.copy(), y_bob.copy(), float(beta), left.name, right.name)


def epoch_resample(beta: float, left: Domain, right: Domain, epoch_index: int,
                   base_rng: RngStream, n: int) -> PairedDataset:
    return sample_concat(beta, left, right, n, base_rng.derive(int(epoch_index)))


@dataclass
class EpochSource:
    """Fresh training data for every epoch, reproducible per epoch index."""

    beta: float
    left: Domain
    right: Domain
    base_rng: RngStream
    n: int

    def __call__(self, epoch_index: int) -> PairedDataset:
        return epoch_resample(self.beta, self.left, self.right, epoch_index, self.base_rng, self.n)


@dataclass
class CorrelationReport:
    per_class_corr: list
    mean_corr: float
    sample_count: int
    degenerate_classes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class_corr": [None if np.isnan(v) else float(v) for v in self.per_class_corr],
            "mean_corr": float(self.mean_corr),
            "sample_count": int(self.sample_count),
            "degenerate_classes": list(self.degenerate_classes),
        }


def estimate_task_correlation(ds: PairedDataset) -> CorrelationReport:
    """Per-class Pearson correlation of the indicators 1[y_alice = A] and 1[y_bob = A].

    Classes whose indicator has zero variance in either label vector are
    reported as NaN, listed in ``degenerate_classes`` and left out of the mean.
    """
    n = len(ds)
    if n == 0:
        raise DegenerateClass("empty dataset")
    corr = np.full(NUM_CLASSES, np.nan)
    degenerate = []
    for a in range(NUM_CLASSES):
        xa = (ds.y_alice == a).astype(np.float64)
        yb = (ds.y_bob == a).astype(np.float64)
        mx, my = xa.mean(), yb.mean()
        var_x = (xa * xa).mean() - mx * mx
        var_y = (yb * yb).mean() - my * my
        if var_x <= 0.0 or var_y <= 0.0:
            degenerate.append(a)
            continue
        cov = (xa * yb).mean() - mx * my
        corr[a] = np.clip(cov / np.sqrt(var_x * var_y), -1.0, 1.0)
    defined = corr[~np.isnan(corr)]
    if defined.size == 0:
        raise DegenerateClass("every class indicator has zero variance")
    return CorrelationReport(corr.tolist(), float(defined.mean()), n, degenerate)


def _write_name(buf, name: str):
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def dump_dataset(ds: PairedDataset) -> bytes:
    """Serialise to the XFL1 container (little-endian; ``w`` is the concatenated width)."""
    n, h, w, c = ds.x.shape
    buf = io.BytesIO()
    buf.write(CONTAINER_MAGIC)
    buf.write(struct.pack("<4I", n, h, w, c))
    buf.write(struct.pack("<f", ds.beta))
    _write_name(buf, ds.left_name)
    _write_name(buf, ds.right_name)
    buf.write(np.ascontiguousarray(ds.x, dtype=np.uint8).tobytes())
    buf.write(np.asarray(ds.y_alice, dtype=np.uint8).tobytes())
    buf.write(np.asarray(ds.y_bob, dtype=np.uint8).tobytes())
    return buf.getvalue()


def save_dataset(ds: PairedDataset, path) -> None:
    with open(path, "wb") as f:
        f.write(dump_dataset(ds))


def _take(raw: bytes, pos: int, size: int) -> tuple[bytes, int]:
    if pos + size > len(raw):
        raise Truncated(f"container ends at byte {len(raw)}, needed {pos + size}")
    return raw[pos:pos + size], pos + size


def parse_dataset(raw: bytes) -> PairedDataset:
    magic, pos = _take(raw, 0, 4)
    if magic != CONTAINER_MAGIC:
        raise BadMagic(f"expected {CONTAINER_MAGIC!r}, got {magic!r}")
    head, pos = _take(raw, pos, 16)
    n, h, w, c = struct.unpack("<4I", head)
    beta_raw, pos = _take(raw, pos, 4)
    (beta,) = struct.unpack("<f", beta_raw)
    names = []
    for _ in range(2):
        size_raw, pos = _take(raw, pos, 4)
        name, pos = _take(raw, pos, struct.unpack("<I", size_raw)[0])
        names.append(name.decode("utf-8"))
    pix, pos = _take(raw, pos, n * h * w * c)
    ya, pos = _take(raw, pos, n)
    yb, pos = _take(raw, pos, n)
    x = np.frombuffer(pix, dtype=np.uint8).reshape(n, h, w, c).copy()
    return PairedDataset(x, np.frombuffer(ya, dtype=np.uint8).copy(),
                         np.frombuffer(yb, dtype=np.uint8).copy(), float(beta), names[0], names[1])


def load_dataset(path) -> PairedDataset:
    with open(path, "rb") as f:
        return parse_dataset(f.read())
