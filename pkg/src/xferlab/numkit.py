"""Dense linear algebra and seeded random streams used by every other module.

Matrices are plain float64 ``numpy`` arrays. Random draws go through
:class:`RngStream`, a (seed, stream_id) pair that keys a Philox counter-based
generator, so two streams with different keys never share output.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import NotPSD, NotSymmetric

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _fmix64(z: int) -> int:
    # splitmix64 finalizer; a bijection on 64-bit integers
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _name_id(name: str) -> int:
    return int.from_bytes(hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    ``derive`` maps a child id (an int, or a name hashed to 64 bits) to a new
    stream id. For a fixed parent the mapping is injective, and the pair is
    used as the 128-bit Philox key, so sibling streams are disjoint.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not (0 <= self.seed <= _MASK64 and 0 <= self.stream_id <= _MASK64):
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def derive(self, child: int | str) -> RngStream:
        child_id = _name_id(child) if isinstance(child, str) else int(child) & _MASK64
        mixed = _fmix64(self.stream_id + _GOLDEN * (child_id + 1))
        return RngStream(self.seed, mixed)

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.seed | (self.stream_id << 64)))


def as_generator(rng: RngStream | np.random.Generator) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def cholesky(m, sym_tol: float = 1e-10, psd_tol: float = 1e-8) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m`` for a symmetric PSD ``m``.

    Singular inputs (e.g. the covariance at ``|alpha| = 1``) fall back to an
    eigendecomposition with eigenvalues below 1e-12 clipped to zero; the
    resulting square-root factor is re-triangularised with a QR step so the
    return value is lower triangular in every case.
    """
    m = np.array(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    asym = np.max(np.abs(m - m.T)) if m.size else 0.0
    if asym > sym_tol:
        raise NotSymmetric(f"max |m_ij - m_ji| = {asym:.3g} exceeds {sym_tol:g}")
    m = 0.5 * (m + m.T)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(m)
    if evals[0] < -psd_tol:
        raise NotPSD(f"smallest eigenvalue {evals[0]:.3g} is below {-psd_tol:g}")
    evals = np.where(evals < 1e-12, 0.0, evals)
    root = evecs * np.sqrt(evals)
    # root @ root.T == m; QR of root.T gives R with R.T @ R == m
    _, r = np.linalg.qr(root.T)
    low = r.T
    signs = np.where(np.diag(low) < 0, -1.0, 1.0)
    return low * signs


def sample_mvn(factor, n: int, rng: RngStream | np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows ``F z`` with ``z`` standard normal (zero mean, covariance ``F F^T``)."""
    factor = np.asarray(factor, dtype=np.float64)
    if factor.ndim != 2 or factor.shape[0] != factor.shape[1]:
        raise ValueError(f"factor must be square, got shape {factor.shape}")
    if n < 0:
        raise ValueError("n must be nonnegative")
    z = as_generator(rng).standard_normal((n, factor.shape[0]))
    return z @ factor.T


def stable_sigmoid(z):
    """Logistic function without overflow for large ``|z|``."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


def log1p_exp(z):
    """``log(1 + exp(z))`` evaluated stably."""
    z = np.asarray(z, dtype=np.float64)
    return np.logaddexp(0.0, z)
