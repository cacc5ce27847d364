"""Procedural ten-class glyph domains.

Each class is a seven-segment digit pattern. A :class:`GlyphStyle` fixes the
look of a domain (colours, stroke width, slant, noise); every sample then
gets its own sub-pixel translation, stroke and intensity jitter. Two styles
stand in for the two real datasets so nothing has to be downloaded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numkit import RngStream
from .domain import NUM_CLASSES, Domain

# endpoints in a unit box, y pointing down
_SEGMENTS = np.array([
    [[0.0, 0.0], [1.0, 0.0]],  # top
    [[1.0, 0.0], [1.0, 0.5]],  # upper right
    [[1.0, 0.5], [1.0, 1.0]],  # lower right
    [[0.0, 1.0], [1.0, 1.0]],  # bottom
    [[0.0, 0.5], [0.0, 1.0]],  # lower left
    [[0.0, 0.0], [0.0, 0.5]],  # upper left
    [[0.0, 0.5], [1.0, 0.5]],  # middle
])

_DIGITS = ["012345", "12", "01643", "01623", "5612", "05623", "056432", "012", "0123456", "012356"]
GLYPH_MASKS = np.array([[str(s) in d for s in range(7)] for d in _DIGITS])


@dataclass(frozen=True)
class GlyphStyle:
    foreground: tuple
    background: tuple
    stroke: float        # stroke width as a fraction of the image side
    slant: float         # horizontal shear per unit height
    box: float           # glyph height as a fraction of the image side
    noise: float         # pixel noise std in grey levels
    max_shift: float = 2.0


PRESETS = {
    # bright thin strokes on black, MNIST-like
    "glyphA": GlyphStyle(foreground=(255, 255, 255), background=(0, 0, 0), stroke=0.11,
                         slant=0.15, box=0.62, noise=6.0),
    # thick strokes over a coloured noisy background, SVHN-like
    "glyphB": GlyphStyle(foreground=(240, 200, 70), background=(40, 70, 120), stroke=0.16,
                         slant=-0.1, box=0.7, noise=22.0),
}


def style_from_seed(rng: RngStream) -> GlyphStyle:
    g = rng.generator()
    fg = tuple(int(v) for v in g.integers(150, 256, size=3))
    bg = tuple(int(v) for v in g.integers(0, 100, size=3))
    return GlyphStyle(foreground=fg, background=bg, stroke=float(g.uniform(0.08, 0.17)),
                      slant=float(g.uniform(-0.25, 0.25)), box=float(g.uniform(0.6, 0.75)),
                      noise=float(g.uniform(0.0, 25.0)))


def _segment_distance(px, py, a, b):
    # px, py: (P,); a, b: (S, 7, 2) -> (S, 7, P) distances to segments
    ab = b - a
    denom = np.maximum((ab ** 2).sum(-1), 1e-12)[..., None]
    apx = px[None, None, :] - a[..., 0:1]
    apy = py[None, None, :] - a[..., 1:2]
    t = np.clip((apx * ab[..., 0:1] + apy * ab[..., 1:2]) / denom, 0.0, 1.0)
    dx = apx - t * ab[..., 0:1]
    dy = apy - t * ab[..., 1:2]
    return np.sqrt(dx * dx + dy * dy)


def render_glyphs(labels, h: int, w: int, c: int, style: GlyphStyle,
                  rng: np.random.Generator, chunk: int = 512) -> np.ndarray:
    """Rasterise one glyph per label into a (N, h, w, c) uint8 array."""
    labels = np.asarray(labels)
    n = len(labels)
    out = np.empty((n, h, w, c), dtype=np.uint8)
    side = float(min(h, w))
    ys, xs = np.mgrid[0:h, 0:w]
    px = (xs.ravel() + 0.5).astype(np.float64)
    py = (ys.ravel() + 0.5).astype(np.float64)
    fg = np.resize(np.asarray(style.foreground, dtype=np.float64), c)
    bg = np.resize(np.asarray(style.background, dtype=np.float64), c)

    # every draw for the whole batch happens up front so chunking cannot change the stream
    shift = rng.uniform(-style.max_shift, style.max_shift, size=(n, 2))
    stroke = style.stroke * side * rng.uniform(0.85, 1.15, size=n)
    gain = rng.uniform(0.85, 1.0, size=n)
    noise = rng.standard_normal((n, h, w, c)) * style.noise

    glyph_h = style.box * side
    glyph_w = 0.55 * glyph_h
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        m = sl.stop - sl.start
        seg = np.broadcast_to(_SEGMENTS, (m, 7, 2, 2)).copy()
        # unit box -> pixel coordinates, sheared and shifted
        seg[..., 1] = (seg[..., 1] - 0.5) * glyph_h
        seg[..., 0] = (seg[..., 0] - 0.5) * glyph_w - style.slant * seg[..., 1]
        seg[..., 0] += w / 2.0 + shift[sl, 0, None, None]
        seg[..., 1] += h / 2.0 + shift[sl, 1, None, None]
        dist = _segment_distance(px, py, seg[:, :, 0], seg[:, :, 1])
        active = GLYPH_MASKS[labels[sl]]
        dist = np.where(active[..., None], dist, np.inf).min(axis=1)
        ink = np.clip(stroke[sl, None] / 2.0 - dist + 0.5, 0.0, 1.0) * gain[sl, None]
        ink = ink.reshape(m, h, w, 1)
        img = bg * (1.0 - ink) + fg * ink + noise[sl]
        out[sl] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return out


def synth_glyph_domain(n_per_class: int, h: int, w: int, c: int, style_seed: RngStream,
                       split: str = "train", style: GlyphStyle | None = None,
                       name: str | None = None) -> Domain:
    """Balanced domain with ``n_per_class`` samples of each of the ten glyphs.

    The look comes from ``style`` or, if omitted, is drawn from ``style_seed``;
    per-sample jitter uses a sub-stream keyed by ``split`` so train and test
    pools of the same domain share a style but not samples.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if style is None:
        style = style_from_seed(style_seed.derive("style"))
    rng = style_seed.derive(f"samples/{split}").generator()
    labels = np.repeat(np.arange(NUM_CLASSES, dtype=np.uint8), n_per_class)
    labels = labels[rng.permutation(len(labels))]
    images = render_glyphs(labels, h, w, c, style, rng)
    if name is None:
        name = f"glyph-{style_seed.seed:x}-{style_seed.stream_id:x}"
    return Domain(images, labels, name)


def glyph_domain(name: str, n_per_class: int, h: int, w: int, c: int,
                 split: str = "train", seed: int = 0) -> Domain:
    """One of the named preset domains (``glyphA``, ``glyphB``)."""
    if name not in PRESETS:
        raise KeyError(f"unknown glyph domain {name!r}; choose from {sorted(PRESETS)}")
    return synth_glyph_domain(n_per_class, h, w, c, RngStream(seed).derive(name), split=split,
                              style=PRESETS[name], name=name)
