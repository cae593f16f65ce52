"""Structural operators for super-resolution: four-direction channel shift,
pixel shuffle, Sobel edge extraction, and bicubic resampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .tensor import Tensor, _emit

__all__ = [
    "ShiftSpec",
    "shift4",
    "pixel_shuffle",
    "pixel_unshuffle",
    "replicate_pad",
    "sobel",
    "sobel_kernels",
    "bicubic_resize",
]

DIRECTIONS = ("left", "right", "up", "down")
_OPPOSITE = {"left": "right", "right": "left", "up": "down", "down": "up"}


@dataclass(frozen=True)
class ShiftSpec:
    """Fraction of channels translated 1 pixel per direction, zero-filled."""

    gamma: Fraction = Fraction(1, 12)
    directions: tuple = field(default=DIRECTIONS)
    displacement: int = 1

    def __post_init__(self):
        if not isinstance(self.gamma, Fraction):
            # floats like 1/12 floor wrongly under binary rounding
            object.__setattr__(self, "gamma", Fraction(self.gamma).limit_denominator(4096))

    def block_channels(self, c):
        """Channels per direction block; the remainder passes through."""
        k = int(self.gamma * c)
        if 4 * k > c:
            raise ValueError(f"shift fraction {self.gamma} too large for {c} channels")
        return k


def _shifted_plane(block, direction):
    out = np.zeros_like(block)
    if direction == "left":
        out[..., :, :-1] = block[..., :, 1:]
    elif direction == "right":
        out[..., :, 1:] = block[..., :, :-1]
    elif direction == "up":
        out[..., :-1, :] = block[..., 1:, :]
    elif direction == "down":
        out[..., 1:, :] = block[..., :-1, :]
    else:
        raise ValueError(f"unknown shift direction {direction!r}")
    return out


def shift4(x, spec=ShiftSpec()):
    """Translate four channel blocks 1 pixel left/right/up/down, zero-filled.

    Owns no parameters and is counted as zero FLOPs; remaining channels pass
    through unchanged. Degrades to identity when floor(gamma*C) == 0.
    """
    if isinstance(spec, Fraction):
        spec = ShiftSpec(gamma=spec)
    c = x.shape[1]
    k = spec.block_channels(c)
    if k == 0:
        return x

    def apply(data, directions):
        out = data.copy()
        for d, direction in enumerate(directions):
            blk = slice(d * k, (d + 1) * k)
            out[:, blk] = _shifted_plane(data[:, blk], direction)
        return out

    out = Tensor(apply(x.data, spec.directions))
    opposite = tuple(_OPPOSITE[d] for d in spec.directions)
    return _emit(out, (x,), lambda g: (apply(g, opposite),))


def pixel_shuffle(x, r):
    """Rearrange [N, C*r*r, H, W] into [N, C, H*r, W*r].

    out[n, c, h*r+i, w*r+j] = in[n, c*r*r + i*r + j, h, w]; a pure
    permutation, so the value multiset is preserved.
    """
    n, c, h, w = x.shape
    if c % (r * r) != 0:
        raise ValueError(f"pixel_shuffle: {c} channels not divisible by r*r={r * r}")
    co = c // (r * r)
    out = Tensor(
        x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)
    )

    def backward(g):
        return (g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w),)

    return _emit(out, (x,), backward)


def pixel_unshuffle(x, r):
    """Inverse index map of ``pixel_shuffle``."""
    n, c, h, w = x.shape
    if h % r != 0 or w % r != 0:
        raise ValueError(f"pixel_unshuffle: spatial size {h}x{w} not divisible by {r}")
    ho, wo = h // r, w // r
    out = Tensor(
        x.data.reshape(n, c, ho, r, wo, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, ho, wo)
    )

    def backward(g):
        return (g.reshape(n, c, r, r, ho, wo).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h, w),)

    return _emit(out, (x,), backward)


def replicate_pad(x, p=1):
    """Edge-replicating spatial padding."""
    n, c, h, w = x.shape
    out = Tensor(np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode="edge"))

    def backward(g):
        gx = g[:, :, p:-p, p:-p].copy()
        gx[:, :, 0, :] += g[:, :, :p, p:-p].sum(axis=2)
        gx[:, :, -1, :] += g[:, :, -p:, p:-p].sum(axis=2)
        gx[:, :, :, 0] += g[:, :, p:-p, :p].sum(axis=3)
        gx[:, :, :, -1] += g[:, :, p:-p, -p:].sum(axis=3)
        gx[:, :, 0, 0] += g[:, :, :p, :p].sum(axis=(2, 3))
        gx[:, :, 0, -1] += g[:, :, :p, -p:].sum(axis=(2, 3))
        gx[:, :, -1, 0] += g[:, :, -p:, :p].sum(axis=(2, 3))
        gx[:, :, -1, -1] += g[:, :, -p:, -p:].sum(axis=(2, 3))
        return (gx,)

    return _emit(out, (x,), backward)


_GX = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_GY = _GX.T.copy()


def sobel_kernels(dtype=np.float32):
    """Fixed horizontal/vertical gradient kernels; each sums to zero."""
    return _GX.astype(dtype), _GY.astype(dtype)


# (row offset, col offset, weight) taps, grouped so the positive and the
# negative half are the same float expression; constants then cancel exactly
_SOBEL_TAPS = {
    "x": (((-1, 1, 1.0), (0, 1, 2.0), (1, 1, 1.0)), ((-1, -1, 1.0), (0, -1, 2.0), (1, -1, 1.0))),
    "y": (((1, -1, 1.0), (1, 0, 2.0), (1, 1, 1.0)), ((-1, -1, 1.0), (-1, 0, 2.0), (-1, 1, 1.0))),
}


def _sobel_component(padded, axis):
    plus, minus = _SOBEL_TAPS[axis]
    h, w = padded.shape[2] - 2, padded.shape[3] - 2

    def half(data, taps):
        acc = None
        for di, dj, wt in taps:
            sl = data[:, :, 1 + di : 1 + di + h, 1 + dj : 1 + dj + w]
            term = sl if wt == 1.0 else wt * sl
            acc = term.copy() if acc is None else acc + term
        return acc

    out = Tensor(half(padded.data, plus) - half(padded.data, minus))

    def backward(g):
        gp = np.zeros(padded.shape, dtype=g.dtype)
        for di, dj, wt in plus:
            gp[:, :, 1 + di : 1 + di + h, 1 + dj : 1 + dj + w] += wt * g
        for di, dj, wt in minus:
            gp[:, :, 1 + di : 1 + di + h, 1 + dj : 1 + dj + w] -= wt * g
        return (gp,)

    return _emit(out, (padded,), backward)


def sobel(x):
    """Per-channel horizontal and vertical Sobel responses, shape-preserving.

    Uses edge-replicating padding, and evaluates each component as the
    difference of its positive and negative kernel halves, so constant
    images map to exact zeros everywhere, borders included. Non-trainable
    but differentiable in x.
    """
    padded = replicate_pad(x, 1)
    return _sobel_component(padded, "x"), _sobel_component(padded, "y")


# ---------------------------------------------------------------------------
# bicubic resampling (data-pipeline use; not recorded on the tape)


def _cubic(t, a=-0.5):
    t = abs(t)
    if t <= 1.0:
        return (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0
    if t < 2.0:
        return a * t**3 - 5.0 * a * t**2 + 8.0 * a * t - 4.0 * a
    return 0.0


def _resize_matrix(n_in, n_out, scale_, dtype):
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        src = (o + 0.5) / scale_ - 0.5
        base = math.floor(src)
        for t in range(-1, 3):
            idx = min(max(base + t, 0), n_in - 1)
            m[o, idx] += _cubic(src - (base + t))
    return m.astype(dtype)


def bicubic_resize(img, scale_):
    """Separable cubic-convolution resampling (a = -0.5).

    Half-pixel-centred coordinate mapping src = (dst + 0.5)/scale - 0.5 with
    edge-clamped taps; output size is round(size * scale) per axis.
    """
    n, c, h, w = img.shape
    ho = int(math.floor(h * scale_ + 0.5))
    wo = int(math.floor(w * scale_ + 0.5))
    if ho < 1 or wo < 1:
        raise ValueError(f"bicubic_resize: scale {scale_} collapses {h}x{w} to {ho}x{wo}")
    mh = _resize_matrix(h, ho, scale_, img.dtype)
    mw = _resize_matrix(w, wo, scale_, img.dtype)
    out = np.einsum("oh,nchw->ncow", mh, img.data)
    out = np.einsum("pw,nchw->nchp", mw, out)
    return Tensor(out)
