"""Dense tensor engine with reverse-mode automatic differentiation.

Feature maps are batch x channel x height x width, stored row-major in
float32 by default (float64 is available for gradient checking). Forward
operations are pure and allocate fresh outputs; they are recorded for
differentiation only while a ``Tape`` is active on the current thread.
"""
from __future__ import annotations

import threading

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "conv2d",
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "gelu",
    "absolute",
    "mean",
    "layer_norm",
    "global_avg",
    "global_std",
    "concat_channels",
    "split_channels",
    "grad_check",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """Dense array node. Values are immutable by convention once wrapped."""

    __slots__ = ("data", "requires_grad", "grad", "_traced")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._traced = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """Trainable tensor with a hierarchical name and a persistent gradient.

    Gradients accumulate across backward passes until ``zero_grad``.
    """

    __slots__ = ("name",)

    def __init__(self, name, data, dtype=None):
        super().__init__(data, dtype=dtype, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_tls = threading.local()


def _active_tape():
    return getattr(_tls, "tape", None)


def _needs_grad(t):
    return t.requires_grad or t._traced


def _emit(out, inputs, backward):
    """Record ``out = op(inputs)`` on the active tape, if any."""
    tape = _active_tape()
    if tape is not None and any(_needs_grad(t) for t in inputs):
        out._traced = True
        tape._records.append(_Record(out, inputs, backward))
    return out


class Tape:
    """Ordered record of operations for one differentiable program.

    Recording order is topological by construction (an operation's inputs
    exist before it runs); ``backward`` replays it in exact reverse order.
    One tape may be active per thread at a time.
    """

    def __init__(self):
        self._records = []

    def __enter__(self):
        if _active_tape() is not None:
            raise RuntimeError("a tape is already recording on this thread")
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = None
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss):
        """Accumulate d(loss)/d(p) into ``p.grad`` for every reachable leaf.

        ``loss`` must be a scalar produced on this tape. Gradients add onto
        whatever is already stored, so callers zero them between steps.
        """
        if loss.data.size != 1:
            raise ValueError(
                f"backward needs a scalar loss, got shape {loss.data.shape}"
            )
        buffers = {id(loss): np.ones_like(loss.data)}
        for rec in reversed(self._records):
            g = buffers.pop(id(rec.out), None)
            if g is None:
                continue
            for t, gt in zip(rec.inputs, rec.backward(g)):
                if gt is None:
                    continue
                if t.requires_grad:
                    t.grad += gt
                if t._traced:
                    held = buffers.get(id(t))
                    buffers[id(t)] = gt if held is None else held + gt


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols


def _col2im(gcols, xp_shape, stride, ho, wo):
    kh, kw = gcols.shape[2], gcols.shape[3]
    gxp = np.zeros(xp_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
    return gxp


def conv2d(x, w, b=None, stride=1, pad=0, groups=1):
    """2-D cross-correlation with zero padding.

    ``w`` is [cout, cin/groups, kh, kw]; ``b`` is [cout] or None. Output
    spatial size is floor((H + 2*pad - k)/stride) + 1 per axis.
    """
    if x.ndim != 4:
        raise ValueError(f"conv2d expects a 4-D input, got shape {x.shape}")
    if w.ndim != 4:
        raise ValueError(f"conv2d expects a 4-D weight, got shape {w.shape}")
    if stride < 1 or pad < 0:
        raise ValueError(f"conv2d: invalid stride={stride} or pad={pad}")
    n, cin, h, wd_ = x.shape
    cout, cin_g, kh, kw = w.shape
    if cin % groups != 0 or cout % groups != 0:
        raise ValueError(
            f"conv2d: channels ({cin} in, {cout} out) not divisible by groups={groups}"
        )
    if cin // groups != cin_g:
        raise ValueError(
            f"conv2d: input shape {x.shape} incompatible with weight shape "
            f"{w.shape} at groups={groups}"
        )
    if b is not None and b.data.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {b.data.shape} != ({cout},)")

    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd_ + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than padded input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    depthwise = groups == cin == cout

    if x.dtype == np.float64:
        # sequential (cin, ki, kj) accumulation: bit-identical to a nested
        # loop, which keeps 64-bit oracle comparisons exact
        ig, og = cin // groups, cout // groups
        out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
        for g in range(groups):
            co = slice(g * og, (g + 1) * og)
            for ic in range(ig):
                for ki in range(kh):
                    for kj in range(kw):
                        out[:, co] += (
                            w.data[co, ic, ki, kj].reshape(1, og, 1, 1)
                            * cols[:, g * ig + ic, ki, kj][:, None]
                        )
    elif groups == 1:
        flat = cols.transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, cin * kh * kw)
        out = (flat @ w.data.reshape(cout, -1).T).reshape(n, ho, wo, cout)
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    elif depthwise:
        out = np.einsum("ncijhw,cij->nchw", cols, w.data[:, 0])
    else:
        ig, og = cin // groups, cout // groups
        out = np.empty((n, cout, ho, wo), dtype=x.dtype)
        for g in range(groups):
            ci, co = slice(g * ig, (g + 1) * ig), slice(g * og, (g + 1) * og)
            flat = cols[:, ci].transpose(0, 4, 5, 1, 2, 3).reshape(n * ho * wo, ig * kh * kw)
            blk = (flat @ w.data[co].reshape(og, -1).T).reshape(n, ho, wo, og)
            out[:, co] = blk.transpose(0, 3, 1, 2)
    if b is not None:
        out += b.data.reshape(1, cout, 1, 1)

    y = Tensor(out)
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx = gw = gb = None
        if _needs_grad(w):
            if groups == 1:
                gw = np.einsum("nohw,ncijhw->ocij", g, cols)
            elif depthwise:
                gw = np.einsum("nchw,ncijhw->cij", g, cols)[:, None]
            else:
                ig, og = cin // groups, cout // groups
                gw = np.empty_like(w.data)
                for k in range(groups):
                    ci, co = slice(k * ig, (k + 1) * ig), slice(k * og, (k + 1) * og)
                    gw[co] = np.einsum("nohw,ncijhw->ocij", g[:, co], cols[:, ci])
        if _needs_grad(x):
            if groups == 1:
                gcols = np.einsum("nohw,ocij->ncijhw", g, w.data)
            elif depthwise:
                gcols = g[:, :, None, None] * w.data[:, 0][None, :, :, :, None, None]
            else:
                ig, og = cin // groups, cout // groups
                gcols = np.empty_like(cols)
                for k in range(groups):
                    ci, co = slice(k * ig, (k + 1) * ig), slice(k * og, (k + 1) * og)
                    gcols[:, ci] = np.einsum("nohw,ocij->ncijhw", g[:, co], w.data[co])
            gxp = _col2im(gcols, xp.shape, stride, ho, wo)
            gx = gxp[:, :, pad : pad + h, pad : pad + wd_] if pad else gxp
        if b is not None and _needs_grad(b):
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return _emit(y, inputs, backward)


# ---------------------------------------------------------------------------
# element-wise and reductions


def add(x, y):
    if x.shape != y.shape:
        raise ValueError(f"add: shape mismatch {x.shape} vs {y.shape}")
    out = Tensor(x.data + y.data)
    return _emit(out, (x, y), lambda g: (g, g))


def sub(x, y):
    if x.shape != y.shape:
        raise ValueError(f"sub: shape mismatch {x.shape} vs {y.shape}")
    out = Tensor(x.data - y.data)
    return _emit(out, (x, y), lambda g: (g, -g))


def mul(x, y):
    """Element-wise product; ``y`` may be [N,C,1,1] against x [N,C,H,W]."""
    if x.shape != y.shape:
        ok = (
            x.ndim == 4
            and y.ndim == 4
            and y.shape == (x.shape[0], x.shape[1], 1, 1)
        )
        if not ok:
            raise ValueError(f"mul: incompatible shapes {x.shape} vs {y.shape}")
        out = Tensor(x.data * y.data)

        def backward(g):
            gx = g * y.data if _needs_grad(x) else None
            gy = (g * x.data).sum(axis=(2, 3), keepdims=True) if _needs_grad(y) else None
            return gx, gy

        return _emit(out, (x, y), backward)
    out = Tensor(x.data * y.data)
    return _emit(out, (x, y), lambda g: (g * y.data, g * x.data))


def scale(x, factor):
    """Multiply by a python scalar."""
    out = Tensor(x.data * x.dtype.type(factor))
    return _emit(out, (x,), lambda g: (g * factor,))


def sigmoid(x):
    s = expit(x.data)
    out = Tensor(s)
    return _emit(out, (x,), lambda g: (g * s * (1.0 - s),))


def gelu(x):
    """Exact Gaussian-CDF gelu: x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf)

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return _emit(out, (x,), backward)


def absolute(x):
    out = Tensor(np.abs(x.data))
    return _emit(out, (x,), lambda g: (g * np.sign(x.data),))


def mean(x):
    """Mean over all elements, returning a scalar tensor."""
    out = Tensor(np.asarray(x.data.mean(), dtype=x.dtype))
    n = x.data.size

    def backward(g):
        return (np.full(x.shape, float(g) / n, dtype=x.dtype),)

    return _emit(out, (x,), backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize each (batch, h, w) position across channels, then affine.

    Uses the population variance (divide by C). ``gamma`` and ``beta`` are
    per-channel vectors of length C.
    """
    if x.ndim != 4:
        raise ValueError(f"layer_norm expects a 4-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(
            f"layer_norm: affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match {c} channels"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = (x.data - mu) * inv
    gam = gamma.data.reshape(1, c, 1, 1)
    out = Tensor(gam * xh + beta.data.reshape(1, c, 1, 1))

    def backward(g):
        ggamma = (g * xh).sum(axis=(0, 2, 3)) if _needs_grad(gamma) else None
        gbeta = g.sum(axis=(0, 2, 3)) if _needs_grad(beta) else None
        gx = None
        if _needs_grad(x):
            dxh = g * gam
            gx = inv * (
                dxh
                - dxh.mean(axis=1, keepdims=True)
                - xh * (dxh * xh).mean(axis=1, keepdims=True)
            )
        return gx, ggamma, gbeta

    return _emit(out, (x, gamma, beta), backward)


def global_avg(x):
    """Per-channel spatial mean, shape [N,C,1,1]."""
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True))
    hw = x.shape[2] * x.shape[3]

    def backward(g):
        return (np.broadcast_to(g / hw, x.shape),)

    return _emit(out, (x,), backward)


def global_std(x):
    """Per-channel spatial population standard deviation, shape [N,C,1,1]."""
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    std = np.sqrt((centered * centered).mean(axis=(2, 3), keepdims=True))
    out = Tensor(std)
    hw = x.shape[2] * x.shape[3]

    def backward(g):
        # subgradient 0 where the channel is constant
        safe = np.where(std > 0.0, std, 1.0)
        return (g * centered / (hw * safe),)

    return _emit(out, (x,), backward)


def concat_channels(parts):
    if not parts:
        raise ValueError("concat_channels: empty input list")
    base = parts[0].shape
    for p in parts[1:]:
        if p.ndim != 4 or (p.shape[0], p.shape[2], p.shape[3]) != (base[0], base[2], base[3]):
            raise ValueError(
                f"concat_channels: shape {p.shape} incompatible with {base}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return [g[:, offsets[i] : offsets[i + 1]] for i in range(len(sizes))]

    return _emit(out, tuple(parts), backward)


def split_channels(x, sizes):
    if sum(sizes) != x.shape[1]:
        raise ValueError(
            f"split_channels: sizes {list(sizes)} do not sum to {x.shape[1]} channels"
        )
    parts = []
    off = 0
    for size in sizes:
        lo = off
        out = Tensor(x.data[:, lo : lo + size].copy())

        def backward(g, lo=lo, size=size):
            full = np.zeros(x.shape, dtype=g.dtype)
            full[:, lo : lo + size] = g
            return (full,)

        parts.append(_emit(out, (x,), backward))
        off += size
    return parts


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f, params, h=1e-5):
    """Worst relative error between tape gradients and central differences.

    ``f`` rebuilds and returns the scalar loss from the current parameter
    values; it must be deterministic. Meaningful only in float64.
    """
    for p in params:
        p.zero_grad()
    tape = Tape()
    with tape:
        loss = f()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = an.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(f().data)
            flat[i] = orig - h
            lm = float(f().data)
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            a = float(aflat[i])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, err)
    return worst
