"""Network blocks and assembly: pixel attention, contrast-aware channel
attention, residual depth-wise refinement, shift-transformer mixing, the
information-split block, and the full super-resolution model with its loss."""
from __future__ import annotations

import hashlib

import numpy as np

from .config import LisnConfig
from .ops import ShiftSpec, pixel_shuffle, shift4, sobel
from .tensor import (
    Parameter,
    absolute,
    add,
    concat_channels,
    conv2d,
    gelu,
    global_avg,
    global_std,
    layer_norm,
    mean,
    mul,
    scale,
    sigmoid,
    split_channels,
    sub,
)

__all__ = ["LisnModel", "build_lisn", "lisn_loss"]


def _param_rng(seed, name):
    """Deterministic per-parameter stream so shared layers are identical
    across variants built from the same seed."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + words))


class Conv2d:
    """Convolution layer; weights fan-in-scaled uniform, biases zero."""

    def __init__(self, name, cin, cout, k, seed, stride=1, pad=0, groups=1, bias=True, dtype=np.float32):
        self.stride, self.pad, self.groups = stride, pad, groups
        fan_in = (cin // groups) * k * k
        bound = 1.0 / np.sqrt(fan_in)
        rng = _param_rng(seed, name)
        w = rng.uniform(-bound, bound, size=(cout, cin // groups, k, k))
        self.w = Parameter(f"{name}.w", w.astype(dtype))
        self.b = Parameter(f"{name}.b", np.zeros(cout, dtype=dtype)) if bias else None

    def __call__(self, x):
        return conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad, groups=self.groups)

    def params(self):
        return [self.w] if self.b is None else [self.w, self.b]


class LayerNorm:
    def __init__(self, name, channels, dtype=np.float32, eps=1e-5):
        self.eps = eps
        self.gamma = Parameter(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Parameter(f"{name}.beta", np.zeros(channels, dtype=dtype))

    def __call__(self, x):
        return layer_norm(x, self.gamma, self.beta, eps=self.eps)

    def params(self):
        return [self.gamma, self.beta]


class PixelAttention:
    """Full h x w x c attention map: x * sigmoid(conv1x1(x))."""

    def __init__(self, name, channels, seed, dtype=np.float32):
        self.conv = Conv2d(f"{name}.conv", channels, channels, 1, seed, dtype=dtype)

    def __call__(self, x):
        return mul(x, sigmoid(self.conv(x)))

    def params(self):
        return self.conv.params()


class FeedForward:
    """1x1 expand -> gelu -> pixel attention -> 1x1 project."""

    def __init__(self, name, channels, hidden, seed, dtype=np.float32):
        self.expand = Conv2d(f"{name}.expand", channels, hidden, 1, seed, dtype=dtype)
        self.attn = PixelAttention(f"{name}.attn", hidden, seed, dtype=dtype)
        self.project = Conv2d(f"{name}.project", hidden, channels, 1, seed, dtype=dtype)

    def __call__(self, x):
        return self.project(self.attn(gelu(self.expand(x))))

    def params(self):
        return self.expand.params() + self.attn.params() + self.project.params()


class ShiftTransformerLayer:
    """Parameter-free spatial shift, then a pre-norm FFN with residual."""

    def __init__(self, name, channels, hidden, shift_spec, seed, dtype=np.float32):
        self.shift_spec = shift_spec
        self.norm = LayerNorm(f"{name}.norm", channels, dtype=dtype)
        self.ffn = FeedForward(f"{name}.ffn", channels, hidden, seed, dtype=dtype)

    def __call__(self, x):
        x = shift4(x, self.shift_spec)
        return add(self.ffn(self.norm(x)), x)

    def params(self):
        return self.norm.params() + self.ffn.params()


class ShiftBlock:
    """SBB: two shift-transformer layers."""

    def __init__(self, name, channels, hidden, shift_spec, seed, dtype=np.float32):
        self.layers = [
            ShiftTransformerLayer(f"{name}.layer{i}", channels, hidden, shift_spec, seed, dtype=dtype)
            for i in range(2)
        ]

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


class ResidualDepthwiseBlock:
    """RDB: sigmoid(pointwise1x1(depthwise3x3(x)) + x)."""

    def __init__(self, name, channels, seed, dtype=np.float32):
        self.depthwise = Conv2d(f"{name}.dw", channels, channels, 3, seed, pad=1, groups=channels, dtype=dtype)
        self.pointwise = Conv2d(f"{name}.pw", channels, channels, 1, seed, dtype=dtype)

    def __call__(self, x):
        return sigmoid(add(self.pointwise(self.depthwise(x)), x))

    def params(self):
        return self.depthwise.params() + self.pointwise.params()


class ContrastChannelAttention:
    """CCA: gate channels by sigmoid of two 1x1 convs over (std + mean)
    channel statistics, then add the long skip."""

    def __init__(self, name, channels, reduction, seed, dtype=np.float32):
        self.squeeze = Conv2d(f"{name}.squeeze", channels, channels // reduction, 1, seed, dtype=dtype)
        self.excite = Conv2d(f"{name}.excite", channels // reduction, channels, 1, seed, dtype=dtype)

    def __call__(self, x, skip):
        if x.shape != skip.shape:
            raise ValueError(f"channel attention: shape mismatch {x.shape} vs {skip.shape}")
        stats = add(global_std(x), global_avg(x))
        gate = sigmoid(self.excite(self.squeeze(stats)))
        return add(mul(x, gate), skip)

    def params(self):
        return self.squeeze.params() + self.excite.params()


class InfoSplitBlock:
    """LISB: split -> shift block -> split -> depth-wise refinement ->
    concat -> channel attention with a long skip. Ablation variants drop or
    widen individual branches."""

    def __init__(self, name, config, seed, dtype=np.float32):
        c = config.width
        self.variant = config.variant
        self.half = c // 2
        self.quarter = c // 4
        spec = ShiftSpec(gamma=config.shift_gamma)
        self.sbb = ShiftBlock(f"{name}.sbb", config.sbb_width, config.ffn_hidden, spec, seed, dtype=dtype)
        self.rdb = None
        if config.variant != "no_rdb":
            self.rdb = ResidualDepthwiseBlock(f"{name}.rdb", config.rdb_width, seed, dtype=dtype)
        self.cca = None
        if config.variant != "no_cca":
            self.cca = ContrastChannelAttention(f"{name}.cca", c, config.cca_reduction, seed, dtype=dtype)

    def __call__(self, x):
        if self.variant == "no_split":
            refined = self.sbb(x)
            fused = self.rdb(refined)
        else:
            keep_half, mix = split_channels(x, [self.half, self.half])
            mixed = self.sbb(mix)
            keep_quarter, inner = split_channels(mixed, [self.quarter, self.quarter])
            refined = self.rdb(inner) if self.rdb is not None else inner
            fused = concat_channels([keep_half, keep_quarter, refined])
        if self.cca is not None:
            return self.cca(fused, x)
        return add(fused, x)

    def params(self):
        out = self.sbb.params()
        if self.rdb is not None:
            out += self.rdb.params()
        if self.cca is not None:
            out += self.cca.params()
        return out


class LisnModel:
    """Shallow extraction, N info-split blocks, dense fusion with pixel
    attention, and pixel-shuffle reconstruction."""

    def __init__(self, config: LisnConfig, seed: int = 0, dtype=np.float32):
        c = config.width
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.sfe = Conv2d("sfe", config.in_channels, c, 3, seed, pad=1, dtype=dtype)
        self.blocks = [
            InfoSplitBlock(f"block{i}", config, seed, dtype=dtype) for i in range(config.n_blocks)
        ]
        self.fuse = Conv2d("fusion.merge", config.n_blocks * c, c, 1, seed, dtype=dtype)
        self.fuse_conv = Conv2d("fusion.conv", c, c, 3, seed, pad=1, dtype=dtype)
        self.fuse_attn = PixelAttention("fusion.attn", c, seed, dtype=dtype)
        out_ch = config.in_channels * config.scale**2
        self.upconv = Conv2d("reconstruct.conv", c, out_ch, 3, seed, pad=1, dtype=dtype)
        self._params = (
            self.sfe.params()
            + [p for blk in self.blocks for p in blk.params()]
            + self.fuse.params()
            + self.fuse_conv.params()
            + self.fuse_attn.params()
            + self.upconv.params()
        )
        names = [p.name for p in self._params]
        assert len(names) == len(set(names)), "duplicate parameter names"

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected input [N,{self.config.in_channels},H,W], got {x.shape}"
            )
        shallow = self.sfe(x)
        feats = []
        f = shallow
        for blk in self.blocks:
            f = blk(f)
            feats.append(f)
        fused = self.fuse_attn(self.fuse_conv(self.fuse(concat_channels(feats))))
        return pixel_shuffle(self.upconv(add(fused, shallow)), self.config.scale)

    __call__ = forward

    def parameters(self):
        return list(self._params)

    def param_dict(self):
        return {p.name: p for p in self._params}

    def zero_grad(self):
        for p in self._params:
            p.zero_grad()

    def num_params(self):
        return sum(p.data.size for p in self._params)


def build_lisn(config: LisnConfig, seed: int = 0, dtype=np.float32) -> LisnModel:
    """Construct a model with deterministic per-parameter initialization."""
    return LisnModel(config, seed=seed, dtype=dtype)


def lisn_loss(sr, hr, alpha1=0.1):
    """Mean L1 plus ``alpha1`` times mean L1 of both Sobel component maps."""
    if sr.shape != hr.shape:
        raise ValueError(f"loss: shape mismatch {sr.shape} vs {hr.shape}")
    pixel = mean(absolute(sub(sr, hr)))
    if alpha1 == 0:
        return pixel
    sr_gx, sr_gy = sobel(sr)
    hr_gx, hr_gy = sobel(hr)
    edge = add(mean(absolute(sub(sr_gx, hr_gx))), mean(absolute(sub(sr_gy, hr_gy))))
    return add(pixel, scale(edge, alpha1))
