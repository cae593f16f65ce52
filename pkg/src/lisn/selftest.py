"""Release-gate battery: gradient checks, independent oracles, and the
structural/calibration invariants, runnable without a test framework.

The oracle implementations here are deliberately naive (nested loops,
scalar math) and share no code with the tensor engine they check.
"""
from __future__ import annotations

import math
import shutil
import tempfile
import time
from pathlib import Path

import numpy as np

from .config import LisnConfig
from .complexity import (
    LayerCost,
    complexity_report,
    conv_layer_cost,
    count_flops,
    count_params,
)
from .data import Dataset, ImageSample, degrade
from .evaluation import psnr, ssim
from .model import Conv2d, build_lisn, lisn_loss
from .ops import pixel_shuffle, pixel_unshuffle
from .tensor import Tape, Tensor, grad_check
from .training import AdamState, TrainOptions, adam_apply, load_checkpoint, lr_at, train

__all__ = ["SUITES", "run_suites", "smooth_images"]


# ---------------------------------------------------------------------------
# naive reference implementations (oracle side)


def _naive_conv(x, w, b=None, pad=0, groups=1):
    n, cin, h, wd = x.shape
    cout, cig, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    og = cout // groups
    for nn in range(n):
        for oc in range(cout):
            g = oc // og
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ic in range(cig):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += w[oc, ic, ki, kj] * xp[nn, g * cig + ic, i + ki, j + kj]
                    out[nn, oc, i, j] = acc + (b[oc] if b is not None else 0.0)
    return out


def _naive_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _naive_gelu(x):
    out = np.empty_like(x)
    flat_in, flat_out = x.reshape(-1), out.reshape(-1)
    for i in range(flat_in.size):
        v = float(flat_in[i])
        flat_out[i] = 0.5 * v * (1.0 + math.erf(v / math.sqrt(2.0)))
    return out


def _naive_layer_norm(x, gamma, beta, eps):
    n, c, h, w = x.shape
    out = np.empty_like(x)
    for nn in range(n):
        for i in range(h):
            for j in range(w):
                vec = x[nn, :, i, j]
                mu = float(vec.mean())
                var = float(((vec - mu) ** 2).mean())
                out[nn, :, i, j] = gamma * (vec - mu) / math.sqrt(var + eps) + beta
    return out


def _naive_shift4(x, k):
    out = x.copy()
    if k == 0:
        return out
    out[:, 0:k, :, :-1] = x[:, 0:k, :, 1:]
    out[:, 0:k, :, -1] = 0.0
    out[:, k : 2 * k, :, 1:] = x[:, k : 2 * k, :, :-1]
    out[:, k : 2 * k, :, 0] = 0.0
    out[:, 2 * k : 3 * k, :-1, :] = x[:, 2 * k : 3 * k, 1:, :]
    out[:, 2 * k : 3 * k, -1, :] = 0.0
    out[:, 3 * k : 4 * k, 1:, :] = x[:, 3 * k : 4 * k, :-1, :]
    out[:, 3 * k : 4 * k, 0, :] = 0.0
    return out


def _straightline_block(x, blk, cfg):
    """Monolithic re-computation of one info-split block from its weights."""
    c = cfg.width
    half, quarter = c // 2, c // 4
    k = int(cfg.shift_gamma * (c // 2))
    keep_half, m = x[:, :half], x[:, half:]
    for layer in blk.sbb.layers:
        m = _naive_shift4(m, k)
        normed = _naive_layer_norm(m, layer.norm.gamma.data, layer.norm.beta.data, layer.norm.eps)
        t = _naive_conv(normed, layer.ffn.expand.w.data, layer.ffn.expand.b.data)
        t = _naive_gelu(t)
        gate = _naive_sigmoid(_naive_conv(t, layer.ffn.attn.conv.w.data, layer.ffn.attn.conv.b.data))
        t = _naive_conv(t * gate, layer.ffn.project.w.data, layer.ffn.project.b.data)
        m = t + m
    keep_quarter, inner = m[:, :quarter], m[:, quarter:]
    r = _naive_conv(inner, blk.rdb.depthwise.w.data, blk.rdb.depthwise.b.data, pad=1, groups=quarter)
    r = _naive_conv(r, blk.rdb.pointwise.w.data, blk.rdb.pointwise.b.data)
    refined = _naive_sigmoid(r + inner)
    fused = np.concatenate([keep_half, keep_quarter, refined], axis=1)
    mu = fused.mean(axis=(2, 3), keepdims=True)
    std = np.sqrt(((fused - mu) ** 2).mean(axis=(2, 3), keepdims=True))
    stats = std + mu
    gate = _naive_sigmoid(
        _naive_conv(
            _naive_conv(stats, blk.cca.squeeze.w.data, blk.cca.squeeze.b.data),
            blk.cca.excite.w.data,
            blk.cca.excite.b.data,
        )
    )
    return gate * fused + x


def smooth_images(n, size, seed):
    """Band-limited synthetic images: ramps plus a few Gaussian bumps."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    images = []
    for _ in range(n):
        img = 0.15 + 0.2 * rng.uniform() * xx + 0.2 * rng.uniform() * yy
        for _ in range(3):
            cy, cx = rng.uniform(0.2, 0.8, 2)
            s = rng.uniform(0.08, 0.2)
            img = img + rng.uniform(0.2, 0.5) * np.exp(
                -(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
            )
        images.append(np.clip(img / img.max() * 0.85, 0.0, 1.0).astype(np.float32)[None, None])
    return images


# ---------------------------------------------------------------------------
# suites


def suite_gradient_fidelity():
    """Every parameter gradient of the full loss matches central differences."""
    cfg = LisnConfig(scale=2, width=8, n_blocks=1)
    model = build_lisn(cfg, seed=1, dtype=np.float64)
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(0.0, 1.0, (1, 1, 8, 8)), dtype=np.float64)
    target = Tensor(rng.uniform(0.0, 1.0, (1, 1, 16, 16)), dtype=np.float64)
    err = grad_check(lambda: lisn_loss(model(x), target, cfg.alpha1), model.parameters(), h=1e-5)
    assert err < 1e-4, f"max relative gradient error {err:.3e} >= 1e-4"
    return f"max relative error {err:.2e} over {model.num_params()} parameters"


def suite_block_oracle():
    """The production block equals an independent straight-line composition."""
    details = []
    for dtype, tol in ((np.float32, 1e-6), (np.float64, 1e-12)):
        cfg = LisnConfig(scale=2, width=8, n_blocks=1)
        model = build_lisn(cfg, seed=5, dtype=dtype)
        rng = np.random.default_rng(11)
        x = rng.uniform(-1.0, 1.0, (1, 8, 4, 4)).astype(dtype)
        got = model.blocks[0](Tensor(x)).data
        want = _straightline_block(x, model.blocks[0], cfg)
        rel = float(np.max(np.abs(got - want)) / np.max(np.abs(want)))
        assert rel < tol, f"{np.dtype(dtype).name}: relative deviation {rel:.3e} >= {tol}"
        details.append(f"{np.dtype(dtype).name}: {rel:.2e}")
    return "; ".join(details)


def suite_shift_contract():
    """Shift stages cost nothing and match the index-map definition."""
    model = build_lisn(LisnConfig(width=48, n_blocks=2), seed=0)
    report = complexity_report(model, (16, 16))
    shift_rows = [r for r in report.rows if r.name.endswith(".shift")]
    assert shift_rows, "no shift rows in the complexity report"
    for row in shift_rows:
        assert row.params == 0 and row.flops == 0 and row.const_flops == 0, (
            f"{row.name}: params={row.params}, flops={row.flops}"
        )
    from .ops import ShiftSpec, shift4

    rng = np.random.default_rng(3)
    spec = ShiftSpec()
    for c, h, w in ((48, 7, 9), (12, 5, 5), (8, 3, 4)):
        x = rng.normal(size=(2, c, h, w)).astype(np.float32)
        got = shift4(Tensor(x), spec).data
        want = _naive_shift4(x, spec.block_channels(c))
        assert np.array_equal(got, want), f"shift mismatch at C={c}"
    return f"{len(shift_rows)} shift rows at 0/0; index map exact on 3 shapes"


def suite_shuffle_roundtrip():
    rng = np.random.default_rng(9)
    for r in (2, 4):
        x = Tensor(rng.normal(size=(2, 3 * r * r, 5, 6)).astype(np.float32))
        y = pixel_shuffle(x, r)
        assert y.shape == (2, 3, 5 * r, 6 * r), f"shape law broken for r={r}: {y.shape}"
        back = pixel_unshuffle(y, r)
        assert np.array_equal(back.data, x.data), f"round trip not bit-exact for r={r}"
    return "bit-exact round trip and shape law for r in {2, 4}"


def suite_metrics():
    a = Tensor(np.zeros((1, 1, 1, 1), dtype=np.float32))
    b = Tensor(np.full((1, 1, 1, 1), 0.5, dtype=np.float32))
    p = psnr(a, b, peak=1.0)
    assert abs(p - 6.0206) < 1e-3, f"psnr(0, 0.5) = {p}"
    rng = np.random.default_rng(21)
    img = Tensor(rng.uniform(0, 1, (1, 1, 16, 16)).astype(np.float32))
    s = ssim(img, img)
    assert s == 1.0, f"ssim(a, a) = {s} != 1.0"
    ref = rng.uniform(0, 1, (1, 1, 8, 8))
    pairs = []
    for _ in range(100):
        noisy = ref + rng.normal(0, rng.uniform(0.01, 0.5), ref.shape)
        mse = float(np.mean((noisy - ref) ** 2))
        pairs.append((mse, psnr(Tensor(noisy), Tensor(ref))))
    pairs.sort()
    for (m0, p0), (m1, p1) in zip(pairs, pairs[1:]):
        assert m1 <= m0 or p1 < p0, "psnr not strictly decreasing in MSE"
    return f"psnr scalar {p:.4f} dB; ssim self-identity exact; monotone over 100 pairs"


def suite_loss_identities():
    rng = np.random.default_rng(2)
    img = Tensor(rng.uniform(0, 1, (1, 1, 16, 16)).astype(np.float32))
    zero = float(lisn_loss(img, img, 0.1).data)
    assert zero == 0.0, f"loss on identical images = {zero}"
    base = Tensor(np.full((1, 1, 16, 16), 0.3, dtype=np.float32))
    shifted = Tensor(base.data + np.float32(0.1))
    val = float(lisn_loss(shifted, base, 0.1).data)
    assert abs(val - 0.1) < 1e-7, f"constant-offset loss = {val}, expected 0.1"
    plain = float(lisn_loss(shifted, base, 0.0).data)
    assert abs(plain - val) < 1e-7, "edge term did not vanish on constants"
    return f"identical -> 0 exactly; constant offset -> {val:.9f}"


def suite_lr_schedule():
    expected = {0: 2e-4, 200: 1e-4, 400: 5e-5, 600: 2.5e-5, 800: 1.25e-5, 999: 1.25e-5, 1000: 2e-4}
    for epoch, want in expected.items():
        got = lr_at(epoch)
        assert got == want, f"lr_at({epoch}) = {got}, expected {want}"
    return "halving/reset schedule exact at all checkpoints"


def suite_complexity_calibration():
    model = build_lisn(LisnConfig(), seed=0)
    total, _ = count_params(model)
    assert abs(total - 279_000) <= 0.3 * 279_000, f"default x4 params {total} outside +-30% of 279000"
    ns = build_lisn(LisnConfig(variant="no_split"), seed=0)
    p_ratio = ns.num_params() / total
    assert 2.5 <= p_ratio <= 4.5, f"no_split/default param ratio {p_ratio:.3f}"
    f_default, _ = count_flops(model, (64, 64))
    f_ns, _ = count_flops(ns, (64, 64))
    f_ratio = f_ns / f_default
    assert 2.5 <= f_ratio <= 4.5, f"no_split/default FLOP ratio {f_ratio:.3f}"

    # counter vs a hand-enumerated 3-layer toy model at 16x16
    toy = [
        (Conv2d("toy.a", 1, 8, 3, seed=0, pad=1), LayerCost("toy.a", 80, 36_864)),
        (Conv2d("toy.b", 8, 8, 3, seed=0, pad=1, groups=8), LayerCost("toy.b", 80, 36_864)),
        (Conv2d("toy.c", 8, 4, 1, seed=0), LayerCost("toy.c", 36, 16_384)),
    ]
    for conv, want in toy:
        got = conv_layer_cost(want.name, conv, 16, 16)
        assert (got.params, got.flops) == (want.params, want.flops), (
            f"{want.name}: counted ({got.params}, {got.flops}), "
            f"hand enumeration says ({want.params}, {want.flops})"
        )
    return (
        f"default x4 params {total} ({total / 279_000:.2f}x of 279K); "
        f"ratios params {p_ratio:.2f}, flops {f_ratio:.2f}; toy counter exact"
    )


def suite_learning(max_steps=2000, target_db=40.0):
    """Overfit 8 fixed patches with a small model until PSNR passes 40 dB."""
    scale = 2
    hr = Tensor(np.concatenate(smooth_images(8, 32 * scale, seed=7), axis=0))
    lr_in = degrade(hr, scale)
    cfg = LisnConfig(scale=scale, width=16, n_blocks=2)
    model = build_lisn(cfg, seed=3)
    state = AdamState(model.parameters())
    params = model.parameters()

    init_psnr = psnr(model(lr_in), hr)
    best = init_psnr
    steps = 0
    losses = []
    while steps < max_steps:
        for _ in range(25):
            model.zero_grad()
            tape = Tape()
            with tape:
                loss = lisn_loss(model(lr_in), hr, cfg.alpha1)
            tape.backward(loss)
            adam_apply(params, state, 2e-3)
            losses.append(float(loss.data))
            steps += 1
        best = psnr(model(lr_in), hr)
        if best > target_db:
            break
    assert best > target_db, f"training-set PSNR {best:.2f} dB <= {target_db} after {steps} steps"
    assert best > init_psnr, "trained model does not beat its initialization"
    windows = [np.mean(losses[i : i + 50]) for i in range(0, len(losses) - 49, 50)]
    for prev, cur in zip(windows, windows[1:]):
        assert cur <= prev * 1.05, f"50-step smoothed loss rose: {prev:.5f} -> {cur:.5f}"
    return f"{best:.2f} dB after {steps} steps (init {init_psnr:.2f} dB)"


def suite_ablation_structure():
    cfg = LisnConfig(scale=2, width=8, n_blocks=2)
    rng = np.random.default_rng(13)
    x = Tensor(rng.uniform(0, 1, (1, 1, 6, 6)).astype(np.float32))
    for variant, attr in (("no_rdb", "rdb"), ("no_cca", "cca")):
        from dataclasses import replace

        variant_model = build_lisn(replace(cfg, variant=variant), seed=4)
        ablated = build_lisn(cfg, seed=4)
        for blk in ablated.blocks:
            setattr(blk, attr, None)
        got = variant_model(x).data
        want = ablated(x).data
        assert np.array_equal(got, want), f"{variant} differs from the manually ablated model"

    counts = [build_lisn(LisnConfig(n_blocks=n), seed=0).num_params() for n in (4, 6, 8, 10, 12)]
    deltas = {counts[i + 1] - counts[i] for i in range(len(counts) - 1)}
    assert len(deltas) == 1, f"parameter count not affine in block count: {counts}"
    return f"variant ablations bit-exact; params affine in N (slope {deltas.pop() // 2}/block)"


def suite_persistence():
    cfg = LisnConfig(scale=2, width=8, n_blocks=1)
    options = TrainOptions(batches_per_epoch=3, batch_size=2, patch_size=8,
                           base_lr=1e-3, augment=True, val_every=0)
    images = smooth_images(2, 24, seed=5)
    dataset = Dataset(ImageSample(hr=Tensor(a), path=f"mem{i}") for i, a in enumerate(images))
    work = Path(tempfile.mkdtemp(prefix="lisn-selftest-"))
    try:
        r1 = train(cfg, dataset, 2, seed=9, out_dir=work / "a", options=options)
        r2 = train(cfg, dataset, 2, seed=9, out_dir=work / "b", options=options)
        bytes_a = (r1.checkpoint_dir / "params.bin").read_bytes()
        bytes_b = (r2.checkpoint_dir / "params.bin").read_bytes()
        assert bytes_a == bytes_b, "same seed did not produce byte-identical checkpoints"

        model, state, epoch = load_checkpoint(r1.checkpoint_dir)
        from .training import save_checkpoint

        again = save_checkpoint(model, work / "resaved", epoch=epoch, state=state)
        assert (again / "params.bin").read_bytes() == bytes_a, "save/load/save not byte-identical"

        r_full = train(cfg, dataset, 4, seed=9, out_dir=work / "full", options=options)
        model2, state2, epoch2 = load_checkpoint(r1.checkpoint_dir)
        r_resumed = train(cfg, dataset, 4, seed=9, out_dir=work / "resumed",
                          options=options, model=model2, state=state2, start_epoch=epoch2)
        full_bytes = (r_full.checkpoint_dir / "params.bin").read_bytes()
        resumed_bytes = (r_resumed.checkpoint_dir / "params.bin").read_bytes()
        assert full_bytes == resumed_bytes, "resumed training diverged from uninterrupted run"
    finally:
        shutil.rmtree(work, ignore_errors=True)
    return "checkpoints byte-identical under seed; round trip and resume exact"


def suite_flop_proportionality():
    model = build_lisn(LisnConfig(), seed=0)
    f64, _ = count_flops(model, (64, 64))
    f128, _ = count_flops(model, (128, 128))
    assert f128 == 4 * f64, f"flops(128) = {f128} != 4 * flops(64) = {4 * f64}"
    return f"flops(128x128) = 4 x flops(64x64) = {f128} exactly"


SUITES = [
    ("gradient_fidelity", suite_gradient_fidelity),
    ("block_oracle", suite_block_oracle),
    ("shift_contract", suite_shift_contract),
    ("shuffle_roundtrip", suite_shuffle_roundtrip),
    ("metrics", suite_metrics),
    ("loss_identities", suite_loss_identities),
    ("lr_schedule", suite_lr_schedule),
    ("complexity_calibration", suite_complexity_calibration),
    ("learning", suite_learning),
    ("ablation_structure", suite_ablation_structure),
    ("persistence", suite_persistence),
    ("flop_proportionality", suite_flop_proportionality),
]


def run_suites(names=None):
    """Run the battery; returns (all_passed, result rows)."""
    selected = SUITES if not names else [(n, f) for n, f in SUITES if n in names]
    results = []
    all_ok = True
    for name, fn in selected:
        start = time.perf_counter()
        try:
            detail = fn()
            ok = True
        except AssertionError as exc:
            detail = str(exc)
            ok = False
            all_ok = False
        seconds = time.perf_counter() - start
        results.append({"suite": name, "ok": ok, "seconds": seconds, "detail": detail})
    return all_ok, results
