"""Analytic per-layer parameter and FLOP accounting plus wall-time and
peak-memory measurement.

Conventions (recorded in every report): one multiply-accumulate is 2 FLOPs;
sigmoid/gelu cost 4 FLOPs per element, layer norm 8, plain element-wise ops
1; shifts, pixel shuffles, splits and concats are free permutations. The
channel-gate path that runs after global pooling (two 1x1 convs, one add and
one sigmoid on C-element vectors) has constant cost independent of the input
size; it is reported separately as ``const_flops`` and excluded from the
spatially scaling FLOP totals, which are therefore exactly proportional to
the number of input pixels.
"""
from __future__ import annotations

import json
import platform
import statistics
import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = [
    "LayerCost",
    "ComplexityReport",
    "conv_params",
    "conv_flops",
    "conv_layer_cost",
    "count_params",
    "count_flops",
    "complexity_report",
    "measure",
]

MAC_FLOPS = 2
ACTIVATION_FLOPS = 4
LAYER_NORM_FLOPS = 8

CONVENTIONS = {
    "mac_flops": MAC_FLOPS,
    "activation_flops_per_element": ACTIVATION_FLOPS,
    "layer_norm_flops_per_element": LAYER_NORM_FLOPS,
    "elementwise_flops_per_element": 1,
    "shift_flops": 0,
    "permutation_flops": 0,
    "pooled_gate_path": "constant cost tracked as const_flops, excluded from flops totals",
}


@dataclass
class LayerCost:
    name: str
    params: int
    flops: int
    const_flops: int = 0


@dataclass
class ComplexityReport:
    rows: list
    input_hw: tuple
    conventions: dict = field(default_factory=lambda: dict(CONVENTIONS))

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self):
        return sum(r.flops for r in self.rows)

    @property
    def total_const_flops(self):
        return sum(r.const_flops for r in self.rows)

    def to_dict(self):
        return {
            "input_hw": list(self.input_hw),
            "conventions": self.conventions,
            "rows": [
                {"name": r.name, "params": r.params, "flops": r.flops,
                 "const_flops": r.const_flops}
                for r in self.rows
            ],
            "total_params": self.total_params,
            "total_flops": self.total_flops,
            "total_const_flops": self.total_const_flops,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def table(self):
        width = max(len(r.name) for r in self.rows) + 2
        lines = [f"{'layer':<{width}} {'params':>10} {'flops':>14}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}} {r.params:>10} {r.flops:>14}")
        lines.append(
            f"{'total':<{width}} {self.total_params:>10} {self.total_flops:>14}"
        )
        lines.append(
            f"input {self.input_hw[0]}x{self.input_hw[1]}, "
            f"MAC={self.conventions['mac_flops']} FLOPs, "
            f"constant gate-path FLOPs: {self.total_const_flops}"
        )
        return "\n".join(lines)


def conv_params(cin, cout, k, groups=1, bias=True):
    return cout * (cin // groups) * k * k + (cout if bias else 0)


def conv_flops(cin, cout, k, h, w, stride=1, pad=0, groups=1):
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    return MAC_FLOPS * k * k * (cin // groups) * cout * ho * wo


def conv_layer_cost(name, conv, h, w):
    """Cost row for one convolution layer object at input size h x w."""
    cout, cin_g, k, _ = conv.w.shape
    cin = cin_g * conv.groups
    return LayerCost(
        name=name,
        params=conv_params(cin, cout, k, conv.groups, conv.b is not None),
        flops=conv_flops(cin, cout, k, h, w, conv.stride, conv.pad, conv.groups),
    )


def count_params(model):
    """Exact trainable element count with a per-layer breakdown, enumerated
    directly from the parameter set."""
    rows = {}
    for p in model.parameters():
        layer = p.name.rsplit(".", 1)[0]
        rows[layer] = rows.get(layer, 0) + p.data.size
    return sum(rows.values()), rows


def _walk(model, h, w):
    """Symbolic traversal of the forward graph at input size h x w."""
    cfg = model.config
    hw = h * w
    rows = [conv_layer_cost("sfe", model.sfe, h, w)]

    for i, blk in enumerate(model.blocks):
        b = f"block{i}"
        sbb_c = cfg.sbb_width
        hidden = cfg.ffn_hidden
        for j, layer in enumerate(blk.sbb.layers):
            lname = f"{b}.sbb.layer{j}"
            rows.append(LayerCost(f"{lname}.shift", 0, 0))
            rows.append(LayerCost(f"{lname}.norm", 2 * sbb_c, LAYER_NORM_FLOPS * sbb_c * hw))
            rows.append(conv_layer_cost(f"{lname}.ffn.expand", layer.ffn.expand, h, w))
            rows.append(LayerCost(f"{lname}.ffn.act", 0, ACTIVATION_FLOPS * hidden * hw))
            attn = conv_layer_cost(f"{lname}.ffn.attn", layer.ffn.attn.conv, h, w)
            attn.flops += (ACTIVATION_FLOPS + 1) * hidden * hw
            rows.append(attn)
            rows.append(conv_layer_cost(f"{lname}.ffn.project", layer.ffn.project, h, w))
            rows.append(LayerCost(f"{lname}.residual", 0, sbb_c * hw))
        if blk.rdb is not None:
            rdb_c = cfg.rdb_width
            rows.append(conv_layer_cost(f"{b}.rdb.dw", blk.rdb.depthwise, h, w))
            rows.append(conv_layer_cost(f"{b}.rdb.pw", blk.rdb.pointwise, h, w))
            rows.append(LayerCost(f"{b}.rdb.act", 0, (ACTIVATION_FLOPS + 1) * rdb_c * hw))
        c = cfg.width
        if blk.cca is not None:
            red = c // cfg.cca_reduction
            rows.append(LayerCost(f"{b}.cca.stats", 0, 4 * c * hw))
            gate_const = (
                conv_flops(c, red, 1, 1, 1)
                + conv_flops(red, c, 1, 1, 1)
                + c  # std + mean add
                + ACTIVATION_FLOPS * c  # gate sigmoid
            )
            gate_params = conv_params(c, red, 1) + conv_params(red, c, 1)
            rows.append(LayerCost(f"{b}.cca.gate", gate_params, 0, const_flops=gate_const))
            rows.append(LayerCost(f"{b}.cca.apply", 0, 2 * c * hw))
        else:
            rows.append(LayerCost(f"{b}.skip", 0, c * hw))

    c = cfg.width
    rows.append(conv_layer_cost("fusion.merge", model.fuse, h, w))
    rows.append(conv_layer_cost("fusion.conv", model.fuse_conv, h, w))
    attn = conv_layer_cost("fusion.attn", model.fuse_attn.conv, h, w)
    attn.flops += (ACTIVATION_FLOPS + 1) * c * hw
    rows.append(attn)
    rows.append(LayerCost("fusion.residual", 0, c * hw))
    rows.append(conv_layer_cost("reconstruct.conv", model.upconv, h, w))
    rows.append(LayerCost("reconstruct.shuffle", 0, 0))
    return rows


def count_flops(model, lr_hw):
    """Scaling FLOP total at the given LR input size, with the breakdown."""
    h, w = lr_hw
    if h < 1 or w < 1:
        raise ValueError(f"count_flops: invalid input size {lr_hw}")
    rows = _walk(model, h, w)
    return sum(r.flops for r in rows), rows


def complexity_report(model, lr_hw=(64, 64)):
    h, w = lr_hw
    rows = _walk(model, h, w)
    report = ComplexityReport(rows=rows, input_hw=(h, w))
    total, _ = count_params(model)
    assert report.total_params == total, "profiler rows disagree with the parameter set"
    return report


def _hardware():
    cpu = platform.machine()
    try:
        with open("/proc/cpuinfo", encoding="utf-8") as fh:
            for line in fh:
                if line.lower().startswith("model name"):
                    cpu = line.partition(":")[2].strip()
                    break
    except OSError:
        pass
    return f"{platform.platform()} / {cpu}"


def measure(model, lr_hw=(64, 64), repeats=5, seed=0):
    """Median forward wall time over ``repeats`` runs (after one warm-up)
    plus an allocator-level estimate of peak live tensor bytes."""
    if repeats < 3:
        raise ValueError(f"measure: repeats must be >= 3, got {repeats}")
    h, w = lr_hw
    rng = np.random.default_rng(seed)
    x = Tensor(rng.uniform(0.0, 1.0, size=(1, model.config.in_channels, h, w)).astype(np.float32))

    model(x)  # warm-up
    tracemalloc.start()
    model(x)
    _, peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()

    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        model(x)
        timings.append((time.perf_counter() - start) * 1000.0)
    return {
        "median_ms": statistics.median(timings),
        "timings_ms": timings,
        "peak_mem_mb": peak / (1024.0 * 1024.0),
        "repeats": repeats,
        "input_hw": [h, w],
        "hardware": _hardware(),
    }
