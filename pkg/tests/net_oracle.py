"""fp64 twin of the network forward, built from the reference ops.

Used to finite-difference-check gradients of the composed network without
fp32 rounding noise in the oracle. Full-frame evaluation only (the production
path additionally supports windowed patches; equality of those two is tested
separately, bit-exactly, on the production side).
"""

from __future__ import annotations

import numpy as np

from reuse_inr.network import Granularity, NetworkConfig, ReuseMode

from oracles import (
    ref_bilinear_upsample,
    ref_depthwise_conv2d,
    ref_gelu,
    ref_layer_norm,
    ref_linear,
    ref_mse,
    ref_sample_grid,
)

LN_EPS = 1e-6


def convnext64(x: np.ndarray, p: dict[str, np.ndarray], w_in: int, w_out: int,
               widen_m: int = 1, conv_repeat: int = 1) -> np.ndarray:
    w1, b1, w2 = p["l1.w"], p["l1.b"], p["l2.w"]
    if widen_m > 1:
        w1 = np.concatenate([w1] * widen_m, axis=0)
        b1 = np.concatenate([b1] * widen_m, axis=0)
        w2 = np.concatenate([w2] * widen_m, axis=1)
    h = x
    for _ in range(conv_repeat):
        h = ref_depthwise_conv2d(h, p["dw.k"], p["dw.b"])
    h = ref_layer_norm(h, p["ln.g"], p["ln.b"], LN_EPS)
    h = ref_gelu(ref_linear(h, w1, b1))
    h = ref_linear(h, w2, p["l2.b"])
    return h if w_in != w_out else x + h


def _cnx_params(vals: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {key: vals[f"{prefix}.{key}"]
            for key in ("dw.k", "dw.b", "ln.g", "ln.b", "l1.w", "l1.b", "l2.w", "l2.b")}


def forward64(cfg: NetworkConfig, vals: dict[str, np.ndarray], t: int) -> np.ndarray:
    sh, sw = cfg.stem_size
    x = ref_sample_grid(vals["base_grid"], t, cfg.frames, sh, sw)
    x = ref_linear(x, vals["stem.w"], vals["stem.b"])
    for b in range(cfg.num_blocks):
        mode, gran, m = cfg.block_reuse(b)
        if cfg.scales[b] > 1:
            x = ref_bilinear_upsample(x, cfg.scales[b])
        fh, fw = cfg.stage_size(b + 1)
        reps = m if (mode == ReuseMode.DEEPEN and gran == Granularity.HINERV_BLOCK) else 1
        for _ in range(reps):
            g = ref_sample_grid(vals[f"block{b}.grid"], t, cfg.frames, fh, fw)
            x = x + ref_linear(g, vals[f"block{b}.grid_lin.w"], vals[f"block{b}.grid_lin.b"])
            for d in range(cfg.depths[b]):
                w_in = cfg.block_in_channels(b) if d == 0 else cfg.channels[b]
                w_out = cfg.channels[b]
                p = _cnx_params(vals, f"block{b}.cnx{d}")
                if w_in != w_out:
                    x = convnext64(x, p, w_in, w_out)
                elif mode == ReuseMode.WIDEN:
                    x = convnext64(x, p, w_in, w_out, widen_m=m)
                elif mode == ReuseMode.DEEPEN and gran == Granularity.CONV_LAYER:
                    x = convnext64(x, p, w_in, w_out, conv_repeat=m)
                elif mode == ReuseMode.DEEPEN and gran == Granularity.CONVNEXT_BLOCK:
                    for _ in range(m):
                        x = convnext64(x, p, w_in, w_out)
                else:
                    x = convnext64(x, p, w_in, w_out)
    return ref_linear(x, vals["head.w"], vals["head.b"])


def loss64(cfg: NetworkConfig, vals: dict[str, np.ndarray], t: int,
           target: np.ndarray) -> float:
    return ref_mse(forward64(cfg, vals, t), target)
