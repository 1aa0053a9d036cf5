"""Independent fp64 reference implementations used as test oracles.

These deliberately avoid the production code paths: plain numpy float64,
matmuls and per-pixel loops. Gradient checks run central finite differences
(h=1e-3) on these references and compare against tape gradients.
"""

from __future__ import annotations

import math

import numpy as np

H_FD = 1e-3


def ref_linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x.astype(np.float64) @ w.astype(np.float64).T + b.astype(np.float64)


def ref_depthwise_conv2d(x: np.ndarray, k: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    k = k.astype(np.float64)
    H, W, C = x.shape
    K = k.shape[0]
    p = (K - 1) // 2
    out = np.zeros((H, W, C), dtype=np.float64)
    for y in range(H):
        for xx in range(W):
            for c in range(C):
                acc = 0.0
                for dy in range(K):
                    for dx in range(K):
                        sy, sx = y + dy - p, xx + dx - p
                        if 0 <= sy < H and 0 <= sx < W:
                            acc += x[sy, sx, c] * k[dy, dx, c]
                out[y, xx, c] = acc + float(b[c])
    return out


def ref_layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float) -> np.ndarray:
    x = x.astype(np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    xn = (x - mu) / np.sqrt(var + eps)
    return xn * gamma.astype(np.float64) + beta.astype(np.float64)


def ref_gelu(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.float64)
    c0 = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c0 * (x + 0.044715 * x**3)))


def _axis_src(i: int, in_n: int, out_n: int) -> tuple[int, int, float]:
    src = (i + 0.5) * (in_n / out_n) - 0.5
    src = min(max(src, 0.0), in_n - 1.0)
    i0 = int(math.floor(src))
    return i0, min(i0 + 1, in_n - 1), src - i0


def ref_bilinear_upsample(x: np.ndarray, s: int) -> np.ndarray:
    """Direct per-pixel bilinear interpolation, align-corners=false."""
    x = x.astype(np.float64)
    H, W, C = x.shape
    out = np.zeros((s * H, s * W, C), dtype=np.float64)
    for oy in range(s * H):
        y0, y1, fy = _axis_src(oy, H, s * H)
        for ox in range(s * W):
            x0, x1, fx = _axis_src(ox, W, s * W)
            out[oy, ox, :] = (
                x[y0, x0] * (1 - fy) * (1 - fx)
                + x[y0, x1] * (1 - fy) * fx
                + x[y1, x0] * fy * (1 - fx)
                + x[y1, x1] * fy * fx
            )
    return out


def ref_sample_grid(
    grid: np.ndarray, t: int, num_frames: int, fh: int, fw: int
) -> np.ndarray:
    """Direct per-pixel trilinear sampling of a (Tg,Hg,Wg,C) grid over a frame."""
    grid = grid.astype(np.float64)
    tg, hg, wg, C = grid.shape
    tsrc = min(max((t + 0.5) * (tg / num_frames) - 0.5, 0.0), tg - 1.0)
    t0 = int(math.floor(tsrc))
    t1 = min(t0 + 1, tg - 1)
    ft = tsrc - t0
    out = np.zeros((fh, fw, C), dtype=np.float64)
    for oy in range(fh):
        y0, y1, fy = _axis_src(oy, hg, fh)
        for ox in range(fw):
            x0, x1, fx = _axis_src(ox, wg, fw)
            for tt, wt in ((t0, 1 - ft), (t1, ft)):
                if wt == 0.0 and tt != t0:
                    continue
                out[oy, ox, :] += wt * (
                    grid[tt, y0, x0] * (1 - fy) * (1 - fx)
                    + grid[tt, y0, x1] * (1 - fy) * fx
                    + grid[tt, y1, x0] * fy * (1 - fx)
                    + grid[tt, y1, x1] * fy * fx
                )
    return out


def ref_mse(pred: np.ndarray, target: np.ndarray) -> float:
    d = pred.astype(np.float64) - target.astype(np.float64)
    return float(np.mean(d * d))


def fd_gradient(f, arrays: list[np.ndarray], wrt: int, h: float = H_FD) -> np.ndarray:
    """Central finite differences of scalar f(arrays) wrt arrays[wrt], in fp64."""
    base = [a.astype(np.float64).copy() for a in arrays]
    target = base[wrt]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(*base)
        flat[i] = orig - h
        fm = f(*base)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(got: np.ndarray, want: np.ndarray) -> float:
    """Max abs error normalized by the oracle gradient's scale."""
    scale = max(float(np.max(np.abs(want))), 1e-6)
    return float(np.max(np.abs(got.astype(np.float64) - want)) / scale)
