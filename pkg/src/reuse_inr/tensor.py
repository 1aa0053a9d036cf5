"""Dense fp32 tensors with reverse-mode automatic differentiation.

The operator set is exactly what the video network needs: linear maps,
depthwise convolution, layer norm, GeLU, bilinear upsampling, learned-grid
sampling, residual adds, weight duplication for widening, cropping, and MSE.

Gradients are recorded on an explicit :class:`Tape`. Ops executed outside a
``with Tape():`` block run plain forward math and record nothing, which is the
decode path. A tape belongs to a single thread; disjoint tapes are independent.

Determinism notes (these matter for bit-exact decode and patch stitching):

* all forward math is fp32 with fixed, shape-independent per-element
  summation order. In particular ``linear`` accumulates over input channels
  with an explicit loop rather than a BLAS matmul, so the result for one
  pixel never depends on how many other pixels are in the batch;
* interpolation weights are derived from global frame coordinates, never
  from window-local ones, so a pixel interpolates identically no matter
  which patch window produced it.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "add",
    "smul",
    "linear",
    "depthwise_conv2d",
    "layer_norm",
    "gelu",
    "bilinear_upsample",
    "sample_grid",
    "repeat_cat",
    "crop2d",
    "tsum",
    "mse_loss",
]

# GeLU tanh approximation constants; pinned so decode matches encode exactly.
GELU_SQRT_2_OVER_PI = 0.7978845608028654
GELU_CUBIC_COEF = 0.044715

_f32 = np.float32


class Tensor:
    """A dense fp32 array plus optional gradient."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values: np.ndarray, requires_grad: bool = False):
        if values.dtype != np.float32:
            values = values.astype(np.float32)
        self.values = values
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return int(self.values.size)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def tensor(values, requires_grad: bool = False) -> Tensor:
    """Wrap array-like data (copied, cast to fp32) in a Tensor."""
    return Tensor(np.array(values, dtype=np.float32), requires_grad=requires_grad)


def parameter(values) -> Tensor:
    """Shorthand for a trainable leaf tensor."""
    return tensor(values, requires_grad=True)


_tls = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def _active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations.

    Ops are appended in execution order, which is automatically a valid
    topological order (an op cannot run before its inputs exist). backward()
    replays the records strictly in reverse, accumulating gradients with
    ``+=`` so a tensor used at several sites receives the sum of its
    per-site gradients in a fixed order.
    """

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise UsageError("tape context exited out of order")
        stack.pop()

    def _record(self, out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, backward_fn))

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate .grad for every requires_grad tensor reachable from loss."""
        if loss.size != 1:
            raise UsageError(
                f"backward requires a scalar loss, got shape {loss.values.shape}"
            )
        loss.grad = np.ones_like(loss.values)
        for out, backward_fn in reversed(self._records):
            if out.grad is not None:
                backward_fn(out.grad)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(np.float32, copy=True)
    else:
        t.grad += g


def _wants_grad(*tensors: Tensor) -> bool:
    return _active_tape() is not None and any(t.requires_grad for t in tensors)


def _make_out(values: np.ndarray, *inputs: Tensor) -> Tensor:
    return Tensor(values, requires_grad=_wants_grad(*inputs))


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors (no broadcasting)."""
    if a.values.shape != b.values.shape:
        raise DimensionError(
            f"add: shapes {a.values.shape} and {b.values.shape} differ"
        )
    out = _make_out(a.values + b.values, a, b)
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                _accumulate(a, g)
            if b.requires_grad:
                _accumulate(b, g)
        _active_tape()._record(out, backward)
    return out


def smul(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    cf = _f32(c)
    out = _make_out(a.values * cf, a)
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, g * cf)
        _active_tape()._record(out, backward)
    return out


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a 0-d tensor."""
    out = _make_out(np.asarray(a.values.sum(), dtype=np.float32), a)
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            _accumulate(a, np.broadcast_to(g, a.values.shape))
        _active_tape()._record(out, backward)
    return out


def repeat_cat(a: Tensor, m: int, axis: int) -> Tensor:
    """Concatenate m copies of a along axis.

    Derivation used by widening: the result is never stored as a parameter,
    and its gradient is the sum over the m copies, so the unique parameter
    keeps collecting gradient from every duplicated use.
    """
    if m < 1:
        raise ConfigurationError(f"repeat_cat: m must be >= 1, got {m}")
    if m == 1:
        return a
    out = _make_out(np.concatenate([a.values] * m, axis=axis), a)
    if out.requires_grad:
        n = a.values.shape[axis]
        def backward(g: np.ndarray) -> None:
            total = np.zeros_like(a.values)
            for i in range(m):
                total += np.take(g, range(i * n, (i + 1) * n), axis=axis)
            _accumulate(a, total)
        _active_tape()._record(out, backward)
    return out


def crop2d(a: Tensor, y0: int, y1: int, x0: int, x1: int) -> Tensor:
    """Slice rows [y0,y1) and cols [x0,x1) of an (H, W, C) tensor."""
    H, W = a.values.shape[0], a.values.shape[1]
    if not (0 <= y0 <= y1 <= H and 0 <= x0 <= x1 <= W):
        raise DimensionError(
            f"crop2d: window [{y0}:{y1}, {x0}:{x1}] outside shape {a.values.shape}"
        )
    if y0 == 0 and x0 == 0 and y1 == H and x1 == W:
        return a
    out = _make_out(a.values[y0:y1, x0:x1].copy(), a)
    if out.requires_grad:
        def backward(g: np.ndarray) -> None:
            full = np.zeros_like(a.values)
            full[y0:y1, x0:x1] = g
            _accumulate(a, full)
        _active_tape()._record(out, backward)
    return out


# ---------------------------------------------------------------------------
# network ops


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y[..., o] = b[o] + sum_i x[..., i] * w[o, i].

    Accumulation runs as an explicit loop over input channels so each output
    element sees a fixed fp32 summation order regardless of batch size.
    """
    cin = x.values.shape[-1]
    if w.values.ndim != 2 or w.values.shape[1] != cin:
        raise DimensionError(
            f"linear: weight shape {w.values.shape} does not accept "
            f"{cin} input channels (last axis of {x.values.shape})"
        )
    cout = w.values.shape[0]
    if b.values.shape != (cout,):
        raise DimensionError(
            f"linear: bias shape {b.values.shape} != ({cout},)"
        )
    lead = x.values.shape[:-1]
    xv = x.values.reshape(-1, cin)
    out = np.broadcast_to(b.values, (xv.shape[0], cout)).copy()
    wt = w.values
    for i in range(cin):
        out += xv[:, i : i + 1] * wt[:, i]
    out = out.reshape(lead + (cout,))
    res = _make_out(out, x, w, b)
    if res.requires_grad:
        def backward(g: np.ndarray) -> None:
            g2 = g.reshape(-1, cout)
            if x.requires_grad:
                _accumulate(x, (g2 @ wt).reshape(x.values.shape))
            if w.requires_grad:
                _accumulate(w, g2.T @ xv)
            if b.requires_grad:
                _accumulate(b, g2.sum(axis=0))
        _active_tape()._record(res, backward)
    return res


def depthwise_conv2d(x: Tensor, k: Tensor, b: Tensor) -> Tensor:
    """Per-channel 2-D cross-correlation with same-size zero padding.

    x: (H, W, C), k: (K, K, C), b: (C,). K must be odd. No cross-channel
    mixing: out[y, x, c] depends only on channel c of the input.
    """
    if x.values.ndim != 3:
        raise DimensionError(f"depthwise_conv2d: input must be (H, W, C), got {x.values.shape}")
    H, W, C = x.values.shape
    if k.values.ndim != 3 or k.values.shape[0] != k.values.shape[1] or k.values.shape[2] != C:
        raise DimensionError(
            f"depthwise_conv2d: kernel shape {k.values.shape} does not match "
            f"(K, K, {C}) for input channel axis of size {C}"
        )
    K = k.values.shape[0]
    if K % 2 == 0:
        raise ConfigurationError(f"depthwise_conv2d: kernel size must be odd, got {K}")
    if b.values.shape != (C,):
        raise DimensionError(f"depthwise_conv2d: bias shape {b.values.shape} != ({C},)")
    p = (K - 1) // 2
    xp = np.pad(x.values, ((p, p), (p, p), (0, 0)))
    out = np.broadcast_to(b.values, (H, W, C)).copy()
    kv = k.values
    for dy in range(K):
        for dx in range(K):
            out += xp[dy : dy + H, dx : dx + W, :] * kv[dy, dx, :]
    res = _make_out(out, x, k, b)
    if res.requires_grad:
        def backward(g: np.ndarray) -> None:
            if x.requires_grad:
                gxp = np.zeros_like(xp)
                for dy in range(K):
                    for dx in range(K):
                        gxp[dy : dy + H, dx : dx + W, :] += g * kv[dy, dx, :]
                _accumulate(x, gxp[p : p + H, p : p + W, :])
            if k.requires_grad:
                gk = np.empty_like(kv)
                for dy in range(K):
                    for dx in range(K):
                        gk[dy, dx, :] = (xp[dy : dy + H, dx : dx + W, :] * g).sum(axis=(0, 1))
                _accumulate(k, gk)
            if b.requires_grad:
                _accumulate(b, g.sum(axis=(0, 1)))
        _active_tape()._record(res, backward)
    return res


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis with the biased variance estimate."""
    C = x.values.shape[-1]
    if gamma.values.shape != (C,) or beta.values.shape != (C,):
        raise DimensionError(
            f"layer_norm: gamma/beta shapes {gamma.values.shape}/{beta.values.shape} != ({C},)"
        )
    if eps <= 0:
        raise ConfigurationError(f"layer_norm: eps must be > 0, got {eps}")
    epsf = _f32(eps)
    mu = x.values.mean(axis=-1, keepdims=True, dtype=np.float32)
    d = x.values - mu
    var = np.mean(d * d, axis=-1, keepdims=True, dtype=np.float32)
    inv = 1.0 / np.sqrt(var + epsf)
    xn = d * inv
    out = xn * gamma.values + beta.values
    res = _make_out(out, x, gamma, beta)
    if res.requires_grad:
        def backward(g: np.ndarray) -> None:
            if gamma.requires_grad:
                _accumulate(gamma, (g * xn).reshape(-1, C).sum(axis=0))
            if beta.requires_grad:
                _accumulate(beta, g.reshape(-1, C).sum(axis=0))
            if x.requires_grad:
                gxn = g * gamma.values
                m1 = gxn.mean(axis=-1, keepdims=True, dtype=np.float32)
                m2 = (gxn * xn).mean(axis=-1, keepdims=True, dtype=np.float32)
                _accumulate(x, inv * (gxn - m1 - xn * m2))
        _active_tape()._record(res, backward)
    return res


def gelu(x: Tensor) -> Tensor:
    """GeLU with the tanh approximation.

    gelu(x) = 0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
    """
    c0 = _f32(GELU_SQRT_2_OVER_PI)
    c1 = _f32(GELU_CUBIC_COEF)
    xv = x.values
    u = c0 * (xv + c1 * xv * xv * xv)
    t = np.tanh(u)
    out = _f32(0.5) * xv * (1.0 + t)
    res = _make_out(out, x)
    if res.requires_grad:
        def backward(g: np.ndarray) -> None:
            du = c0 * (1.0 + 3.0 * c1 * xv * xv)
            local = _f32(0.5) * (1.0 + t) + _f32(0.5) * xv * (1.0 - t * t) * du
            _accumulate(x, g * local.astype(np.float32))
        _active_tape()._record(res, backward)
    return res


# ---------------------------------------------------------------------------
# interpolation ops


def _axis_taps(
    out_lo: int, out_n: int, in_full: int, out_full: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Source taps for 1-D linear interpolation, align-corners=false.

    Maps global output coords [out_lo, out_lo + out_n) on an axis of total
    length out_full onto an input axis of total length in_full. Source
    positions are clamped to the valid range (edge-clamped sampling).
    Returns (i0, i1, frac) where i0/i1 are global input indices.
    """
    coords = np.arange(out_lo, out_lo + out_n, dtype=np.float64)
    src = (coords + 0.5) * (in_full / out_full) - 0.5
    src = np.clip(src, 0.0, in_full - 1.0)
    i0 = np.floor(src).astype(np.int64)
    frac = (src - i0).astype(np.float32)
    i1 = np.minimum(i0 + 1, in_full - 1)
    return i0, i1, frac


def _bilinear_gather(
    values: np.ndarray,
    y_taps: tuple[np.ndarray, np.ndarray, np.ndarray],
    x_taps: tuple[np.ndarray, np.ndarray, np.ndarray],
    y_off: int,
    x_off: int,
) -> np.ndarray:
    """Sample (H, W, C) values at the tap grid; indices are global minus offsets.

    Uses nested lerps (a + f*(b-a)) so constant inputs are reproduced
    bit-exactly for any fractional weight.
    """
    iy0, iy1, fy = y_taps
    ix0, ix1, fx = x_taps
    ly0, ly1 = iy0 - y_off, iy1 - y_off
    lx0, lx1 = ix0 - x_off, ix1 - x_off
    wy = fy[:, None, None]
    wx = fx[None, :, None]
    v00 = values[ly0[:, None], lx0[None, :], :]
    v01 = values[ly0[:, None], lx1[None, :], :]
    v10 = values[ly1[:, None], lx0[None, :], :]
    v11 = values[ly1[:, None], lx1[None, :], :]
    top = v00 + wx * (v01 - v00)
    bot = v10 + wx * (v11 - v10)
    return top + wy * (bot - top)


def _bilinear_scatter(
    grad_sink: np.ndarray,
    g: np.ndarray,
    y_taps: tuple[np.ndarray, np.ndarray, np.ndarray],
    x_taps: tuple[np.ndarray, np.ndarray, np.ndarray],
    y_off: int,
    x_off: int,
    scale: float = 1.0,
) -> None:
    """Transpose of _bilinear_gather: distribute g into grad_sink."""
    iy0, iy1, fy = y_taps
    ix0, ix1, fx = x_taps
    ly0, ly1 = iy0 - y_off, iy1 - y_off
    lx0, lx1 = ix0 - x_off, ix1 - x_off
    s = _f32(scale)
    wy0 = ((1.0 - fy) * s)[:, None, None]
    wy1 = (fy * s)[:, None, None]
    wx0 = (1.0 - fx)[None, :, None]
    wx1 = fx[None, :, None]
    np.add.at(grad_sink, (ly0[:, None], lx0[None, :]), g * (wy0 * wx0))
    np.add.at(grad_sink, (ly0[:, None], lx1[None, :]), g * (wy0 * wx1))
    np.add.at(grad_sink, (ly1[:, None], lx0[None, :]), g * (wy1 * wx0))
    np.add.at(grad_sink, (ly1[:, None], lx1[None, :]), g * (wy1 * wx1))


def bilinear_upsample(
    x: Tensor,
    s: int,
    *,
    in_origin: tuple[int, int] = (0, 0),
    in_frame: Optional[tuple[int, int]] = None,
    out_window: Optional[tuple[int, int, int, int]] = None,
) -> Tensor:
    """Bilinear upsampling by integer factor s, align-corners=false.

    Plain form (defaults) maps the whole (H, W, C) input to (sH, sW, C).
    The keyword form evaluates a window of a larger frame: ``x`` holds frame
    rows/cols starting at ``in_origin`` of a frame with spatial size
    ``in_frame``, and the output covers global window ``out_window``
    (y0, y1, x0, x1) of the (s*frame) grid. Interpolation weights depend only
    on global coordinates, so windowed and whole-frame evaluation agree
    bit-exactly on shared pixels.
    """
    if not isinstance(s, int) or s < 1:
        raise ConfigurationError(f"bilinear_upsample: scale must be an integer >= 1, got {s}")
    if x.values.ndim != 3:
        raise DimensionError(f"bilinear_upsample: input must be (H, W, C), got {x.values.shape}")
    H, W, _ = x.values.shape
    if in_frame is None:
        in_frame = (H, W)
    fh, fw = in_frame
    oy, ox = in_origin
    if out_window is None:
        out_window = (0, s * fh, 0, s * fw)
    y0, y1, x0, x1 = out_window
    if s == 1 and (y0, y1, x0, x1) == (oy, oy + H, ox, ox + W):
        return x

    y_taps = _axis_taps(y0, y1 - y0, fh, s * fh)
    x_taps = _axis_taps(x0, x1 - x0, fw, s * fw)
    out = _bilinear_gather(x.values, y_taps, x_taps, oy, ox)
    res = _make_out(out.astype(np.float32), x)
    if res.requires_grad:
        def backward(g: np.ndarray) -> None:
            gx = np.zeros_like(x.values)
            _bilinear_scatter(gx, g, y_taps, x_taps, oy, ox)
            _accumulate(x, gx)
        _active_tape()._record(res, backward)
    return res


def sample_grid(
    grid: Tensor,
    t: int,
    num_frames: int,
    frame_size: tuple[int, int],
    window: tuple[int, int, int, int],
) -> Tensor:
    """Sample a learned (Tg, Hg, Wg, C) grid at frame t over a spatial window.

    The grid is interpreted as covering the whole video: linear interpolation
    over time (position (t+0.5)*Tg/T - 0.5) and bilinear interpolation over
    space, with the grid's Hg x Wg plane stretched over frame_size
    (align-corners=false, edge-clamped). window = (y0, y1, x0, x1) selects the
    produced frame pixels; output shape is (y1-y0, x1-x0, C).
    """
    if grid.values.ndim != 4:
        raise DimensionError(f"sample_grid: grid must be (T, H, W, C), got {grid.values.shape}")
    tg, hg, wg, _ = grid.values.shape
    if not (0 <= t < num_frames):
        raise IndexError(f"sample_grid: frame {t} outside [0, {num_frames})")
    fh, fw = frame_size
    y0, y1, x0, x1 = window
    if not (0 <= y0 < y1 <= fh and 0 <= x0 < x1 <= fw):
        raise DimensionError(f"sample_grid: window {window} outside frame {frame_size}")

    tsrc = min(max((t + 0.5) * (tg / num_frames) - 0.5, 0.0), tg - 1.0)
    t0 = int(math.floor(tsrc))
    t1 = min(t0 + 1, tg - 1)
    ft = _f32(tsrc - t0)

    y_taps = _axis_taps(y0, y1 - y0, hg, fh)
    x_taps = _axis_taps(x0, x1 - x0, wg, fw)
    p0 = _bilinear_gather(grid.values[t0], y_taps, x_taps, 0, 0)
    if t1 == t0:
        out = p0
    else:
        p1 = _bilinear_gather(grid.values[t1], y_taps, x_taps, 0, 0)
        out = p0 + ft * (p1 - p0)
    res = _make_out(out.astype(np.float32), grid)
    if res.requires_grad:
        def backward(g: np.ndarray) -> None:
            gg = np.zeros_like(grid.values)
            if t1 == t0:
                _bilinear_scatter(gg[t0], g, y_taps, x_taps, 0, 0)
            else:
                _bilinear_scatter(gg[t0], g, y_taps, x_taps, 0, 0, scale=1.0 - float(ft))
                _bilinear_scatter(gg[t1], g, y_taps, x_taps, 0, 0, scale=float(ft))
            _accumulate(grid, gg)
        _active_tape()._record(res, backward)
    return res


# ---------------------------------------------------------------------------
# loss


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if pred.values.shape != target.values.shape:
        raise DimensionError(
            f"mse_loss: shapes {pred.values.shape} and {target.values.shape} differ"
        )
    diff = pred.values - target.values
    out = np.asarray(np.mean(diff * diff, dtype=np.float32), dtype=np.float32)
    res = _make_out(out, pred, target)
    if res.requires_grad:
        n = _f32(diff.size)
        def backward(g: np.ndarray) -> None:
            scale = _f32(2.0) * g / n
            if pred.requires_grad:
                _accumulate(pred, scale * diff)
            if target.requires_grad:
                _accumulate(target, -scale * diff)
        _active_tape()._record(res, backward)
    return res
