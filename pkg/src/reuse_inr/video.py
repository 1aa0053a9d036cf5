"""Raw video buffers, synthetic test sequences, and rate-distortion math.

Conventions pinned here so reported numbers are self-consistent:

* PSNR is computed jointly over all frames in the float RGB domain with
  MAX=1.0; zero MSE (and anything above) is capped at 100.0 dB;
* bpp divides total bits by T*H*W (pixel count, not subpixels);
* BD-rate uses the classic cubic polynomial fit of log-rate over PSNR,
  integrated over the overlapping PSNR range; curves with fewer than four
  points fall back to piecewise-linear integration and raise a
  PiecewiseFallbackWarning.

Raw file format: planar RGB8 (frame-major, R plane then G then B per frame,
rows in order) with a key-value text sidecar at ``<path>.txt`` declaring
width, height, frames, and format.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import configtext
from .errors import ConfigurationError, DimensionError, EvaluationError, FormatError

RAW_FORMAT = "rgb8p"
PSNR_CAP_DB = 100.0


@dataclass
class VideoBuffer:
    """(T, H, W, 3) pixels, either uint8 ("rgb8") or float32 in [0,1]."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.pixels.ndim != 4 or self.pixels.shape[-1] != 3:
            raise DimensionError(
                f"video must be (T, H, W, 3), got {self.pixels.shape}"
            )
        if self.pixels.dtype not in (np.uint8, np.float32):
            raise DimensionError(f"unsupported pixel dtype {self.pixels.dtype}")

    @property
    def representation(self) -> str:
        return "rgb8" if self.pixels.dtype == np.uint8 else "float"

    @property
    def frames(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    def to_float(self) -> "VideoBuffer":
        if self.representation == "float":
            return self
        return VideoBuffer((self.pixels.astype(np.float32) / 255.0).astype(np.float32))

    def to_rgb8(self) -> "VideoBuffer":
        if self.representation == "rgb8":
            return self
        clipped = np.clip(self.pixels, 0.0, 1.0)
        return VideoBuffer(np.rint(clipped * 255.0).astype(np.uint8))


# ---------------------------------------------------------------------------
# metrics


def psnr(a: VideoBuffer, b: VideoBuffer) -> float:
    """Joint PSNR in dB over all pixels; 100.0 dB cap for zero MSE."""
    if a.pixels.shape != b.pixels.shape:
        raise DimensionError(f"shape mismatch {a.pixels.shape} vs {b.pixels.shape}")
    if a.representation != b.representation:
        raise DimensionError(
            f"representation mismatch {a.representation} vs {b.representation}"
        )
    av = a.to_float().pixels.astype(np.float64)
    bv = b.to_float().pixels.astype(np.float64)
    mse = float(np.mean((av - bv) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def bpp(num_bytes: int, frames: int, height: int, width: int) -> float:
    if frames < 1 or height < 1 or width < 1:
        raise DimensionError("frames and frame size must be positive")
    return 8.0 * num_bytes / (frames * height * width)


class RDPoint(NamedTuple):
    bpp: float
    psnr: float


class PiecewiseFallbackWarning(UserWarning):
    """BD-rate fell back to piecewise-linear integration (< 4 points)."""


def _check_curve(curve: Sequence[RDPoint], name: str) -> None:
    if len(curve) < 2:
        raise EvaluationError(f"{name} curve needs at least 2 points")
    for p in curve:
        if p.bpp <= 0:
            raise EvaluationError(f"{name} curve has non-positive rate {p.bpp}")
    rates = [p.bpp for p in curve]
    if any(b >= a for b, a in zip(rates, rates[1:])):
        raise EvaluationError(f"{name} curve must be strictly increasing in bpp")


def bd_rate(anchor: Sequence[RDPoint], test: Sequence[RDPoint]) -> float:
    """Average bitrate change of test vs anchor in percent (negative: better)."""
    _check_curve(anchor, "anchor")
    _check_curve(test, "test")
    a_rate = np.log([p.bpp for p in anchor])
    a_psnr = np.array([p.psnr for p in anchor])
    t_rate = np.log([p.bpp for p in test])
    t_psnr = np.array([p.psnr for p in test])

    lo = max(a_psnr.min(), t_psnr.min())
    hi = min(a_psnr.max(), t_psnr.max())
    if hi <= lo:
        raise EvaluationError(
            f"no PSNR overlap between curves ([{a_psnr.min()}, {a_psnr.max()}] vs "
            f"[{t_psnr.min()}, {t_psnr.max()}])"
        )

    def integral(psnrs: np.ndarray, log_rates: np.ndarray) -> float:
        if len(psnrs) >= 4:
            poly = np.polyfit(psnrs, log_rates, 3)
            anti = np.polyint(poly)
            return float(np.polyval(anti, hi) - np.polyval(anti, lo))
        warnings.warn(
            "curve has fewer than 4 points; using piecewise-linear integration",
            PiecewiseFallbackWarning,
            stacklevel=3,
        )
        xs = np.linspace(lo, hi, 256)
        order = np.argsort(psnrs)
        return float(np.trapezoid(np.interp(xs, psnrs[order], log_rates[order]), xs))

    avg_diff = (integral(t_psnr, t_rate) - integral(a_psnr, a_rate)) / (hi - lo)
    return (math.exp(avg_diff) - 1.0) * 100.0


# ---------------------------------------------------------------------------
# synthetic sequences

SYNTH_KINDS = ("constant", "moving_gradient", "bouncing_ball", "noise_textured")

# documented per-frame shift of the moving_gradient kind, pixels in (y, x)
MOVING_GRADIENT_SHIFT = (0, 2)


def _upsample_smooth(field: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear 2x..Nx upsample (align-corners=false) for generator use."""
    h, w, c = field.shape
    out_h, out_w = h * factor, w * factor
    ys = (np.arange(out_h) + 0.5) / factor - 0.5
    xs = (np.arange(out_w) + 0.5) / factor - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None, None]
    fx = (xs - x0)[None, :, None]
    top = field[y0][:, x0] * (1 - fx) + field[y0][:, x1] * fx
    bot = field[y1][:, x0] * (1 - fx) + field[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def synth_video(kind: str, frames: int, height: int, width: int,
                seed: int) -> VideoBuffer:
    """Deterministic synthetic sequence in float representation."""
    if kind not in SYNTH_KINDS:
        raise ConfigurationError(f"unknown synth kind {kind!r}; choose from {SYNTH_KINDS}")
    if frames < 1 or height < 1 or width < 1:
        raise ConfigurationError("frames and frame size must be positive")
    rng = np.random.default_rng(seed)
    out = np.empty((frames, height, width, 3), dtype=np.float64)

    if kind == "constant":
        color = rng.uniform(0.2, 0.8, 3)
        out[:] = color

    elif kind == "moving_gradient":
        # frame 0: smooth sine in x (period = width) over a vertical ramp;
        # frame t is frame 0 rolled by t * MOVING_GRADIENT_SHIFT
        phases = rng.uniform(0, 2 * math.pi, 3)
        y = np.arange(height)[:, None, None]
        x = np.arange(width)[None, :, None]
        frame0 = (0.5
                  + 0.20 * np.sin(2 * math.pi * x / width + phases[None, None, :])
                  + 0.22 * (y / max(height - 1, 1) - 0.5))
        dy, dx = MOVING_GRADIENT_SHIFT
        for t in range(frames):
            out[t] = np.roll(frame0, (t * dy, t * dx), axis=(0, 1))

    elif kind == "bouncing_ball":
        sigma = min(height, width) / 8.0
        margin = 2.5 * sigma
        phase = rng.uniform(0, 2 * math.pi)
        color = rng.uniform(0.5, 0.9, 3)
        y = np.arange(height)[:, None]
        x = np.arange(width)[None, :]
        background = 0.30 + 0.25 * (y / max(height - 1, 1))
        for t in range(frames):
            u = 2 * math.pi * t / frames
            cy = height / 2 + (height / 2 - margin) * math.sin(u + phase)
            cx = width / 2 + (width / 2 - margin) * math.sin(2 * u)
            blob = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * sigma * sigma))
            out[t] = background[:, :, None] + 0.4 * blob[:, :, None] * color

    else:  # noise_textured
        down = 8
        lh = max(height // down, 1)
        lw = max(width // down, 1)
        field_a = rng.uniform(0.25, 0.75, (lh, lw, 3))
        field_b = rng.uniform(0.25, 0.75, (lh, lw, 3))
        tex_a = _upsample_smooth(field_a, down)[:height, :width]
        tex_b = _upsample_smooth(field_b, down)[:height, :width]
        for t in range(frames):
            w = 0.5 - 0.5 * math.cos(2 * math.pi * t / frames)
            out[t] = tex_a * (1 - w) + tex_b * w

    return VideoBuffer(np.clip(out, 0.0, 1.0).astype(np.float32))


# ---------------------------------------------------------------------------
# raw I/O


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".txt")


def save_raw(video: VideoBuffer, path: str | Path) -> None:
    """Write planar RGB8 bytes plus the text sidecar."""
    path = Path(path)
    rgb = video.to_rgb8().pixels
    planar = np.ascontiguousarray(rgb.transpose(0, 3, 1, 2))
    path.write_bytes(planar.tobytes())
    sidecar = configtext.dumps({
        "width": str(video.width),
        "height": str(video.height),
        "frames": str(video.frames),
        "format": RAW_FORMAT,
    })
    _sidecar_path(path).write_text(sidecar)


def load_raw(path: str | Path) -> VideoBuffer:
    path = Path(path)
    sidecar = _sidecar_path(path)
    if not sidecar.exists():
        raise FormatError(f"missing sidecar {sidecar}")
    pairs = configtext.loads(sidecar.read_text())
    width = configtext.parse_int(configtext.take(pairs, "width"), "width")
    height = configtext.parse_int(configtext.take(pairs, "height"), "height")
    frames = configtext.parse_int(configtext.take(pairs, "frames"), "frames")
    fmt = configtext.take(pairs, "format")
    configtext.finish(pairs)
    if fmt != RAW_FORMAT:
        raise FormatError(f"unsupported raw format {fmt!r}")
    data = path.read_bytes()
    expected = frames * height * width * 3
    if len(data) != expected:
        raise FormatError(
            f"{path}: {len(data)} bytes but sidecar implies {expected}"
        )
    planar = np.frombuffer(data, dtype=np.uint8).reshape(frames, 3, height, width)
    return VideoBuffer(np.ascontiguousarray(planar.transpose(0, 2, 3, 1)))


# ---------------------------------------------------------------------------
# RD curve CSV


def write_rd_csv(path: str | Path, rows: Sequence[tuple[str, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "bpp", "psnr"])
        for label, rate, quality in rows:
            writer.writerow([label, f"{rate:.6f}", f"{quality:.4f}"])


def read_rd_csv(path: str | Path) -> list[tuple[str, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["label", "bpp", "psnr"]:
            raise FormatError(f"{path}: expected header label,bpp,psnr, got {header}")
        return [(label, float(rate), float(quality)) for label, rate, quality in reader]


def curve_from_rows(rows: Sequence[tuple[str, float, float]]) -> list[RDPoint]:
    points = sorted(RDPoint(r, q) for _, r, q in rows)
    return points
