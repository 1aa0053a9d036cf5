"""Analytic multiply-accumulate counts for decoding with a given config.

Counting convention: MACs of parameterized ops only (the stem linear, grid
linears, depthwise convolutions, ConvNeXt linears, and the 1x1 head).
Interpolation, normalization, activations and adds are excluded. Counts are
exact python integers for full-frame decoding, so reuse-multiplier increments
compare exactly.

Reuse accounting per masked block:

* deepen, conv_layer granularity: only the depthwise-conv term scales by m;
* deepen, convnext_block granularity: the whole ConvNeXt stack scales by m;
* deepen, hinerv_block granularity: the stack and the grid linear scale by m
  (the upsampler is excluded from repetition and is not counted anyway);
* widen: the two ConvNeXt linears scale by m (hidden width multiplies).
"""

from __future__ import annotations

from .errors import ConfigurationError
from .network import Granularity, NetworkConfig, ReuseMode


def count_macs(cfg: NetworkConfig, frames: int | None = None,
               height: int | None = None, width: int | None = None) -> int:
    """Total MACs to decode `frames` frames of `height` x `width` video."""
    cfg.validate()
    frames = cfg.frames if frames is None else frames
    height = cfg.frame_height if height is None else height
    width = cfg.frame_width if width is None else width
    if frames < 1 or height < 1 or width < 1:
        raise ConfigurationError("frames and frame size must be positive")
    if height % cfg.total_scale or width % cfg.total_scale:
        raise ConfigurationError(
            f"frame {height}x{width} not divisible by total scale {cfg.total_scale}"
        )

    def stage_px(b: int) -> int:
        h, w = height // cfg.total_scale, width // cfg.total_scale
        for s in cfg.scales[:b]:
            h, w = h * s, w * s
        return h * w

    per_frame = stage_px(0) * cfg.base_grid[3] * cfg.stem_channels  # stem linear
    for b in range(cfg.num_blocks):
        mode, gran, m = cfg.block_reuse(b)
        px = stage_px(b + 1)
        w_in_block = cfg.block_in_channels(b)
        grid_mult = m if (mode == ReuseMode.DEEPEN and gran == Granularity.HINERV_BLOCK) else 1
        per_frame += grid_mult * px * cfg.local_grids[b][3] * w_in_block

        for d in range(cfg.depths[b]):
            cin = w_in_block if d == 0 else cfg.channels[b]
            cout = cfg.channels[b]
            hidden = cfg.expansion_ratio * cout
            dw = px * cfg.kernel_size * cfg.kernel_size * cin
            lin = px * (cin * hidden + hidden * cout)
            if mode == ReuseMode.DEEPEN:
                if gran == Granularity.CONV_LAYER:
                    per_frame += dw * m + lin
                else:
                    per_frame += (dw + lin) * m
            elif mode == ReuseMode.WIDEN:
                per_frame += dw + lin * m
            else:
                per_frame += dw + lin

    per_frame += stage_px(cfg.num_blocks) * cfg.channels[-1] * 3  # head
    return frames * per_frame
