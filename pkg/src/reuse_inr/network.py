"""HiNeRV-style coordinate-to-patch network with parameter reuse.

Structure: a learned base grid is sampled at the patch coordinate and mapped
by the stem linear into the first feature map. Each of the n blocks then
bilinearly upsamples its input, adds a linearly-mapped sample of its own
local grid, and runs a stack of ConvNeXt units (depthwise conv -> layer norm
-> widening linear -> GeLU -> narrowing linear, residual). A 1x1 head maps
the last feature map to RGB.

Parameter reuse never adds stored tensors:

* deepen: masked blocks apply the same ConvNeXt weights ``multiplier`` times
  (granularity selects whether the repeated unit is the depthwise conv, the
  ConvNeXt unit, or the whole block minus its upsampler);
* widen: masked blocks run with the first linear's weight and bias
  concatenated ``multiplier`` times along the output axis and the second
  linear's weight concatenated along the input axis (its bias is shared).

Channel bookkeeping: a block whose input width differs from its configured
width adapts channels inside its first ConvNeXt unit, which then has no
residual connection. Such blocks are ineligible for reuse and their
location-mask entry must be false.

Forward evaluation is window-based: every patch is computed over windows
inflated by the exact convolution halo each stage needs, so decoding a frame
patch-by-patch is bit-identical to decoding it whole.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from . import configtext
from . import tensor as tz
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

LN_EPS = 1e-6

GridDims = tuple[int, int, int, int]  # (time, height, width, channels)
Window = tuple[int, int, int, int]  # (y0, y1, x0, x1), half-open


class ReuseMode(str, Enum):
    NONE = "none"
    DEEPEN = "deepen"
    WIDEN = "widen"


class Granularity(str, Enum):
    CONV_LAYER = "conv_layer"
    CONVNEXT_BLOCK = "convnext_block"
    HINERV_BLOCK = "hinerv_block"


@dataclass(frozen=True)
class ReuseSpec:
    mode: ReuseMode = ReuseMode.NONE
    granularity: Granularity = Granularity.CONVNEXT_BLOCK
    multiplier: int = 1
    location_mask: Optional[tuple[bool, ...]] = None  # None: all eligible blocks


@dataclass(frozen=True)
class NetworkConfig:
    frames: int
    frame_height: int
    frame_width: int
    patch_height: int  # patch size at stem resolution
    patch_width: int
    stem_channels: int
    depths: tuple[int, ...]
    channels: tuple[int, ...]
    scales: tuple[int, ...]
    kernel_size: int
    expansion_ratio: int
    base_grid: GridDims
    local_grids: tuple[GridDims, ...]
    reuse: ReuseSpec = field(default_factory=ReuseSpec)

    # -- derived geometry ---------------------------------------------------

    @property
    def num_blocks(self) -> int:
        return len(self.depths)

    @property
    def total_scale(self) -> int:
        return math.prod(self.scales)

    @property
    def stem_size(self) -> tuple[int, int]:
        return (self.frame_height // self.total_scale,
                self.frame_width // self.total_scale)

    def stage_size(self, b: int) -> tuple[int, int]:
        """Feature-map size of stage b; b=0 is the stem, b=n the output."""
        h, w = self.stem_size
        for s in self.scales[:b]:
            h, w = h * s, w * s
        return h, w

    def block_in_channels(self, b: int) -> int:
        """Input width of block b (0-based)."""
        return self.stem_channels if b == 0 else self.channels[b - 1]

    def eligibility(self) -> tuple[bool, ...]:
        """Blocks whose input and output channel counts match can be reused."""
        return tuple(
            self.block_in_channels(b) == self.channels[b]
            for b in range(self.num_blocks)
        )

    def effective_mask(self) -> tuple[bool, ...]:
        if self.reuse.location_mask is None:
            return self.eligibility()
        return self.reuse.location_mask

    def patch_grid(self) -> tuple[int, int]:
        sh, sw = self.stem_size
        return sh // self.patch_height, sw // self.patch_width

    def out_patch_size(self) -> tuple[int, int]:
        return (self.patch_height * self.total_scale,
                self.patch_width * self.total_scale)

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        n = self.num_blocks
        if n < 1:
            raise ConfigurationError("need at least one block")
        if not (len(self.channels) == len(self.scales) == len(self.local_grids) == n):
            raise ConfigurationError(
                "depths, channels, scales, local_grids must have equal length"
            )
        positives = {
            "frames": self.frames,
            "frame_height": self.frame_height,
            "frame_width": self.frame_width,
            "patch_height": self.patch_height,
            "patch_width": self.patch_width,
            "stem_channels": self.stem_channels,
        }
        for name, v in positives.items():
            if v < 1:
                raise ConfigurationError(f"{name} must be positive, got {v}")
        for name, seq in (("depths", self.depths), ("channels", self.channels),
                          ("scales", self.scales)):
            if any(v < 1 for v in seq):
                raise ConfigurationError(f"all {name} must be positive, got {seq}")
        for dims in (self.base_grid, *self.local_grids):
            if len(dims) != 4 or any(v < 1 for v in dims):
                raise ConfigurationError(f"grid dims must be 4 positive ints, got {dims}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(
                f"kernel_size must be odd and positive, got {self.kernel_size}"
            )
        if self.expansion_ratio < 1:
            raise ConfigurationError(
                f"expansion_ratio must be >= 1, got {self.expansion_ratio}"
            )
        if (self.frame_height % self.total_scale or
                self.frame_width % self.total_scale):
            raise ConfigurationError(
                f"frame {self.frame_height}x{self.frame_width} not divisible by "
                f"total scale {self.total_scale}"
            )
        sh, sw = self.stem_size
        if sh % self.patch_height or sw % self.patch_width:
            raise ConfigurationError(
                f"stem {sh}x{sw} not tiled by patch {self.patch_height}x{self.patch_width}"
            )
        if self.reuse.multiplier < 1:
            raise ConfigurationError(
                f"reuse multiplier must be >= 1, got {self.reuse.multiplier}"
            )
        mask = self.reuse.location_mask
        if mask is not None:
            if len(mask) != n:
                raise ConfigurationError(
                    f"location_mask length {len(mask)} != {n} blocks"
                )
            for b, (on, ok) in enumerate(zip(mask, self.eligibility())):
                if on and not ok:
                    raise ConfigurationError(
                        f"block {b} changes channel count "
                        f"({self.block_in_channels(b)} -> {self.channels[b]}) "
                        "and cannot be reused; set its mask entry to false"
                    )

    # -- reuse dispatch -------------------------------------------------------

    def block_reuse(self, b: int) -> tuple[ReuseMode, Granularity, int]:
        """Effective (mode, granularity, multiplier) for block b.

        multiplier 1 always collapses to mode none, as does an unmasked block.
        """
        r = self.reuse
        if (r.mode == ReuseMode.NONE or r.multiplier == 1
                or not self.effective_mask()[b]):
            return ReuseMode.NONE, r.granularity, 1
        return r.mode, r.granularity, r.multiplier

    # -- serialization --------------------------------------------------------

    def to_text(self) -> str:
        def ints(seq):
            return ",".join(str(v) for v in seq)

        pairs = {
            "frames": str(self.frames),
            "frame_height": str(self.frame_height),
            "frame_width": str(self.frame_width),
            "patch_height": str(self.patch_height),
            "patch_width": str(self.patch_width),
            "stem_channels": str(self.stem_channels),
            "depths": ints(self.depths),
            "channels": ints(self.channels),
            "scales": ints(self.scales),
            "kernel_size": str(self.kernel_size),
            "expansion_ratio": str(self.expansion_ratio),
            "base_grid": ints(self.base_grid),
            "local_grids": "/".join(ints(g) for g in self.local_grids),
            "reuse_mode": self.reuse.mode.value,
            "reuse_granularity": self.reuse.granularity.value,
            "reuse_multiplier": str(self.reuse.multiplier),
            "reuse_mask": ints(int(v) for v in self.effective_mask()),
        }
        return configtext.dumps(pairs)

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        pairs = configtext.loads(text)
        take = lambda key: configtext.take(pairs, key)

        def grid4(value: str, key: str) -> GridDims:
            dims = configtext.parse_ints(value, key)
            if len(dims) != 4:
                raise ConfigurationError(f"key {key!r}: expected 4 dims, got {dims}")
            return dims  # type: ignore[return-value]

        try:
            mode = ReuseMode(take("reuse_mode"))
            gran = Granularity(take("reuse_granularity"))
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None
        cfg = cls(
            frames=configtext.parse_int(take("frames"), "frames"),
            frame_height=configtext.parse_int(take("frame_height"), "frame_height"),
            frame_width=configtext.parse_int(take("frame_width"), "frame_width"),
            patch_height=configtext.parse_int(take("patch_height"), "patch_height"),
            patch_width=configtext.parse_int(take("patch_width"), "patch_width"),
            stem_channels=configtext.parse_int(take("stem_channels"), "stem_channels"),
            depths=configtext.parse_ints(take("depths"), "depths"),
            channels=configtext.parse_ints(take("channels"), "channels"),
            scales=configtext.parse_ints(take("scales"), "scales"),
            kernel_size=configtext.parse_int(take("kernel_size"), "kernel_size"),
            expansion_ratio=configtext.parse_int(take("expansion_ratio"), "expansion_ratio"),
            base_grid=grid4(take("base_grid"), "base_grid"),
            local_grids=tuple(
                grid4(part, "local_grids")
                for part in take("local_grids").split("/")
            ),
            reuse=ReuseSpec(
                mode=mode,
                granularity=gran,
                multiplier=configtext.parse_int(take("reuse_multiplier"), "reuse_multiplier"),
                location_mask=tuple(
                    bool(v) for v in configtext.parse_ints(take("reuse_mask"), "reuse_mask")
                ),
            ),
        )
        configtext.finish(pairs)
        cfg.validate()
        return cfg

    def with_reuse(self, **kwargs) -> "NetworkConfig":
        cfg = replace(self, reuse=replace(self.reuse, **kwargs))
        cfg.validate()
        return cfg

    def normalized(self) -> "NetworkConfig":
        """Equivalent config with the location mask made explicit.

        to_text always serializes the resolved mask, so this is the form a
        config takes after a text round trip.
        """
        return replace(self, reuse=replace(self.reuse,
                                           location_mask=self.effective_mask()))

    # -- canonical configs -----------------------------------------------------

    @classmethod
    def desk_default(cls, frames: int = 16, height: int = 64, width: int = 64,
                     reuse: ReuseSpec = ReuseSpec()) -> "NetworkConfig":
        """Baseline toy config: ~2.9k parameters, full-frame patches."""
        cfg = cls(
            frames=frames,
            frame_height=height,
            frame_width=width,
            patch_height=height // 8,
            patch_width=width // 8,
            stem_channels=8,
            depths=(1, 1, 1, 1),
            channels=(8, 8, 8, 4),
            scales=(2, 2, 2, 1),
            kernel_size=3,
            expansion_ratio=2,
            base_grid=(3, 10, 10, 4),
            local_grids=((2, 4, 4, 2), (2, 4, 4, 2), (2, 4, 4, 2), (2, 4, 4, 2)),
            reuse=reuse,
        )
        cfg.validate()
        return cfg

    @classmethod
    def paper_mirror_1080p(cls, reuse: ReuseSpec = ReuseSpec()) -> "NetworkConfig":
        """Full-scale mirror used only for complexity accounting.

        240 frames at 1920x1080, depth {3,3,3,1}, 280 channels through the
        reusable blocks, one channel-adapting final block before the head.
        """
        cfg = cls(
            frames=240,
            frame_height=1080,
            frame_width=1920,
            patch_height=9,
            patch_width=16,
            stem_channels=280,
            depths=(3, 3, 3, 1),
            channels=(280, 280, 280, 35),
            scales=(1, 3, 5, 8),
            kernel_size=7,
            expansion_ratio=4,
            base_grid=(30, 9, 16, 16),
            local_grids=((30, 9, 16, 16), (30, 14, 24, 16), (30, 27, 48, 16),
                         (30, 34, 60, 8)),
            reuse=reuse,
        )
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# parameters


class ParameterStore:
    """Named, shaped, insertion-ordered collection of unique learnable tensors.

    Iteration order is the serialization order; it must be identical between
    encode and decode, which holds because both sides rebuild it from the
    same config. The stored tensor count never depends on the reuse spec.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigurationError(f"duplicate parameter name {name!r}")
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return list(self._params.items())

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def total_size(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, v in values.items():
            t = self._params[name]
            if t.values.shape != v.shape:
                raise ConfigurationError(
                    f"parameter {name!r}: shape {v.shape} != {t.values.shape}"
                )
            t.values = v.astype(np.float32, copy=True)


@dataclass
class ConvNextParams:
    w_in: int
    w_out: int
    dw_k: Tensor
    dw_b: Tensor
    ln_g: Tensor
    ln_b: Tensor
    l1_w: Tensor
    l1_b: Tensor
    l2_w: Tensor
    l2_b: Tensor


@dataclass
class BlockParams:
    grid: Tensor
    gl_w: Tensor
    gl_b: Tensor
    cnx: list[ConvNextParams]


def build_parameters(cfg: NetworkConfig, seed: int) -> tuple[ParameterStore, list[BlockParams]]:
    """Create and initialize all unique parameters in a fixed order.

    Weights and grids draw from uniform(-a, a) with a = sqrt(1/fan_in); for a
    grid, fan_in is its channel count. Biases start at zero, layer-norm at
    identity. The head starts as a constant mid-gray map: zero weights, 0.5
    bias.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    store = ParameterStore()

    def uniform(shape: tuple[int, ...], fan_in: int) -> Tensor:
        a = math.sqrt(1.0 / fan_in)
        return Tensor(rng.uniform(-a, a, shape).astype(np.float32), requires_grad=True)

    def zeros(shape) -> Tensor:
        return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)

    def ones(shape) -> Tensor:
        return Tensor(np.ones(shape, dtype=np.float32), requires_grad=True)

    cg = cfg.base_grid[3]
    store.add("base_grid", uniform(cfg.base_grid, cg))
    store.add("stem.w", uniform((cfg.stem_channels, cg), cg))
    store.add("stem.b", zeros((cfg.stem_channels,)))

    blocks: list[BlockParams] = []
    for b in range(cfg.num_blocks):
        w_in = cfg.block_in_channels(b)
        w_out = cfg.channels[b]
        gdims = cfg.local_grids[b]
        prefix = f"block{b}"
        grid = store.add(f"{prefix}.grid", uniform(gdims, gdims[3]))
        gl_w = store.add(f"{prefix}.grid_lin.w", uniform((w_in, gdims[3]), gdims[3]))
        gl_b = store.add(f"{prefix}.grid_lin.b", zeros((w_in,)))
        cnx = []
        for d in range(cfg.depths[b]):
            cin = w_in if d == 0 else w_out
            hidden = cfg.expansion_ratio * w_out
            K = cfg.kernel_size
            p = f"{prefix}.cnx{d}"
            cnx.append(ConvNextParams(
                w_in=cin,
                w_out=w_out,
                dw_k=store.add(f"{p}.dw.k", uniform((K, K, cin), K * K)),
                dw_b=store.add(f"{p}.dw.b", zeros((cin,))),
                ln_g=store.add(f"{p}.ln.g", ones((cin,))),
                ln_b=store.add(f"{p}.ln.b", zeros((cin,))),
                l1_w=store.add(f"{p}.l1.w", uniform((hidden, cin), cin)),
                l1_b=store.add(f"{p}.l1.b", zeros((hidden,))),
                l2_w=store.add(f"{p}.l2.w", uniform((w_out, hidden), hidden)),
                l2_b=store.add(f"{p}.l2.b", zeros((w_out,))),
            ))
        blocks.append(BlockParams(grid=grid, gl_w=gl_w, gl_b=gl_b, cnx=cnx))

    store.add("head.w", zeros((3, cfg.channels[-1])))
    store.add("head.b", Tensor(np.full((3,), 0.5, dtype=np.float32), requires_grad=True))
    return store, blocks


def bind_blocks(cfg: NetworkConfig, store: ParameterStore) -> list[BlockParams]:
    """Reattach BlockParams views onto an existing store (e.g. after decode)."""
    blocks = []
    for b in range(cfg.num_blocks):
        prefix = f"block{b}"
        cnx = []
        for d in range(cfg.depths[b]):
            p = f"{prefix}.cnx{d}"
            cnx.append(ConvNextParams(
                w_in=cfg.block_in_channels(b) if d == 0 else cfg.channels[b],
                w_out=cfg.channels[b],
                dw_k=store[f"{p}.dw.k"], dw_b=store[f"{p}.dw.b"],
                ln_g=store[f"{p}.ln.g"], ln_b=store[f"{p}.ln.b"],
                l1_w=store[f"{p}.l1.w"], l1_b=store[f"{p}.l1.b"],
                l2_w=store[f"{p}.l2.w"], l2_b=store[f"{p}.l2.b"],
            ))
        blocks.append(BlockParams(
            grid=store[f"{prefix}.grid"],
            gl_w=store[f"{prefix}.grid_lin.w"],
            gl_b=store[f"{prefix}.grid_lin.b"],
            cnx=cnx,
        ))
    return blocks


# ---------------------------------------------------------------------------
# forward building blocks


def widened_weights(w1: Tensor, b1: Tensor, w2: Tensor, m: int = 2
                    ) -> tuple[Tensor, Tensor, Tensor]:
    """Derive widened linear weights by concatenating m copies.

    w1 and b1 duplicate along the output-channel axis, w2 along the
    input-channel axis. The second bias is intentionally not duplicated.
    The results are derivations on the tape, never stored parameters, so
    gradients flow back into the single original tensors.
    """
    if w1.values.shape[0] != w2.values.shape[1]:
        raise DimensionError(
            f"widened_weights: w1 output axis {w1.values.shape[0]} != "
            f"w2 input axis {w2.values.shape[1]}"
        )
    return (tz.repeat_cat(w1, m, axis=0),
            tz.repeat_cat(b1, m, axis=0),
            tz.repeat_cat(w2, m, axis=1))


def convnext_forward(x: Tensor, p: ConvNextParams, *, widen_m: int = 1,
                     conv_repeat: int = 1) -> Tensor:
    """One ConvNeXt unit: x + lin2(gelu(lin1(ln(dwconv(x))))).

    A channel-adapting unit (w_in != w_out) omits the residual connection.
    widen_m > 1 runs with concat-widened linear weights; conv_repeat > 1
    applies the depthwise conv that many times (fine-grained reuse).
    """
    if conv_repeat < 1:
        raise ConfigurationError(f"conv_repeat must be >= 1, got {conv_repeat}")
    w1, b1, w2 = p.l1_w, p.l1_b, p.l2_w
    if widen_m > 1:
        w1, b1, w2 = widened_weights(w1, b1, w2, widen_m)
    h = x
    for _ in range(conv_repeat):
        h = tz.depthwise_conv2d(h, p.dw_k, p.dw_b)
    h = tz.layer_norm(h, p.ln_g, p.ln_b, LN_EPS)
    h = tz.linear(h, w1, b1)
    h = tz.gelu(h)
    h = tz.linear(h, w2, p.l2_b)
    if p.w_in != p.w_out:
        return h
    return tz.add(x, h)


def deepened_forward(x: Tensor, p: ConvNextParams, m: int) -> Tensor:
    """Apply one ConvNeXt unit m times with the same parameter tensors."""
    if m < 1:
        raise ConfigurationError(f"deepen multiplier must be >= 1, got {m}")
    for _ in range(m):
        x = convnext_forward(x, p)
    return x


# ---------------------------------------------------------------------------
# windowed evaluation plan


def _inflate(win: Window, halo: int, frame: tuple[int, int]) -> Window:
    y0, y1, x0, x1 = win
    return (max(y0 - halo, 0), min(y1 + halo, frame[0]),
            max(x0 - halo, 0), min(x1 + halo, frame[1]))


def _upsample_in_window(out_win: Window, s: int, in_frame: tuple[int, int]) -> Window:
    """Input window needed to interpolate out_win at integer scale s."""
    if s == 1:
        return out_win
    def lo(a: int) -> int:
        return max(int(math.floor((a + 0.5) / s - 0.5)), 0)
    def hi(b: int, n: int) -> int:
        return min(int(math.floor((b - 0.5) / s - 0.5)) + 2, n)
    y0, y1, x0, x1 = out_win
    return (lo(y0), hi(y1, in_frame[0]), lo(x0), hi(x1, in_frame[1]))


@dataclass(frozen=True)
class _BlockPlan:
    in_win: Window    # window of the incoming feature, stage b-1 resolution
    conv_win: Window  # inflated window the block computes on, stage b resolution
    out_win: Window   # window handed to the next stage after cropping


class InrNetwork:
    """A built network: config plus parameter store plus forward evaluation."""

    def __init__(self, cfg: NetworkConfig, store: ParameterStore,
                 blocks: Optional[list[BlockParams]] = None):
        cfg.validate()
        self.cfg = cfg
        self.params = store
        self.blocks = blocks if blocks is not None else bind_blocks(cfg, store)

    @classmethod
    def build(cls, cfg: NetworkConfig, seed: int) -> "InrNetwork":
        store, blocks = build_parameters(cfg, seed)
        return cls(cfg, store, blocks)

    def count_unique_params(self) -> int:
        return self.params.total_size()

    # -- plan -----------------------------------------------------------------

    def _dw_applications(self, b: int) -> int:
        mode, _gran, m = self.cfg.block_reuse(b)
        mult = m if mode == ReuseMode.DEEPEN else 1
        return self.cfg.depths[b] * mult

    def _plan(self, out_win: Window) -> list[_BlockPlan]:
        cfg = self.cfg
        halo_unit = (cfg.kernel_size - 1) // 2
        plans: list[Optional[_BlockPlan]] = [None] * cfg.num_blocks
        need = out_win
        for b in range(cfg.num_blocks - 1, -1, -1):
            frame_b = cfg.stage_size(b + 1)
            conv_win = _inflate(need, self._dw_applications(b) * halo_unit, frame_b)
            in_win = _upsample_in_window(conv_win, cfg.scales[b], cfg.stage_size(b))
            plans[b] = _BlockPlan(in_win=in_win, conv_win=conv_win, out_win=need)
            need = in_win
        return plans  # type: ignore[return-value]

    # -- forward ----------------------------------------------------------------

    def stem(self, window: Window, t: int) -> Tensor:
        """Sample the base grid over a stem-resolution window, then stem linear."""
        x = tz.sample_grid(self.params["base_grid"], t, self.cfg.frames,
                           self.cfg.stem_size, window)
        return tz.linear(x, self.params["stem.w"], self.params["stem.b"])

    def _grid_add(self, x: Tensor, b: int, t: int, window: Window) -> Tensor:
        bp = self.blocks[b]
        g = tz.sample_grid(bp.grid, t, self.cfg.frames,
                           self.cfg.stage_size(b + 1), window)
        g = tz.linear(g, bp.gl_w, bp.gl_b)
        return tz.add(x, g)

    def _stack(self, x: Tensor, b: int) -> Tensor:
        mode, gran, m = self.cfg.block_reuse(b)
        for p in self.blocks[b].cnx:
            if p.w_in != p.w_out:
                x = convnext_forward(x, p)
            elif mode == ReuseMode.WIDEN:
                x = convnext_forward(x, p, widen_m=m)
            elif mode == ReuseMode.DEEPEN and gran == Granularity.CONV_LAYER:
                x = convnext_forward(x, p, conv_repeat=m)
            elif mode == ReuseMode.DEEPEN and gran == Granularity.CONVNEXT_BLOCK:
                x = deepened_forward(x, p, m)
            else:
                x = convnext_forward(x, p)
        return x

    def hinerv_block_forward(self, x: Tensor, b: int, t: int, plan: _BlockPlan) -> Tensor:
        cfg = self.cfg
        mode, gran, m = cfg.block_reuse(b)
        x = tz.bilinear_upsample(
            x, cfg.scales[b],
            in_origin=(plan.in_win[0], plan.in_win[2]),
            in_frame=cfg.stage_size(b),
            out_window=plan.conv_win,
        )
        reps = m if (mode == ReuseMode.DEEPEN and gran == Granularity.HINERV_BLOCK) else 1
        for _ in range(reps):
            # whole-block repetition reruns the grid add and the stack; the
            # upsampler is excluded, so repeats run at scale 1 implicitly
            x = self._grid_add(x, b, t, plan.conv_win)
            x = self._stack(x, b)
        cw, ow = plan.conv_win, plan.out_win
        return tz.crop2d(x, ow[0] - cw[0], ow[1] - cw[0], ow[2] - cw[2], ow[3] - cw[2])

    def forward_patch(self, i: int, j: int, t: int) -> Tensor:
        """Evaluate output patch (i, j) of frame t; shape (ph*S, pw*S, 3).

        Values are unclamped; evaluation-time decoding clamps to [0, 1].
        """
        cfg = self.cfg
        py, px = cfg.patch_grid()
        if not (0 <= i < py and 0 <= j < px):
            raise IndexError(f"patch ({i}, {j}) outside grid {py}x{px}")
        if not (0 <= t < cfg.frames):
            raise IndexError(f"frame {t} outside [0, {cfg.frames})")
        s = cfg.total_scale
        out_win = (i * cfg.patch_height * s, (i + 1) * cfg.patch_height * s,
                   j * cfg.patch_width * s, (j + 1) * cfg.patch_width * s)
        plans = self._plan(out_win)
        x = self.stem(plans[0].in_win, t)
        for b in range(cfg.num_blocks):
            x = self.hinerv_block_forward(x, b, t, plans[b])
        return tz.linear(x, self.params["head.w"], self.params["head.b"])

    # -- decoding ---------------------------------------------------------------

    def decode_frame(self, t: int) -> np.ndarray:
        """Reconstruct frame t as float32 in [0, 1]."""
        cfg = self.cfg
        canvas = np.empty((cfg.frame_height, cfg.frame_width, 3), dtype=np.float32)
        py, px = cfg.patch_grid()
        oh, ow = cfg.out_patch_size()
        for i in range(py):
            for j in range(px):
                patch = self.forward_patch(i, j, t).values
                canvas[i * oh:(i + 1) * oh, j * ow:(j + 1) * ow] = patch
        return np.clip(canvas, 0.0, 1.0)

    def decode_video(self) -> np.ndarray:
        """Reconstruct all frames as uint8 (T, H, W, 3)."""
        frames = [
            np.rint(self.decode_frame(t) * 255.0).astype(np.uint8)
            for t in range(self.cfg.frames)
        ]
        return np.stack(frames, axis=0)
