"""Desk-scale INR video codec with parameter reuse."""

from .codec import (
    decode_model,
    encode_stream,
    decode_stream,
    pack_model,
    quantize_tensor,
    unpack_model,
)
from .macs import count_macs
from .network import (
    Granularity,
    InrNetwork,
    NetworkConfig,
    ParameterStore,
    ReuseMode,
    ReuseSpec,
)
from .tensor import Tape, Tensor
from .training import TrainConfig, fit, lr_at
from .video import RDPoint, VideoBuffer, bd_rate, bpp, load_raw, psnr, save_raw, synth_video

__all__ = [
    "Granularity",
    "InrNetwork",
    "NetworkConfig",
    "ParameterStore",
    "RDPoint",
    "ReuseMode",
    "ReuseSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "VideoBuffer",
    "bd_rate",
    "bpp",
    "count_macs",
    "decode_model",
    "decode_stream",
    "encode_stream",
    "fit",
    "load_raw",
    "pack_model",
    "psnr",
    "quantize_tensor",
    "save_raw",
    "synth_video",
    "unpack_model",
]
