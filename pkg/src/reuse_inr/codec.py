"""Parameter quantization, entropy coding, and the model bitstream.

Quantizer: per-tensor symmetric max-abs scaling. At b bits the step is
Delta = max|t| / (2^(b-1) - 1) and symbols live in [0, 2^b - 2] with center
code 2^(b-1) - 1; dequantization is (symbol - center) * Delta in fp32, so
encoder and decoder reconstruct bit-identical weights from equal symbols.

Entropy coder: adaptive order-0 arithmetic coding over the 2^b - 1 symbol
alphabet. Counts start at 1 (Laplace smoothing) and increment after each
coded symbol; encoder and decoder update in lockstep, so no frequency tables
are stored. The integer coder renormalizes a 32-bit interval and resolves
underflow with deferred opposite bits.

Bitstream layout (little-endian):

    magic "INRC" | version u8 | quant_bits u8 | config_len u32 | config utf-8
    | tensor_count u16 | per tensor: name_hash u64, rank u8, dims u32 each,
    delta f32, symbol_count u64 | payload_bit_length u64 | payload bytes

All tensors share one adaptive model and one payload, concatenated in
parameter-store order. Reported sizes always include the full header.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, CorruptionError, DataError, FormatError
from .network import InrNetwork, NetworkConfig, ParameterStore, build_parameters

MAGIC = b"INRC"
FORMAT_VERSION = 1
DEFAULT_BITS = 6

_STATE_BITS = 32
_MASK = (1 << _STATE_BITS) - 1
_TOP = 1 << (_STATE_BITS - 1)
_SECOND = 1 << (_STATE_BITS - 2)


def alphabet_size(bits: int) -> int:
    return (1 << bits) - 1


def _check_bits(bits: int) -> None:
    if not (2 <= bits <= 8):
        raise ConfigurationError(f"quant bits must be in [2, 8], got {bits}")


def name_hash(name: str) -> int:
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# ---------------------------------------------------------------------------
# quantizer


@dataclass
class QuantizedTensor:
    symbols: np.ndarray  # uint8, flattened
    scale: float  # fp32 Delta
    shape: tuple[int, ...]

    def dequantize(self, bits: int) -> np.ndarray:
        center = np.float32((1 << (bits - 1)) - 1)
        delta = np.float32(self.scale)
        values = (self.symbols.astype(np.float32) - center) * delta
        return values.reshape(self.shape)


def quant_scale(values: np.ndarray, bits: int) -> float:
    """Quantization step Delta for a tensor at the given bit width."""
    _check_bits(bits)
    if not np.isfinite(values).all():
        raise DataError("tensor contains NaN or Inf")
    amax = float(np.max(np.abs(values))) if values.size else 0.0
    if amax == 0.0:
        return 0.0
    return float(np.float32(amax) / np.float32((1 << (bits - 1)) - 1))


def quantize_tensor(values: np.ndarray, bits: int = DEFAULT_BITS) -> QuantizedTensor:
    _check_bits(bits)
    delta = quant_scale(values, bits)
    center = (1 << (bits - 1)) - 1
    if delta == 0.0:
        symbols = np.full(values.size, center, dtype=np.uint8)
    else:
        q = np.rint(values.astype(np.float32) / np.float32(delta)).astype(np.int64)
        symbols = np.clip(q + center, 0, 2 * center).astype(np.uint8)
    return QuantizedTensor(symbols=symbols.reshape(-1), scale=delta,
                           shape=tuple(values.shape))


# ---------------------------------------------------------------------------
# bit I/O


class _BitWriter:
    def __init__(self) -> None:
        self._bytes = bytearray()
        self._bit_count = 0
        self._current = 0
        self._filled = 0

    def write(self, bit: int) -> None:
        self._current = (self._current << 1) | bit
        self._filled += 1
        self._bit_count += 1
        if self._filled == 8:
            self._bytes.append(self._current)
            self._current = 0
            self._filled = 0

    def getvalue(self) -> tuple[bytes, int]:
        data = bytes(self._bytes)
        if self._filled:
            data += bytes([self._current << (8 - self._filled)])
        return data, self._bit_count


class _BitReader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def read(self) -> int:
        byte_i, bit_i = divmod(self._pos, 8)
        self._pos += 1
        if byte_i >= len(self._data):
            return 0  # implicit zero padding past the payload
        return (self._data[byte_i] >> (7 - bit_i)) & 1


# ---------------------------------------------------------------------------
# adaptive arithmetic coder


# Count added to a symbol's frequency after coding it. Part of the pinned
# stream format: encoder and decoder must use the same value.
ADAPT_INCREMENT = 2


class _AdaptiveModel:
    def __init__(self, num_symbols: int) -> None:
        self.counts = np.ones(num_symbols, dtype=np.int64)

    def cumulative(self) -> np.ndarray:
        cum = np.zeros(len(self.counts) + 1, dtype=np.int64)
        np.cumsum(self.counts, out=cum[1:])
        return cum

    def update(self, symbol: int) -> None:
        self.counts[symbol] += ADAPT_INCREMENT


class ArithmeticEncoder:
    def __init__(self, num_symbols: int) -> None:
        self._model = _AdaptiveModel(num_symbols)
        self._num_symbols = num_symbols
        self._low = 0
        self._high = _MASK
        self._pending = 0
        self._out = _BitWriter()

    def encode(self, symbol: int) -> None:
        if not (0 <= symbol < self._num_symbols):
            raise DataError(
                f"symbol {symbol} outside alphabet [0, {self._num_symbols})"
            )
        cum = self._model.cumulative()
        total = int(cum[-1])
        span = self._high - self._low + 1
        self._high = self._low + int(cum[symbol + 1]) * span // total - 1
        self._low = self._low + int(cum[symbol]) * span // total
        self._renormalize()
        self._model.update(symbol)

    def _renormalize(self) -> None:
        while ((self._low ^ self._high) & _TOP) == 0:
            bit = self._low >> (_STATE_BITS - 1)
            self._out.write(bit)
            for _ in range(self._pending):
                self._out.write(bit ^ 1)
            self._pending = 0
            self._low = (self._low << 1) & _MASK
            self._high = ((self._high << 1) & _MASK) | 1
        while (self._low & ~self._high & _SECOND) != 0:
            self._pending += 1
            self._low = (self._low << 1) & (_MASK >> 1)
            self._high = ((self._high << 1) & (_MASK >> 1)) | _TOP | 1

    def finish(self) -> tuple[bytes, int]:
        """Flush and return (payload bytes, exact bit length)."""
        self._out.write(1)
        for _ in range(self._pending):
            self._out.write(0)
        return self._out.getvalue()


class ArithmeticDecoder:
    def __init__(self, payload: bytes, num_symbols: int) -> None:
        self._model = _AdaptiveModel(num_symbols)
        self._num_symbols = num_symbols
        self._in = _BitReader(payload)
        self._low = 0
        self._high = _MASK
        self._code = 0
        for _ in range(_STATE_BITS):
            self._code = (self._code << 1) | self._in.read()

    def decode(self) -> int:
        cum = self._model.cumulative()
        total = int(cum[-1])
        span = self._high - self._low + 1
        offset = self._code - self._low
        value = ((offset + 1) * total - 1) // span
        symbol = int(np.searchsorted(cum, value, side="right")) - 1
        self._high = self._low + int(cum[symbol + 1]) * span // total - 1
        self._low = self._low + int(cum[symbol]) * span // total
        self._renormalize()
        self._model.update(symbol)
        return symbol

    def _renormalize(self) -> None:
        while ((self._low ^ self._high) & _TOP) == 0:
            self._code = ((self._code << 1) & _MASK) | self._in.read()
            self._low = (self._low << 1) & _MASK
            self._high = ((self._high << 1) & _MASK) | 1
        while (self._low & ~self._high & _SECOND) != 0:
            self._code = (self._code & _TOP) | ((self._code << 1) & (_MASK >> 1)) | self._in.read()
            self._low = (self._low << 1) & (_MASK >> 1)
            self._high = ((self._high << 1) & (_MASK >> 1)) | _TOP | 1


_MODE_ARITHMETIC = 0
_MODE_RAW = 1


def _raw_width(num_symbols: int) -> int:
    return max((num_symbols - 1).bit_length(), 1)


def _raw_pack(symbols: np.ndarray, num_symbols: int) -> tuple[bytes, int]:
    bw = _raw_width(num_symbols)
    if symbols.size == 0:
        return b"", 0
    shifts = np.arange(bw - 1, -1, -1, dtype=np.uint8)
    bits = ((symbols[:, None].astype(np.uint16) >> shifts) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(-1)).tobytes(), symbols.size * bw


def _raw_unpack(payload: bytes, count: int, num_symbols: int) -> np.ndarray:
    bw = _raw_width(num_symbols)
    if count == 0:
        return np.empty(0, dtype=np.uint8)
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8), count=count * bw)
    weights = (1 << np.arange(bw - 1, -1, -1, dtype=np.uint16))
    return (bits.reshape(count, bw).astype(np.uint16) @ weights).astype(np.uint8)


def encode_stream(symbols, num_symbols: int) -> tuple[bytes, int]:
    """Entropy-code a symbol sequence; returns (payload, bit length).

    The first payload byte selects the coding mode: adaptive arithmetic
    coding normally, or plain fixed-width packing in the rare case where the
    adaptive model would exceed it (keeps the stream never materially worse
    than raw packing, for any input).
    """
    syms = np.asarray(list(symbols), dtype=np.int64)
    if syms.size and (syms.min() < 0 or syms.max() >= num_symbols):
        raise DataError(f"symbol outside alphabet [0, {num_symbols})")
    enc = ArithmeticEncoder(num_symbols)
    for s in syms:
        enc.encode(int(s))
    arith_payload, arith_bits = enc.finish()
    raw_payload, raw_bits = _raw_pack(syms.astype(np.uint16), num_symbols)
    if arith_bits <= raw_bits:
        return bytes([_MODE_ARITHMETIC]) + arith_payload, 8 + arith_bits
    return bytes([_MODE_RAW]) + raw_payload, 8 + raw_bits


def decode_stream(payload: bytes, bit_length: int, count: int,
                  num_symbols: int) -> np.ndarray:
    """Recover exactly `count` symbols from an encode_stream payload."""
    if bit_length > 8 * len(payload) or len(payload) < 1 or bit_length < 8:
        raise CorruptionError(
            f"payload truncated: {len(payload)} bytes cannot hold {bit_length} bits"
        )
    mode = payload[0]
    inner = payload[1:]
    if mode == _MODE_RAW:
        if count * _raw_width(num_symbols) > 8 * len(inner):
            raise CorruptionError("raw payload shorter than symbol count requires")
        return _raw_unpack(inner, count, num_symbols)
    if mode != _MODE_ARITHMETIC:
        raise CorruptionError(f"unknown payload mode {mode}")
    dec = ArithmeticDecoder(inner, num_symbols)
    out = np.empty(count, dtype=np.uint8)
    for i in range(count):
        out[i] = dec.decode()
    return out


# ---------------------------------------------------------------------------
# model bitstream


@dataclass
class TensorRecord:
    name_hash: int
    shape: tuple[int, ...]
    scale: float
    symbol_count: int


@dataclass
class ModelBitstream:
    config_text: str
    quant_bits: int
    records: list[TensorRecord]
    payload: bytes
    payload_bits: int

    def to_bytes(self) -> bytes:
        config = self.config_text.encode("utf-8")
        out = bytearray()
        out += MAGIC
        out += struct.pack("<BB", FORMAT_VERSION, self.quant_bits)
        out += struct.pack("<I", len(config))
        out += config
        out += struct.pack("<H", len(self.records))
        for rec in self.records:
            out += struct.pack("<QB", rec.name_hash, len(rec.shape))
            out += struct.pack(f"<{len(rec.shape)}I", *rec.shape)
            out += struct.pack("<fQ", rec.scale, rec.symbol_count)
        out += struct.pack("<Q", self.payload_bits)
        out += self.payload
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelBitstream":
        view = memoryview(data)
        pos = 0

        def read(fmt: str):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(view):
                raise CorruptionError("bitstream ends inside a header field")
            vals = struct.unpack_from(fmt, view, pos)
            pos += size
            return vals

        if bytes(view[:4]) != MAGIC:
            raise FormatError(f"bad magic {bytes(view[:4])!r}, expected {MAGIC!r}")
        pos = 4
        version, quant_bits = read("<BB")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        (config_len,) = read("<I")
        if pos + config_len > len(view):
            raise CorruptionError("bitstream ends inside the config block")
        config_text = bytes(view[pos:pos + config_len]).decode("utf-8")
        pos += config_len
        (tensor_count,) = read("<H")
        records = []
        for _ in range(tensor_count):
            h, rank = read("<QB")
            shape = read(f"<{rank}I")
            scale, symbol_count = read("<fQ")
            records.append(TensorRecord(h, tuple(shape), scale, symbol_count))
        (payload_bits,) = read("<Q")
        payload = bytes(view[pos:])
        return cls(config_text, quant_bits, records, payload, payload_bits)


def quantize_params(store: ParameterStore, bits: int = DEFAULT_BITS
                    ) -> dict[str, QuantizedTensor]:
    return {name: quantize_tensor(t.values, bits) for name, t in store.items()}


def pack_model(store: ParameterStore, cfg: NetworkConfig,
               bits: int = DEFAULT_BITS) -> bytes:
    """Quantize and entropy-code every parameter into one bitstream."""
    quantized = quantize_params(store, bits)
    records = []
    all_symbols = []
    for name, q in quantized.items():
        records.append(TensorRecord(
            name_hash=name_hash(name),
            shape=q.shape,
            scale=q.scale,
            symbol_count=q.symbols.size,
        ))
        all_symbols.append(q.symbols)
    flat = np.concatenate(all_symbols) if all_symbols else np.empty(0, np.uint8)
    payload, payload_bits = encode_stream(flat, alphabet_size(bits))
    stream = ModelBitstream(
        config_text=cfg.to_text(),
        quant_bits=bits,
        records=records,
        payload=payload,
        payload_bits=payload_bits,
    )
    return stream.to_bytes()


def dequantized_store(store: ParameterStore, bits: int = DEFAULT_BITS) -> None:
    """Replace parameter values by their quantize-dequantize round trip."""
    for name, t in store.items():
        t.values = quantize_tensor(t.values, bits).dequantize(bits)


def unpack_model(data: bytes) -> tuple[NetworkConfig, ParameterStore, int]:
    """Decode a bitstream into (config, dequantized parameters, quant bits)."""
    stream = ModelBitstream.from_bytes(data)
    try:
        cfg = NetworkConfig.from_text(stream.config_text)
    except ConfigurationError as exc:
        raise CorruptionError(f"bitstream config invalid: {exc}") from exc
    store, _ = build_parameters(cfg, seed=0)
    names = store.names()
    if len(stream.records) != len(names):
        raise CorruptionError(
            f"bitstream has {len(stream.records)} tensors, config implies {len(names)}"
        )
    total = sum(rec.symbol_count for rec in stream.records)
    symbols = decode_stream(stream.payload, stream.payload_bits, total,
                            alphabet_size(stream.quant_bits))
    pos = 0
    for name, rec in zip(names, stream.records):
        if rec.name_hash != name_hash(name):
            raise CorruptionError(f"name hash mismatch for parameter {name!r}")
        t = store[name]
        if rec.shape != t.values.shape:
            raise CorruptionError(
                f"parameter {name!r}: bitstream shape {rec.shape} != {t.values.shape}"
            )
        if rec.symbol_count != t.size:
            raise CorruptionError(f"parameter {name!r}: symbol count mismatch")
        q = QuantizedTensor(symbols[pos:pos + rec.symbol_count], rec.scale, rec.shape)
        t.values = q.dequantize(stream.quant_bits)
        pos += rec.symbol_count
    return cfg, store, stream.quant_bits


def decode_model(data: bytes) -> InrNetwork:
    cfg, store, _ = unpack_model(data)
    return InrNetwork(cfg, store)
