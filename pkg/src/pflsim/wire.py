"""Update serialization, NF4 blockwise quantization, and the communication ledger.

Byte accounting is parameter-exact: a message carrying ``n`` parameters at
``b`` bits per parameter costs ``ceil(n * b / 8)`` bytes,
computed with exact integer arithmetic (``b`` may be fractional: NF4 costs
``4 + 32/64 = 4.5`` bits per parameter because each block of 64 codes shares
one FP32 absmax scale).  Ledger totals are exact integers; gigabytes are
display-only, decimal (1e9) by default with a binary (2**30) option.

The NF4 codebook contains 16 values in [-1, 1]: standard-normal quantiles at
8 evenly spaced probabilities from ``NF4_OFFSET`` down to 0.5 (exclusive),
the mirrored 7 quantiles for the negative side, and an exact zero, all
normalized by the largest magnitude so the extremes are exactly -1 and 1.
The generated values are frozen below as constants and pinned by tests, so
the codec is bit-stable across platforms.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, EncodeError

FULL_PRECISION_BITS = 32.0
NF4_BITS = 4.5
NF4_BLOCK_SIZE = 64
NF4_OFFSET = 0.9677083

# Output of generate_nf4_codebook(NF4_OFFSET); regenerated and compared by tests.
NF4_CODEBOOK = (
    -1.0,
    -0.6961928906037198,
    -0.525073038695229,
    -0.39491749069930976,
    -0.2844413576181077,
    -0.18477343519288877,
    -0.09104999214427932,
    0.0,
    0.07958032909416939,
    0.1609301727049361,
    0.2461122939299359,
    0.337915193521655,
    0.44070980241319,
    0.5626169700752371,
    0.7229567278928822,
    1.0,
)
NF4_ZERO_CODE = NF4_CODEBOOK.index(0.0)

_CODEBOOK_ARR = np.array(NF4_CODEBOOK, dtype=np.float64)


def inverse_normal_cdf(p: float) -> float:
    """Quantile function of the standard normal via Newton iteration on erfc."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    z = 0.0
    for _ in range(100):
        cdf = 0.5 * math.erfc(-z / math.sqrt(2.0))
        pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        step = (cdf - p) / pdf
        z -= step
        if abs(step) < 1e-15 * max(1.0, abs(z)):
            break
    return z


def generate_nf4_codebook(offset: float = NF4_OFFSET) -> np.ndarray:
    """Build the 16-value normal-float codebook by the documented procedure."""
    pos = [inverse_normal_cdf(p) for p in np.linspace(offset, 0.5, 9)[:-1]]
    neg = [-inverse_normal_cdf(p) for p in np.linspace(offset, 0.5, 8)[:-1]]
    values = sorted(neg + [0.0] + pos)
    top = max(abs(v) for v in values)
    return np.array([v / top for v in values], dtype=np.float64)


def nf4_codebook() -> np.ndarray:
    """The frozen 16-value codebook, ascending."""
    return _CODEBOOK_ARR.copy()


@dataclass(frozen=True)
class Nf4Block:
    """One quantized block: FP32 absmax scale plus up to 64 4-bit codes."""

    scale: float
    codes: np.ndarray

    def dequantize(self) -> np.ndarray:
        return self.scale * _CODEBOOK_ARR[self.codes]


def nf4_quantize(values, block_size: int = NF4_BLOCK_SIZE) -> List[Nf4Block]:
    """Blockwise absmax quantization onto the NF4 codebook.

    Per block the scale is ``max |v|`` rounded to FP32 and each value maps to
    the nearest codebook entry of ``v / scale`` (ties to the lower index).
    An all-zero block gets scale 0 and the zero code, which round-trips
    exactly.  Raises EncodeError on non-finite input.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if not np.all(np.isfinite(v)):
        raise EncodeError("cannot quantize non-finite values")
    if block_size < 1:
        raise ConfigError(f"block_size must be >= 1, got {block_size}")
    blocks: List[Nf4Block] = []
    for start in range(0, v.size, block_size):
        chunk = v[start : start + block_size]
        scale = float(np.float32(np.abs(chunk).max()))
        if scale == 0.0:
            codes = np.full(chunk.size, NF4_ZERO_CODE, dtype=np.uint8)
        else:
            t = chunk / scale
            codes = np.abs(t[:, None] - _CODEBOOK_ARR[None, :]).argmin(axis=1).astype(np.uint8)
        blocks.append(Nf4Block(scale=scale, codes=codes))
    return blocks


def nf4_dequantize(blocks: Sequence[Nf4Block]) -> np.ndarray:
    """Concatenated dequantized values of a block sequence."""
    if not blocks:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate([b.dequantize() for b in blocks])


def nf4_roundtrip(values, block_size: int = NF4_BLOCK_SIZE) -> np.ndarray:
    """Quantize-then-dequantize, preserving the input shape."""
    v = np.asarray(values, dtype=np.float64)
    out = nf4_dequantize(nf4_quantize(v, block_size))
    return out.reshape(v.shape)


def nf4_max_gap() -> float:
    """Largest spacing between adjacent codebook values (error-bound helper)."""
    return float(np.diff(_CODEBOOK_ARR).max())


def pack_nf4(blocks: Sequence[Nf4Block], block_size: int = NF4_BLOCK_SIZE) -> bytes:
    """Serialize blocks: FP32 scale + two codes per byte (low nibble first)."""
    out = bytearray()
    for b in blocks:
        out += struct.pack("<f", b.scale)
        codes = b.codes
        if codes.size < block_size:
            codes = np.concatenate(
                [codes, np.full(block_size - codes.size, NF4_ZERO_CODE, dtype=np.uint8)]
            )
        packed = (codes[0::2] & 0x0F) | ((codes[1::2] & 0x0F) << 4)
        out += packed.tobytes()
    return bytes(out)


def unpack_nf4(data: bytes, count: int, block_size: int = NF4_BLOCK_SIZE) -> List[Nf4Block]:
    """Inverse of pack_nf4 for ``count`` quantized values."""
    per_block = 4 + block_size // 2
    n_blocks = math.ceil(count / block_size) if count else 0
    if len(data) < n_blocks * per_block:
        raise EncodeError("truncated NF4 payload")
    blocks: List[Nf4Block] = []
    for i in range(n_blocks):
        chunk = data[i * per_block : (i + 1) * per_block]
        (scale,) = struct.unpack("<f", chunk[:4])
        packed = np.frombuffer(chunk[4:], dtype=np.uint8)
        codes = np.empty(block_size, dtype=np.uint8)
        codes[0::2] = packed & 0x0F
        codes[1::2] = packed >> 4
        remaining = count - i * block_size
        blocks.append(Nf4Block(scale=float(scale), codes=codes[: min(block_size, remaining)]))
    return blocks


def _bits_fraction(bits_per_param: float) -> Fraction:
    frac = Fraction(bits_per_param)
    if frac <= 0:
        raise ConfigError(f"bits per parameter must be > 0, got {bits_per_param}")
    return frac


def payload_bytes(payload: Sequence[Tuple[int, float]]) -> int:
    """Exact message size: ``ceil(sum(count * bits) / 8)`` bytes."""
    total_bits = Fraction(0)
    for count, bits in payload:
        if count < 0:
            raise ConfigError(f"parameter count must be >= 0, got {count}")
        total_bits += count * _bits_fraction(bits)
    return int(math.ceil(total_bits / 8))


def message_bytes(lora_params: int, base_params: int, bits_per_param: float) -> int:
    """Size of one update stream carrying LoRA plus directly-trained parameters."""
    return payload_bytes(((lora_params, bits_per_param), (base_params, bits_per_param)))


@dataclass(frozen=True)
class UpdateMessage:
    """One directed transmission of a parameter update.

    ``payload`` lists ``(parameter_count, bits_per_param)`` pairs per
    precision class; ``byte_size`` is the exact ceiling at the byte boundary.
    """

    round: int
    direction: str  # "up" (client -> server) or "down" (server -> client)
    sender: str
    receiver: str
    payload: Tuple[Tuple[int, float], ...]

    def __post_init__(self):
        if self.direction not in ("up", "down"):
            raise ConfigError(f"direction must be 'up' or 'down', got {self.direction!r}")

    @property
    def byte_size(self) -> int:
        return payload_bytes(self.payload)


class CommLedger:
    """Append-only log of every server<->client transmission during training.

    The initial distribution of the pre-trained model is, by convention, not
    logged; protocols only record the per-round broadcast and upload streams.
    """

    def __init__(self):
        self.entries: List[UpdateMessage] = []

    def log(self, message: UpdateMessage) -> None:
        self.entries.append(message)

    def __len__(self) -> int:
        return len(self.entries)

    def total_bytes(self) -> int:
        return sum(m.byte_size for m in self.entries)

    def total_gb(self, convention: str = "decimal") -> float:
        return bytes_to_gb(self.total_bytes(), convention)

    def to_csv(self) -> str:
        lines = ["round,direction,sender,receiver,bytes"]
        for m in self.entries:
            lines.append(f"{m.round},{m.direction},{m.sender},{m.receiver},{m.byte_size}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_csv())

    def summary(self, convention: str = "decimal") -> Dict:
        total = self.total_bytes()
        return {
            "messages": len(self.entries),
            "bytes_total": total,
            "gigabytes": bytes_to_gb(total, convention),
            "gb_convention": convention,
        }


def bytes_to_gb(n_bytes: int, convention: str = "decimal") -> float:
    """Bytes to gigabytes: decimal (1e9) by default, binary (2**30) optional."""
    if convention == "decimal":
        return n_bytes / 1e9
    if convention == "binary":
        return n_bytes / 2**30
    raise ConfigError(f"unknown GB convention {convention!r}")


def ledger_total(ledger: CommLedger, convention: str = "decimal") -> Tuple[int, float]:
    """Exact byte total and its GB rendering."""
    total = ledger.total_bytes()
    return total, bytes_to_gb(total, convention)


# ---------------------------------------------------------------------------
# Update payload framing
# ---------------------------------------------------------------------------

_MAGIC = b"PFLU"
_VERSION = 1
_HEADER = struct.Struct("<4sHBBII")  # magic, version, flags, direction, round, tensors
_DIRECTION_CODE = {"down": 0, "up": 1}
_DIRECTION_NAME = {0: "down", 1: "up"}
_DTYPE_F64 = 0
_DTYPE_NF4 = 1


def encode_update(
    tensors: Dict[str, np.ndarray],
    *,
    round_index: int,
    direction: str,
    quantize: bool = False,
) -> bytes:
    """Frame named tensors into the documented binary update payload.

    16-byte header (magic, version, flags, direction, round, tensor count),
    then a name table entry per tensor (name, ndim, dims, dtype), then the
    data segments: little-endian float64 row-major, or packed NF4 blocks.
    """
    if direction not in _DIRECTION_CODE:
        raise ConfigError(f"direction must be 'up' or 'down', got {direction!r}")
    flags = 1 if quantize else 0
    head = _HEADER.pack(
        _MAGIC, _VERSION, flags, _DIRECTION_CODE[direction], round_index, len(tensors)
    )
    table = bytearray()
    data = bytearray()
    for name, arr in tensors.items():
        a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
        raw = name.encode("utf-8")
        table += struct.pack("<H", len(raw)) + raw
        table += struct.pack("<B", a.ndim) + b"".join(struct.pack("<I", d) for d in a.shape)
        if quantize:
            table += struct.pack("<B", _DTYPE_NF4)
            data += pack_nf4(nf4_quantize(a.ravel()))
        else:
            table += struct.pack("<B", _DTYPE_F64)
            data += a.astype("<f8").tobytes()
    return head + bytes(table) + bytes(data)


def decode_update(payload: bytes) -> Tuple[int, str, Dict[str, np.ndarray]]:
    """Inverse of encode_update; quantized tensors come back dequantized."""
    if len(payload) < _HEADER.size:
        raise EncodeError("payload shorter than header")
    magic, version, _flags, direction, round_index, n_tensors = _HEADER.unpack_from(payload, 0)
    if magic != _MAGIC:
        raise EncodeError("bad magic")
    if version != _VERSION:
        raise EncodeError(f"unsupported payload version {version}")
    off = _HEADER.size
    entries = []
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", payload, off)
        off += 1
        shape = tuple(struct.unpack_from(f"<{ndim}I", payload, off))
        off += 4 * ndim
        (dtype,) = struct.unpack_from("<B", payload, off)
        off += 1
        entries.append((name, shape, dtype))
    tensors: Dict[str, np.ndarray] = {}
    for name, shape, dtype in entries:
        count = int(np.prod(shape)) if shape else 1
        if dtype == _DTYPE_F64:
            nbytes = count * 8
            arr = np.frombuffer(payload[off : off + nbytes], dtype="<f8").reshape(shape)
            off += nbytes
        elif dtype == _DTYPE_NF4:
            n_blocks = math.ceil(count / NF4_BLOCK_SIZE) if count else 0
            nbytes = n_blocks * (4 + NF4_BLOCK_SIZE // 2)
            arr = nf4_dequantize(unpack_nf4(payload[off : off + nbytes], count)).reshape(shape)
            off += nbytes
        else:
            raise EncodeError(f"unknown tensor dtype code {dtype}")
        tensors[name] = arr.copy()
    return round_index, _DIRECTION_NAME[direction], tensors
