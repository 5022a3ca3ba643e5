"""Portable binary containers: decoder weights ("TMIM") and codec frames
("TMFR"), plus the deterministic weight initializer.

Weight container v1, all little-endian (full byte layout in
docs/weights-format.md):

    magic "TMIM" | u32 version | config block | plan string | act-quant u8
    | u32 tensor count | tensor table | payload | trailing u32 CRC32

The trailing CRC32 covers every preceding byte. Tensors governed by a
non-fp32 plan scheme are stored as integers plus float32 scales; int4
values are packed two per byte, low nibble first. Everything else
(embeddings, norms, biases) is stored float32, so a save/load round trip
is bit-identical. Integer tensors stay quantized in memory after load and
are dequantized lazily when a forward pass prepares the weights.

Frames container: magic "TMFR" | u32 frame count | u32 variant
(0 = tokens as u16 per codebook, 1 = latents as f32 per model dim) |
payload. Per-frame width comes from the decoder config at read time.
"""

from __future__ import annotations

import math
import struct
import zlib

import numpy as np

from . import model as md
from . import quantization as qz
from .errors import (
    BadMagicError,
    ChecksumError,
    FormatError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
)
from .numerics import Rng

__all__ = [
    "FORMAT_VERSION",
    "save",
    "load",
    "init_random",
    "write_frames",
    "read_frames",
    "random_frames",
]

WEIGHT_MAGIC = b"TMIM"
FRAMES_MAGIC = b"TMFR"
FORMAT_VERSION = 1

_DTYPE_F32, _DTYPE_I8, _DTYPE_I4 = 0, 1, 2

_CONFIG_FIELDS = [
    "num_layers", "model_dim", "ffn_dim", "num_heads", "attention_window",
    "head_hidden_dim", "samples_per_frame", "sample_rate",
]  # u32 each; then frame_rate f64, num_codebooks u32, codebook_size u32


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError("string field too long")
    return struct.pack("<H", len(raw)) + raw


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError("file ends before declared contents")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        n = struct.unpack("<H", self.take(2))[0]
        return self.take(n).decode("utf-8")


# ---------------------------------------------------------------------------
# int4 nibble packing (low nibble first, two's complement nibbles)
# ---------------------------------------------------------------------------


def pack_int4(values: np.ndarray) -> bytes:
    flat = values.astype(np.int8).reshape(-1)
    if flat.size % 2:
        flat = np.append(flat, np.int8(0))
    u = (flat.astype(np.uint8)) & 0x0F
    return (u[0::2] | (u[1::2] << 4)).tobytes()


def unpack_int4(raw: bytes, count: int) -> np.ndarray:
    b = np.frombuffer(raw, dtype=np.uint8)
    nibbles = np.empty(b.size * 2, dtype=np.uint8)
    nibbles[0::2] = b & 0x0F
    nibbles[1::2] = b >> 4
    vals = ((nibbles.astype(np.int16) ^ 8) - 8).astype(np.int8)
    return vals[:count]


# ---------------------------------------------------------------------------
# Save
# ---------------------------------------------------------------------------


def _scheme_for_role(role: str, plan: qz.PrecisionPlan) -> qz.QuantScheme:
    if role.startswith("layer"):
        return plan.transformer_layer_schemes[int(role[5:])]
    if role == "head":
        return plan.linear_head_scheme
    return qz.FP32


def _encode_tensor(entry, scheme: qz.QuantScheme):
    """Returns (dtype_code, values_bytes, scales_array_or_None, group_size)."""
    if isinstance(entry, qz.QuantizedTensor):
        qt = entry
        if qt.scheme != scheme:
            raise ValidationError(
                f"stored tensor scheme {qt.scheme.token} conflicts with plan {scheme.token}"
            )
    elif scheme.kind is qz.QuantKind.FP32:
        arr = np.ascontiguousarray(entry, dtype=np.float32)
        return _DTYPE_F32, arr.astype("<f4").tobytes(), None, 0
    else:
        qt = qz.quantize(np.asarray(entry, dtype=np.float32), scheme)
    if qt.scheme.kind is qz.QuantKind.INT8_PER_CHANNEL:
        return _DTYPE_I8, qt.values.tobytes(), qt.scales, 0
    return _DTYPE_I4, pack_int4(qt.values), qt.scales, qt.scheme.group_size


def save(weights: md.DecoderWeights, plan: qz.PrecisionPlan,
         config: md.DecoderConfig, path) -> None:
    """Serialize the (weights, plan, config) triple. Consistency is checked
    before any byte is written."""
    if weights.config != config:
        raise ValidationError("weights were built for a different config")
    plan.validate_for(config.num_layers)
    inventory = md.tensor_inventory(config)
    tensors = dict(md.named_tensors(weights))

    entries = []
    payload_parts = []
    offset = 0
    for name, shape, role in inventory:
        entry = tensors[name]
        if tuple(entry.shape) != tuple(shape):
            raise ValidationError(f"tensor {name} has shape {entry.shape}, expected {shape}")
        dtype_code, values_bytes, scales, group_size = _encode_tensor(
            entry, _scheme_for_role(role, plan)
        )
        values_off, values_len = offset, len(values_bytes)
        payload_parts.append(values_bytes)
        offset += values_len
        if scales is not None:
            scale_bytes = np.ascontiguousarray(scales, dtype="<f4").tobytes()
            scales_off, scales_len = offset, len(scale_bytes)
            n_scales = scales.size
            payload_parts.append(scale_bytes)
            offset += scales_len
        else:
            scales_off = scales_len = n_scales = 0
        ndim = len(shape)
        rows = shape[0]
        cols = shape[1] if ndim == 2 else 1
        entries.append((name, dtype_code, ndim, rows, cols, group_size,
                        n_scales, values_off, values_len, scales_off, scales_len))

    out = bytearray()
    out += WEIGHT_MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    for f in _CONFIG_FIELDS:
        out += struct.pack("<I", getattr(config, f))
    out += struct.pack("<d", config.frame_rate)
    out += struct.pack("<I", config.num_codebooks)
    out += struct.pack("<I", config.codebook_size)
    out += _pack_str(config.activation)
    out += _pack_str(plan.to_string())
    out += struct.pack("<B", 1 if plan.activation_quant else 0)
    out += struct.pack("<I", len(entries))
    for (name, dtype_code, ndim, rows, cols, group_size, n_scales,
         values_off, values_len, scales_off, scales_len) in entries:
        out += _pack_str(name)
        out += struct.pack("<BBIIII", dtype_code, ndim, rows, cols, group_size, n_scales)
        out += struct.pack("<QQQQ", values_off, values_len, scales_off, scales_len)
    for part in payload_parts:
        out += part
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)

    with open(path, "wb") as fh:
        fh.write(out)


# ---------------------------------------------------------------------------
# Load
# ---------------------------------------------------------------------------


def _decode_tensor(name, dtype_code, ndim, rows, cols, group_size, n_scales,
                   values, scale_bytes, scheme: qz.QuantScheme):
    shape = (rows, cols) if ndim == 2 else (rows,)
    count = rows * cols if ndim == 2 else rows
    if dtype_code == _DTYPE_F32:
        if scheme.kind is not qz.QuantKind.FP32:
            raise FormatError(f"tensor {name}: dtype f32 conflicts with plan {scheme.token}")
        if len(values) != 4 * count:
            raise FormatError(f"tensor {name}: payload length mismatch")
        arr = np.frombuffer(values, dtype="<f4").astype(np.float32).reshape(shape)
        return arr
    if ndim != 2:
        raise FormatError(f"tensor {name}: quantized tensors must be 2-D")
    if dtype_code == _DTYPE_I8:
        if scheme.kind is not qz.QuantKind.INT8_PER_CHANNEL:
            raise FormatError(f"tensor {name}: dtype i8 conflicts with plan {scheme.token}")
        if len(values) != count or n_scales != rows:
            raise FormatError(f"tensor {name}: payload length mismatch")
        vals = np.frombuffer(values, dtype=np.int8).reshape(rows, cols).copy()
        scales = np.frombuffer(scale_bytes, dtype="<f4").astype(np.float32)
        return qz.QuantizedTensor((rows, cols), vals, scales, qz.INT8)
    if dtype_code == _DTYPE_I4:
        if scheme.kind is not qz.QuantKind.INT4_GROUPWISE or scheme.group_size != group_size:
            raise FormatError(f"tensor {name}: dtype i4g{group_size} conflicts with plan {scheme.token}")
        n_groups = (cols + group_size - 1) // group_size
        if len(values) != (count + 1) // 2 or n_scales != rows * n_groups:
            raise FormatError(f"tensor {name}: payload length mismatch")
        vals = unpack_int4(values, count).reshape(rows, cols)
        scales = np.frombuffer(scale_bytes, dtype="<f4").astype(np.float32).reshape(rows, n_groups)
        return qz.QuantizedTensor((rows, cols), vals, scales, scheme)
    raise FormatError(f"tensor {name}: unknown dtype code {dtype_code}")


def load(path):
    """Load and validate a weight container.

    Returns ``(weights, plan, config)``. Failure modes are distinct:
    BadMagicError, UnsupportedVersionError, ChecksumError (any corrupted
    byte), TruncatedFileError, FormatError (structural inconsistency).
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise TruncatedFileError("file shorter than magic")
    if data[:4] != WEIGHT_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFileError("file shorter than fixed header")
    version = struct.unpack("<I", data[4:8])[0]
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    (crc_stored,) = struct.unpack("<I", data[-4:])
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != crc_stored:
        raise ChecksumError("CRC32 mismatch")

    r = _Reader(data[:-4])
    r.pos = 8
    cfg_kwargs = {f: r.u32() for f in _CONFIG_FIELDS}
    cfg_kwargs["frame_rate"] = r.f64()
    cfg_kwargs["num_codebooks"] = r.u32()
    cfg_kwargs["codebook_size"] = r.u32()
    cfg_kwargs["activation"] = r.string()
    try:
        config = md.DecoderConfig(**cfg_kwargs)
    except ValidationError as e:
        raise FormatError(f"invalid config block: {e}") from e
    plan_str = r.string()
    act_quant = bool(r.u8())
    try:
        plan = qz.PrecisionPlan.from_string(plan_str, activation_quant=act_quant)
        plan.validate_for(config.num_layers)
    except ValidationError as e:
        raise FormatError(f"invalid plan string: {e}") from e

    n_tensors = r.u32()
    table = []
    for _ in range(n_tensors):
        name = r.string()
        dtype_code, ndim = r.u8(), r.u8()
        rows, cols, group_size, n_scales = r.u32(), r.u32(), r.u32(), r.u32()
        offs = (r.u64(), r.u64(), r.u64(), r.u64())
        table.append((name, dtype_code, ndim, rows, cols, group_size, n_scales, offs))
    payload = r.data[r.pos :]

    inventory = {name: (shape, role) for name, shape, role in md.tensor_inventory(config)}
    if len(table) != len(inventory):
        raise FormatError(f"expected {len(inventory)} tensors, file has {len(table)}")
    tensors = {}
    for name, dtype_code, ndim, rows, cols, group_size, n_scales, offs in table:
        if name not in inventory:
            raise FormatError(f"unexpected tensor {name!r}")
        if name in tensors:
            raise FormatError(f"duplicate tensor {name!r}")
        shape, role = inventory[name]
        got = (rows, cols) if ndim == 2 else (rows,)
        if got != tuple(shape):
            raise FormatError(f"tensor {name}: shape {got} != expected {tuple(shape)}")
        values_off, values_len, scales_off, scales_len = offs
        if values_off + values_len > len(payload) or scales_off + scales_len > len(payload):
            raise TruncatedFileError(f"tensor {name}: payload range out of bounds")
        values = payload[values_off : values_off + values_len]
        scale_bytes = payload[scales_off : scales_off + scales_len]
        tensors[name] = _decode_tensor(
            name, dtype_code, ndim, rows, cols, group_size, n_scales,
            values, scale_bytes, _scheme_for_role(role, plan),
        )
    weights = md.weights_from_named(config, tensors)
    return weights, plan, config


# ---------------------------------------------------------------------------
# Deterministic initialization
# ---------------------------------------------------------------------------


def init_random(config: md.DecoderConfig, seed: int) -> md.DecoderWeights:
    """Scaled-uniform weights fully determined by ``seed`` (one splitmix64
    stream, tensors drawn in canonical inventory order).

    Matrices (out, in) draw from U(-b, b) with b = sqrt(1/fan_in), fan_in
    being the input width; embedding rows use fan_in = model_dim. Norm
    gammas are 1 (bound 1 with fan_in 1), betas and biases 0; none of
    these consume draws.
    """
    rng = Rng(seed)
    tensors = {}
    for name, shape, role in md.tensor_inventory(config):
        if role == "gamma":
            tensors[name] = np.ones(shape, dtype=np.float32)
        elif role == "vector":
            tensors[name] = np.zeros(shape, dtype=np.float32)
        else:
            fan_in = config.model_dim if role == "embed" else shape[1]
            bound = math.sqrt(1.0 / fan_in)
            n = int(np.prod(shape))
            tensors[name] = rng.next_uniform(n, -bound, bound).reshape(shape)
    return md.weights_from_named(config, tensors)


# ---------------------------------------------------------------------------
# Frames container
# ---------------------------------------------------------------------------


def write_frames(path, frames, config: md.DecoderConfig) -> None:
    """Write a TMFR file. All frames must be the same variant."""
    if len(frames) == 0:
        raise ValidationError("need at least one frame")
    token_variant = frames[0].tokens is not None
    out = bytearray()
    out += FRAMES_MAGIC
    out += struct.pack("<I", len(frames))
    out += struct.pack("<I", 0 if token_variant else 1)
    for f in frames:
        if (f.tokens is not None) != token_variant:
            raise ValidationError("mixed token/latent frames in one file")
        if token_variant:
            toks = np.asarray(f.tokens)
            if toks.shape != (config.num_codebooks,):
                raise ValidationError("frame token count != num_codebooks")
            if (toks < 0).any() or (toks >= min(config.codebook_size, 1 << 16)).any():
                raise ValidationError("token out of range for u16 storage")
            out += toks.astype("<u2").tobytes()
        else:
            lat = np.asarray(f.latent, dtype=np.float32).reshape(-1)
            if lat.shape[0] != config.model_dim:
                raise ValidationError("frame latent length != model_dim")
            out += lat.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(out)


def read_frames(path, config: md.DecoderConfig):
    """Read a TMFR file into FrameInput objects, validating sizes and
    token ranges against ``config``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4:
        raise TruncatedFileError("file shorter than magic")
    if data[:4] != FRAMES_MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFileError("file shorter than frames header")
    count, variant = struct.unpack("<II", data[4:12])
    if count == 0:
        raise FormatError("frames file declares zero frames")
    body = data[12:]
    if variant == 0:
        frame_bytes = 2 * config.num_codebooks
    elif variant == 1:
        frame_bytes = 4 * config.model_dim
    else:
        raise FormatError(f"unknown frames variant {variant}")
    if len(body) < count * frame_bytes:
        raise TruncatedFileError("frames payload shorter than declared")
    if len(body) > count * frame_bytes:
        raise FormatError("frames payload longer than declared")
    frames = []
    if variant == 0:
        toks = np.frombuffer(body, dtype="<u2").reshape(count, config.num_codebooks)
        if (toks >= config.codebook_size).any():
            raise ValidationError("token index out of range for config")
        for row in toks:
            frames.append(md.FrameInput.from_tokens(row.astype(np.int64)))
    else:
        lats = np.frombuffer(body, dtype="<f4").reshape(count, config.model_dim)
        for row in lats:
            frames.append(md.FrameInput.from_latent(row.astype(np.float32)))
    return frames


def random_frames(config: md.DecoderConfig, count: int, seed: int,
                  variant: str = "tokens"):
    """Deterministic random frames for benchmarks and sweeps."""
    if count < 1:
        raise ValidationError("count must be >= 1")
    rng = Rng(seed)
    if variant == "tokens":
        toks = rng.next_ints(count * config.num_codebooks, config.codebook_size)
        toks = toks.reshape(count, config.num_codebooks)
        return [md.FrameInput.from_tokens(row) for row in toks]
    if variant == "latents":
        lats = rng.next_uniform(count * config.model_dim, -1.0, 1.0)
        lats = lats.reshape(count, config.model_dim)
        return [md.FrameInput.from_latent(row) for row in lats]
    raise ValidationError(f"unknown variant {variant!r}")
