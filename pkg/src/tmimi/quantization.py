"""Weight/activation quantization schemes, fake-quant transforms, and the
storage accounting used for mixed-precision size comparisons.

Symmetric affine quantization with zero-point fixed at 0 throughout:

* int8 per output channel (matrix row): values in [-127, 127], one scale
  per row.
* int4 group-wise: values in [-7, 7], one scale per contiguous group of
  ``group_size`` weights along each row (a short final group is allowed).
* int8 dynamic activation quantization: per-row (per-token) fake-quant with
  the scale taken from the row's runtime max.

Scale rule (documented and load-bearing): ``scale = ceil16(max_abs / qmax)``
where ``ceil16`` rounds the positive float up to 16 significant bits. With a
16-bit significand every product ``q * scale`` (|q| <= 127) fits in 23 bits
and is therefore exact in float32. That makes dequantized tensors sit
exactly on their integer grid, which gives bit-exact re-quantization
(idempotence) and exact round-trips for on-grid inputs. The upward rounding
keeps ``|w| / scale <= qmax`` so no clipping distortion is introduced, and
the elementwise error bound ``|w - q * scale| <= scale / 2`` still holds.
All-zero channels/groups get scale 1 and values 0.

Value rounding: round-half-away-from-zero, evaluated in float64.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ShapeError, ValidationError
from .numerics import Tensor2D, as_tensor2d

__all__ = [
    "QuantKind",
    "QuantScheme",
    "QuantizedTensor",
    "PrecisionPlan",
    "quantize_per_channel_int8",
    "quantize_group_int4",
    "quantize",
    "dequantize",
    "fake_quant",
    "dynamic_quant_activations",
    "storage_bytes",
    "table2_plans",
    "FP32",
    "INT8",
    "INT4_G32",
]


class QuantKind(Enum):
    FP32 = "fp32"
    INT8_PER_CHANNEL = "int8"
    INT4_GROUPWISE = "int4"
    INT8_DYNAMIC_ACTIVATION = "act8"


@dataclass(frozen=True)
class QuantScheme:
    """A weight-quantization scheme; ``group_size`` applies to int4 only."""

    kind: QuantKind
    group_size: int | None = None

    def __post_init__(self):
        if self.kind is QuantKind.INT4_GROUPWISE:
            if self.group_size is None or self.group_size < 1:
                raise ValidationError("int4 scheme needs group_size >= 1")
        elif self.group_size is not None:
            raise ValidationError(f"group_size is only valid for int4, not {self.kind}")

    @property
    def bits(self) -> int:
        return {QuantKind.FP32: 32, QuantKind.INT8_PER_CHANNEL: 8, QuantKind.INT4_GROUPWISE: 4}[self.kind]

    @property
    def token(self) -> str:
        """Plan-string token: fp32 | int8 | int4g<g>."""
        if self.kind is QuantKind.FP32:
            return "fp32"
        if self.kind is QuantKind.INT8_PER_CHANNEL:
            return "int8"
        if self.kind is QuantKind.INT4_GROUPWISE:
            return f"int4g{self.group_size}"
        raise ValidationError(f"{self.kind} is not a weight scheme")

    @staticmethod
    def from_token(tok: str) -> "QuantScheme":
        tok = tok.strip().lower()
        if tok == "fp32":
            return FP32
        if tok == "int8":
            return INT8
        if tok == "int4":
            return INT4_G32
        m = re.fullmatch(r"int4g(\d+)", tok)
        if m:
            return QuantScheme(QuantKind.INT4_GROUPWISE, int(m.group(1)))
        raise ValidationError(f"unknown scheme token {tok!r}")


FP32 = QuantScheme(QuantKind.FP32)
INT8 = QuantScheme(QuantKind.INT8_PER_CHANNEL)
INT4_G32 = QuantScheme(QuantKind.INT4_GROUPWISE, 32)


@dataclass
class QuantizedTensor:
    """Integer weight payload with per-channel or per-group scales.

    ``values`` is int8 (the int4 scheme also uses an int8 container, clamped
    to [-7, 7]); ``scales`` is float32 with shape (rows,) for per-channel
    int8 and (rows, n_groups) for group-wise int4.
    """

    shape: tuple[int, int]
    values: np.ndarray
    scales: np.ndarray
    scheme: QuantScheme

    def __post_init__(self):
        if tuple(self.values.shape) != tuple(self.shape):
            raise ShapeError(f"values shape {self.values.shape} != {self.shape}")
        qmax = 127 if self.scheme.kind is QuantKind.INT8_PER_CHANNEL else 7
        lo, hi = int(self.values.min(initial=0)), int(self.values.max(initial=0))
        if lo < -qmax or hi > qmax:
            raise ValidationError(f"values outside [-{qmax}, {qmax}]")
        if not (self.scales > 0).all():
            raise ValidationError("scales must be positive")


def _ceil16(x: np.ndarray) -> np.ndarray:
    """Round positive float64 values up to 16 significant bits, as float32."""
    mant, exp = np.frexp(x)
    mant = np.ceil(mant * 65536.0) / 65536.0
    return np.ldexp(mant, exp).astype(np.float32)


def _scales_from_max(max_abs: np.ndarray, qmax: int) -> np.ndarray:
    """ceil16(max_abs / qmax); all-zero channels/groups get scale 1."""
    s = _ceil16(max_abs.astype(np.float64) / qmax)
    return np.where(max_abs == 0, np.float32(1.0), s).astype(np.float32)


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_per_channel_int8(w: Tensor2D) -> QuantizedTensor:
    """Symmetric int8 with one scale per output channel (matrix row)."""
    w = as_tensor2d(w, "w")
    if not np.isfinite(w).all():
        raise ValidationError("quantize: non-finite input")
    max_abs = np.abs(w).max(axis=1)
    scales = _scales_from_max(max_abs, 127)
    q = _round_half_away(w.astype(np.float64) / scales[:, None].astype(np.float64))
    q = np.clip(q, -127, 127).astype(np.int8)
    return QuantizedTensor(w.shape, q, scales, INT8)


def _group_starts(cols: int, group_size: int) -> np.ndarray:
    return np.arange(0, cols, group_size)


def quantize_group_int4(w: Tensor2D, group_size: int = 32) -> QuantizedTensor:
    """Symmetric int4 with one scale per ``group_size`` weights along each
    row. The final group may be short when ``group_size`` does not divide
    the column count."""
    w = as_tensor2d(w, "w")
    if not np.isfinite(w).all():
        raise ValidationError("quantize: non-finite input")
    if group_size < 1:
        raise ValidationError("group_size must be >= 1")
    rows, cols = w.shape
    starts = _group_starts(cols, group_size)
    max_abs = np.maximum.reduceat(np.abs(w), starts, axis=1)
    scales = _scales_from_max(max_abs, 7)
    lens = np.diff(np.append(starts, cols))
    per_elem = np.repeat(scales, lens, axis=1).astype(np.float64)
    q = _round_half_away(w.astype(np.float64) / per_elem)
    q = np.clip(q, -7, 7).astype(np.int8)
    return QuantizedTensor(w.shape, q, scales, QuantScheme(QuantKind.INT4_GROUPWISE, group_size))


def quantize(w: Tensor2D, scheme: QuantScheme) -> QuantizedTensor:
    if scheme.kind is QuantKind.INT8_PER_CHANNEL:
        return quantize_per_channel_int8(w)
    if scheme.kind is QuantKind.INT4_GROUPWISE:
        return quantize_group_int4(w, scheme.group_size)
    raise ValidationError(f"cannot quantize with scheme {scheme}")


def dequantize(q: QuantizedTensor) -> Tensor2D:
    """values * scales; exact in float32 because scales carry <= 16
    significant bits (see module docstring)."""
    vals = q.values.astype(np.float32)
    if q.scheme.kind is QuantKind.INT8_PER_CHANNEL:
        return vals * q.scales[:, None]
    starts = _group_starts(q.shape[1], q.scheme.group_size)
    lens = np.diff(np.append(starts, q.shape[1]))
    return vals * np.repeat(q.scales, lens, axis=1)


def fake_quant(w: Tensor2D, scheme: QuantScheme) -> Tensor2D:
    """Quantize-then-dequantize. FP32 is an exact no-op returning ``w``
    itself, so an all-fp32 plan is bit-identical to no quantization."""
    if scheme.kind is QuantKind.FP32:
        return w
    return dequantize(quantize(w, scheme))


def dynamic_quant_activations(x: Tensor2D) -> Tensor2D:
    """Per-row (per-token) symmetric int8 fake-quant with runtime scales.

    Returns the precision-degraded float32 tensor used downstream; rows of
    zeros pass through unchanged.
    """
    x = as_tensor2d(x, "x")
    if not np.isfinite(x).all():
        raise ValidationError("dynamic_quant_activations: non-finite input")
    max_abs = np.abs(x).max(axis=1)
    scales = _scales_from_max(max_abs, 127)[:, None].astype(np.float64)
    q = np.clip(_round_half_away(x.astype(np.float64) / scales), -127, 127)
    return (q * scales).astype(np.float32)


# ---------------------------------------------------------------------------
# Precision plans
# ---------------------------------------------------------------------------


@dataclass
class PrecisionPlan:
    """Per-layer scheme assignment: one scheme per transformer layer plus
    one for the two-linear upsampling head ("L"). ``activation_quant``
    toggles dynamic int8 activation fake-quant after each quantized matmul;
    it is carried separately from the canonical string (the string grammar
    covers weight schemes only)."""

    transformer_layer_schemes: list[QuantScheme]
    linear_head_scheme: QuantScheme = FP32
    activation_quant: bool = False

    @property
    def num_layers(self) -> int:
        return len(self.transformer_layer_schemes)

    @staticmethod
    def all_fp32(num_layers: int) -> "PrecisionPlan":
        return PrecisionPlan([FP32] * num_layers, FP32)

    @staticmethod
    def uniform(num_layers: int, scheme: QuantScheme) -> "PrecisionPlan":
        return PrecisionPlan([scheme] * num_layers, scheme)

    def validate_for(self, num_layers: int) -> None:
        if self.num_layers != num_layers:
            raise ValidationError(
                f"plan covers {self.num_layers} layers, model has {num_layers}"
            )

    def to_string(self) -> str:
        """Canonical short form, e.g. ``T1-10:int8,T11-12:fp32,L:fp32``."""
        parts = []
        i = 0
        schemes = self.transformer_layer_schemes
        while i < len(schemes):
            j = i
            while j + 1 < len(schemes) and schemes[j + 1] == schemes[i]:
                j += 1
            rng = f"T{i + 1}" if i == j else f"T{i + 1}-{j + 1}"
            parts.append(f"{rng}:{schemes[i].token}")
            i = j + 1
        parts.append(f"L:{self.linear_head_scheme.token}")
        return ",".join(parts)

    @staticmethod
    def from_string(text: str, activation_quant: bool = False) -> "PrecisionPlan":
        """Parse the canonical grammar. Layer ranges must cover 1..N exactly
        once; the L entry is required."""
        layer_schemes: dict[int, QuantScheme] = {}
        head: QuantScheme | None = None
        for part in text.split(","):
            part = part.strip()
            if not part:
                raise ValidationError("empty plan entry")
            m = re.fullmatch(r"[Ll]:(.+)", part)
            if m:
                if head is not None:
                    raise ValidationError("duplicate L entry")
                head = QuantScheme.from_token(m.group(1))
                continue
            m = re.fullmatch(r"[Tt](\d+)(?:-(\d+))?:(.+)", part)
            if not m:
                raise ValidationError(f"bad plan entry {part!r}")
            a = int(m.group(1))
            b = int(m.group(2)) if m.group(2) else a
            if a < 1 or b < a:
                raise ValidationError(f"bad layer range in {part!r}")
            scheme = QuantScheme.from_token(m.group(3))
            for layer in range(a, b + 1):
                if layer in layer_schemes:
                    raise ValidationError(f"layer {layer} assigned twice")
                layer_schemes[layer] = scheme
        if head is None:
            raise ValidationError("plan is missing the L entry")
        if not layer_schemes:
            raise ValidationError("plan assigns no transformer layers")
        n = max(layer_schemes)
        missing = [i for i in range(1, n + 1) if i not in layer_schemes]
        if missing:
            raise ValidationError(f"plan leaves layers {missing} unassigned")
        return PrecisionPlan(
            [layer_schemes[i] for i in range(1, n + 1)], head, activation_quant
        )


def table2_plans(num_layers: int = 12) -> list[tuple[str, PrecisionPlan]]:
    """The six built-in mixed-precision ladder configurations, ordered by
    increasing full-precision tail: all-int4, all-int8, then int8 bodies
    with 0..3 trailing fp32 transformer layers and an fp32 head."""
    if num_layers < 4:
        raise ValidationError("ladder needs at least 4 layers")
    plans = [
        PrecisionPlan.uniform(num_layers, INT4_G32),
        PrecisionPlan.uniform(num_layers, INT8),
    ]
    for tail in (0, 1, 2, 3):
        schemes = [INT8] * (num_layers - tail) + [FP32] * tail
        plans.append(PrecisionPlan(schemes, FP32))
    return [(p.to_string(), p) for p in plans]


# ---------------------------------------------------------------------------
# Storage accounting
# ---------------------------------------------------------------------------


def _layer_matrix_shapes(config) -> list[tuple[int, int]]:
    d, f = config.model_dim, config.ffn_dim
    return [(d, d)] * 4 + [(f, d), (d, f)]


def _head_matrix_shapes(config) -> list[tuple[int, int]]:
    return [
        (config.head_hidden_dim, config.model_dim),
        (config.samples_per_frame, config.head_hidden_dim),
    ]


def _scale_count(shape: tuple[int, int], scheme: QuantScheme) -> int:
    rows, cols = shape
    if scheme.kind is QuantKind.INT8_PER_CHANNEL:
        return rows
    if scheme.kind is QuantKind.INT4_GROUPWISE:
        return rows * ((cols + scheme.group_size - 1) // scheme.group_size)
    return 0


def storage_bytes(plan: PrecisionPlan, config, include_scales: bool = False) -> int:
    """Decoder weight bytes under ``plan``, in the ladder-table convention:
    every parameter of a group (layer norms and biases included) is counted
    at the group's bit width, token embedding tables are excluded, and scale
    overhead is excluded unless ``include_scales``. Divide by 10**6 for the
    reported MB figures.
    """
    plan.validate_for(config.num_layers)
    d = config.model_dim
    total_bits = 0
    scale_floats = 0
    for scheme in plan.transformer_layer_schemes:
        params = sum(r * c for r, c in _layer_matrix_shapes(config)) + 4 * d
        total_bits += params * scheme.bits
        scale_floats += sum(_scale_count(s, scheme) for s in _layer_matrix_shapes(config))
    head = plan.linear_head_scheme
    # Final norm is accounted with the head group.
    head_params = (
        sum(r * c for r, c in _head_matrix_shapes(config))
        + config.head_hidden_dim
        + 2 * d
    )
    total_bits += head_params * head.bits
    scale_floats += sum(_scale_count(s, head) for s in _head_matrix_shapes(config))
    total = (total_bits + 7) // 8
    if include_scales:
        total += 4 * scale_floats
    return total
