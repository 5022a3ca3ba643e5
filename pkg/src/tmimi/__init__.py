"""Streaming transformer-only neural audio codec decoder.

Library surface:

* :mod:`tmimi.numerics` - float32 tensor kernels and the deterministic PRNG
* :mod:`tmimi.quantization` - int8/int4 schemes, precision plans, storage accounting
* :mod:`tmimi.model` - decoder graph, presets, parameter/FLOP accounting
* :mod:`tmimi.streaming` - incremental per-frame decoding with KV ring buffers
* :mod:`tmimi.deconv` - transposed-convolution baseline head
* :mod:`tmimi.weightstore` - weight/frames containers and the seeded initializer
* :mod:`tmimi.metrics` - SI-SDR, multi-scale mel L1, silence RMS
* :mod:`tmimi.bench` - latency harness and precision sweep
* :mod:`tmimi.cli` - `tmimi` command-line tool
"""

from .errors import (
    BadMagicError,
    ChecksumError,
    FormatError,
    ShapeError,
    TmimiError,
    TruncatedFileError,
    UnsupportedVersionError,
    ValidationError,
    WeightFileError,
)
from .model import (
    PRESETS,
    DecoderConfig,
    DecoderWeights,
    FrameInput,
    embed_frame,
    embedding_param_count,
    flops_per_frame,
    forward_offline,
    head_flops_per_frame,
    param_count,
    preset_config,
)
from .quantization import (
    FP32,
    INT4_G32,
    INT8,
    PrecisionPlan,
    QuantizedTensor,
    QuantKind,
    QuantScheme,
    dequantize,
    dynamic_quant_activations,
    fake_quant,
    quantize_group_int4,
    quantize_per_channel_int8,
    storage_bytes,
    table2_plans,
)
from .streaming import StreamState, decode_frames, new_stream, reset, step, step_hidden
from .weightstore import init_random, load, random_frames, read_frames, save, write_frames

__version__ = "0.1.0"
