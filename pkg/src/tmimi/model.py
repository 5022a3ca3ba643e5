"""Transformer-only streaming decoder graph.

Pipeline per frame: codec tokens (or a pre-embedded latent) -> summed
codebook embeddings -> N pre-norm transformer layers with fixed-window
causal self-attention -> final layer norm -> two-linear upsampling head
(first linear has a bias, second does not) -> ``samples_per_frame`` raw
waveform samples. Frame outputs are concatenated directly; there is no
overlap-add.

Architecture choices that the streaming contract depends on:

* pre-norm residual layout, learned layer-norm affine;
* no positional encoding (frame position is implicit in the causal window);
* attention window W counts the current frame, i.e. frame t attends to
  frames max(0, t - W + 1) .. t;
* FFN is linear -> tanh-GELU -> linear, no biases on attention or FFN
  projections;
* no nonlinearity between the two head linears (a low-rank factorized
  upsampling map).

Weight matrices are stored (out_features, in_features) so per-channel
quantization scales attach to output channels (rows). The forward path
runs entirely in float32 on the BLAS-backed matmul kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import quantization as qz
from .errors import ShapeError, ValidationError
from .numerics import (
    Tensor2D,
    batched_matmul,
    gelu,
    layer_norm,
    matmul_fast,
    softmax_rows,
)

__all__ = [
    "DecoderConfig",
    "LayerWeights",
    "DecoderWeights",
    "FrameInput",
    "PRESETS",
    "preset_config",
    "embed_frame",
    "forward_offline",
    "param_count",
    "embedding_param_count",
    "flops_per_frame",
    "named_tensors",
    "tensor_inventory",
    "prepare_weights",
    "PreparedWeights",
]


@dataclass(frozen=True)
class DecoderConfig:
    """Architectural hyperparameters. Defaults are the 12-layer production
    configuration (~40.8M decoder parameters)."""

    num_layers: int = 12
    model_dim: int = 512
    ffn_dim: int = 2048
    num_heads: int = 8
    attention_window: int = 250
    head_hidden_dim: int = 1248
    samples_per_frame: int = 1920
    sample_rate: int = 24000
    frame_rate: float = 12.5
    num_codebooks: int = 8
    codebook_size: int = 2048
    activation: str = "gelu_tanh"

    def __post_init__(self):
        if self.num_layers < 0:
            raise ValidationError("num_layers must be >= 0")
        for name in ("model_dim", "ffn_dim", "num_heads", "head_hidden_dim",
                     "samples_per_frame", "sample_rate", "num_codebooks",
                     "codebook_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.attention_window < 1:
            raise ValidationError("attention_window must be >= 1")
        if self.model_dim % self.num_heads != 0:
            raise ValidationError("model_dim must be divisible by num_heads")
        if self.samples_per_frame != self.sample_rate / self.frame_rate:
            raise ValidationError(
                "samples_per_frame must equal sample_rate / frame_rate exactly"
            )
        if self.activation != "gelu_tanh":
            raise ValidationError(f"unsupported activation {self.activation!r}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @property
    def chunk_ms(self) -> float:
        return 1000.0 * self.samples_per_frame / self.sample_rate


# Presets mirror the layer-count / linear-dimension ablation grid. The
# x3072 point scales the head hidden width by 3072/2048 (1248 -> 1872),
# which lands its decoder budget at ~42.3M parameters; layer-count variants
# keep the default head.
PRESETS: dict[str, DecoderConfig] = {
    "t-mimi-12x2048": DecoderConfig(),
    "t-mimi-8": DecoderConfig(num_layers=8),
    "t-mimi-12x3072": DecoderConfig(head_hidden_dim=1872),
    "t-mimi-16x2048": DecoderConfig(num_layers=16),
}


def preset_config(name: str) -> DecoderConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

# Matrix entries are either float32 ndarrays or QuantizedTensors (when
# loaded from a quantized container; dequantized lazily at prepare time).


@dataclass
class LayerWeights:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: object
    wk: object
    wv: object
    wo: object
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w_ffn1: object  # (ffn_dim, model_dim)
    w_ffn2: object  # (model_dim, ffn_dim)


@dataclass
class DecoderWeights:
    config: DecoderConfig
    token_embeddings: list  # num_codebooks arrays of (codebook_size, model_dim)
    layers: list  # LayerWeights
    final_gamma: np.ndarray
    final_beta: np.ndarray
    head_w1: object  # (head_hidden_dim, model_dim)
    head_b1: np.ndarray  # (head_hidden_dim,)
    head_w2: object  # (samples_per_frame, head_hidden_dim)

    def param_count(self) -> int:
        """Decoder parameters, embeddings excluded (reported separately)."""
        return param_count(self.config)

    @staticmethod
    def zeros(config: DecoderConfig) -> "DecoderWeights":
        z = lambda *s: np.zeros(s, dtype=np.float32)
        d, f = config.model_dim, config.ffn_dim
        layers = [
            LayerWeights(z(d), z(d), z(d, d), z(d, d), z(d, d), z(d, d),
                         z(d), z(d), z(f, d), z(d, f))
            for _ in range(config.num_layers)
        ]
        return DecoderWeights(
            config=config,
            token_embeddings=[z(config.codebook_size, d) for _ in range(config.num_codebooks)],
            layers=layers,
            final_gamma=z(d),
            final_beta=z(d),
            head_w1=z(config.head_hidden_dim, d),
            head_b1=z(config.head_hidden_dim),
            head_w2=z(config.samples_per_frame, config.head_hidden_dim),
        )


def tensor_inventory(config: DecoderConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Canonical (name, shape, role) list for every tensor in the
    architecture, in serialization/initialization order. Roles: ``embed``,
    ``gamma``, ``vector`` (betas/bias), ``layer<i>`` or ``head`` for the
    matrices that precision plans govern."""
    d, f = config.model_dim, config.ffn_dim
    inv: list[tuple[str, tuple[int, ...], str]] = []
    for c in range(config.num_codebooks):
        inv.append((f"emb.{c}", (config.codebook_size, d), "embed"))
    for i in range(config.num_layers):
        p = f"layer.{i:02d}"
        role = f"layer{i}"
        inv.extend([
            (f"{p}.ln1.gamma", (d,), "gamma"),
            (f"{p}.ln1.beta", (d,), "vector"),
            (f"{p}.attn.wq", (d, d), role),
            (f"{p}.attn.wk", (d, d), role),
            (f"{p}.attn.wv", (d, d), role),
            (f"{p}.attn.wo", (d, d), role),
            (f"{p}.ln2.gamma", (d,), "gamma"),
            (f"{p}.ln2.beta", (d,), "vector"),
            (f"{p}.ffn.w1", (f, d), role),
            (f"{p}.ffn.w2", (d, f), role),
        ])
    inv.extend([
        ("final.gamma", (d,), "gamma"),
        ("final.beta", (d,), "vector"),
        ("head.w1", (config.head_hidden_dim, d), "head"),
        ("head.b1", (config.head_hidden_dim,), "vector"),
        ("head.w2", (config.samples_per_frame, config.head_hidden_dim), "head"),
    ])
    return inv


def named_tensors(weights: DecoderWeights):
    """Yield (name, entry) pairs in canonical inventory order."""
    for c, emb in enumerate(weights.token_embeddings):
        yield f"emb.{c}", emb
    for i, layer in enumerate(weights.layers):
        p = f"layer.{i:02d}"
        yield f"{p}.ln1.gamma", layer.ln1_gamma
        yield f"{p}.ln1.beta", layer.ln1_beta
        yield f"{p}.attn.wq", layer.wq
        yield f"{p}.attn.wk", layer.wk
        yield f"{p}.attn.wv", layer.wv
        yield f"{p}.attn.wo", layer.wo
        yield f"{p}.ln2.gamma", layer.ln2_gamma
        yield f"{p}.ln2.beta", layer.ln2_beta
        yield f"{p}.ffn.w1", layer.w_ffn1
        yield f"{p}.ffn.w2", layer.w_ffn2
    yield "final.gamma", weights.final_gamma
    yield "final.beta", weights.final_beta
    yield "head.w1", weights.head_w1
    yield "head.b1", weights.head_b1
    yield "head.w2", weights.head_w2


def weights_from_named(config: DecoderConfig, tensors: dict) -> DecoderWeights:
    """Inverse of :func:`named_tensors`; raises on missing names."""
    expected = [name for name, _, _ in tensor_inventory(config)]
    missing = [n for n in expected if n not in tensors]
    if missing:
        raise ValidationError(f"missing tensors: {missing[:4]}{'...' if len(missing) > 4 else ''}")
    g = tensors.__getitem__
    layers = [
        LayerWeights(
            g(f"layer.{i:02d}.ln1.gamma"), g(f"layer.{i:02d}.ln1.beta"),
            g(f"layer.{i:02d}.attn.wq"), g(f"layer.{i:02d}.attn.wk"),
            g(f"layer.{i:02d}.attn.wv"), g(f"layer.{i:02d}.attn.wo"),
            g(f"layer.{i:02d}.ln2.gamma"), g(f"layer.{i:02d}.ln2.beta"),
            g(f"layer.{i:02d}.ffn.w1"), g(f"layer.{i:02d}.ffn.w2"),
        )
        for i in range(config.num_layers)
    ]
    return DecoderWeights(
        config=config,
        token_embeddings=[g(f"emb.{c}") for c in range(config.num_codebooks)],
        layers=layers,
        final_gamma=g("final.gamma"),
        final_beta=g("final.beta"),
        head_w1=g("head.w1"),
        head_b1=g("head.b1"),
        head_w2=g("head.w2"),
    )


# ---------------------------------------------------------------------------
# Frame inputs and embedding
# ---------------------------------------------------------------------------


@dataclass
class FrameInput:
    """One codec frame: either per-codebook token indices or a pre-embedded
    latent vector. Exactly one variant is populated."""

    tokens: np.ndarray | None = None  # (num_codebooks,) integers
    latent: np.ndarray | None = None  # (model_dim,) float32

    def __post_init__(self):
        if (self.tokens is None) == (self.latent is None):
            raise ValidationError("FrameInput needs exactly one of tokens/latent")

    @staticmethod
    def from_tokens(tokens) -> "FrameInput":
        return FrameInput(tokens=np.asarray(tokens, dtype=np.int64))

    @staticmethod
    def from_latent(latent) -> "FrameInput":
        return FrameInput(latent=np.asarray(latent, dtype=np.float32))


def embed_frame(frame: FrameInput, weights: DecoderWeights) -> np.ndarray:
    """Map a frame input to its model_dim latent: sum of per-codebook
    embedding rows (accumulated in codebook order), or the latent itself."""
    config = weights.config
    if frame.latent is not None:
        latent = np.asarray(frame.latent, dtype=np.float32).reshape(-1)
        if latent.shape[0] != config.model_dim:
            raise ShapeError(f"latent length {latent.shape[0]} != model_dim {config.model_dim}")
        return latent
    tokens = frame.tokens
    if tokens.shape != (config.num_codebooks,):
        raise ShapeError(f"tokens shape {tokens.shape} != ({config.num_codebooks},)")
    if (tokens < 0).any() or (tokens >= config.codebook_size).any():
        raise ValidationError(f"token index out of range [0, {config.codebook_size})")
    vec = np.zeros(config.model_dim, dtype=np.float32)
    for c in range(config.num_codebooks):
        vec += weights.token_embeddings[c][int(tokens[c])]
    return vec


def embed_frames(frames, weights: DecoderWeights) -> Tensor2D:
    if len(frames) == 0:
        raise ValidationError("need at least one frame")
    return np.stack([embed_frame(f, weights) for f in frames]).astype(np.float32)


# ---------------------------------------------------------------------------
# Plan application (fake-quant, done once per prepare)
# ---------------------------------------------------------------------------


@dataclass
class PreparedLayer:
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq_t: np.ndarray  # (in, out) layouts, contiguous, ready for x @ W
    wk_t: np.ndarray
    wv_t: np.ndarray
    wo_t: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w_ffn1_t: np.ndarray
    w_ffn2_t: np.ndarray
    quantized: bool  # whether this layer's matmuls count as quantized


@dataclass
class PreparedWeights:
    """Fake-quantized, transposed, ready-to-run weights. Built once per
    (weights, plan) pair; immutable afterwards."""

    config: DecoderConfig
    plan: qz.PrecisionPlan
    token_embeddings: list
    layers: list
    final_gamma: np.ndarray
    final_beta: np.ndarray
    head_w1_t: np.ndarray
    head_b1: np.ndarray
    head_w2_t: np.ndarray
    head_quantized: bool


def _materialize(entry, scheme: qz.QuantScheme) -> np.ndarray:
    """Resolve a weight entry to the float32 matrix the forward pass uses:
    dequantize stored integers, or fake-quant float weights per the plan
    (an exact no-op for fp32)."""
    if isinstance(entry, qz.QuantizedTensor):
        return qz.dequantize(entry)
    return qz.fake_quant(np.asarray(entry, dtype=np.float32), scheme)


def _t(w: np.ndarray) -> np.ndarray:
    # F-contiguous view of the (out, in) matrix; BLAS consumes it directly.
    return w.T


def prepare_weights(weights: DecoderWeights, plan: qz.PrecisionPlan | None = None) -> PreparedWeights:
    config = weights.config
    if plan is None:
        plan = qz.PrecisionPlan.all_fp32(config.num_layers)
    plan.validate_for(config.num_layers)
    layers = []
    for scheme, lw in zip(plan.transformer_layer_schemes, weights.layers):
        layers.append(PreparedLayer(
            ln1_gamma=lw.ln1_gamma, ln1_beta=lw.ln1_beta,
            wq_t=_t(_materialize(lw.wq, scheme)),
            wk_t=_t(_materialize(lw.wk, scheme)),
            wv_t=_t(_materialize(lw.wv, scheme)),
            wo_t=_t(_materialize(lw.wo, scheme)),
            ln2_gamma=lw.ln2_gamma, ln2_beta=lw.ln2_beta,
            w_ffn1_t=_t(_materialize(lw.w_ffn1, scheme)),
            w_ffn2_t=_t(_materialize(lw.w_ffn2, scheme)),
            quantized=scheme.kind is not qz.QuantKind.FP32,
        ))
    hs = plan.linear_head_scheme
    return PreparedWeights(
        config=config,
        plan=plan,
        token_embeddings=weights.token_embeddings,
        layers=layers,
        final_gamma=weights.final_gamma,
        final_beta=weights.final_beta,
        head_w1_t=_t(_materialize(weights.head_w1, hs)),
        head_b1=np.asarray(weights.head_b1, dtype=np.float32),
        head_w2_t=_t(_materialize(weights.head_w2, hs)),
        head_quantized=hs.kind is not qz.QuantKind.FP32,
    )


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------


def _maybe_act_quant(x: Tensor2D, layer_quantized: bool, plan: qz.PrecisionPlan) -> Tensor2D:
    # Dynamic activation fake-quant applies after each quantized matmul
    # (per-row scales, so offline and streaming degrade identically).
    if plan.activation_quant and layer_quantized:
        return qz.dynamic_quant_activations(x)
    return x


def _window_mask(num_frames: int, window: int) -> np.ndarray:
    idx = np.arange(num_frames)
    rel = idx[None, :] - idx[:, None]  # key index minus query index
    return (rel <= 0) & (rel > -window)


def _attend(q: Tensor2D, k: Tensor2D, v: Tensor2D, num_heads: int,
            mask: np.ndarray | None) -> Tensor2D:
    """Multi-head attention over explicit K/V rows. q is (Tq, d); k/v are
    (Tk, d); mask (Tq, Tk) or None for fully visible rows. Heads run as one
    batched matmul pair: H * Tq * head_dim * Tk MACs for scores and the
    same for the weighted values."""
    tq, d = q.shape
    tk = k.shape[0]
    hd = d // num_heads
    scale = np.float32(1.0 / np.sqrt(hd))
    # (H, T, hd) views of the concatenated-head layout.
    qh = np.ascontiguousarray(q.reshape(tq, num_heads, hd).transpose(1, 0, 2))
    kh = np.ascontiguousarray(k.reshape(tk, num_heads, hd).transpose(1, 0, 2))
    vh = np.ascontiguousarray(v.reshape(tk, num_heads, hd).transpose(1, 0, 2))
    scores = batched_matmul(qh, kh.transpose(0, 2, 1)) * scale
    flat = scores.reshape(num_heads * tq, tk)
    flat_mask = None if mask is None else np.tile(mask, (num_heads, 1))
    probs = softmax_rows(flat, flat_mask).reshape(num_heads, tq, tk)
    ctx = batched_matmul(probs, vh)
    return np.ascontiguousarray(ctx.transpose(1, 0, 2)).reshape(tq, d)


def _layer_step(x: Tensor2D, lyr: PreparedLayer, plan: qz.PrecisionPlan,
                num_heads: int, mask: np.ndarray | None = None,
                kv_hook=None) -> Tensor2D:
    """One pre-norm transformer layer over the rows of ``x``.

    Offline mode (no ``kv_hook``): keys/values come from ``x`` itself and
    ``mask`` enforces the causal window. Streaming mode: ``kv_hook(k, v)``
    receives the new frame's K/V rows, pushes them into the cache, and
    returns the full cached window in arrival order; attention then runs
    unmasked over exactly those rows.
    """
    h = layer_norm(x, lyr.ln1_gamma, lyr.ln1_beta)
    q = _maybe_act_quant(matmul_fast(h, lyr.wq_t), lyr.quantized, plan)
    k = _maybe_act_quant(matmul_fast(h, lyr.wk_t), lyr.quantized, plan)
    v = _maybe_act_quant(matmul_fast(h, lyr.wv_t), lyr.quantized, plan)
    if kv_hook is None:
        ctx = _attend(q, k, v, num_heads, mask)
    else:
        k_rows, v_rows = kv_hook(k, v)
        ctx = _attend(q, k_rows, v_rows, num_heads, None)
    attn = _maybe_act_quant(matmul_fast(ctx, lyr.wo_t), lyr.quantized, plan)
    x = x + attn
    h2 = layer_norm(x, lyr.ln2_gamma, lyr.ln2_beta)
    f1 = gelu(_maybe_act_quant(matmul_fast(h2, lyr.w_ffn1_t), lyr.quantized, plan))
    f2 = _maybe_act_quant(matmul_fast(f1, lyr.w_ffn2_t), lyr.quantized, plan)
    return x + f2


def _head(x: Tensor2D, pw: PreparedWeights) -> Tensor2D:
    """Final norm plus the two-linear upsampling head: (T, d) -> (T, S)."""
    h = layer_norm(x, pw.final_gamma, pw.final_beta)
    a = matmul_fast(h, pw.head_w1_t) + pw.head_b1
    a = _maybe_act_quant(a, pw.head_quantized, pw.plan)
    out = matmul_fast(a, pw.head_w2_t)
    return _maybe_act_quant(out, pw.head_quantized, pw.plan)


def forward_offline(frames, weights: DecoderWeights,
                    plan: qz.PrecisionPlan | None = None) -> np.ndarray:
    """Decode a whole frame sequence at once (the streaming reference path
    checks against this). Returns a float32 waveform of exactly
    ``len(frames) * samples_per_frame`` samples."""
    prepared = prepare_weights(weights, plan)
    return forward_offline_prepared(frames, weights, prepared)


def forward_offline_prepared(frames, weights: DecoderWeights,
                             prepared: PreparedWeights) -> np.ndarray:
    config = weights.config
    x = embed_frames(frames, weights)
    mask = _window_mask(x.shape[0], config.attention_window)
    for lyr in prepared.layers:
        x = _layer_step(x, lyr, prepared.plan, config.num_heads, mask=mask)
    out = _head(x, prepared)
    return out.reshape(-1).copy()


# ---------------------------------------------------------------------------
# Accounting
# ---------------------------------------------------------------------------


def param_count(config: DecoderConfig) -> int:
    """Exact decoder parameter total; token embedding tables excluded (they
    are constant across architecture variants and reported separately)."""
    d, f = config.model_dim, config.ffn_dim
    per_layer = 4 * d * d + 2 * d * f + 4 * d
    head = (config.head_hidden_dim * d + config.head_hidden_dim
            + config.samples_per_frame * config.head_hidden_dim)
    return config.num_layers * per_layer + 2 * d + head


def embedding_param_count(config: DecoderConfig) -> int:
    return config.num_codebooks * config.codebook_size * config.model_dim


def flops_per_frame(config: DecoderConfig) -> int:
    """Analytic multiply-accumulate count for decoding one new frame at
    steady state (attention cache holding a full window). Counts matmul
    MACs only, matching the instrumented kernel counter: per layer
    4d^2 (QKVO) + 2*W*d (scores + weighted values) + 2*d*ffn, plus the
    two head linears."""
    d, f, w = config.model_dim, config.ffn_dim, config.attention_window
    per_layer = 4 * d * d + 2 * w * d + 2 * d * f
    head = d * config.head_hidden_dim + config.head_hidden_dim * config.samples_per_frame
    return config.num_layers * per_layer + head


def head_flops_per_frame(config: DecoderConfig) -> int:
    return (config.model_dim * config.head_hidden_dim
            + config.head_hidden_dim * config.samples_per_frame)
