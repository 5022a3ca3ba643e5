"""Transposed-convolution upsampling baseline for latency/FLOP comparison.

A stack of 1-D transposed convolutions whose strides compose to the
samples-per-frame upsampling factor (default 8*6*5*8 = 1920) and whose
channel plan roughly parameter-matches the two-linear transformer head
(~3.2M vs ~3.0M weights). It is a reference stack for the comparison, not
a claim about any particular codec's internals.

Streaming semantics mirror a naive windowed deployment: each step re-runs
the whole stack over the last ``context_window`` frames of input latents
and emits only the newest frame's samples. A context window at least as
large as the stack's receptive field (about 4 frames with the default
kernels) reproduces the full-history output exactly; smaller windows
truncate context, trading quality for latency.

Each transposed conv is computed as one matmul per step: x (n, Cin) @
W_flat (Cin, k*Cout), followed by overlap-add of the k/stride shifted
blocks. This performs exactly ``n * Cin * k * Cout`` multiply-accumulates
per layer (the standard transposed-conv arithmetic), which is what
:func:`deconv_flops_per_frame` counts and the MAC counter observes.
Output length is ``n * stride`` (the tail that future frames would
complete is dropped, keeping the operator causal). Kernel sizes must be
multiples of their stride.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .numerics import Rng, matmul_fast

__all__ = [
    "DeconvConfig",
    "DeconvWeights",
    "DeconvStream",
    "init_deconv_weights",
    "deconv_forward",
    "deconv_param_count",
    "deconv_flops_per_frame",
    "transposed_conv1d",
]


@dataclass(frozen=True)
class DeconvConfig:
    in_channels: int = 512
    channels: tuple = (320, 128, 64, 1)
    strides: tuple = (8, 6, 5, 8)
    kernel_sizes: tuple = (16, 12, 10, 16)
    context_window: int = 5

    def __post_init__(self):
        if not (len(self.channels) == len(self.strides) == len(self.kernel_sizes)):
            raise ValidationError("channels/strides/kernel_sizes lengths differ")
        if self.context_window < 1:
            raise ValidationError("context_window must be >= 1")
        for k, s in zip(self.kernel_sizes, self.strides):
            if s < 1 or k < s or k % s != 0:
                raise ValidationError(f"kernel {k} must be a positive multiple of stride {s}")
        if self.channels[-1] != 1:
            raise ValidationError("final layer must produce one (mono) channel")

    @property
    def upsampling_factor(self) -> int:
        return math.prod(self.strides)

    @property
    def channel_plan(self) -> tuple:
        return (self.in_channels, *self.channels)


@dataclass
class DeconvWeights:
    config: DeconvConfig
    kernels: list  # per layer: (Cout, Cin, k) float32


def deconv_param_count(config: DeconvConfig) -> int:
    plan = config.channel_plan
    return sum(
        k * plan[i] * plan[i + 1] for i, k in enumerate(config.kernel_sizes)
    )


def init_deconv_weights(config: DeconvConfig, seed: int) -> DeconvWeights:
    """Deterministic scaled-uniform init, bound sqrt(1/(Cin*k)) per layer."""
    rng = Rng(seed)
    plan = config.channel_plan
    kernels = []
    for i, k in enumerate(config.kernel_sizes):
        cin, cout = plan[i], plan[i + 1]
        bound = math.sqrt(1.0 / (cin * k))
        w = rng.next_uniform(cout * cin * k, -bound, bound).reshape(cout, cin, k)
        kernels.append(w)
    return DeconvWeights(config, kernels)


def transposed_conv1d(x: np.ndarray, kernel: np.ndarray, stride: int) -> np.ndarray:
    """Causal transposed 1-D convolution: x (n, Cin), kernel (Cout, Cin, k)
    -> (n * stride, Cout).

    Matches zero-stuffing by ``stride`` followed by a causal FIR with the
    kernel taps: out[n*s + j] += sum_ci x[n, ci] * kernel[:, ci, j].
    """
    if x.ndim != 2:
        raise ShapeError(f"input must be (n, Cin), got {x.shape}")
    cout, cin, k = kernel.shape
    if x.shape[1] != cin:
        raise ShapeError(f"input channels {x.shape[1]} != kernel Cin {cin}")
    if k % stride != 0:
        raise ValidationError("kernel size must be a multiple of stride")
    n = x.shape[0]
    # (Cin, k*Cout) with tap-major blocks so contrib[n] reshapes to (k, Cout).
    w_flat = np.ascontiguousarray(
        kernel.transpose(1, 2, 0).reshape(cin, k * cout)
    ).astype(np.float32)
    contrib = matmul_fast(np.ascontiguousarray(x, dtype=np.float32), w_flat)
    contrib = contrib.reshape(n, k // stride, stride, cout)
    blocks = k // stride
    acc = np.zeros((n + blocks - 1, stride, cout), dtype=np.float32)
    for b in range(blocks):
        acc[b : b + n] += contrib[:, b]
    return acc[:n].reshape(n * stride, cout)


def _run_stack(latents: np.ndarray, weights: DeconvWeights) -> np.ndarray:
    x = latents
    for kernel, stride in zip(weights.kernels, weights.config.strides):
        x = transposed_conv1d(x, kernel, stride)
    return x


def deconv_forward(latents: np.ndarray, weights: DeconvWeights,
                   context_window: int | None = None) -> np.ndarray:
    """Decode latent frames (T, in_channels) to a waveform of exactly
    ``T * upsampling_factor`` samples, recomputing each frame from its
    trailing context window."""
    latents = np.asarray(latents, dtype=np.float32)
    if latents.ndim != 2 or latents.shape[0] == 0:
        raise ValidationError("latents must be a non-empty (T, Cin) array")
    if latents.shape[1] != weights.config.in_channels:
        raise ShapeError(
            f"latent dim {latents.shape[1]} != in_channels {weights.config.in_channels}"
        )
    win = context_window or weights.config.context_window
    up = weights.config.upsampling_factor
    out = np.empty(latents.shape[0] * up, dtype=np.float32)
    for t in range(latents.shape[0]):
        ctx = latents[max(0, t - win + 1) : t + 1]
        y = _run_stack(ctx, weights)
        out[t * up : (t + 1) * up] = y[-up:, 0]
    return out


class DeconvStream:
    """Streaming wrapper: ring of the last ``context_window`` latents."""

    def __init__(self, weights: DeconvWeights, context_window: int | None = None):
        self.weights = weights
        self.window = context_window or weights.config.context_window
        self._ctx: list[np.ndarray] = []

    def step(self, latent: np.ndarray) -> np.ndarray:
        latent = np.asarray(latent, dtype=np.float32).reshape(-1)
        self._ctx.append(latent)
        if len(self._ctx) > self.window:
            self._ctx.pop(0)
        y = _run_stack(np.stack(self._ctx), self.weights)
        up = self.weights.config.upsampling_factor
        return np.ascontiguousarray(y[-up:, 0])

    def reset(self) -> None:
        self._ctx.clear()


def deconv_flops_per_frame(config: DeconvConfig, context_window: int | None = None) -> int:
    """Analytic MACs for one streaming step at full context: the stack is
    re-run over ``context_window`` frames, so layer i multiplies
    (win * frames_at_level_i) * Cin * k * Cout."""
    win = context_window or config.context_window
    plan = config.channel_plan
    total = 0
    n = win  # input rows at the current layer
    for i, (k, s) in enumerate(zip(config.kernel_sizes, config.strides)):
        total += n * plan[i] * k * plan[i + 1]
        n *= s
    return total
