"""Stateful incremental decoding: one frame in, one audio chunk out.

Each layer keeps K/V ring buffers of the last ``attention_window`` frames
(current frame included, matching the offline mask). Weights are
fake-quantized once at stream creation, so every step pays only the
steady-state matmul cost; once the window is full the per-step MAC count
is constant.

Contract: concatenating ``step`` outputs over a sequence matches
``forward_offline`` on that sequence within 1e-4 max abs (attention
reduction order differs between the cached and batched paths); the very
first step after a reset is bit-identical to a 1-frame offline decode.

A StreamState is single-writer: it may move between threads but must not
be stepped concurrently. Many streams can share one weight set.
"""

from __future__ import annotations

import numpy as np

from . import model as md
from . import quantization as qz
from .errors import ValidationError
from .numerics import layer_norm

__all__ = ["StreamState", "new_stream", "step", "step_hidden", "reset", "decode_frames"]


class _KVRing:
    """Fixed-capacity ring of (window, dim) rows, evicting the oldest."""

    def __init__(self, window: int, dim: int):
        self.buf = np.zeros((window, dim), dtype=np.float32)
        self.count = 0
        self.write_idx = 0

    def push(self, row: np.ndarray) -> None:
        self.buf[self.write_idx] = row
        self.write_idx = (self.write_idx + 1) % self.buf.shape[0]
        self.count = min(self.count + 1, self.buf.shape[0])

    def ordered(self) -> np.ndarray:
        """The valid rows, oldest first."""
        w = self.buf.shape[0]
        start = (self.write_idx - self.count) % w
        if start + self.count <= w:
            return self.buf[start : start + self.count]
        idx = (start + np.arange(self.count)) % w
        return self.buf[idx]

    def clear(self) -> None:
        self.count = 0
        self.write_idx = 0


class StreamState:
    """Per-stream decoding state: prepared weights plus per-layer KV rings
    and the absolute frame position."""

    def __init__(self, weights: md.DecoderWeights, prepared: md.PreparedWeights):
        self.weights = weights
        self.prepared = prepared
        self.config = weights.config
        w, d = self.config.attention_window, self.config.model_dim
        self.k_rings = [_KVRing(w, d) for _ in range(self.config.num_layers)]
        self.v_rings = [_KVRing(w, d) for _ in range(self.config.num_layers)]
        self.absolute_position = 0

    @property
    def valid_len(self) -> int:
        if not self.k_rings:
            return min(self.absolute_position, self.config.attention_window)
        return self.k_rings[0].count

    def kv_bytes(self) -> int:
        """Ring buffer footprint: num_layers * 2 * window * model_dim * 4."""
        return sum(r.buf.nbytes for r in self.k_rings) + sum(
            r.buf.nbytes for r in self.v_rings
        )


def new_stream(weights: md.DecoderWeights, plan: qz.PrecisionPlan | None = None) -> StreamState:
    """Create an empty stream. Fake-quantization of the weights happens
    here, once, not per frame."""
    prepared = md.prepare_weights(weights, plan)
    return StreamState(weights, prepared)


def reset(state: StreamState) -> None:
    """Return the stream to the new_stream condition (same weights/plan)."""
    for ring in state.k_rings:
        ring.clear()
    for ring in state.v_rings:
        ring.clear()
    state.absolute_position = 0


def _advance(state: StreamState, frame: md.FrameInput) -> np.ndarray:
    """Run the transformer body for one frame, updating the KV rings.
    Returns the residual-stream row (1, model_dim) before the final norm."""
    prepared = state.prepared
    x = md.embed_frame(frame, state.weights).reshape(1, -1)
    for li, lyr in enumerate(prepared.layers):
        k_ring, v_ring = state.k_rings[li], state.v_rings[li]

        def kv_hook(k, v, _k=k_ring, _v=v_ring):
            _k.push(k[0])
            _v.push(v[0])
            return _k.ordered(), _v.ordered()

        x = md._layer_step(x, lyr, prepared.plan, state.config.num_heads, kv_hook=kv_hook)
    state.absolute_position += 1
    return x


def step_hidden(state: StreamState, frame: md.FrameInput) -> np.ndarray:
    """Advance one frame and return the final-norm hidden row (1, model_dim)
    that feeds the upsampling head. Used directly when benchmarking
    alternative heads."""
    x = _advance(state, frame)
    return layer_norm(x, state.prepared.final_gamma, state.prepared.final_beta)


def step(state: StreamState, frame: md.FrameInput) -> np.ndarray:
    """Decode one frame into exactly ``samples_per_frame`` waveform samples."""
    x = _advance(state, frame)
    out = md._head(x, state.prepared)
    return out.reshape(-1).copy()


def decode_frames(weights: md.DecoderWeights, frames,
                  plan: qz.PrecisionPlan | None = None) -> np.ndarray:
    """Decode a frame sequence through the streaming path (memory stays
    O(window) regardless of sequence length)."""
    if len(frames) == 0:
        raise ValidationError("need at least one frame")
    state = new_stream(weights, plan)
    chunks = [step(state, f) for f in frames]
    return np.concatenate(chunks)
