"""Minimal dense float32 kernels and a deterministic PRNG.

All tensors are 2-D, C-contiguous ``numpy.float32`` arrays ("Tensor2D"):
``shape = (rows, cols)`` with the buffer laid out row-major. Every public
operation returns a fresh array and never mutates its inputs, so values can
be shared freely across threads.

Two matmul kernels are provided:

* :func:`matmul` accumulates each output element as a row-major dot product
  in strict index order ``k = 0..K-1`` using float32 multiplies and adds.
  This order is part of the contract: results are bit-identical to a naive
  triple loop on any platform.
* :func:`matmul_fast` is the BLAS-backed variant used on the hot inference
  path. It must agree with :func:`matmul` to within 1e-5 relative error but
  makes no ordering promise.

MAC counting: wrap code in :func:`count_macs` to count multiply-accumulates
issued by either matmul kernel (``rows * inner * cols`` per call).
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor2D",
    "Rng",
    "as_tensor2d",
    "matmul",
    "matmul_fast",
    "batched_matmul",
    "layer_norm",
    "softmax_rows",
    "gelu",
    "count_macs",
    "MacCounter",
]

# Type alias: a (rows, cols) C-contiguous float32 ndarray.
Tensor2D = np.ndarray


def as_tensor2d(x, name: str = "tensor") -> Tensor2D:
    """Validate/convert ``x`` to a 2-D C-contiguous float32 array."""
    a = np.ascontiguousarray(x, dtype=np.float32)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def _require_finite(x: np.ndarray, name: str) -> None:
    if not np.isfinite(x).all():
        raise ValueError(f"{name} contains non-finite values")


# ---------------------------------------------------------------------------
# MAC counting
# ---------------------------------------------------------------------------


class MacCounter:
    """Accumulates multiply-accumulate counts from matmul calls."""

    def __init__(self) -> None:
        self.macs = 0

    def add(self, n: int) -> None:
        self.macs += n


_active_counter: MacCounter | None = None


@contextmanager
def count_macs():
    """Context manager yielding a :class:`MacCounter` that records every
    multiply-accumulate issued by :func:`matmul` / :func:`matmul_fast`
    inside the block. Not reentrant."""
    global _active_counter
    counter = MacCounter()
    prev = _active_counter
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = prev


def _record_macs(m: int, k: int, n: int) -> None:
    if _active_counter is not None:
        _active_counter.add(m * k * n)


# ---------------------------------------------------------------------------
# Matmul
# ---------------------------------------------------------------------------


def matmul(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    """Matrix product with a fixed, documented accumulation order.

    out[i, j] = sum_k a[i, k] * b[k, j], accumulated in float32 strictly in
    order k = 0..K-1 starting from 0.0. Bit-identical to a scalar triple
    loop over (i, j, k).
    """
    a = as_tensor2d(a, "a")
    b = as_tensor2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    _record_macs(a.shape[0], a.shape[1], b.shape[1])
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    # One rank-1 update per k keeps the per-element accumulation order
    # identical to the scalar loop while staying vectorized.
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def matmul_fast(a: Tensor2D, b: Tensor2D) -> Tensor2D:
    """BLAS-backed matmul; same contract as :func:`matmul` except the
    accumulation order is unspecified (agreement within 1e-5 relative)."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul_fast: need 2-D operands, got {a.shape}, {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul_fast: inner dims differ, {a.shape} x {b.shape}")
    _record_macs(a.shape[0], a.shape[1], b.shape[1])
    return np.matmul(a, b, dtype=np.float32)


def batched_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(B, m, k) @ (B, k, n) -> (B, m, n), BLAS-backed per batch entry.
    Counts B * m * k * n multiply-accumulates."""
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"batched_matmul: need 3-D operands, got {a.shape}, {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"batched_matmul: shape mismatch, {a.shape} x {b.shape}")
    _record_macs(a.shape[0] * a.shape[1], a.shape[2], b.shape[2])
    return np.matmul(a, b, dtype=np.float32)


# ---------------------------------------------------------------------------
# Normalization / activations
# ---------------------------------------------------------------------------


def layer_norm(
    x: Tensor2D,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
) -> Tensor2D:
    """Row-wise layer norm: zero mean, unit (biased) variance, then affine."""
    x = as_tensor2d(x, "x")
    gamma = np.asarray(gamma, dtype=np.float32).reshape(-1)
    beta = np.asarray(beta, dtype=np.float32).reshape(-1)
    if gamma.shape[0] != x.shape[1] or beta.shape[0] != x.shape[1]:
        raise ShapeError(
            f"layer_norm: gamma/beta length {gamma.shape[0]}/{beta.shape[0]} "
            f"!= cols {x.shape[1]}"
        )
    if eps <= 0:
        raise ValueError("layer_norm: eps must be > 0")
    mean = x.mean(axis=1, keepdims=True, dtype=np.float32)
    centered = x - mean
    var = np.mean(centered * centered, axis=1, keepdims=True, dtype=np.float32)
    inv = np.float32(1.0) / np.sqrt(var + np.float32(eps))
    return centered * inv * gamma + beta


def softmax_rows(x: Tensor2D, mask: np.ndarray | None = None) -> Tensor2D:
    """Row-wise softmax with max-subtraction; masked entries are exactly 0.

    ``mask`` is boolean, same shape, True = keep. A fully masked row raises
    instead of silently producing NaN.
    """
    x = as_tensor2d(x, "x")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax mask shape {mask.shape} != input {x.shape}")
        if not mask.any(axis=1).all():
            raise ValueError("softmax_rows: fully masked row")
        x = np.where(mask, x, np.float32(-np.inf))
    row_max = x.max(axis=1, keepdims=True)
    e = np.exp(x - row_max)
    if mask is not None:
        e = np.where(mask, e, np.float32(0.0))
    denom = e.sum(axis=1, keepdims=True, dtype=np.float32)
    return e / denom


_GELU_C = np.float32(math.sqrt(2.0 / math.pi))
_GELU_A = np.float32(0.044715)


def gelu(x: Tensor2D) -> Tensor2D:
    """Elementwise tanh-approximation GELU, evaluated in float32:

    0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x**3)))
    """
    x = np.asarray(x, dtype=np.float32)
    inner = _GELU_C * (x + _GELU_A * (x * x * x))
    return np.float32(0.5) * x * (np.float32(1.0) + np.tanh(inner))


# ---------------------------------------------------------------------------
# Deterministic PRNG
# ---------------------------------------------------------------------------

_SM64_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM64_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM64_M2 = np.uint64(0x94D049BB133111EB)


class Rng:
    """Counter-based splitmix64 generator, bit-exact across platforms.

    Draw i (0-based, 64-bit wrapping arithmetic):

        z = seed + (i + 1) * 0x9E3779B97F4A7C15
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        z =  z ^ (z >> 31)

    Floats are the top 24 bits: float32(z >> 40) * 2**-24, uniform in [0, 1).
    The only state is (seed, draw counter), so sequences are reproducible
    and cheap to fork by seed.
    """

    def __init__(self, seed: int) -> None:
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def next_u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit draws as a uint64 array."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = self.seed + idx * _SM64_GAMMA
        z = (z ^ (z >> np.uint64(30))) * _SM64_M1
        z = (z ^ (z >> np.uint64(27))) * _SM64_M2
        return z ^ (z >> np.uint64(31))

    def next_floats(self, n: int) -> np.ndarray:
        """Next ``n`` float32 draws uniform in [0, 1)."""
        bits = self.next_u64(n) >> np.uint64(40)
        return bits.astype(np.float32) * np.float32(2.0**-24)

    def next_uniform(self, n: int, low: float, high: float) -> np.ndarray:
        """Next ``n`` float32 draws uniform in [low, high)."""
        u = self.next_floats(n)
        return np.float32(low) + u * (np.float32(high) - np.float32(low))

    def next_ints(self, n: int, bound: int) -> np.ndarray:
        """Next ``n`` int64 draws uniform in [0, bound) via modulo of the
        64-bit stream (bias < 2**-50 for bound < 2**13)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return (self.next_u64(n) % np.uint64(bound)).astype(np.int64)
