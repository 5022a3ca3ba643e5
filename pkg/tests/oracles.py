"""Independent reference implementations used as test oracles.

Everything here is written as plainly as possible (scalar loops, direct
formulas, no shared helpers with the package) so the code paths under test
are checked against genuinely separate derivations.
"""

import math

import numpy as np


def naive_matmul(a, b):
    """Scalar triple loop, float32 accumulation in k order."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = np.float32(0.0)
            for k in range(a.shape[1]):
                acc = np.float32(acc + np.float32(a[i, k] * b[k, j]))
            out[i, j] = acc
    return out


def softmax_reference(row):
    row = np.asarray(row, dtype=np.float64)
    e = np.exp(row - row.max())
    return e / e.sum()


def gelu_reference(x):
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + math.tanh(c * (x + 0.044715 * x ** 3)))


# ---------------------------------------------------------------------------
# Straight-line transformer decoder (no caching, full masks, no batching
# tricks): the reference for forward_offline.
# ---------------------------------------------------------------------------


def reference_forward(frames, weights):
    """Frame-by-frame, head-by-head float32 re-implementation of the
    decoder. Weight matrices are read in their stored (out, in) layout."""
    cfg = weights.config
    d, heads = cfg.model_dim, cfg.num_heads
    hd = d // heads
    x = np.stack([_embed(f, weights) for f in frames]).astype(np.float32)
    T = x.shape[0]
    for lw in weights.layers:
        h = _ln(x, lw.ln1_gamma, lw.ln1_beta)
        q = h @ np.asarray(lw.wq).T
        k = h @ np.asarray(lw.wk).T
        v = h @ np.asarray(lw.wv).T
        ctx = np.zeros_like(x)
        for t in range(T):
            lo = max(0, t - cfg.attention_window + 1)
            for head in range(heads):
                sl = slice(head * hd, (head + 1) * hd)
                scores = np.array([
                    float(np.dot(q[t, sl], k[j, sl])) / math.sqrt(hd)
                    for j in range(lo, t + 1)
                ])
                probs = softmax_reference(scores)
                acc = np.zeros(hd, dtype=np.float64)
                for w_, j in zip(probs, range(lo, t + 1)):
                    acc += w_ * v[j, sl]
                ctx[t, sl] = acc.astype(np.float32)
        x = x + ctx @ np.asarray(lw.wo).T
        h2 = _ln(x, lw.ln2_gamma, lw.ln2_beta)
        f1 = gelu_np(h2 @ np.asarray(lw.w_ffn1).T)
        x = x + f1 @ np.asarray(lw.w_ffn2).T
    h = _ln(x, weights.final_gamma, weights.final_beta)
    a = h @ np.asarray(weights.head_w1).T + np.asarray(weights.head_b1)
    out = a @ np.asarray(weights.head_w2).T
    return np.asarray(out, dtype=np.float32).reshape(-1)


def gelu_np(x):
    c = math.sqrt(2.0 / math.pi)
    return (0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x ** 3)))).astype(np.float32)


def _ln(x, gamma, beta, eps=1e-5):
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    return ((x - mean) / np.sqrt(var + eps) * gamma + beta).astype(np.float32)


def _embed(frame, weights):
    if frame.latent is not None:
        return np.asarray(frame.latent, dtype=np.float32)
    vec = np.zeros(weights.config.model_dim, dtype=np.float32)
    for c, tok in enumerate(frame.tokens):
        vec += weights.token_embeddings[c][int(tok)]
    return vec


# ---------------------------------------------------------------------------
# Transposed convolution by zero-stuffing + direct FIR
# ---------------------------------------------------------------------------


def zero_stuff_deconv(x, kernel, stride):
    """x (n, Cin), kernel (Cout, Cin, k) -> (n * stride, Cout), float64.

    Insert stride-1 zeros after each input sample, then apply a causal FIR
    with the kernel taps; keep the first n * stride outputs.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    cout, cin, k = kernel.shape
    n = x.shape[0]
    up = np.zeros((n * stride, cin))
    up[::stride] = x
    out = np.zeros((n * stride, cout))
    for m in range(n * stride):
        for j in range(k):
            if m - j < 0:
                break
            out[m] += kernel[:, :, j] @ up[m - j]
    return out


# ---------------------------------------------------------------------------
# STFT + mel distance, direct DFT formulation
# ---------------------------------------------------------------------------


def mel_scale(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_scale_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def reference_filterbank(n_mels, fft_size, sample_rate):
    edges = mel_scale_inv(np.linspace(0.0, float(mel_scale(sample_rate / 2)), n_mels + 2))
    bins = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    fb = np.zeros((n_mels, bins.size))
    for m in range(n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        for kk, f in enumerate(bins):
            if lo <= f <= center:
                fb[m, kk] = (f - lo) / (center - lo)
            elif center < f <= hi:
                fb[m, kk] = (hi - f) / (hi - center)
    return fb


_DFT_CACHE = {}


def _dft_matrix(fft_size):
    if fft_size not in _DFT_CACHE:
        n = np.arange(fft_size)
        freqs = np.arange(fft_size // 2 + 1)
        _DFT_CACHE[fft_size] = np.exp(-2j * np.pi * np.outer(freqs, n) / fft_size)
    return _DFT_CACHE[fft_size]


def reference_log_mel(wave, fft_size, n_mels, sample_rate, log_floor=1e-5):
    """Frame loop + explicit DFT matrix; Hann window; reflect padding."""
    wave = np.asarray(wave, dtype=np.float64)
    hop = fft_size // 4
    half = fft_size // 2
    padded = np.pad(wave, (half, half), mode="reflect")
    n_frames = (wave.size - 1) // hop + 1
    n = np.arange(fft_size)
    window = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / fft_size)
    dft = _dft_matrix(fft_size)
    mags = []
    for i in range(n_frames):
        seg = padded[i * hop : i * hop + fft_size] * window
        mags.append(np.abs(dft @ seg))
    mag = np.stack(mags)
    fb = reference_filterbank(n_mels, fft_size, sample_rate)
    return np.log(np.maximum(mag @ fb.T, log_floor))


def reference_multiscale_mel_l1(a, b, fft_sizes, n_mels_list, sample_rate):
    dists = []
    for fft_size, n_mels in zip(fft_sizes, n_mels_list):
        la = reference_log_mel(a, fft_size, n_mels, sample_rate)
        lb = reference_log_mel(b, fft_size, n_mels, sample_rate)
        dists.append(np.mean(np.abs(la - lb)))
    return float(np.mean(dists))
