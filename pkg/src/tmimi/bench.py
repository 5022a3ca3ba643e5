"""Latency benchmarking and mixed-precision sensitivity sweeps.

The latency harness times ``step`` wall-clock per chunk (WAV writing and
frame generation excluded), discards warmup chunks, and reports mean and
percentile latencies plus the real-time factor (mean latency divided by
the chunk's audio duration, 80 ms at the default config). The sweep
decodes a fixed frame sequence under each precision plan and scores the
output against the same weights decoded at full precision.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import deconv as dc
from . import metrics as mt
from . import model as md
from . import quantization as qz
from . import streaming as st
from . import weightstore as ws
from .errors import ValidationError

__all__ = ["BenchReport", "SweepReport", "run_stream_bench", "run_quant_sweep",
           "decode_frames"]


def _config_summary(config: md.DecoderConfig) -> dict:
    return {
        "num_layers": config.num_layers,
        "model_dim": config.model_dim,
        "ffn_dim": config.ffn_dim,
        "num_heads": config.num_heads,
        "attention_window": config.attention_window,
        "head_hidden_dim": config.head_hidden_dim,
        "samples_per_frame": config.samples_per_frame,
        "sample_rate": config.sample_rate,
        "frame_rate": config.frame_rate,
    }


@dataclass
class BenchReport:
    head: str
    plan: str
    config: dict
    chunks: int
    warmup: int
    latency_ms_mean: float
    latency_ms_p50: float
    latency_ms_p95: float
    latency_ms_p99: float
    rtf: float
    flops_per_frame: int
    head_flops_per_frame: int
    storage_bytes: int

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "plan": self.plan,
            "config": self.config,
            "chunks": self.chunks,
            "warmup": self.warmup,
            "latency_ms": {
                "mean": self.latency_ms_mean,
                "p50": self.latency_ms_p50,
                "p95": self.latency_ms_p95,
                "p99": self.latency_ms_p99,
            },
            "rtf": self.rtf,
            "flops_per_frame": self.flops_per_frame,
            "head_flops_per_frame": self.head_flops_per_frame,
            "storage_bytes": self.storage_bytes,
        }

    def format_text(self) -> str:
        lines = [
            f"head: {self.head}",
            f"plan: {self.plan}",
            f"chunks: {self.chunks} (after {self.warmup} warmup)",
            f"latency ms: mean {self.latency_ms_mean:.3f}  "
            f"p50 {self.latency_ms_p50:.3f}  p95 {self.latency_ms_p95:.3f}  "
            f"p99 {self.latency_ms_p99:.3f}",
            f"real-time factor: {self.rtf:.4f}",
            f"flops/frame: {self.flops_per_frame}  (head: {self.head_flops_per_frame})",
            f"storage bytes: {self.storage_bytes}",
        ]
        return "\n".join(lines)


def run_stream_bench(weights: md.DecoderWeights, plan: qz.PrecisionPlan | None = None,
                     chunks: int = 500, warmup: int = 50, head: str = "transformer",
                     seed: int = 0, deconv_config: dc.DeconvConfig | None = None) -> BenchReport:
    """Time per-chunk decoding of random token frames. ``head`` selects the
    upsampling stage: the two-linear transformer head or the
    transposed-convolution baseline (driven from the same transformer
    body's hidden states)."""
    if chunks < 1:
        raise ValidationError("chunks must be >= 1")
    if warmup < 0:
        raise ValidationError("warmup must be >= 0")
    config = weights.config
    if plan is None:
        plan = qz.PrecisionPlan.all_fp32(config.num_layers)
    frames = ws.random_frames(config, chunks + warmup, seed)
    state = st.new_stream(weights, plan)

    if head == "transformer":
        def run_one(frame):
            return st.step(state, frame)

        head_flops = md.head_flops_per_frame(config)
        pipeline_flops = md.flops_per_frame(config)
    elif head == "deconv":
        dcfg = deconv_config or dc.DeconvConfig(in_channels=config.model_dim)
        if dcfg.upsampling_factor != config.samples_per_frame:
            raise ValidationError(
                f"deconv strides compose to {dcfg.upsampling_factor}, "
                f"config needs {config.samples_per_frame}"
            )
        dweights = dc.init_deconv_weights(dcfg, seed)
        dstream = dc.DeconvStream(dweights)

        def run_one(frame):
            hidden = st.step_hidden(state, frame)
            return dstream.step(hidden[0])

        head_flops = dc.deconv_flops_per_frame(dcfg)
        pipeline_flops = (md.flops_per_frame(config)
                          - md.head_flops_per_frame(config) + head_flops)
    else:
        raise ValidationError(f"unknown head {head!r}")

    for frame in frames[:warmup]:
        run_one(frame)
    latencies = np.empty(chunks, dtype=np.float64)
    for i, frame in enumerate(frames[warmup:]):
        t0 = time.perf_counter()
        run_one(frame)
        latencies[i] = time.perf_counter() - t0
    lat_ms = latencies * 1e3
    p50, p95, p99 = np.percentile(lat_ms, [50.0, 95.0, 99.0])
    mean = float(lat_ms.mean())
    return BenchReport(
        head=head,
        plan=plan.to_string(),
        config=_config_summary(config),
        chunks=chunks,
        warmup=warmup,
        latency_ms_mean=mean,
        latency_ms_p50=float(p50),
        latency_ms_p95=float(p95),
        latency_ms_p99=float(p99),
        rtf=mean / config.chunk_ms,
        flops_per_frame=pipeline_flops,
        head_flops_per_frame=head_flops,
        storage_bytes=qz.storage_bytes(plan, config),
    )


# ---------------------------------------------------------------------------
# Quantization sensitivity sweep
# ---------------------------------------------------------------------------


def decode_frames(weights: md.DecoderWeights, frames,
                  plan: qz.PrecisionPlan | None = None) -> np.ndarray:
    """Streaming decode of a frame sequence (the path both CLI decode and
    the sweep use)."""
    return st.decode_frames(weights, frames, plan)


@dataclass
class SweepReport:
    config: dict
    reference_plan: str
    include_scales: bool
    rows: list  # dicts: plan, storage_bytes, storage_mb, si_sdr_db, mel_l1

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "reference_plan": self.reference_plan,
            "include_scales": self.include_scales,
            "rows": self.rows,
        }

    def format_text(self) -> str:
        lines = [f"{'plan':<44} {'MB':>8} {'SI-SDR':>9} {'mel-L1':>9}"]
        for r in self.rows:
            sdr = "-inf" if r["si_sdr_db"] is None else f"{r['si_sdr_db']:.2f}"
            lines.append(
                f"{r['plan']:<44} {r['storage_mb']:>8.1f} "
                f"{sdr:>9} {r['mel_l1']:>9.5f}"
            )
        return "\n".join(lines)


def run_quant_sweep(weights: md.DecoderWeights, frames, plans,
                    include_scales: bool = False,
                    activation_quant: bool = False) -> SweepReport:
    """Decode ``frames`` under each (name, plan) pair and score against the
    FP32 decode of the same weights: ladder storage, SI-SDR, and
    multi-scale mel L1 distance."""
    config = weights.config
    mel_cfg = mt.MelConfig(sample_rate=config.sample_rate)
    min_samples = max(mel_cfg.fft_sizes)
    if len(frames) * config.samples_per_frame < min_samples:
        raise ValidationError(
            f"need at least {-(-min_samples // config.samples_per_frame)} frames "
            "to evaluate the mel distance"
        )
    fp32_plan = qz.PrecisionPlan.all_fp32(config.num_layers)
    reference = decode_frames(weights, frames, fp32_plan)
    rows = []
    for name, plan in plans:
        plan = qz.PrecisionPlan(
            plan.transformer_layer_schemes, plan.linear_head_scheme, activation_quant
        )
        out = decode_frames(weights, frames, plan)
        storage = qz.storage_bytes(plan, config, include_scales)
        sdr = mt.si_sdr(reference, out)
        rows.append({
            "plan": name,
            "storage_bytes": storage,
            "storage_mb": storage / 1e6,
            # -inf (orthogonal/zero estimate) is not representable in JSON
            "si_sdr_db": sdr if math.isfinite(sdr) else None,
            "mel_l1": mt.multiscale_mel_l1(reference, out, mel_cfg),
        })
    return SweepReport(
        config=_config_summary(config),
        reference_plan=fp32_plan.to_string(),
        include_scales=include_scales,
        rows=rows,
    )
