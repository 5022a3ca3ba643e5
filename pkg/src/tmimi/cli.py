"""Command-line entry point.

Subcommands: init-weights, gen-frames, decode, stream-bench, quant-sweep,
info. Every command is deterministic given its seed and inputs, except the
wall-clock latency fields of stream-bench. Exit codes: 0 success, 1 usage
error, 2 data/validation error, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import wave

import numpy as np

from . import bench as bn
from . import model as md
from . import quantization as qz
from . import weightstore as ws
from .errors import TmimiError

__all__ = ["main", "build_parser"]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tmimi", description=__doc__.strip().splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    iw = sub.add_parser("init-weights", parents=[], help="create a deterministic weight file")
    iw.add_argument("--config", default="t-mimi-12x2048",
                    help="preset name or path to a JSON config file")
    iw.add_argument("--seed", type=int, default=0)
    iw.add_argument("--plan", default=None,
                    help="precision plan string, e.g. T1-10:int8,T11-12:fp32,L:fp32 "
                         "(default: all fp32)")
    iw.add_argument("--act-quant", action="store_true",
                    help="enable dynamic int8 activation fake-quant in the stored plan")
    iw.add_argument("--out", required=True)

    gf = sub.add_parser("gen-frames", help="write a random frames file")
    gf.add_argument("--config", default="t-mimi-12x2048")
    gf.add_argument("--count", type=int, default=16)
    gf.add_argument("--seed", type=int, default=0)
    gf.add_argument("--variant", choices=["tokens", "latents"], default="tokens")
    gf.add_argument("--out", required=True)

    de = sub.add_parser("decode", help="decode a frames file to a WAV file")
    de.add_argument("--weights", required=True)
    de.add_argument("--frames", default=None, help="frames file (TMFR)")
    de.add_argument("--random", type=int, default=None, metavar="N",
                    help="decode N random frames instead of reading a file")
    de.add_argument("--seed", type=int, default=0, help="seed for --random")
    de.add_argument("--out", required=True, help="output WAV path")

    sb = sub.add_parser("stream-bench", help="per-chunk latency benchmark")
    sb.add_argument("--weights", required=True)
    sb.add_argument("--chunks", type=int, default=500)
    sb.add_argument("--warmup", type=int, default=50)
    sb.add_argument("--head", choices=["transformer", "deconv"], default="transformer")
    sb.add_argument("--seed", type=int, default=0)
    sb.add_argument("--pin-core", action="store_true",
                    help="pin the process to one CPU core (Linux)")
    sb.add_argument("--json", action="store_true")

    qs = sub.add_parser("quant-sweep", help="mixed-precision sensitivity sweep")
    qs.add_argument("--weights", required=True)
    qs.add_argument("--plans", default="builtin-table2",
                    help="'builtin-table2' or a file with one plan string per line")
    qs.add_argument("--frames", default=None)
    qs.add_argument("--random", type=int, default=16, metavar="N",
                    help="use N random frames when --frames is not given")
    qs.add_argument("--seed", type=int, default=0)
    qs.add_argument("--act-quant", action="store_true")
    qs.add_argument("--include-scales", action="store_true",
                    help="count scale floats in the storage column")
    qs.add_argument("--json", action="store_true")

    nf = sub.add_parser("info", help="summarize a weight file")
    nf.add_argument("--weights", required=True)
    nf.add_argument("--json", action="store_true")

    return p


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _resolve_config(spec: str) -> md.DecoderConfig:
    if spec in md.PRESETS:
        return md.PRESETS[spec]
    if os.path.exists(spec):
        with open(spec, "r", encoding="utf-8") as fh:
            fields = json.load(fh)
        return md.DecoderConfig(**fields)
    raise _UsageError(f"--config: unknown preset and no such file: {spec!r}")


def _resolve_plan(plan_str: str | None, config: md.DecoderConfig,
                  act_quant: bool) -> qz.PrecisionPlan:
    if plan_str is None:
        plan = qz.PrecisionPlan.all_fp32(config.num_layers)
        plan.activation_quant = act_quant
        return plan
    plan = qz.PrecisionPlan.from_string(plan_str, activation_quant=act_quant)
    plan.validate_for(config.num_layers)
    return plan


def write_wav(path, waveform: np.ndarray, sample_rate: int) -> None:
    """Mono 16-bit PCM RIFF: clamp to [-1, 1], scale by 32767, round to
    nearest."""
    samples = np.clip(np.asarray(waveform, dtype=np.float64), -1.0, 1.0)
    pcm = np.rint(samples * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


def _load_frames(args, config: md.DecoderConfig):
    if args.frames is not None:
        return ws.read_frames(args.frames, config)
    if getattr(args, "random", None) is not None:
        return ws.random_frames(config, args.random, args.seed)
    raise _UsageError("provide --frames PATH or --random N")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_init_weights(args) -> int:
    config = _resolve_config(args.config)
    plan = _resolve_plan(args.plan, config, args.act_quant)
    weights = ws.init_random(config, args.seed)
    ws.save(weights, plan, config, args.out)
    params = md.param_count(config)
    print(f"wrote {args.out}")
    print(f"params ≈ {params / 1e6:.1f}M ({params})")
    print(f"plan: {plan.to_string()}")
    print(f"storage (plan): {qz.storage_bytes(plan, config) / 1e6:.1f} MB")
    print(f"storage (fp32): {4 * params / 1e6:.1f} MB")
    return 0


def _cmd_gen_frames(args) -> int:
    config = _resolve_config(args.config)
    frames = ws.random_frames(config, args.count, args.seed, args.variant)
    ws.write_frames(args.out, frames, config)
    print(f"wrote {args.out}: {args.count} {args.variant} frames")
    return 0


def _cmd_decode(args) -> int:
    weights, plan, config = ws.load(args.weights)
    frames = _load_frames(args, config)
    waveform = bn.decode_frames(weights, frames, plan)
    write_wav(args.out, waveform, config.sample_rate)
    dur = len(waveform) / config.sample_rate
    print(f"wrote {args.out}: {len(frames)} frames, {len(waveform)} samples, {dur:.3f}s")
    return 0


def _cmd_stream_bench(args) -> int:
    if args.pin_core and hasattr(os, "sched_setaffinity"):
        os.sched_setaffinity(0, {0})
    weights, plan, _config = ws.load(args.weights)
    report = bn.run_stream_bench(
        weights, plan, chunks=args.chunks, warmup=args.warmup,
        head=args.head, seed=args.seed,
    )
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.format_text())
    return 0


def _parse_plans(args, config: md.DecoderConfig):
    if args.plans == "builtin-table2":
        return qz.table2_plans(config.num_layers)
    if not os.path.exists(args.plans):
        raise _UsageError(f"--plans: not 'builtin-table2' and no such file: {args.plans!r}")
    plans = []
    with open(args.plans, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                plan = qz.PrecisionPlan.from_string(line)
                plan.validate_for(config.num_layers)
            except TmimiError as e:
                raise type(e)(f"plan {line!r}: {e}") from e
            plans.append((line, plan))
    if not plans:
        raise _UsageError(f"--plans file {args.plans!r} contains no plans")
    return plans


def _cmd_quant_sweep(args) -> int:
    weights, _plan, config = ws.load(args.weights)
    plans = _parse_plans(args, config)
    frames = _load_frames(args, config)
    report = bn.run_quant_sweep(
        weights, frames, plans,
        include_scales=args.include_scales,
        activation_quant=args.act_quant,
    )
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        print(report.format_text())
    return 0


def _cmd_info(args) -> int:
    weights, plan, config = ws.load(args.weights)
    params = md.param_count(config)
    payload = {
        "path": str(args.weights),
        "format_version": ws.FORMAT_VERSION,
        "config": bn._config_summary(config),
        "plan": plan.to_string(),
        "activation_quant": plan.activation_quant,
        "params": params,
        "embedding_params": md.embedding_param_count(config),
        "storage_bytes_plan": qz.storage_bytes(plan, config),
        "storage_mb_plan": qz.storage_bytes(plan, config) / 1e6,
        "fp32_storage_bytes": 4 * params,
        "fp32_storage_mb": 4 * params / 1e6,
        "flops_per_frame": md.flops_per_frame(config),
        "head_flops_per_frame": md.head_flops_per_frame(config),
        "file_bytes": os.path.getsize(args.weights),
    }
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(f"layers: {config.num_layers}")
        print(f"model dim: {config.model_dim}  ffn dim: {config.ffn_dim}  "
              f"heads: {config.num_heads}  window: {config.attention_window}")
        print(f"samples/frame: {config.samples_per_frame}  "
              f"sample rate: {config.sample_rate} Hz  frame rate: {config.frame_rate} Hz")
        print(f"params ≈ {params / 1e6:.1f}M ({params}), "
              f"embeddings {payload['embedding_params']}")
        print(f"plan: {payload['plan']}  (activation quant: {plan.activation_quant})")
        print(f"storage (plan): {payload['storage_mb_plan']:.1f} MB")
        print(f"storage (fp32): {payload['fp32_storage_mb']:.1f} MB")
        print(f"flops/frame: {payload['flops_per_frame']} "
              f"(head: {payload['head_flops_per_frame']})")
        print(f"file size: {payload['file_bytes']} bytes")
    return 0


_COMMANDS = {
    "init-weights": _cmd_init_weights,
    "gen-frames": _cmd_gen_frames,
    "decode": _cmd_decode,
    "stream-bench": _cmd_stream_bench,
    "quant-sweep": _cmd_quant_sweep,
    "info": _cmd_info,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except TmimiError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
