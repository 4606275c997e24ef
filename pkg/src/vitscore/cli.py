"""``vitscore`` command line.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or contract
violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import alignment, dsp, losses, verify
from .autograd import NonFiniteError
from .config import ConfigError, load_config
from .duration import (StochasticDurationPredictor, read_duration_jsonl, synthetic_rows, train_sdp,
                       write_duration_jsonl)
from .optim import OptimizerState
from .serialize import load_sdp_checkpoint, save_sdp_checkpoint


class UsageError(Exception):
    """Contract violation reported with exit code 2."""


def _fmt(v: float) -> str:
    return repr(float(v))


# ------------------------------------------------------------------ commands


def cmd_spec(args) -> int:
    cfg = load_config(args.config).stft
    wav = dsp.load_wav(args.input)
    if wav.sample_rate != cfg.sample_rate:
        cfg = replace(cfg, sample_rate=wav.sample_rate)
    spec = dsp.mel_spectrogram(wav, cfg) if args.mel else dsp.stft_magnitude(wav, cfg)
    fmt = args.format or ("csv" if str(args.out).endswith(".csv") else "bin")
    if fmt == "csv":
        dsp.write_matrix_csv(args.out, spec.values)
    else:
        dsp.write_spec_binary(args.out, spec)
    print(f"wrote {spec.scale} spectrogram {spec.frames}x{spec.bins} to {args.out}")
    return 0


def cmd_align(args) -> int:
    value = dsp.read_matrix_csv(args.matrix)
    path = alignment.mas(value)
    durations = alignment.durations_from_path(path)
    dsp.write_matrix_csv(args.out, path)
    if args.durations:
        Path(args.durations).write_text(json.dumps([int(d) for d in durations]) + "\n")
    print(json.dumps({"durations": [int(d) for d in durations], "score": alignment.path_score(value, path)}))
    return 0


def cmd_train_sdp(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.train.seed if args.seed is None else args.seed
    rows = read_duration_jsonl(args.data)
    width = rows[0][1].shape[1]
    sdp_cfg = replace(cfg.sdp, in_channels=width)
    model = StochasticDurationPredictor(sdp_cfg, seed=seed)
    o = cfg.optim
    opt = OptimizerState(learning_rate=o.learning_rate, beta1=o.beta1, beta2=o.beta2,
                         weight_decay=o.weight_decay, eps=o.eps, lr_decay_per_epoch=o.lr_decay_per_epoch)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = Path(args.metrics) if args.metrics else out / "metrics.csv"
    with open(metrics_path, "w") as metrics:
        metrics.write("step,L_dur\n")

        def log(step, loss):
            metrics.write(f"{step},{_fmt(loss)}\n")

        losses_ = train_sdp(model, rows, args.steps, opt, np.random.default_rng(seed),
                            batch_size=cfg.train.batch_size, on_step=log)
    save_sdp_checkpoint(out, model, opt, {"seed": seed, "steps": args.steps})
    if losses_:
        print(f"trained {args.steps} steps: L_dur {losses_[0]:.4f} -> {losses_[-1]:.4f}")
    else:
        print("0 steps: wrote initial checkpoint")
    return 0


def cmd_sample_durations(args) -> int:
    if not Path(args.checkpoint).is_dir():
        raise FileNotFoundError(f"checkpoint {args.checkpoint} not found")
    model, _, _ = load_sdp_checkpoint(args.checkpoint)
    if args.n < 1:
        raise UsageError("--n must be positive")
    if args.noise_scale < 0:
        raise UsageError("--noise-scale must be nonnegative")
    rng = np.random.default_rng(args.seed)
    if args.data:
        cond = read_duration_jsonl(args.data)[0][1].T
    else:
        cond = rng.standard_normal((model.config.in_channels, args.length))
    cond = np.broadcast_to(cond, (args.n,) + cond.shape)
    samples = model.sample_durations(cond, args.noise_scale, rng)
    totals = samples.sum(axis=1)
    with open(args.out, "w") as f:
        f.write("sample,total_duration,durations\n")
        for i, (tot, row) in enumerate(zip(totals, samples)):
            f.write(f"{i},{int(tot)},{' '.join(str(int(v)) for v in row)}\n")
    hist_path = args.hist_out or str(Path(args.out).with_suffix("")) + ".hist.csv"
    counts = Counter(int(t) for t in totals)
    with open(hist_path, "w") as f:
        f.write("total_duration,count\n")
        for k in range(min(counts), max(counts) + 1):
            f.write(f"{k},{counts.get(k, 0)}\n")
    print(f"wrote {args.n} samples to {args.out}, histogram to {hist_path}")
    return 0


def cmd_verify(args) -> int:
    results = verify.run_suites(args.suite)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 1


def _tensor_file(path: str) -> np.ndarray:
    return dsp.read_spec_binary(path).values


def cmd_loss_eval(args) -> int:
    kind = args.kind
    need = {"recon": ("target", "pred"), "adv-d": ("real", "fake"), "adv-g": ("fake",),
            "fm": ("real", "fake"), "kl-closed": ("mu_q", "sigma_q", "mu_p", "sigma_p"), "total": ("components",)}
    for name in need[kind]:
        if not getattr(args, name):
            raise UsageError(f"loss-eval {kind} requires --{name.replace('_', '-')}")
    if kind == "recon":
        value = losses.recon_loss(_tensor_file(args.target[0]), _tensor_file(args.pred[0]),
                                  load_config(args.config).loss.recon_reduction)
    elif kind == "adv-d":
        value = losses.adv_loss_d(_tensor_file(args.real[0]), _tensor_file(args.fake[0]))
    elif kind == "adv-g":
        value = losses.adv_loss_g(_tensor_file(args.fake[0]))
    elif kind == "fm":
        value = losses.fm_loss([_tensor_file(p) for p in args.real], [_tensor_file(p) for p in args.fake])
    elif kind == "kl-closed":
        q = losses.DiagGaussian(_tensor_file(args.mu_q[0]), _tensor_file(args.sigma_q[0]))
        p = losses.DiagGaussian(_tensor_file(args.mu_p[0]), _tensor_file(args.sigma_p[0]))
        value = losses.kl_closed_form(q, p)
    else:
        if len(args.components) != len(losses.COMPONENTS):
            raise UsageError(f"--components needs {len(losses.COMPONENTS)} values {losses.COMPONENTS}")
        value = losses.total_loss(args.components, load_config(args.config).loss.weights())
    print(json.dumps({"loss": kind, "value": value.item()}))
    return 0


def cmd_synth_data(args) -> int:
    rows = synthetic_rows(args.rows, args.length, args.channels, np.random.default_rng(args.seed),
                          args.low, args.high)
    write_duration_jsonl(args.out, rows)
    print(f"wrote {args.rows} rows to {args.out}")
    return 0


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitscore", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="section.key = value configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spec", help="compute a linear or log-mel spectrogram from a WAV file")
    p.add_argument("input")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--mel", action="store_true")
    mode.add_argument("--linear", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "bin"), help="default: csv if --out ends in .csv, else bin")
    p.set_defaults(func=cmd_spec)

    p = sub.add_parser("align", help="monotonic alignment search on a log-likelihood CSV")
    p.add_argument("matrix")
    p.add_argument("--out", required=True, help="path CSV (0/1)")
    p.add_argument("--durations", help="durations JSON")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train-sdp", help="train the stochastic duration predictor")
    p.add_argument("data", help="JSON lines {durations: [...], condition: [[...]]}")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--metrics", help="metrics CSV (default: <out>/metrics.csv)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_sdp)

    p = sub.add_parser("sample-durations", help="sample utterance durations from a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--noise-scale", type=float, default=0.8)
    p.add_argument("--out", required=True)
    p.add_argument("--hist-out", help="histogram CSV (default: <out>.hist.csv)")
    p.add_argument("--data", help="take the condition from the first row of this JSONL file")
    p.add_argument("--length", type=int, default=16, help="tokens in the random condition")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sample_durations)

    p = sub.add_parser("verify", help="run oracle and property suites")
    p.add_argument("--suite", default="all", choices=verify.SUITE_NAMES)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("loss-eval", help="evaluate a loss on tensors stored as spectrogram binary files")
    p.add_argument("kind", choices=("recon", "adv-d", "adv-g", "fm", "kl-closed", "total"))
    for name in ("target", "pred", "real", "fake", "mu-q", "sigma-q", "mu-p", "sigma-p"):
        p.add_argument(f"--{name}", nargs="+")
    p.add_argument("--components", nargs="+", type=float)
    p.set_defaults(func=cmd_loss_eval)

    p = sub.add_parser("synth-data", help="write synthetic uniform-duration training data")
    p.add_argument("--out", required=True)
    p.add_argument("--rows", type=int, default=256)
    p.add_argument("--length", type=int, default=16)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--low", type=int, default=1)
    p.add_argument("--high", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, dsp.DSPError, alignment.AlignmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
