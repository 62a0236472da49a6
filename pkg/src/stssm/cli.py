"""Command-line entry point.

Subcommands: check (invariant suite), flops (cost report), bench (scaling
sweep), train, eval, delta (step-size map export). All randomness flows
from --seed; outputs land under --out.
"""

from __future__ import annotations

import os

# Pin BLAS pools before numpy loads: timing fits assume single-threaded
# math unless VMAMBA_THREADS raises the cap.
_threads = os.environ.get("VMAMBA_THREADS", "1")
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse
import json
import sys

import numpy as np

from . import bench, tensor
from .check import run_checks
from .data import DatasetConfig, gen_dataset, save_dataset
from .exceptions import StssmError
from .model import (ModelConfig, delta_csv, delta_pgms, extract_delta_maps,
                    load_checkpoint, save_checkpoint)
from .frontend import VideoClip
from .train import TrainConfig, evaluate, metrics_csv, train


def _load_config(path) -> dict:
    with open(path) as fh:
        raw = json.load(fh)
    known = {"model", "train", "data"}
    unknown = set(raw) - known
    if unknown:
        raise StssmError(f"unknown config sections: {sorted(unknown)}")
    return raw


def _model_config(raw: dict) -> ModelConfig:
    return ModelConfig.from_dict(raw.get("model", {}))


def _write(out_dir, name, text):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def cmd_check(args) -> int:
    failures, report = run_checks(seed=args.seed, emit=print if args.verbose else None)
    if not args.verbose:
        print(report, end="")
    if args.out:
        _write(args.out, "check_report.txt", report)
    return 1 if failures else 0


def cmd_flops(args) -> int:
    cfg = _model_config(_load_config(args.config))
    report = bench.count_flops(cfg)
    text = report.to_json()
    print(text)
    if args.out:
        _write(args.out, "cost_report.json", text + "\n")
    return 0


def cmd_bench(args) -> int:
    ns = [int(v) for v in args.sweep.split(",")]
    rng = np.random.default_rng(args.seed)
    result = bench.scaling_experiment(ns, d=args.dim, n_state=args.state,
                                      trials=args.trials, rng=rng)
    print(result.csv(), end="")
    print(f"# scan slope {result.scan_slope:.3f} (R2 {result.scan_r2:.4f}); "
          f"attention slope {result.attn_slope:.3f} (R2 {result.attn_r2:.4f})")
    for warning in result.warnings:
        print(f"# warning: {warning}")
    if args.out:
        _write(args.out, "scaling.csv", result.csv())
    if args.compare_kernels:
        _, csv_text = bench.compare_scan_backends(ns, d=args.dim, n_state=args.state,
                                                  trials=args.trials,
                                                  rng=np.random.default_rng(args.seed))
        print(csv_text, end="")
        if args.out:
            _write(args.out, "kernel_compare.csv", csv_text)
    return 0


def cmd_train(args) -> int:
    raw = _load_config(args.config)
    cfg = _model_config(raw)
    tc = TrainConfig.from_dict(raw.get("train", {}))
    if args.seed is not None:
        tc.seed = args.seed
    dc = DatasetConfig.from_dict(raw.get("data", {}))
    train_set = gen_dataset(dc.n_train, dc.frames, dc.size, dc.noise_std,
                            seed=tc.seed, thickness=dc.bar_thickness)
    eval_set = gen_dataset(dc.n_eval, dc.frames, dc.size, dc.noise_std,
                           seed=tc.seed + 1, thickness=dc.bar_thickness)
    log = print if args.verbose else None
    result = train(cfg, train_set, eval_set, tc, log=log)
    save_checkpoint(args.out, cfg, result.weights)
    _write(args.out, "metrics.csv", metrics_csv(result.metrics))
    _write(args.out, "train_config.json",
           json.dumps({"train": tc.to_dict(), "data": dc.to_dict()},
                      indent=2, sort_keys=True) + "\n")
    if args.save_dataset:
        save_dataset(os.path.join(args.out, "eval_set"), eval_set)
    final = result.metrics[-1] if result.metrics else (0, float("nan"), float("nan"))
    status = "aborted" if result.aborted else "done"
    print(f"{status}: epochs={len(result.metrics)} loss={final[1]:.4f} acc={final[2]:.4f}")
    return 1 if result.aborted else 0


def _load_eval_data(args, cfg: ModelConfig):
    if args.data:
        from .data import load_dataset
        return load_dataset(args.data)
    with open(os.path.join(args.weights, "train_config.json")) as fh:
        raw = json.load(fh)
    dc = DatasetConfig.from_dict(raw["data"])
    seed = int(raw["train"]["seed"])
    return gen_dataset(dc.n_eval, dc.frames, dc.size, dc.noise_std,
                       seed=seed + 1, thickness=dc.bar_thickness)


def cmd_eval(args) -> int:
    cfg, weights = load_checkpoint(args.weights)
    samples = _load_eval_data(args, cfg)
    acc = evaluate(cfg, weights, samples, args.strategy)
    print(f"strategy={args.strategy} accuracy={acc:.4f} n={len(samples)}")
    return 0


def cmd_delta(args) -> int:
    cfg, weights = load_checkpoint(args.weights)
    clip = VideoClip(tensor.load_tensor(args.clip).array)
    dm = extract_delta_maps(clip, cfg, weights)
    os.makedirs(args.out, exist_ok=True)
    _write(args.out, "delta.csv", delta_csv(dm))
    for name, blob in delta_pgms(dm).items():
        with open(os.path.join(args.out, name), "wb") as fh:
            fh.write(blob)
    print(f"wrote delta.csv and {len(delta_pgms(dm))} pgm maps to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stssm",
                                     description="spatio-temporal selective "
                                                 "state-space model toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("flops", help="print the analytic cost report")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("bench", help="wall-time scaling sweep")
    p.add_argument("--sweep", required=True, help="comma-separated token counts")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--state", type=int, default=16)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--compare-kernels", action="store_true",
                   help="also time the compiled and pure-Python scan kernels")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("train", help="train on the synthetic direction task")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--save-dataset", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under a frame order")
    p.add_argument("--weights", required=True)
    p.add_argument("--strategy", default="sequential")
    p.add_argument("--data", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("delta", help="export per-layer step-size maps")
    p.add_argument("--weights", required=True)
    p.add_argument("--clip", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_delta)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (StssmError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
