"""Operator command line: train / ablate / sweep / gradcheck / eval / gen.

Exit codes: 0 success, 1 gradcheck failures, 2 configuration problem,
3 numeric fault during training. Ablations and sweeps fan out to one child
process per run (each internally deterministic and single-threaded).
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from . import config as config_mod
from . import synth
from .errors import ConfigError, TrainingFault
from .evaluate import METRIC_FIELDS, evaluate
from .train import LOSS_FIELDS, Trainer

LOSS_HEADER = "step," + ",".join(LOSS_FIELDS)
METRICS_HEADER = "step," + ",".join(METRIC_FIELDS) + "," + ",".join(LOSS_FIELDS)
ABLATION_HEADER = "variant,seed," + ",".join(METRIC_FIELDS) + "," + ",".join(LOSS_FIELDS)
SWEEP_HEADER = "param,value,seed," + ",".join(METRIC_FIELDS) + "," + ",".join(LOSS_FIELDS)

ABLATION_VARIANTS = {
    # rec accompanies alr: the reconstruction loss exists to back the real
    # feature encoder the refinement losses read from
    "base": dict(alr=False, pr=False, sr=False, rec=False, adaptive_weights=True),
    "base_alr": dict(alr=True, pr=False, sr=False, rec=True, adaptive_weights=True),
    "base_alr_pr": dict(alr=True, pr=True, sr=False, rec=True, adaptive_weights=True),
    "full": dict(alr=True, pr=True, sr=True, rec=True, adaptive_weights=True),
    "base_alr_fixed": dict(alr=True, pr=False, sr=False, rec=True, adaptive_weights=False),
}

SWEEP_PARAMS = ("gamma", "eta1", "eta2", "m", "lambda1")


def _fmt(v) -> str:
    return repr(float(v))


def _row(values) -> str:
    return ",".join(_fmt(v) for v in values)


def cmd_train(args) -> int:
    cfg = config_mod.load(args.config)
    if args.steps is not None:
        cfg.steps = args.steps
    out = Path(args.out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.dump(cfg, out / "config.cfg")

    trainer = Trainer(cfg.gan_config(), cfg.dataset_size, cfg.eval_size)
    synth.write_manifest(out / "manifest.tsv", trainer.data.seeds, cfg.t, trainer.data.max_objects)

    losses_path = out / "losses.csv"
    metrics_path = out / "metrics.csv"
    with open(losses_path, "w", encoding="utf-8") as lf, open(
        metrics_path, "w", encoding="utf-8"
    ) as mf:
        lf.write(LOSS_HEADER + "\n")
        mf.write(METRICS_HEADER + "\n")
        last = {k: 0.0 for k in LOSS_FIELDS}

        def flush_metrics(step):
            scores = evaluate(trainer)
            mf.write(
                f"{step}," + _row([scores[k] for k in METRIC_FIELDS])
                + "," + _row([last[k] for k in LOSS_FIELDS]) + "\n"
            )
            mf.flush()

        try:
            for step in range(cfg.steps):
                rec = trainer.train_step(step)
                last = rec
                lf.write(f"{step}," + _row([rec[k] for k in LOSS_FIELDS]) + "\n")
                if cfg.eval_every and (step + 1) % cfg.eval_every == 0 and step + 1 < cfg.steps:
                    flush_metrics(step + 1)
                    ckpt_mod.save(out / "checkpoint.npz", trainer.model, step + 1)
        except TrainingFault as fault:
            (out / "fault.json").write_text(json.dumps({"error": str(fault)}), encoding="utf-8")
            print(f"training fault: {fault}", file=sys.stderr)
            return 3
        if cfg.steps > 0:
            flush_metrics(cfg.steps)
        ckpt_mod.save(out / "checkpoint.npz", trainer.model, cfg.steps)
    return 0


def _spawn_runs(run_specs, jobs: int) -> int:
    """run_specs: (config_path, out_dir) pairs; children train sequentially
    deterministic, scheduling-independent."""
    env = dict(os.environ)
    env.setdefault("OPENBLAS_NUM_THREADS", "1")
    env.setdefault("OMP_NUM_THREADS", "1")

    def launch(spec):
        cfg_path, out_dir = spec
        proc = subprocess.run(
            [sys.executable, "-m", "alrgan.cli", "train", str(cfg_path), "--out-dir", str(out_dir)],
            env=env,
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            sys.stderr.write(proc.stdout + proc.stderr)
        return proc.returncode

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        codes = list(pool.map(launch, run_specs))
    return max(codes, default=0)


def _final_metrics_row(out_dir: Path) -> list[str]:
    lines = (out_dir / "metrics.csv").read_text(encoding="utf-8").strip().splitlines()
    if len(lines) < 2:
        raise ConfigError(f"no metrics rows in {out_dir}")
    return lines[-1].split(",")[1:]  # drop the step column


def cmd_ablate(args) -> int:
    base_cfg = config_mod.load(args.config)
    out = Path(args.out_dir or base_cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = [base_cfg.seed + i for i in range(args.seeds)]
    specs = []
    for name, flags in ABLATION_VARIANTS.items():
        for seed in seeds:
            run_dir = out / f"{name}_seed{seed}"
            run_dir.mkdir(parents=True, exist_ok=True)
            cfg = replace(base_cfg, seed=seed, out_dir=str(run_dir), **flags)
            cfg_path = run_dir / "config.cfg"
            config_mod.dump(cfg, cfg_path)
            specs.append((cfg_path, run_dir))
    code = _spawn_runs(specs, args.jobs)
    if code != 0:
        return code
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write(ABLATION_HEADER + "\n")
        for name in ABLATION_VARIANTS:
            for seed in seeds:
                row = _final_metrics_row(out / f"{name}_seed{seed}")
                fh.write(f"{name},{seed}," + ",".join(row) + "\n")
    return 0


def cmd_sweep(args) -> int:
    base_cfg = config_mod.load(args.config)
    if args.param not in SWEEP_PARAMS:
        print(f"unknown sweep parameter {args.param!r}; choose from {SWEEP_PARAMS}", file=sys.stderr)
        return 2
    try:
        values = [
            int(v) if args.param == "m" else float(v) for v in args.values.split(",") if v.strip()
        ]
    except ValueError:
        print(f"bad sweep values {args.values!r}", file=sys.stderr)
        return 2
    if not values:
        print("empty sweep value list", file=sys.stderr)
        return 2
    out = Path(args.out_dir or base_cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = []
    for v in values:
        run_dir = out / f"{args.param}_{v}"
        run_dir.mkdir(parents=True, exist_ok=True)
        cfg = replace(base_cfg, out_dir=str(run_dir), **{args.param: v})
        cfg_path = run_dir / "config.cfg"
        config_mod.dump(cfg, cfg_path)
        specs.append((cfg_path, run_dir))
    code = _spawn_runs(specs, args.jobs)
    if code != 0:
        return code
    with open(out / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write(SWEEP_HEADER + "\n")
        for v in values:
            row = _final_metrics_row(out / f"{args.param}_{v}")
            fh.write(f"{args.param},{v},{base_cfg.seed}," + ",".join(row) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    fault = os.environ.get("ALR_GRADCHECK_FAULT") or None
    tol = args.tol
    results, failures = gradcheck.run_suite(
        tol_ops=tol,
        tol_composite=tol * 10,
        points=args.points,
        fault=fault,
        end_to_end=not args.skip_end_to_end,
    )
    for name, err, case_tol in results:
        status = "OK  " if err <= case_tol else "FAIL"
        print(f"{status} {name:28s} max_rel_err={err:.3e} tol={case_tol:g}")
    if failures:
        print("failed ops: " + ", ".join(n for n, _, _ in failures), file=sys.stderr)
        return 1
    return 0


def cmd_eval(args) -> int:
    cfg = config_mod.load(args.config)
    trainer = Trainer(cfg.gan_config(), cfg.dataset_size, cfg.eval_size)
    step = ckpt_mod.load(args.checkpoint, trainer.model)
    scores = evaluate(trainer)
    print(METRICS_HEADER)
    zeros = _row([0.0] * len(LOSS_FIELDS))
    print(f"{step}," + _row([scores[k] for k in METRIC_FIELDS]) + "," + zeros)
    return 0


def _write_ppm(path, img: np.ndarray) -> None:
    """img: (3, h, w) in [-1, 1] -> binary P6."""
    arr = np.clip((img.transpose(1, 2, 0) + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        fh.write(arr.tobytes())


def cmd_gen(args) -> int:
    cfg = config_mod.load(args.config)
    trainer = Trainer(cfg.gan_config(), cfg.dataset_size, cfg.eval_size)
    if args.checkpoint:
        ckpt_mod.load(args.checkpoint, trainer.model)
    out = Path(args.out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    count = min(args.count, len(trainer.eval_data.pairs))
    for i in range(count):
        stage_images = trainer.generate(i)
        for j, img in enumerate(stage_images):
            _write_ppm(out / f"gen_{i:03d}_stage{j}.ppm", img)
    print(f"wrote {count} scene(s) x {cfg.m} stage(s) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="alrgan", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("config")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate", help="train the ablation variant set")
    p.add_argument("config")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep", help="sweep one hyperparameter over a value grid")
    p.add_argument("config")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="run the gradient verification suite")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--skip-end-to-end", action="store_true")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("eval", help="compute metrics for a checkpoint")
    p.add_argument("config")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gen", help="test-mode generation to portable pixmaps")
    p.add_argument("config")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=cmd_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingFault as exc:
        print(f"training fault: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
