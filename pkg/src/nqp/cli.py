"""Command line entry point: ``nqp <command> ...``.

Exit codes: 0 success, 1 usage error, 2 validation/config error,
3 numerical divergence.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import PRESETS, ExperimentConfig
from .dataset import (
    DatasetFormatError,
    IntegrationDiverged,
    SamplerError,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .model import (
    CheckpointError,
    ModelDiverged,
    load_checkpoint,
    model_propagator,
    rk4_propagator,
    rollout,
    save_checkpoint,
)
from .quantum import TimeGrid, ValidationError, ketbra
from .training import TrainingDiverged, train
from .validation import reference_trajectory, validate

log = logging.getLogger("nqp")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# helpers

def load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = ExperimentConfig.loads(Path(args.config).read_text())
    else:
        name = getattr(args, "preset", None) or "spin_boson"
        if name not in PRESETS:
            raise UsageError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        cfg = PRESETS[name](paper_scale=getattr(args, "paper_scale", False))
    if getattr(args, "tmax", None) is not None and not isinstance(args.tmax, list):
        cfg = cfg.with_tmax(args.tmax)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    cfg.check()
    return cfg


def parse_field(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"bad field value list {text!r}; expected e.g. 0.3,0.6") from None


def parse_rho0(text: str | None, cfg: ExperimentConfig) -> np.ndarray:
    """``basis:J`` for |J><J|, a JSON file of [re, im] pairs, or the config default."""
    if text is None:
        return cfg.rho0
    if text.startswith("basis:"):
        j = int(text.split(":", 1)[1])
        if not 0 <= j < cfg.spec.dim:
            raise UsageError(f"basis index {j} outside 0..{cfg.spec.dim - 1}")
        return ketbra(cfg.spec.dim, j, j)
    rows = json.loads(Path(text).read_text())
    return np.array([[complex(*z) for z in row] for row in rows])


def steps_for(horizon: float, dt: float) -> int:
    return TimeGrid.from_tmax(dt, horizon).n_steps


def write_trajectory_csv(path, states: np.ndarray, dt: float, d: int) -> None:
    header = ["t"] + [f"{part}_{j}_{jp}" for j in range(d) for jp in range(d)
                      for part in ("re", "im")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n, row in enumerate(states):
            vals = [n * dt]
            for z in row:
                vals += [z.real, z.imag]
            w.writerow([f"{v:.17g}" for v in vals])


def read_trajectory_csv(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1::2] + 1j * data[:, 2::2]


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# commands

def cmd_preset(args) -> int:
    cfg = load_config(args)
    text = cfg.dumps()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = load_config(args)
    ds = generate_dataset(cfg, args.n, args.kind, seed=cfg.seed, threads=args.threads)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    nbytes = save_dataset(ds, out)
    print(f"wrote {out}: n={len(ds)} kind={args.kind} bytes={nbytes} seed={cfg.seed}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(args.data) if args.data else None
    params, report = train(cfg, data=data, out_dir=out, threads=args.threads)
    final = report.rows[-1]["l"] if len(report) else None
    save_checkpoint(params, out / "checkpoint.nqpm",
                    {"seed": cfg.train.seed, "epoch": len(report), "loss": final})
    report.write_csv(out / "loss.csv", include_time=not args.no_timing)
    (out / "config.json").write_text(cfg.dumps())
    print(f"wrote {out / 'checkpoint.nqpm'} epochs={len(report)} final_loss={final}")
    return EXIT_OK


def _checkpoint_config(args):
    params, meta = load_checkpoint(args.checkpoint)
    cfg = load_config(args)
    m = params.config
    if (m.d, m.n_steps, m.k_channels) != (cfg.spec.dim, cfg.grid.n_steps, len(cfg.fields)):
        raise ValidationError(
            f"checkpoint (d={m.d}, n_steps={m.n_steps}, K={m.k_channels}) does not match config "
            f"(d={cfg.spec.dim}, n_steps={cfg.grid.n_steps}, K={len(cfg.fields)})")
    return params, cfg


def cmd_predict(args) -> int:
    params, cfg = _checkpoint_config(args)
    rho0 = parse_rho0(args.rho0, cfg)
    point = parse_field(args.field)
    if len(point) != len(cfg.fields):
        raise UsageError(f"expected {len(cfg.fields)} field values, got {len(point)}")
    channels = [f.channel(v) for f, v in zip(cfg.fields, point)]
    horizon = steps_for(args.horizon, cfg.dt)
    states = rollout(model_propagator(params, channels), rho0, cfg.grid.n_steps, horizon)
    write_trajectory_csv(args.out, states, cfg.dt, cfg.spec.dim)
    if args.reference:
        ref = reference_trajectory(cfg, channels, horizon, rho0)
        write_trajectory_csv(args.reference, ref, cfg.dt, cfg.spec.dim)
    print(f"wrote {args.out}: {states.shape[0]} rows")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args)
    points = [parse_field(f) for f in args.field]
    horizon = steps_for(args.horizon, cfg.dt)
    if args.self_check:
        factory = lambda ch: rk4_propagator(cfg.spec, cfg.baths, ch, cfg.grid)  # noqa: E731
        report = validate(cfg, points, horizon, propagator_factory=factory)
    else:
        params, cfg = _checkpoint_config(args)
        report = validate(cfg, points, horizon, params=params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "validation.csv")
    (out / "validation.json").write_text(report.to_json())
    for r in report.results:
        if r.error:
            print(f"field={r.field}: FAILED {r.error}")
        else:
            beyond = r.beyond.pop_max if r.beyond else float("nan")
            print(f"field={r.field}: pop_max within={r.within.pop_max:.3e} beyond={beyond:.3e}")
    return EXIT_OK


def cmd_ablate_tmax(args) -> int:
    base = load_config(args)
    points = [parse_field(f) for f in args.field]
    horizon = steps_for(args.horizon, base.dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t = np.arange(horizon + 1) * base.dt
    columns = {"t": t}
    refs = {}
    for p in points:
        channels = [f.channel(v) for f, v in zip(base.fields, p)]
        refs[tuple(p)] = channels
        columns[f"rk4_f{'_'.join(map(str, p))}"] = reference_trajectory(
            base, channels, horizon)[:, 0].real
    summary, failures = {}, []
    for tmax in args.tmax:
        try:
            cfg = base.with_tmax(tmax)
            run_dir = out / f"tmax_{tmax:g}"
            run_dir.mkdir(exist_ok=True)
            params, report = train(cfg, out_dir=run_dir, threads=args.threads)
            save_checkpoint(params, run_dir / "checkpoint.nqpm",
                            {"seed": cfg.train.seed, "epoch": len(report)})
            report.write_csv(run_dir / "loss.csv", include_time=not args.no_timing)
            val = validate(cfg, points, horizon, params=params)
            (run_dir / "validation.json").write_text(val.to_json())
            summary[f"{tmax:g}"] = json.loads(val.to_json())
            for p in points:
                pred = rollout(model_propagator(params, refs[tuple(p)]), cfg.rho0,
                               cfg.grid.n_steps, horizon)
                columns[f"tmax{tmax:g}_f{'_'.join(map(str, p))}"] = pred[:, 0].real
        except (ValidationError, IntegrationDiverged, ModelDiverged, TrainingDiverged) as exc:
            failures.append({"tmax": tmax, "error": f"{type(exc).__name__}: {exc}"})
    with open(out / "pg_table.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(columns))
        for row in zip(*columns.values()):
            w.writerow([f"{v:.17g}" for v in row])
    (out / "ablation.json").write_text(
        json.dumps({"runs": summary, "failures": failures}, sort_keys=True, indent=2) + "\n")
    print(f"wrote {out / 'pg_table.csv'}; {len(failures)} failed runs")
    return EXIT_CONFIG if failures and len(failures) == len(args.tmax) else EXIT_OK


# --------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config JSON (default: preset)")
    common.add_argument("--preset", choices=sorted(PRESETS), help="preset used without --config")
    common.add_argument("--seed", type=int, help="override the experiment seed")
    common.add_argument("--threads", type=int, default=1, help="worker/BLAS thread cap")
    common.add_argument("--paper-scale", action="store_true", help="paper-size model and budgets")

    p = _Parser(prog="nqp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preset", parents=[common], help="print a config")
    s.add_argument("name", nargs="?", choices=sorted(PRESETS))
    s.add_argument("--tmax", type=float)
    s.add_argument("--out")
    s.set_defaults(func=cmd_preset)

    s = sub.add_parser("generate", parents=[common], help="write a dataset file")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--kind", choices=("data", "physics"), default="data")
    s.add_argument("--tmax", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", help="dataset file (default: generate from config)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--tmax", type=float)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--no-timing", action="store_true", help="zero the seconds column")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", parents=[common], help="trajectory CSV from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--field", required=True, help="comma-separated field parameters")
    s.add_argument("--rho0", help="basis:J or JSON file of [re, im] pairs")
    s.add_argument("--horizon", type=float, required=True, help="final time")
    s.add_argument("--tmax", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--reference", help="also write the RK4 trajectory here")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("validate", parents=[common], help="compare a checkpoint with RK4")
    s.add_argument("--checkpoint")
    s.add_argument("--field", action="append", required=True)
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--tmax", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--self-check", action="store_true", help="validate RK4 rollout against itself")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("ablate-tmax", parents=[common], help="train/validate per t_max")
    s.add_argument("--tmax", type=float, nargs="+", required=True)
    s.add_argument("--field", action="append", required=True)
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--no-timing", action="store_true")
    s.set_defaults(func=cmd_ablate_tmax)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NQP_LOG", "warning").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "preset" and args.name:
        args.preset = args.name
    if args.command == "validate" and not args.self_check and not args.checkpoint:
        print("nqp validate: --checkpoint is required unless --self-check", file=sys.stderr)
        return EXIT_USAGE
    limits = threadpool_limits(args.threads) if args.threads else contextlib.nullcontext()
    try:
        with limits:
            return args.func(args)
    except UsageError as exc:
        print(f"nqp: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, DatasetFormatError, CheckpointError, SamplerError,
            FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"nqp: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationDiverged, ModelDiverged, TrainingDiverged) as exc:
        print(f"nqp: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
