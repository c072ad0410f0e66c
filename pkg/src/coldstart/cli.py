"""Command-line entry point: ``coldstart <subcommand> --config run.toml``.

Subcommands run one pipeline stage each and exchange artifacts through the
output directory: simulate -> train -> fit-startmap -> continue / robustness,
then report. ``all`` chains the stages the configuration asks for.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from coldstart.experiments import pipeline as pl
from coldstart.experiments import store
from coldstart.experiments.config import ExperimentConfig, load_config

log = logging.getLogger("coldstart")


def _load(args) -> tuple[ExperimentConfig, pl.Workspace]:
    cfg = load_config(args.config, seed=args.seed, output_dir=args.out, threads=args.threads)
    return cfg, pl.Workspace(cfg.output_dir)


def cmd_simulate(args) -> int:
    cfg, ws = _load(args)
    pl.save_trajectories(ws, pl.simulate(cfg))
    ws.update_manifest(cfg, "simulate", {"n_train": cfg.train.n_trajectories, "n_test": cfg.test.n_trajectories})
    print(f"trajectories written to {ws.root / 'trajectories'}")
    return 0


def cmd_train(args) -> int:
    cfg, ws = _load(args)
    model, rd, info = pl.train(cfg, pl.load_observations(ws, "train", cfg.train.length))
    store.save_esn(ws.esn, model)
    store.save_readout(ws.readout, rd)
    ws.update_manifest(cfg, "train", info)
    print(f"reservoir and {cfg.readout.kind} readout written to {ws.root / 'model'}")
    return 0


def cmd_fit_startmap(args) -> int:
    cfg, ws = _load(args)
    smap, info = pl.fit_starting_map(cfg, store.load_esn(ws.esn), pl.load_observations(ws, "train", cfg.train.length))
    store.save_starting_map(ws.starting_map, smap)
    ws.update_manifest(cfg, "fit_startmap", info)
    print(f"{smap.kind} starting map written to {ws.starting_map} (train consistency {info['train_consistency_median']:.3%})")
    return 0


def _models(cfg, ws, need_map: bool):
    model = store.load_esn(ws.esn)
    rd = store.load_readout(ws.readout)
    smap = store.load_starting_map(ws.starting_map) if need_map else None
    return model, rd, smap


def cmd_continue(args) -> int:
    cfg, ws = _load(args)
    need_map = "coldstart" in cfg.continuation.modes
    model, rd, smap = _models(cfg, ws, need_map)
    results = pl.run_continuation_stage(cfg, ws, model, rd, smap, pl.load_observations(ws, "test", cfg.test.length))
    _print_summary(pl.summarize(results))
    return 0


def cmd_robustness(args) -> int:
    cfg, ws = _load(args)
    if cfg.robustness is None:
        print("error: configuration has no [robustness] section", file=sys.stderr)
        return 2
    model, rd, smap = _models(cfg, ws, True)
    table = pl.run_robustness_stage(cfg, ws, model, rd, smap, pl.load_observations(ws, "test", cfg.test.length))
    _print_regression(table)
    return 0


def cmd_all(args) -> int:
    cfg, _ = _load(args)
    if cfg.robustness is not None:
        _print_regression(pl.run_robustness_sweep(cfg))
    else:
        _print_summary(pl.summarize(pl.run_path_continuation(cfg)))
    return 0


def cmd_report(args) -> int:
    cfg, ws = _load(args)
    found = False
    summary_csv = ws.root / "mse_summary.csv"
    if summary_csv.exists():
        found = True
        by_mode = pl.read_mse_summary(summary_csv)
        stats = {}
        for m, v in by_mode.items():
            ok = v[np.isfinite(v)]
            stats[m] = {"median_mse": float(np.median(ok)), "mean_mse": float(np.mean(ok)), "n": len(v), "n_failed": len(v) - len(ok)}
        _print_summary(stats)
    sweep_csv = ws.root / "robustness.csv"
    if sweep_csv.exists():
        found = True
        _print_regression(pl.read_robustness(sweep_csv))
    if not found:
        print(f"nothing to report under {ws.root}", file=sys.stderr)
        return 1
    return 0


def _print_summary(stats: dict) -> None:
    print(f"{'mode':<14}{'median MSE':>14}{'mean MSE':>14}{'runs':>7}{'failed':>8}")
    for mode, s in stats.items():
        print(f"{mode:<14}{s['median_mse']:>14.6g}{s['mean_mse']:>14.6g}{s['n']:>7d}{s['n_failed']:>8d}")


def _print_regression(table: pl.SweepTable) -> None:
    reg = pl.sweep_regression(table)
    print(f"rows: {len(table)}")
    print(f"mean MSE ~ {reg['intercept']:.6g} + {reg['slope']:.6g} * sigma^2   (R^2 = {reg['r2']:.4f})")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="TOML experiment configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="override the configured output directory")
    common.add_argument("--threads", type=int, help="worker threads for test trajectories and sweep levels")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="coldstart", description="Cold-started echo state network experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, text in (
        ("simulate", cmd_simulate, "integrate the train and test ensembles"),
        ("train", cmd_train, "generate the reservoir and fit the readout"),
        ("fit-startmap", cmd_fit_startmap, "fit the starting map on (window, state) pairs"),
        ("continue", cmd_continue, "run the path-continuation comparison"),
        ("robustness", cmd_robustness, "run the perturbation sweep"),
        ("report", cmd_report, "summarize CSV outputs"),
        ("all", cmd_all, "run every stage the configuration needs"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
