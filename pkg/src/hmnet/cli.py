"""Command-line entry point: ingest, train, eval, ablate, noise, memsweep,
selfcheck. Exit codes: 0 success, 1 validation failure, 2 runtime failure."""

from __future__ import annotations

import argparse
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, load_run_config, write_resolved
from .data import DataError, split_and_standardize, write_cache
from .experiments import (
    ExperimentSetup,
    run_ablation_suite,
    run_memory_sweep,
    run_noise_sweep,
)
from .model import HMNet
from .reporting import plot_training_history, write_report_json, write_reports_csv
from .selfcheck import run_selfcheck
from .training import TrainingDiverged, apply_ablation, evaluate, train


def _out_dir(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out / f"{command}_config_resolved.ini")
    return out


def _setup(cfg: RunConfig) -> ExperimentSetup:
    ds = cfg.data.load()
    return ExperimentSetup(
        dataset=ds, name=cfg.data.name, ratios=cfg.data.ratios, model=cfg.model, train=cfg.train
    )


def _seeds(cfg: RunConfig) -> tuple[int, ...]:
    return tuple(cfg.train.seed + i for i in range(cfg.sweep.seeds))


def cmd_ingest(cfg: RunConfig) -> int:
    ds = cfg.data.load(prefer_cache=False)
    out = _out_dir(cfg, "ingest")
    cache = cfg.data.cache_path() or out / f"{cfg.data.name}.cache"
    write_cache(ds, cache)
    windows = split_and_standardize(ds, cfg.data.ratios, cfg.model.input_length, cfg.model.horizon)
    print(f"dataset {cfg.data.name}: T_total={ds.length} N={ds.num_variables} "
          f"frequency={ds.frequency}")
    print(f"cache written to {cache}")
    for split in ("train", "val", "test"):
        print(f"  {split} windows (T={cfg.model.input_length}, H={cfg.model.horizon}): "
              f"{windows.n_windows(split)}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    setup = _setup(cfg)
    out = _out_dir(cfg, "train")
    windows = split_and_standardize(
        setup.dataset, setup.ratios, cfg.model.input_length, cfg.model.horizon
    )
    model_cfg = apply_ablation(
        replace(cfg.model, num_variables=setup.dataset.num_variables, seed=cfg.train.seed),
        cfg.train.ablation,
    )
    model = HMNet(model_cfg)
    history = train(model, windows, cfg.train, verbose=True)
    model.save(out / "model.ckpt")
    report = evaluate(model, windows, "test", dataset=cfg.data.name, variant=cfg.train.ablation)
    report.seed = cfg.train.seed
    report.epochs_run = history.epochs_run
    report.wall_time_s = history.wall_time_s
    write_report_json(report, out)
    write_reports_csv([report], out / f"{cfg.data.name}_train.csv")
    plot_training_history(history.train_loss, history.val_mse, out / f"{cfg.data.name}_history.png")
    print(f"best epoch {history.best_epoch}/{history.epochs_run}  "
          f"test mse {report.mse:.4f}  mae {report.mae:.4f}")
    print(f"checkpoint written to {out / 'model.ckpt'}")
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: str) -> int:
    if not checkpoint:
        raise ConfigError("eval needs --checkpoint pointing at a trained model")
    setup = _setup(cfg)
    out = _out_dir(cfg, "eval")
    model = HMNet.load(checkpoint)
    windows = split_and_standardize(
        setup.dataset, setup.ratios, model.config.input_length, model.config.horizon
    )
    report = evaluate(model, windows, "test", dataset=cfg.data.name, variant=cfg.train.ablation)
    write_report_json(report, out)
    write_reports_csv([report], out / f"{cfg.data.name}_eval.csv")
    print(f"test mse {report.mse:.4f}  mae {report.mae:.4f}  ({report.n_windows} windows)")
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    out = _out_dir(cfg, "ablate")
    reports = run_ablation_suite(
        _setup(cfg), list(cfg.sweep.horizons), seeds=_seeds(cfg), out_dir=out, jobs=cfg.jobs
    )
    for r in sorted(reports, key=lambda r: (r.horizon, r.variant, r.seed)):
        print(f"h={r.horizon:<4} {r.variant:<12} seed={r.seed}  mse {r.mse:.4f}  mae {r.mae:.4f}")
    return 0


def cmd_noise(cfg: RunConfig) -> int:
    out = _out_dir(cfg, "noise")
    reports = run_noise_sweep(
        _setup(cfg),
        cfg.model.horizon,
        settings=cfg.noise.settings,
        probabilities=cfg.noise.probabilities,
        seeds=_seeds(cfg),
        out_dir=out,
        jobs=cfg.jobs,
    )
    for r in sorted(reports, key=lambda r: (r.noise_setting, r.noise_probability, r.variant, r.seed)):
        print(f"{r.noise_setting:<15} p={r.noise_probability:.1f} {r.variant:<11} "
              f"seed={r.seed}  mse {r.mse:.4f}")
    return 0


def cmd_memsweep(cfg: RunConfig) -> int:
    out = _out_dir(cfg, "memsweep")
    reports = run_memory_sweep(
        _setup(cfg),
        list(cfg.sweep.horizons),
        mk_pairs=cfg.sweep.memory_configs,
        seeds=_seeds(cfg),
        out_dir=out,
        jobs=cfg.jobs,
    )
    for r in sorted(reports, key=lambda r: (r.horizon, r.memory_capacity, r.seed)):
        print(f"h={r.horizon:<4} M={r.memory_capacity:<6} K={r.top_k:<3} seed={r.seed}  "
              f"mse {r.mse:.4f}  mae {r.mae:.4f}")
    return 0


def cmd_selfcheck(corrupt: str | None) -> int:
    results = run_selfcheck(corrupt=corrupt)
    for res in results:
        print(res.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 0 if not failed else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmnet",
        description="Hierarchical memorizing forecast network: training and experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", required=True, help="INI run configuration")
            p.add_argument("--out", default=None, help="output directory (overrides config)")
            p.add_argument("--seed", type=int, default=None, help="base seed override")
            p.add_argument("--horizon", type=int, default=None, help="forecast horizon override")
            p.add_argument("--jobs", type=int, default=None, help="parallel training jobs")
        return p

    add("ingest", "validate a dataset and write its binary cache")
    add("train", "train one model and write checkpoint plus report")
    p_eval = add("eval", "evaluate a trained checkpoint on the test split")
    p_eval.add_argument("--checkpoint", required=True, help="model checkpoint path")
    add("ablate", "train and compare the four module-switch variants")
    add("noise", "noise-robustness sweep over the configured probabilities")
    add("memsweep", "memory size / retrieved-K sweep")
    p_check = add("selfcheck", "run built-in correctness checks", needs_config=False)
    p_check.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selfcheck":
            return cmd_selfcheck(args.corrupt)
        overrides = {"seed": args.seed, "horizon": args.horizon, "out": args.out, "jobs": args.jobs}
        cfg = load_run_config(args.config, overrides)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        if args.command == "noise":
            return cmd_noise(cfg)
        if args.command == "memsweep":
            return cmd_memsweep(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
