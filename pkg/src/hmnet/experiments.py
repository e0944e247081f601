"""Scripted experiment runners: ablations, noise sweeps, memory sizing."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .data import NoiseSpec, TimeSeriesDataset, split_and_standardize
from .model import HMNet, HMNetConfig
from .reporting import (
    MetricReport,
    plot_ablation,
    plot_memory_sweep,
    plot_noise_curves,
    write_report_json,
    write_reports_csv,
)
from .training import TrainConfig, apply_ablation, evaluate, train

DEFAULT_MEMORY_SWEEP = ((256, 1), (4096, 16), (16384, 64))
DEFAULT_NOISE_SETTINGS = (("residual", 0.0, 1.0), ("trend_residual", 1.0, 1.0))
DEFAULT_NOISE_PROBABILITIES = (0.0, 0.1, 0.2, 0.3, 0.4)


@dataclass
class ExperimentSetup:
    """Everything a runner needs to train one model variant from scratch."""

    dataset: TimeSeriesDataset
    name: str
    ratios: tuple[float, float, float]
    model: HMNetConfig  # template; horizon/seed/switches are replaced per run
    train: TrainConfig


def _build_model_config(
    setup: ExperimentSetup,
    horizon: int,
    ablation: str,
    seed: int,
    memory_capacity: int | None = None,
    top_k: int | None = None,
) -> HMNetConfig:
    cfg = replace(
        setup.model,
        num_variables=setup.dataset.num_variables,
        horizon=horizon,
        seed=seed,
        levels=[replace(lv) for lv in setup.model.levels],
    )
    if memory_capacity is not None or top_k is not None:
        cfg.levels = [
            replace(
                lv,
                memory_capacity=memory_capacity or lv.memory_capacity,
                top_k=top_k or lv.top_k,
            )
            for lv in cfg.levels
        ]
    return apply_ablation(cfg, ablation)


def run_single(
    setup: ExperimentSetup,
    horizon: int,
    ablation: str = "full",
    seed: int = 0,
    memory_capacity: int | None = None,
    top_k: int | None = None,
    noise_evals: list[NoiseSpec] | None = None,
    variant: str | None = None,
) -> list[MetricReport]:
    """Train one variant and evaluate on the test split, optionally under a
    list of noise conditions as well. Returns one report per evaluation."""
    windows = split_and_standardize(
        setup.dataset, setup.ratios, setup.model.input_length, horizon
    )
    model_cfg = _build_model_config(setup, horizon, ablation, seed, memory_capacity, top_k)
    model = HMNet(model_cfg)
    train_cfg = replace(setup.train, seed=seed, ablation=ablation)
    history = train(model, windows, train_cfg)

    name = variant if variant is not None else ablation
    mem_cap = model_cfg.levels[0].memory_capacity
    mem_k = model_cfg.levels[0].top_k

    def _finalize(rep: MetricReport) -> MetricReport:
        rep.dataset = setup.name
        rep.variant = name
        rep.seed = seed
        rep.epochs_run = history.epochs_run
        rep.wall_time_s = history.wall_time_s
        rep.memory_capacity = mem_cap
        rep.top_k = mem_k
        return rep

    if noise_evals is None:
        return [_finalize(evaluate(model, windows, "test"))]
    return [_finalize(evaluate(model, windows, "test", noise=spec)) for spec in noise_evals]


def _execute(tasks: list[dict], jobs: int) -> list[MetricReport]:
    if jobs <= 1 or len(tasks) <= 1:
        results = [run_single(**t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_single, **t) for t in tasks]
            results = [f.result() for f in futures]
    return [rep for group in results for rep in group]


def _write_outputs(reports, out_dir, stem, figure_fn) -> None:
    if out_dir is None:
        return
    out_dir = Path(out_dir)
    write_report_json(reports, out_dir)
    write_reports_csv(reports, out_dir / f"{stem}.csv")
    figure_fn(reports, out_dir / f"{stem}.png")


def run_ablation_suite(
    setup: ExperimentSetup,
    horizons: list[int],
    seeds: tuple[int, ...] = (0,),
    out_dir=None,
    jobs: int = 1,
) -> list[MetricReport]:
    """Train full / no_interact / no_denoise / no_both with identical seeds."""
    from .training import ABLATIONS

    tasks = [
        dict(setup=setup, horizon=h, ablation=a, seed=s)
        for h in horizons
        for a in ABLATIONS
        for s in seeds
    ]
    reports = _execute(tasks, jobs)
    _write_outputs(reports, out_dir, f"{setup.name}_ablation", plot_ablation)
    return reports


def run_noise_sweep(
    setup: ExperimentSetup,
    horizon: int,
    settings=DEFAULT_NOISE_SETTINGS,
    probabilities=DEFAULT_NOISE_PROBABILITIES,
    seeds: tuple[int, ...] = (0,),
    out_dir=None,
    jobs: int = 1,
) -> list[MetricReport]:
    """Evaluate trained full and no_denoise models on test inputs perturbed
    at each probability under each noise setting (p=0 rows are the clean
    evaluation, bit for bit)."""
    tasks = []
    for ablation in ("full", "no_denoise"):
        for s in seeds:
            evals = [
                NoiseSpec(setting, mean=m, std=sd, probability=p, seed=s)
                for (setting, m, sd) in settings
                for p in probabilities
            ]
            tasks.append(
                dict(setup=setup, horizon=horizon, ablation=ablation, seed=s, noise_evals=evals)
            )
    reports = _execute(tasks, jobs)
    _write_outputs(reports, out_dir, f"{setup.name}_h{horizon}_noise", plot_noise_curves)
    return reports


def run_memory_sweep(
    setup: ExperimentSetup,
    horizons: list[int],
    mk_pairs=DEFAULT_MEMORY_SWEEP,
    seeds: tuple[int, ...] = (0,),
    out_dir=None,
    jobs: int = 1,
) -> list[MetricReport]:
    """Retrain the full model for each (memory size, retrieved-K) pair."""
    tasks = [
        dict(
            setup=setup,
            horizon=h,
            ablation="full",
            seed=s,
            memory_capacity=m,
            top_k=k,
            variant=f"m{m}_k{k}",
        )
        for h in horizons
        for (m, k) in mk_pairs
        for s in seeds
    ]
    reports = _execute(tasks, jobs)
    _write_outputs(reports, out_dir, f"{setup.name}_memsweep", plot_memory_sweep)
    return reports
