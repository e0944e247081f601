"""Metric reports, delimited/JSON writers, and figure rendering."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


@dataclass
class MetricReport:
    """One evaluation outcome. mse/mae are on the standardized scale the
    benchmark protocol reports; *_raw undo the global z-score as well."""

    dataset: str
    horizon: int
    variant: str
    mse: float
    mae: float
    mse_raw: float = 0.0
    mae_raw: float = 0.0
    n_windows: int = 0
    split: str = "test"
    seed: int = 0
    epochs_run: int = 0
    wall_time_s: float = 0.0
    noise_setting: str | None = None
    noise_probability: float | None = None
    noise_mean: float | None = None
    noise_std: float | None = None
    memory_capacity: int | None = None
    top_k: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


CSV_FIELDS = list(MetricReport("", 0, "", 0.0, 0.0).to_dict().keys())


def report_slug(report: MetricReport) -> str:
    """Variant slug used in file names; noise conditions are appended so
    sweep rows do not collide."""
    slug = report.variant
    if report.noise_setting is not None and report.noise_probability is not None:
        slug += f"_{report.noise_setting}_p{int(round(report.noise_probability * 100)):02d}"
    return slug


def report_filename(report: MetricReport) -> str:
    return f"{report.dataset}_{report.horizon}_{report_slug(report)}.json"


def write_report_json(reports: list[MetricReport] | MetricReport, out_dir) -> list[Path]:
    """One JSON per (dataset, horizon, variant slug); multi-seed runs are
    aggregated with per-run records kept."""
    if isinstance(reports, MetricReport):
        reports = [reports]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: dict[str, list[MetricReport]] = {}
    for r in reports:
        groups.setdefault(report_filename(r), []).append(r)
    written = []
    for fname, rs in groups.items():
        payload = {
            "dataset": rs[0].dataset,
            "horizon": rs[0].horizon,
            "variant": rs[0].variant,
            "mse": sum(r.mse for r in rs) / len(rs),
            "mae": sum(r.mae for r in rs) / len(rs),
            "runs": [r.to_dict() for r in rs],
        }
        path = out_dir / fname
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written.append(path)
    return written


def write_reports_csv(reports: list[MetricReport], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.to_dict())
    return path


def read_reports_csv(path) -> list[MetricReport]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                if v == "":
                    kw[k] = None
                    continue
                if k in ("horizon", "n_windows", "seed", "epochs_run", "memory_capacity", "top_k"):
                    kw[k] = int(v)
                elif k in ("mse", "mae", "mse_raw", "mae_raw", "wall_time_s",
                           "noise_probability", "noise_mean", "noise_std"):
                    kw[k] = float(v)
                else:
                    kw[k] = v
            out.append(MetricReport(**kw))
    return out


# ---------------------------------------------------------------------------
# figures


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_training_history(train_loss, val_mse, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    epochs = range(1, len(train_loss) + 1)
    ax.plot(epochs, train_loss, label="train loss", marker="o", ms=3)
    ax.plot(epochs, val_mse, label="val mse", marker="s", ms=3)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mse")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def plot_ablation(reports: list[MetricReport], path) -> Path:
    horizons = sorted({r.horizon for r in reports})
    variants = []
    for r in reports:
        if r.variant not in variants:
            variants.append(r.variant)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / max(len(variants), 1)
    for i, v in enumerate(variants):
        xs, ys = [], []
        for j, h in enumerate(horizons):
            rows = [r.mse for r in reports if r.variant == v and r.horizon == h]
            if rows:
                xs.append(j + i * width)
                ys.append(sum(rows) / len(rows))
        ax.bar(xs, ys, width=width, label=v)
    ax.set_xticks([j + width * (len(variants) - 1) / 2 for j in range(len(horizons))])
    ax.set_xticklabels([str(h) for h in horizons])
    ax.set_xlabel("horizon")
    ax.set_ylabel("test mse")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_noise_curves(reports: list[MetricReport], path) -> Path:
    settings = sorted({r.noise_setting for r in reports if r.noise_setting is not None})
    fig, axes = plt.subplots(1, max(len(settings), 1), figsize=(5 * max(len(settings), 1), 3.5),
                             squeeze=False)
    for ax, setting in zip(axes[0], settings):
        variants = sorted({r.variant for r in reports})
        for v in variants:
            rows = [r for r in reports if r.variant == v and r.noise_setting == setting]
            by_p: dict[float, list[float]] = {}
            for r in rows:
                by_p.setdefault(r.noise_probability, []).append(r.mse)
            ps = sorted(by_p)
            ax.plot(ps, [sum(by_p[p]) / len(by_p[p]) for p in ps], marker="o", label=v)
        ax.set_title(f"setting: {setting}")
        ax.set_xlabel("noise probability")
        ax.set_ylabel("test mse")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_memory_sweep(reports: list[MetricReport], path) -> Path:
    configs = []
    for r in reports:
        key = (r.memory_capacity, r.top_k)
        if key not in configs:
            configs.append(key)
    configs.sort(key=lambda mk: (mk[0] or 0, mk[1] or 0))
    horizons = sorted({r.horizon for r in reports})
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = range(len(configs))
    for h in horizons:
        ys = []
        for mk in configs:
            rows = [r.mse for r in reports
                    if (r.memory_capacity, r.top_k) == mk and r.horizon == h]
            ys.append(sum(rows) / len(rows) if rows else float("nan"))
        ax.plot(xs, ys, marker="o", label=f"H={h}")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([f"M={m}\nK={k}" for m, k in configs], fontsize=8)
    ax.set_ylabel("test mse")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _finish(fig, path)
