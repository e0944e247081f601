"""Training loop with early stopping and scale-correct evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .data import NoiseSpec, WindowDataset, inject_noise
from .model import HMNet, HMNetConfig, LevelConfig
from .optim import Adam
from .reporting import MetricReport
from .tensor import Tensor, backward


class TrainingDiverged(RuntimeError):
    pass


ABLATIONS = ("full", "no_interact", "no_denoise", "no_both")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 3
    seed: int = 0
    ablation: str = "full"

    def validate(self) -> None:
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("patience, batch_size and max_epochs must all be >= 1")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = 0
    epochs_run: int = 0
    wall_time_s: float = 0.0


def apply_ablation(cfg: HMNetConfig, ablation: str) -> HMNetConfig:
    """Return a copy of the model config with the variant's switches set."""
    interact = ablation in ("full", "no_denoise")
    denoise = ablation in ("full", "no_interact")
    levels = [
        LevelConfig(lv.block_size, interact, denoise, lv.memory_capacity, lv.top_k)
        for lv in cfg.levels
    ]
    return replace(cfg, levels=levels)


def train(model: HMNet, windows: WindowDataset, cfg: TrainConfig, verbose: bool = False) -> TrainHistory:
    """Minimize forecast MSE on the normalized scale with Adam.

    After each epoch the validation MSE is measured; training stops once it
    fails to improve for ``patience`` consecutive epochs and the best
    parameters and memory snapshot are restored.
    """
    cfg.validate()
    t0 = time.time()
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    n_train = windows.n_windows("train")
    history = TrainHistory()
    best = np.inf
    best_state = None
    best_mems = None
    since_best = 0

    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n_train)
        losses = []
        for lo in range(0, n_train, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            x, y, tf = windows.batch("train", idx)
            pred, stats = model.forward_normalized(x, tf, training=True)
            y_norm = (y - stats.mean) / stats.scale
            loss = T.mse_loss(pred, Tensor(y_norm))
            lval = float(loss.data)
            if not np.isfinite(lval):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {lo // cfg.batch_size}"
                )
            backward(loss)
            opt.step()
            opt.zero_grad()
            losses.append(lval)

        val = evaluate(model, windows, split="val").mse
        history.train_loss.append(float(np.mean(losses)))
        history.val_mse.append(val)
        history.epochs_run = epoch
        if verbose:
            print(f"epoch {epoch:3d}  train {history.train_loss[-1]:.6f}  val {val:.6f}")
        if val < best:
            best = val
            best_state = model.state_arrays()
            best_mems = model.clone_memories()
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                break

    if best_state is not None:
        model.load_state_arrays(best_state)
        model.restore_memories(best_mems)
    history.wall_time_s = time.time() - t0
    return history


def evaluate(
    model: HMNet,
    windows: WindowDataset,
    split: str = "test",
    noise: NoiseSpec | None = None,
    batch_size: int = 256,
    dataset: str = "",
    variant: str = "",
) -> MetricReport:
    """MSE/MAE over every window of a split. Metrics are on the standardized
    benchmark scale; the *_raw fields additionally undo the global z-score.
    Never mutates the model or its memories."""
    n = windows.n_windows(split)
    rng = None
    if noise is not None and noise.probability > 0.0:
        rng = np.random.default_rng(noise.seed)
    sq = ab = sq_raw = ab_raw = 0.0
    count = 0
    for lo in range(0, n, batch_size):
        idx = np.arange(lo, min(lo + batch_size, n))
        x, y, tf = windows.batch(split, idx)
        if rng is not None:
            x = np.stack([inject_noise(w, noise, rng) for w in x])
        pred = model.forward(x, tf, training=False)
        err = pred - y
        sq += float((err * err).sum())
        ab += float(np.abs(err).sum())
        err_raw = windows.destandardize(pred) - windows.destandardize(y)
        sq_raw += float((err_raw * err_raw).sum())
        ab_raw += float(np.abs(err_raw).sum())
        count += err.size
    return MetricReport(
        dataset=dataset,
        horizon=windows.horizon,
        variant=variant,
        mse=sq / count,
        mae=ab / count,
        mse_raw=sq_raw / count,
        mae_raw=ab_raw / count,
        n_windows=n,
        split=split,
        noise_setting=None if noise is None else noise.setting,
        noise_probability=None if noise is None else noise.probability,
        noise_mean=None if noise is None else noise.mean,
        noise_std=None if noise is None else noise.std,
    )
