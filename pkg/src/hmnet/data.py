"""CSV ingestion, timestamp features, split/standardize/window construction,
trend-residual decomposition, and evaluation-time noise injection."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

_CACHE_MAGIC = b"HMNDATA1"
_CACHE_VERSION = 1

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    """Raised for malformed inputs or infeasible split/window requests."""


@dataclass
class TimeSeriesDataset:
    values: np.ndarray  # [T_total, N] float64
    timestamps: np.ndarray  # datetime64[s], strictly increasing, uniform
    variable_names: list[str]
    frequency: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def num_variables(self) -> int:
        return self.values.shape[1]


def load_csv(path, frequency: str | None = None) -> TimeSeriesDataset:
    """Read a `date`-first CSV and validate it into a dataset.

    Rejects unparseable timestamps or non-numeric/missing cells (listing the
    offending rows), non-monotone timestamps, and irregular spacing.
    """
    df = pd.read_csv(path)
    if df.shape[1] < 2:
        raise DataError(f"{path}: need a date column plus at least one variable")
    if df.columns[0].strip().lower() != "date":
        raise DataError(f"{path}: first column must be 'date', got {df.columns[0]!r}")
    if df.shape[0] < 2:
        raise DataError(f"{path}: need at least two rows")

    ts = pd.to_datetime(df.iloc[:, 0], errors="coerce")
    bad_ts = np.flatnonzero(ts.isna().to_numpy())
    if bad_ts.size:
        lines = ", ".join(str(i + 2) for i in bad_ts[:10])  # +2: header + 1-based
        raise DataError(f"{path}: unparseable timestamps on line(s) {lines}" +
                        (f" and {bad_ts.size - 10} more" if bad_ts.size > 10 else ""))

    numeric = df.iloc[:, 1:].apply(pd.to_numeric, errors="coerce")
    bad_rows = np.flatnonzero(numeric.isna().any(axis=1).to_numpy())
    if bad_rows.size:
        lines = ", ".join(str(i + 2) for i in bad_rows[:10])
        raise DataError(
            f"{path}: {bad_rows.size} row(s) with missing or non-numeric values, "
            f"line(s) {lines}" + (" ..." if bad_rows.size > 10 else "")
        )

    stamps = ts.to_numpy().astype("datetime64[s]")
    deltas = np.diff(stamps.astype("int64"))
    if np.any(deltas <= 0):
        row = int(np.flatnonzero(deltas <= 0)[0]) + 2
        raise DataError(f"{path}: timestamps not strictly increasing at line {row + 1}")
    if frequency is not None:
        expected = int(pd.tseries.frequencies.to_offset(frequency).nanos // 1_000_000_000)
        if np.any(deltas != expected):
            row = int(np.flatnonzero(deltas != expected)[0]) + 2
            raise DataError(
                f"{path}: spacing at line {row + 1} does not match frequency {frequency!r}"
            )
        freq = frequency
    else:
        if np.any(deltas != deltas[0]):
            row = int(np.flatnonzero(deltas != deltas[0])[0]) + 2
            raise DataError(f"{path}: irregular timestamp spacing at line {row + 1}")
        freq = pd.infer_freq(pd.DatetimeIndex(stamps)) or f"{int(deltas[0])}s"

    return TimeSeriesDataset(
        values=numeric.to_numpy(dtype=np.float64),
        timestamps=stamps,
        variable_names=[str(c) for c in df.columns[1:]],
        frequency=freq,
    )


def time_features(timestamps: np.ndarray) -> np.ndarray:
    """Five calendar features per timestamp (month, day, weekday, hour,
    minute), each affinely scaled into [-0.5, 0.5]."""
    idx = pd.DatetimeIndex(timestamps)
    feats = np.stack(
        [
            (idx.month.to_numpy() - 1) / 11.0 - 0.5,
            (idx.day.to_numpy() - 1) / 30.0 - 0.5,
            idx.weekday.to_numpy() / 6.0 - 0.5,
            idx.hour.to_numpy() / 23.0 - 0.5,
            idx.minute.to_numpy() / 59.0 - 0.5,
        ],
        axis=1,
    )
    return feats.astype(np.float64)


# ---------------------------------------------------------------------------
# windows


@dataclass
class WindowDataset:
    """Sliding windows over a standardized series, chronological splits.

    Windows are views by start index; ``batch`` materializes (input, target,
    input time features) for a set of windows. Standardization always uses
    train-split statistics only. Validation and test inputs may reach back
    into the preceding split for context, but targets never cross splits.
    """

    values: np.ndarray  # standardized [T_total, N]
    time_feats: np.ndarray  # [T_total, F]
    input_length: int
    horizon: int
    starts: dict[str, np.ndarray]
    mean: np.ndarray  # [N] train stats (original scale)
    std: np.ndarray  # [N]
    variable_names: list[str] = field(default_factory=list)

    @property
    def num_variables(self) -> int:
        return self.values.shape[1]

    def n_windows(self, split: str) -> int:
        return int(self.starts[split].size)

    def batch(self, split: str, indices) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.starts[split][np.asarray(indices, dtype=np.int64)]
        t, h = self.input_length, self.horizon
        in_rows = s[:, None] + np.arange(t)[None, :]
        out_rows = s[:, None] + t + np.arange(h)[None, :]
        return self.values[in_rows], self.values[out_rows], self.time_feats[in_rows]

    def window(self, split: str, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x, y, tf = self.batch(split, [i])
        return x[0], y[0], tf[0]

    def destandardize(self, arr: np.ndarray) -> np.ndarray:
        return arr * self.std + self.mean


def split_and_standardize(
    ds: TimeSeriesDataset,
    ratios: tuple[float, float, float],
    input_length: int,
    horizon: int,
) -> WindowDataset:
    """Chronological split, per-variable z-score from the train region only,
    stride-1 windows inside each split."""
    if abs(sum(ratios) - 1.0) > 1e-9 or any(r < 0 for r in ratios):
        raise DataError(f"split ratios must be non-negative and sum to 1, got {ratios}")
    n = ds.length
    t, h = input_length, horizon
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    if n_train < t + h:
        raise DataError(
            f"train region of {n_train} rows cannot fit one window of {t}+{h} steps"
        )

    mean = ds.values[:n_train].mean(axis=0)
    std = ds.values[:n_train].std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    values = (ds.values - mean) / std

    border1 = [0, n_train - t, n_train + n_val - t]
    border2 = [n_train, n_train + n_val, n]
    starts: dict[str, np.ndarray] = {}
    for split, lo, hi in zip(SPLITS, border1, border2):
        s = np.arange(lo, hi - t - h + 1, dtype=np.int64)
        if s.size == 0:
            raise DataError(
                f"{split} split (rows {lo}..{hi}) is too short for input {t} + horizon {h}"
            )
        starts[split] = s

    return WindowDataset(
        values=values,
        time_feats=time_features(ds.timestamps),
        input_length=t,
        horizon=h,
        starts=starts,
        mean=mean,
        std=std,
        variable_names=list(ds.variable_names),
    )


def default_ratios(name: str) -> tuple[float, float, float]:
    """ETT-family datasets use 0.6/0.2/0.2; everything else 0.7/0.1/0.2."""
    return (0.6, 0.2, 0.2) if name.lower().startswith("ett") else (0.7, 0.1, 0.2)


# ---------------------------------------------------------------------------
# decomposition and noise


def decompose(x: np.ndarray, kernel: int = 25) -> tuple[np.ndarray, np.ndarray]:
    """Additive split: trend is a centered moving average with replicate
    padding; residual is the exact remainder."""
    arr = np.asarray(x, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[:, None]
    pad = kernel // 2
    padded = np.concatenate(
        [np.repeat(arr[:1], pad, axis=0), arr, np.repeat(arr[-1:], kernel - 1 - pad, axis=0)]
    )
    cs = np.concatenate([np.zeros((1, arr.shape[1])), np.cumsum(padded, axis=0)])
    trend = (cs[kernel:] - cs[:-kernel]) / kernel
    residual = arr - trend
    if squeeze:
        return trend[:, 0], residual[:, 0]
    return trend, residual


@dataclass
class NoiseSpec:
    """Evaluation-time corruption of input windows; targets are never touched."""

    setting: str  # "residual" or "trend_residual"
    mean: float = 0.0
    std: float = 1.0
    probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.setting not in ("residual", "trend_residual"):
            raise DataError(f"unknown noise setting {self.setting!r}")
        if not 0.0 <= self.probability <= 0.4:
            raise DataError(f"noise probability must be in [0, 0.4], got {self.probability}")


def inject_noise(window: np.ndarray, spec: NoiseSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Perturb a [T, N] input window: each time step is hit independently
    with probability p; a hit step draws one Gaussian per variable and adds
    it to the selected decomposition component(s) before recomposing."""
    if spec.probability == 0.0:
        return window.copy()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    t, n = window.shape
    mask = rng.random(t) < spec.probability
    noise = np.zeros((t, n))
    if mask.any():
        noise[mask] = rng.normal(spec.mean, spec.std, size=(int(mask.sum()), n))
    trend, residual = decompose(window)
    if spec.setting == "residual":
        residual = residual + noise
    else:
        trend = trend + noise
        residual = residual + noise
    return trend + residual


# ---------------------------------------------------------------------------
# synthetic benchmark series


def make_toy_dataset(
    n_steps: int = 2000,
    n_variables: int = 4,
    seed: int = 7,
    noise_std: float = 0.05,
    start: str = "2021-01-04",
) -> TimeSeriesDataset:
    """Coupled sinusoids with mild observation noise, hourly stamps.

    Each variable mixes its own period with a shared slow component, so both
    cross-variable structure and repeating patterns are present.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n_steps)
    periods = (24.0 + 8.0 * np.arange(n_variables)) % 72 + 24.0
    phases = rng.uniform(0, 2 * np.pi, size=n_variables)
    amps = rng.uniform(0.8, 1.2, size=n_variables)
    couplings = rng.uniform(0.3, 0.6, size=n_variables)
    offsets = rng.uniform(-1.0, 1.0, size=n_variables)
    shared = np.sin(2 * np.pi * t / 96.0)
    values = np.stack(
        [
            amps[i] * np.sin(2 * np.pi * t / periods[i] + phases[i])
            + couplings[i] * shared
            + offsets[i]
            for i in range(n_variables)
        ],
        axis=1,
    )
    values += rng.normal(0.0, noise_std, size=values.shape)
    stamps = (np.datetime64(start) + np.arange(n_steps).astype("timedelta64[h]")).astype(
        "datetime64[s]"
    )
    return TimeSeriesDataset(
        values=values,
        timestamps=stamps,
        variable_names=[f"v{i}" for i in range(n_variables)],
        frequency="h",
    )


# ---------------------------------------------------------------------------
# binary cache


def write_cache(ds: TimeSeriesDataset, path) -> None:
    """Versioned binary snapshot of a validated dataset (deterministic bytes)."""
    meta = {
        "variable_names": ds.variable_names,
        "frequency": ds.frequency,
        "rows": int(ds.length),
        "cols": int(ds.num_variables),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<II", _CACHE_VERSION, len(blob)))
        fh.write(blob)
        fh.write(ds.timestamps.astype("datetime64[s]").astype("<i8").tobytes())
        fh.write(ds.values.astype("<f8", copy=False).tobytes())


def read_cache(path) -> TimeSeriesDataset:
    with open(path, "rb") as fh:
        if fh.read(8) != _CACHE_MAGIC:
            raise DataError(f"{path}: not a dataset cache")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != _CACHE_VERSION:
            raise DataError(f"{path}: unsupported cache version {version}")
        meta = json.loads(fh.read(blob_len).decode("utf-8"))
        rows, cols = meta["rows"], meta["cols"]
        stamps = np.frombuffer(fh.read(rows * 8), dtype="<i8").astype("datetime64[s]")
        values = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8").reshape(rows, cols)
    return TimeSeriesDataset(
        values=values.copy(),
        timestamps=stamps,
        variable_names=list(meta["variable_names"]),
        frequency=meta["frequency"],
    )
