"""Flat INI run configuration: parsing, validation, registry lookup, and
fully-resolved echoes for exact reruns."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .data import TimeSeriesDataset, default_ratios, load_csv, make_toy_dataset, read_cache
from .model import ConfigError, HMNetConfig, make_levels
from .training import ABLATIONS, TrainConfig


@dataclass
class DataConfig:
    name: str
    kind: str = "csv"  # csv | synthetic
    path: str | None = None
    frequency: str | None = None
    cache: str | None = None
    train_ratio: float | None = None
    val_ratio: float | None = None
    test_ratio: float | None = None
    steps: int = 2000
    variables: int = 4
    seed: int = 7
    noise_std: float = 0.05

    @property
    def ratios(self) -> tuple[float, float, float]:
        if self.train_ratio is None:
            return default_ratios(self.name)
        return (self.train_ratio, self.val_ratio, self.test_ratio)

    def cache_path(self) -> Path | None:
        if self.cache:
            return Path(self.cache)
        if self.kind == "csv" and self.path:
            return Path(str(self.path) + ".cache")
        return None

    def load(self, prefer_cache: bool = True) -> TimeSeriesDataset:
        if self.kind == "synthetic":
            return make_toy_dataset(self.steps, self.variables, self.seed, self.noise_std)
        cache = self.cache_path()
        if prefer_cache and cache is not None and cache.exists():
            return read_cache(cache)
        if not self.path:
            raise ConfigError(f"dataset {self.name!r}: no csv path configured")
        return load_csv(self.path, self.frequency)


@dataclass
class NoiseSweepConfig:
    probabilities: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4)
    settings: tuple[tuple[str, float, float], ...] = (
        ("residual", 0.0, 1.0),
        ("trend_residual", 1.0, 1.0),
    )


@dataclass
class SweepConfig:
    horizons: tuple[int, ...] = (96,)
    memory_configs: tuple[tuple[int, int], ...] = ((256, 1), (4096, 16), (16384, 64))
    seeds: int = 1


@dataclass
class RunConfig:
    data: DataConfig
    model: HMNetConfig  # template with num_variables=1; filled from the dataset
    train: TrainConfig
    noise: NoiseSweepConfig = field(default_factory=NoiseSweepConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    out_dir: str = "runs"
    jobs: int = 1


def _get(section, key, conv, default):
    if section is None or key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _bool_list(raw: str):
    parts = [p for p in raw.split(",") if p.strip()]
    vals = [_bool(p) for p in parts]
    return vals[0] if len(vals) == 1 else vals


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(p) for p in raw.split(",") if p.strip())


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(p) for p in raw.split(",") if p.strip())


def _mk_pairs(raw: str) -> tuple[tuple[int, int], ...]:
    pairs = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        m, _, k = part.partition(":")
        pairs.append((int(m), int(k)))
    return tuple(pairs)


def resolve_registry(name: str, registry_path) -> dict:
    """Look a dataset up in a registry INI (one section per dataset)."""
    parser = configparser.ConfigParser()
    read = parser.read(registry_path)
    if not read:
        raise ConfigError(f"registry file {registry_path} not found")
    if name not in parser:
        raise ConfigError(f"dataset {name!r} not in registry {registry_path}")
    return dict(parser[name])


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse and validate an INI run config; raises ConfigError on any
    problem before compute starts."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path} not found")

    dsec = parser["data"] if "data" in parser else None
    if dsec is None or "name" not in dsec:
        raise ConfigError("config needs a [data] section with a 'name' key")

    base = dict(dsec)
    registry = base.pop("registry", None)
    if registry is not None:
        entry = resolve_registry(base["name"], Path(path).parent / registry
                                 if not Path(registry).is_absolute() else registry)
        entry.update(base)  # inline keys win over registry values
        base = entry

    class _Sec(dict):
        pass

    bsec = _Sec(base)
    data = DataConfig(
        name=base["name"],
        kind=_get(bsec, "kind", str, "csv"),
        path=_get(bsec, "path", str, None),
        frequency=_get(bsec, "frequency", str, None),
        cache=_get(bsec, "cache", str, None),
        train_ratio=_get(bsec, "train_ratio", float, None),
        val_ratio=_get(bsec, "val_ratio", float, None),
        test_ratio=_get(bsec, "test_ratio", float, None),
        steps=_get(bsec, "steps", int, 2000),
        variables=_get(bsec, "variables", int, 4),
        seed=_get(bsec, "seed", int, 7),
        noise_std=_get(bsec, "noise_std", float, 0.05),
    )
    if data.kind not in ("csv", "synthetic"):
        raise ConfigError(f"data kind must be csv or synthetic, got {data.kind!r}")
    if (data.train_ratio is None) != (data.val_ratio is None) or (
        data.train_ratio is None
    ) != (data.test_ratio is None):
        raise ConfigError("give all three of train_ratio/val_ratio/test_ratio or none")

    msec = parser["model"] if "model" in parser else None
    block_sizes = _get(msec, "block_sizes", _int_list, (6, 4, 4))
    model = HMNetConfig(
        num_variables=1,  # placeholder; resolved from the dataset at run time
        input_length=_get(msec, "input_length", int, 96),
        horizon=_get(msec, "horizon", int, 96),
        hidden_dim=_get(msec, "hidden_dim", int, 32),
        levels=make_levels(
            block_sizes,
            enable_interact=_get(msec, "enable_interact", _bool_list, True),
            enable_denoise=_get(msec, "enable_denoise", _bool_list, True),
            memory_capacity=_get(msec, "memory_capacity", int, 4096),
            top_k=_get(msec, "top_k", int, 16),
        ),
        activation=_get(msec, "activation", str, "gelu"),
    )

    tsec = parser["train"] if "train" in parser else None
    train = TrainConfig(
        learning_rate=_get(tsec, "learning_rate", float, 1e-3),
        batch_size=_get(tsec, "batch_size", int, 32),
        max_epochs=_get(tsec, "max_epochs", int, 30),
        patience=_get(tsec, "patience", int, 3),
        seed=_get(tsec, "seed", int, 0),
        ablation=_get(tsec, "ablation", str, "full"),
    )

    nsec = parser["noise"] if "noise" in parser else None
    setting_names = _get(nsec, "settings", lambda s: tuple(p.strip() for p in s.split(",") if p.strip()),
                         ("residual", "trend_residual"))
    defaults = {"residual": (0.0, 1.0), "trend_residual": (1.0, 1.0)}
    settings = []
    for sname in setting_names:
        if sname not in defaults:
            raise ConfigError(f"unknown noise setting {sname!r}")
        mean = _get(nsec, f"{sname}_mean", float, defaults[sname][0])
        std = _get(nsec, f"{sname}_std", float, defaults[sname][1])
        settings.append((sname, mean, std))
    noise = NoiseSweepConfig(
        probabilities=_get(nsec, "probabilities", _float_list, (0.0, 0.1, 0.2, 0.3, 0.4)),
        settings=tuple(settings),
    )

    ssec = parser["sweep"] if "sweep" in parser else None
    sweep = SweepConfig(
        horizons=_get(ssec, "horizons", _int_list, (model.horizon,)),
        memory_configs=_get(ssec, "memory_configs", _mk_pairs, ((256, 1), (4096, 16), (16384, 64))),
        seeds=_get(ssec, "seeds", int, 1),
    )

    rsec = parser["run"] if "run" in parser else None
    cfg = RunConfig(
        data=data,
        model=model,
        train=train,
        noise=noise,
        sweep=sweep,
        out_dir=_get(rsec, "out_dir", str, "runs"),
        jobs=_get(rsec, "jobs", int, 1),
    )

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "seed":
            cfg.train.seed = int(value)
        elif key == "horizon":
            cfg.model.horizon = int(value)
            cfg.sweep.horizons = (int(value),)
        elif key == "out":
            cfg.out_dir = str(value)
        elif key == "jobs":
            cfg.jobs = int(value)
        else:
            raise ConfigError(f"unknown override {key!r}")

    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    cfg.model.validate()  # divisibility arithmetic reported by the model config
    try:
        cfg.train.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.train.ablation not in ABLATIONS:
        raise ConfigError(f"unknown ablation {cfg.train.ablation!r}")
    for h in cfg.sweep.horizons:
        if h < 1:
            raise ConfigError(f"horizon must be >= 1, got {h}")
    for p in cfg.noise.probabilities:
        if not 0.0 <= p <= 0.4:
            raise ConfigError(f"noise probability {p} outside [0, 0.4]")
    if cfg.sweep.seeds < 1:
        raise ConfigError("sweep seeds must be >= 1")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")


def write_resolved(cfg: RunConfig, path) -> Path:
    """Echo the configuration with every default materialized; the output is
    itself a loadable config."""
    parser = configparser.ConfigParser()
    d = cfg.data
    r = d.ratios
    parser["data"] = {
        "name": d.name,
        "kind": d.kind,
        "train_ratio": repr(r[0]),
        "val_ratio": repr(r[1]),
        "test_ratio": repr(r[2]),
    }
    if d.kind == "csv":
        parser["data"]["path"] = d.path or ""
        if d.frequency:
            parser["data"]["frequency"] = d.frequency
        if d.cache:
            parser["data"]["cache"] = d.cache
    else:
        parser["data"].update(
            steps=str(d.steps), variables=str(d.variables),
            seed=str(d.seed), noise_std=repr(d.noise_std),
        )
    m = cfg.model
    parser["model"] = {
        "input_length": str(m.input_length),
        "horizon": str(m.horizon),
        "hidden_dim": str(m.hidden_dim),
        "block_sizes": ",".join(str(lv.block_size) for lv in m.levels),
        "enable_interact": ",".join(str(lv.enable_interact).lower() for lv in m.levels),
        "enable_denoise": ",".join(str(lv.enable_denoise).lower() for lv in m.levels),
        "memory_capacity": str(m.levels[0].memory_capacity),
        "top_k": str(m.levels[0].top_k),
        "activation": m.activation,
    }
    t = cfg.train
    parser["train"] = {
        "learning_rate": repr(t.learning_rate),
        "batch_size": str(t.batch_size),
        "max_epochs": str(t.max_epochs),
        "patience": str(t.patience),
        "seed": str(t.seed),
        "ablation": t.ablation,
    }
    parser["noise"] = {
        "probabilities": ",".join(repr(p) for p in cfg.noise.probabilities),
        "settings": ",".join(s[0] for s in cfg.noise.settings),
    }
    for sname, mean, std in cfg.noise.settings:
        parser["noise"][f"{sname}_mean"] = repr(mean)
        parser["noise"][f"{sname}_std"] = repr(std)
    parser["sweep"] = {
        "horizons": ",".join(str(h) for h in cfg.sweep.horizons),
        "memory_configs": ",".join(f"{m}:{k}" for m, k in cfg.sweep.memory_configs),
        "seeds": str(cfg.sweep.seeds),
    }
    parser["run"] = {"out_dir": cfg.out_dir, "jobs": str(cfg.jobs)}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        parser.write(fh)
    return path
