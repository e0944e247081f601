"""The hierarchical memorizing forecast network.

Pipeline per forward pass: reversible instance normalization, per-variable
embedding, a stack of memorizing convolution blocks (gated variable
interaction, block convolution, memory-based denoising), per-level
aggregation, and a shared two-layer head that maps the summed level
representations to the forecast horizon.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .memory import PatternMemory
from .optim import Parameter
from .tensor import Tensor

_CKPT_MAGIC = b"HMNETCK1"
_CKPT_VERSION = 1


class ConfigError(ValueError):
    """Invalid model or run configuration."""


@dataclass
class LevelConfig:
    """Per-level switches and memory sizing."""

    block_size: int
    enable_interact: bool = True
    enable_denoise: bool = True
    memory_capacity: int = 4096
    top_k: int = 16


@dataclass
class HMNetConfig:
    num_variables: int
    input_length: int = 96
    horizon: int = 96
    hidden_dim: int = 32
    levels: list[LevelConfig] = field(
        default_factory=lambda: [LevelConfig(6), LevelConfig(4), LevelConfig(4)]
    )
    time_feature_dim: int = 5
    activation: str = "gelu"
    seed: int = 0

    def validate(self) -> None:
        if self.num_variables < 1:
            raise ConfigError(f"num_variables must be >= 1, got {self.num_variables}")
        if self.hidden_dim < 1:
            raise ConfigError(f"hidden_dim must be >= 1, got {self.hidden_dim}")
        if not self.levels:
            raise ConfigError("at least one level is required")
        if self.activation not in T.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        t = self.input_length
        for i, lv in enumerate(self.levels):
            if lv.block_size < 1:
                raise ConfigError(f"level {i}: block size must be >= 1, got {lv.block_size}")
            if t % lv.block_size != 0:
                sizes = [l.block_size for l in self.levels]
                raise ConfigError(
                    f"level {i}: length {t} is not divisible by block size {lv.block_size} "
                    f"(input_length {self.input_length}, block sizes {sizes}, "
                    f"{t} = {lv.block_size} * {t // lv.block_size} + {t % lv.block_size})"
                )
            if lv.memory_capacity < 1 or lv.top_k < 1:
                raise ConfigError(f"level {i}: memory_capacity and top_k must be >= 1")
            t //= lv.block_size

    def position_counts(self) -> list[int]:
        """Output length after each level, e.g. 96 with (6,4,4) -> [16, 4, 1]."""
        counts = []
        t = self.input_length
        for lv in self.levels:
            t //= lv.block_size
            counts.append(t)
        return counts


def make_levels(
    block_sizes,
    enable_interact: bool | list = True,
    enable_denoise: bool | list = True,
    memory_capacity: int = 4096,
    top_k: int = 16,
) -> list[LevelConfig]:
    """Build a level list, broadcasting scalar switches across levels."""
    n = len(block_sizes)

    def _broadcast(v):
        if isinstance(v, (list, tuple)):
            if len(v) != n:
                raise ConfigError(f"per-level switch list {v} does not match {n} levels")
            return list(v)
        return [v] * n

    inter = _broadcast(enable_interact)
    deno = _broadcast(enable_denoise)
    return [
        LevelConfig(int(s), bool(i), bool(d), int(memory_capacity), int(top_k))
        for s, i, d in zip(block_sizes, inter, deno)
    ]


# ---------------------------------------------------------------------------
# reversible instance normalization


@dataclass
class InstanceStats:
    mean: np.ndarray  # [B, 1, N]
    scale: np.ndarray  # [B, 1, N], std + eps


def instance_normalize(x: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, InstanceStats]:
    """Per-sample, per-variable: subtract the input-window mean and divide by
    (std + eps). Returns the stats needed to invert on the forecast."""
    mean = x.mean(axis=1, keepdims=True)
    scale = x.std(axis=1, keepdims=True) + eps
    return (x - mean) / scale, InstanceStats(mean, scale)


def instance_denormalize(y: np.ndarray, stats: InstanceStats) -> np.ndarray:
    return y * stats.scale + stats.mean


# ---------------------------------------------------------------------------
# block-level computations (pure functions of tensors)


def embed_variables(
    x_norm: Tensor, time_feats: Tensor, value_w: Tensor, time_w: Tensor, bias: Tensor
) -> Tensor:
    """h[b,t,n,:] = x[b,t,n] * w_n + shared_time_projection(tf[b,t]) + bias."""
    h = T.matmul(x_norm, value_w, "btn,nd->btnd")
    tp = T.matmul(time_feats, time_w, "btf,fd->btd")
    b, t, d = tp.shape
    h = T.add(h, T.reshape(tp, (b, t, 1, d)))
    return T.add(h, bias)


def variable_interaction(h: Tensor, w_v: Tensor, w_alpha: Tensor) -> tuple[Tensor, Tensor]:
    """Gated mixing of each variable with a zero-diagonal combination of the
    others. Returns (h_v, alpha)."""
    v = T.matmul(w_v, h, "nm,btmd->btnd")
    hv = T.concat(h, v, axis=2)
    alpha = T.sigmoid(T.matmul(hv, w_alpha, "btmd,mn->btnd"))
    one_minus = T.sub(1.0, alpha)
    return T.add(T.mul(alpha, h), T.mul(one_minus, v)), alpha


def convolution_unit(h_v: Tensor, weight: Tensor, bias: Tensor, activation: str = "gelu") -> Tensor:
    """Non-overlapping block convolution shared across variables, then the
    configured activation."""
    return T.ACTIVATIONS[activation](T.blocked_conv1d(h_v, weight, bias))


def denoise_fuse(
    h_c: Tensor,
    patterns: Tensor,
    u_k: Tensor,
    v_k: Tensor,
    w_k: Tensor,
    w_beta: Tensor,
) -> tuple[Tensor, Tensor, Tensor]:
    """Attention-weighted fusion of retrieved patterns into h_c.

    ``patterns`` is a [B,P,N,K,d] snapshot that must already be detached from
    the store; gradients flow only through the query projections and the
    beta gate. Returns (h_d, kappa, beta).
    """
    d = h_c.shape[-1]
    h_hat = T.l2_normalize(h_c, axis=-1)
    q = T.matmul(h_hat, v_k, "bpnd,de->bpne")
    sp = T.matmul(patterns, w_k, "bpnkd,de->bpnke")
    logits = T.scale(T.matmul(q, sp, "bpne,bpnke->bpnk"), 1.0 / math.sqrt(d))
    kappa = T.softmax(logits, axis=-1)
    su = T.matmul(patterns, u_k, "bpnkd,de->bpnke")
    h_s = T.matmul(kappa, su, "bpnk,bpnke->bpne")
    beta = T.sigmoid(T.matmul(T.concat(h_c, h_s, axis=-1), w_beta, "bpnf,fd->bpnd"))
    h_d = T.add(T.mul(beta, h_c), T.mul(T.sub(1.0, beta), h_s))
    return h_d, kappa, beta


def level_aggregate(h_d: Tensor, w_l: Tensor, b_l: Tensor) -> Tensor:
    """Concatenate a level's position vectors per variable and project to d."""
    b, p, n, d = h_d.shape
    flat = T.reshape(T.transpose(h_d, (0, 2, 1, 3)), (b, n, p * d))
    return T.add(T.matmul(flat, w_l, "bnf,fd->bnd"), b_l)


def predict(
    f_sum: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor, activation: str = "gelu"
) -> Tensor:
    """Two-layer head shared across variables: [B,N,d] -> [B,H,N]."""
    z = T.ACTIVATIONS[activation](T.add(T.matmul(f_sum, w1, "bnd,de->bne"), b1))
    y = T.add(T.matmul(z, w2, "bnd,dh->bnh"), b2)
    return T.transpose(y, (0, 2, 1))


# ---------------------------------------------------------------------------


@dataclass
class LevelParams:
    w_v: Parameter
    w_alpha: Parameter
    conv_w: Parameter
    conv_b: Parameter
    u_k: Parameter
    v_k: Parameter
    w_k: Parameter
    w_beta: Parameter
    w_l: Parameter
    b_l: Parameter


@dataclass
class GateLog:
    alpha: list = field(default_factory=list)  # per level, or None if disabled
    beta: list = field(default_factory=list)
    kappa: list = field(default_factory=list)


class HMNet:
    """Trainable forecaster; one pattern memory per level.

    ``forward_normalized`` is the differentiable path used by training;
    ``forward`` wraps it with instance denormalization and, outside training
    mode, runs without recording a graph and without memory writes.
    """

    def __init__(self, config: HMNetConfig):
        config.validate()
        self.config = config
        self.record_gates = False
        self.track_retrievals = False
        self.gate_log = GateLog()
        self.retrieval_sources: list[Tensor] = []
        rng = np.random.default_rng(config.seed)
        n, d, f = config.num_variables, config.hidden_dim, config.time_feature_dim

        def uniform(shape, fan_in, name):
            bound = 1.0 / math.sqrt(fan_in)
            return Parameter(rng.uniform(-bound, bound, size=shape), name)

        self.value_w = uniform((n, d), 1, "embed.value_w")
        self.time_w = uniform((f, d), f, "embed.time_w")
        self.embed_b = Parameter(np.zeros(d), "embed.bias")

        self.level_params: list[LevelParams] = []
        self.memories: list[PatternMemory] = []
        pos = config.position_counts()
        for i, lv in enumerate(config.levels):
            s = lv.block_size
            diag = np.eye(n, dtype=bool)
            w_v = Parameter(
                rng.uniform(-1.0 / math.sqrt(n), 1.0 / math.sqrt(n), size=(n, n)),
                f"level{i}.interact.w_v",
                zero_mask=diag,
            )
            lp = LevelParams(
                w_v=w_v,
                w_alpha=uniform((2 * n, n), 2 * n, f"level{i}.interact.w_alpha"),
                conv_w=uniform((s, d, d), s * d, f"level{i}.conv.weight"),
                conv_b=Parameter(np.zeros(d), f"level{i}.conv.bias"),
                u_k=uniform((d, d), d, f"level{i}.denoise.u_k"),
                v_k=uniform((d, d), d, f"level{i}.denoise.v_k"),
                w_k=uniform((d, d), d, f"level{i}.denoise.w_k"),
                w_beta=uniform((2 * d, d), 2 * d, f"level{i}.denoise.w_beta"),
                w_l=uniform((pos[i] * d, d), pos[i] * d, f"level{i}.aggregate.w_l"),
                b_l=Parameter(np.zeros(d), f"level{i}.aggregate.bias"),
            )
            self.level_params.append(lp)
            self.memories.append(PatternMemory(lv.memory_capacity, d))

        self.head_w1 = uniform((d, d), d, "head.w1")
        self.head_b1 = Parameter(np.zeros(d), "head.b1")
        self.head_w2 = uniform((d, config.horizon), d, "head.w2")
        self.head_b2 = Parameter(np.zeros(config.horizon), "head.b2")

    # ------------------------------------------------------------- parameters

    def parameters(self) -> list[Parameter]:
        params = [self.value_w, self.time_w, self.embed_b]
        for lp in self.level_params:
            params.extend(
                [lp.w_v, lp.w_alpha, lp.conv_w, lp.conv_b, lp.u_k, lp.v_k, lp.w_k, lp.w_beta, lp.w_l, lp.b_l]
            )
        params.extend([self.head_w1, self.head_b1, self.head_w2, self.head_b2])
        return params

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            p.tensor.data[...] = state[p.name]
            p.apply_mask()

    def clone_memories(self) -> list[PatternMemory]:
        return [m.clone() for m in self.memories]

    def restore_memories(self, mems: list[PatternMemory]) -> None:
        self.memories = [m.clone() for m in mems]

    # ---------------------------------------------------------------- forward

    def _denoise(self, h_c: Tensor, level_idx: int, training: bool) -> tuple[Tensor, Tensor | None, Tensor | None]:
        lv = self.config.levels[level_idx]
        lp = self.level_params[level_idx]
        mem = self.memories[level_idx]
        b, p, n, d = h_c.shape
        cells = h_c.data.reshape(-1, d)

        if mem.count == 0:
            h_d, kappa, beta = h_c, None, None
        else:
            norms = np.linalg.norm(cells, axis=1, keepdims=True)
            queries = np.divide(cells, norms, out=np.zeros_like(cells), where=norms > 1e-12)
            patterns, _, _ = mem.top_k_batch(queries, lv.top_k)
            k_eff = patterns.shape[1]
            pat = Tensor(patterns.reshape(b, p, n, k_eff, d))
            if self.track_retrievals:
                source = Tensor(patterns.reshape(b, p, n, k_eff, d), requires_grad=True)
                pat = T.stop_gradient(source)
                self.retrieval_sources.append(source)
            h_d, kappa, beta = denoise_fuse(h_c, pat, lp.u_k.tensor, lp.v_k.tensor, lp.w_k.tensor, lp.w_beta.tensor)

        if training:
            mem.insert(cells)
        return h_d, kappa, beta

    def _mc_block(self, h: Tensor, level_idx: int, training: bool) -> Tensor:
        lv = self.config.levels[level_idx]
        lp = self.level_params[level_idx]
        alpha = None
        if lv.enable_interact:
            h, alpha = variable_interaction(h, lp.w_v.tensor, lp.w_alpha.tensor)
        h_c = convolution_unit(h, lp.conv_w.tensor, lp.conv_b.tensor, self.config.activation)
        if lv.enable_denoise:
            h_d, kappa, beta = self._denoise(h_c, level_idx, training)
        else:
            h_d, kappa, beta = h_c, None, None
        if self.record_gates:
            self.gate_log.alpha.append(None if alpha is None else alpha.data.copy())
            self.gate_log.kappa.append(None if kappa is None else kappa.data.copy())
            self.gate_log.beta.append(None if beta is None else beta.data.copy())
        return h_d

    def forward_normalized(
        self, x: np.ndarray, time_feats: np.ndarray, training: bool = False
    ) -> tuple[Tensor, InstanceStats]:
        """Differentiable path: returns the forecast on the instance-normalized
        scale plus the stats to invert it. Memory is written only when
        ``training`` is true."""
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.input_length or x.shape[2] != cfg.num_variables:
            raise ConfigError(
                f"input must be [B,{cfg.input_length},{cfg.num_variables}], got {x.shape}"
            )
        if self.record_gates:
            self.gate_log = GateLog()
        self.retrieval_sources = []

        x_norm, stats = instance_normalize(x)
        h = embed_variables(
            Tensor(x_norm), Tensor(np.asarray(time_feats, dtype=np.float64)),
            self.value_w.tensor, self.time_w.tensor, self.embed_b.tensor,
        )
        f_sum: Tensor | None = None
        for i in range(len(cfg.levels)):
            h = self._mc_block(h, i, training)
            f_l = level_aggregate(h, self.level_params[i].w_l.tensor, self.level_params[i].b_l.tensor)
            f_sum = f_l if f_sum is None else T.add(f_sum, f_l)
        pred = predict(
            f_sum, self.head_w1.tensor, self.head_b1.tensor,
            self.head_w2.tensor, self.head_b2.tensor, cfg.activation,
        )
        return pred, stats

    def forward(self, x: np.ndarray, time_feats: np.ndarray, training: bool = False) -> np.ndarray:
        """Full pipeline; returns the denormalized forecast [B,H,N]."""
        if training:
            pred, stats = self.forward_normalized(x, time_feats, training=True)
        else:
            with T.no_grad():
                pred, stats = self.forward_normalized(x, time_feats, training=False)
        return instance_denormalize(pred.data, stats)

    # ------------------------------------------------------------- checkpoint

    def save(self, path) -> None:
        """Versioned binary checkpoint: parameters plus per-level memories,
        all little-endian float64."""
        params = self.parameters()
        meta = {
            "config": asdict(self.config),
            "params": [{"name": p.name, "shape": list(p.data.shape)} for p in params],
            "memories": [
                {"capacity": m.capacity, "dim": m.dim, "cursor": m.cursor, "count": m.count}
                for m in self.memories
            ],
        }
        blob = json.dumps(meta).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CKPT_MAGIC)
            fh.write(struct.pack("<II", _CKPT_VERSION, len(blob)))
            fh.write(blob)
            for p in params:
                fh.write(p.data.astype("<f8", copy=False).tobytes())
            for m in self.memories:
                fh.write(m.buffer.astype("<f8", copy=False).tobytes())

    @classmethod
    def load(cls, path) -> "HMNet":
        with open(path, "rb") as fh:
            if fh.read(8) != _CKPT_MAGIC:
                raise ValueError("not a model checkpoint")
            version, blob_len = struct.unpack("<II", fh.read(8))
            if version != _CKPT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            meta = json.loads(fh.read(blob_len).decode("utf-8"))
            cfg_d = meta["config"]
            cfg_d["levels"] = [LevelConfig(**lv) for lv in cfg_d["levels"]]
            model = cls(HMNetConfig(**cfg_d))
            params = {p.name: p for p in model.parameters()}
            for spec in meta["params"]:
                shape = tuple(spec["shape"])
                size = int(np.prod(shape)) if shape else 1
                raw = np.frombuffer(fh.read(size * 8), dtype="<f8").reshape(shape)
                params[spec["name"]].tensor.data[...] = raw
                params[spec["name"]].apply_mask()
            for m, mspec in zip(model.memories, meta["memories"]):
                raw = np.frombuffer(fh.read(m.capacity * m.dim * 8), dtype="<f8")
                m.buffer = raw.reshape(m.capacity, m.dim).astype(np.float64)
                m.cursor = int(mspec["cursor"])
                m.count = int(mspec["count"])
        return model
