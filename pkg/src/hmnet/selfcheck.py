"""Built-in verification: gradient checks, retrieval exactness, FIFO and
structural invariants. Used by the `selfcheck` CLI command and by tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gradcheck import finite_diff_check, finite_diff_check_params
from .memory import PatternMemory, normalize_pattern
from .model import HMNet, HMNetConfig, make_levels
from .optim import Adam
from .tensor import Tensor, backward


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float | None = None
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        err = "" if self.max_error is None else f"  max err {self.max_error:.3e}"
        detail = f"  {self.detail}" if self.detail and not self.passed else ""
        return f"{status}  {self.name}{err}{detail}"


def _toy_model(seed: int = 1, denoise: bool = True) -> HMNet:
    cfg = HMNetConfig(
        num_variables=2,
        input_length=8,
        horizon=2,
        hidden_dim=4,
        levels=make_levels([2, 2], enable_denoise=denoise, memory_capacity=32, top_k=4),
        seed=seed,
    )
    return HMNet(cfg)


def check_operator_gradients() -> CheckResult:
    rng = np.random.default_rng(0)
    worst = 0.0
    # coefficients are drawn once: the checked functions must be deterministic
    c_soft = Tensor(rng.normal(size=(4, 3)))
    c_norm = Tensor(rng.normal(size=(3, 5)))
    c_mse = Tensor(rng.normal(size=(3, 3)))
    b = Tensor(rng.normal(size=(3, 4)))
    c_mm = Tensor(rng.normal(size=(2, 4)))
    w = Tensor(rng.normal(size=(2, 3, 3)))
    c_conv = Tensor(rng.normal(size=(2, 2, 3)))
    cases = [
        ("sigmoid", lambda t: T.tsum(T.sigmoid(t)), (4, 3)),
        ("softmax", lambda t: T.tsum(T.mul(T.softmax(t, axis=1), c_soft)), (4, 3)),
        ("gelu", lambda t: T.tsum(T.gelu(t)), (6,)),
        ("l2norm", lambda t: T.tsum(T.mul(T.l2_normalize(t), c_norm)), (3, 5)),
        ("mse", lambda t: T.mse_loss(t, c_mse), (3, 3)),
        ("matmul", lambda t: T.tsum(T.mul(T.matmul(t, b, "ij,jk->ik"), c_mm)), (2, 3)),
        ("conv", lambda t: T.tsum(T.mul(T.blocked_conv1d(t, w, Tensor(np.zeros(3))), c_conv)), (4, 2, 3)),
    ]
    failing = []
    for name, fn, shape in cases:
        rep = finite_diff_check(fn, Tensor(rng.normal(size=shape)))
        worst = max(worst, rep.max_rel_error)
        if not rep.passed:
            failing.append(name)
    return CheckResult(
        "operator gradients vs central differences",
        not failing,
        worst,
        f"failing ops: {failing}" if failing else "",
    )


def check_full_model_gradient() -> CheckResult:
    rng = np.random.default_rng(3)
    model = _toy_model()
    for _ in range(3):
        model.forward(rng.normal(size=(2, 8, 2)), rng.normal(size=(2, 8, 5)), training=True)
    x = rng.normal(size=(2, 8, 2))
    tf = rng.normal(size=(2, 8, 5))
    target = rng.normal(size=(2, 2, 2))

    def loss():
        pred, stats = model.forward_normalized(x, tf, training=False)
        return T.mse_loss(pred, Tensor((target - stats.mean) / stats.scale))

    rep = finite_diff_check_params(model.parameters(), loss, step=1e-5, tolerance=1e-4)
    return CheckResult(
        "full-model gradient vs finite differences",
        rep.passed,
        rep.max_rel_error,
        f"worst at {rep.worst_name}{rep.worst_index}" if not rep.passed else "",
    )


def check_retrieval_oracle(cases: int = 200) -> CheckResult:
    rng = np.random.default_rng(7)
    for _ in range(cases):
        m = int(rng.integers(1, 64))
        d = int(rng.integers(1, 8))
        mem = PatternMemory(m, d)
        mem.insert(rng.normal(size=(int(rng.integers(1, 2 * m + 1)), d)))
        q = normalize_pattern(rng.normal(size=d))
        k = int(rng.integers(1, m + 3))
        res = mem.top_k(q, k)
        sims = [float(np.dot(mem.buffer[i], q)) for i in range(mem.count)]
        oracle = sorted(range(mem.count), key=lambda i: (-sims[i], i))[: min(k, mem.count)]
        if list(res.indices) != oracle:
            return CheckResult("retrieval matches exhaustive-scan oracle", False,
                               detail=f"mismatch at M={m} d={d} K={k}")
    return CheckResult("retrieval matches exhaustive-scan oracle", True, 0.0)


def check_fifo_and_norms() -> CheckResult:
    rng = np.random.default_rng(11)
    for _ in range(30):
        m = int(rng.integers(2, 32))
        d = int(rng.integers(2, 6))
        mem = PatternMemory(m, d)
        seen = []
        for _ in range(int(rng.integers(2, 8))):
            batch = rng.normal(size=(int(rng.integers(1, m)), d))
            if rng.random() < 0.3:
                batch[rng.integers(0, batch.shape[0])] = 0.0  # must be skipped
            mem.insert(batch)
            seen.extend(v for v in batch if np.linalg.norm(v) >= 1e-12)
        expect = {tuple(np.round(v / np.linalg.norm(v), 10)) for v in seen[-mem.count:]}
        got = {tuple(np.round(r, 10)) for r in mem.buffer[: mem.count]}
        if expect != got:
            return CheckResult("FIFO retention and unit norms", False, detail=f"M={m} d={d}")
        norms = np.linalg.norm(mem.buffer[: mem.count], axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            return CheckResult("FIFO retention and unit norms", False, detail="non-unit row")
    return CheckResult("FIFO retention and unit norms", True, 0.0)


def check_shape_contract() -> CheckResult:
    cfg = HMNetConfig(num_variables=3, hidden_dim=4)
    ok = cfg.position_counts() == [16, 4, 1]
    model = HMNet(cfg)
    out = model.forward(np.zeros((1, 96, 3)), np.zeros((1, 96, 5)))
    ok = ok and out.shape == (1, 96, 3)
    return CheckResult("shape contract 96 -> (16, 4, 1) -> horizon", ok,
                       detail="" if ok else f"got {cfg.position_counts()}, {out.shape}")


def check_diagonal_mask(corrupt: str | None = None) -> CheckResult:
    rng = np.random.default_rng(5)
    model = _toy_model()
    opt = Adam(model.parameters(), lr=1e-3)
    for _ in range(30):
        x = rng.normal(size=(4, 8, 2))
        pred, stats = model.forward_normalized(x, rng.normal(size=(4, 8, 5)), training=True)
        y = (rng.normal(size=(4, 2, 2)) - stats.mean) / stats.scale
        backward(T.mse_loss(pred, Tensor(y)))
        opt.step()
        opt.zero_grad()
    if corrupt == "wv-diagonal":
        model.level_params[0].w_v.tensor.data[0, 0] = 0.5
    for i, lp in enumerate(model.level_params):
        if not np.all(np.diag(lp.w_v.data) == 0.0):
            return CheckResult(
                "diag(w_v) == 0 under training", False,
                detail=f"invariant diag(w_v)==0 violated at level {i}",
            )
    return CheckResult("diag(w_v) == 0 under training", True, 0.0)


def check_gates_and_kappa() -> CheckResult:
    rng = np.random.default_rng(9)
    model = _toy_model()
    for _ in range(3):
        model.forward(rng.normal(size=(2, 8, 2)), rng.normal(size=(2, 8, 5)), training=True)
    model.record_gates = True
    model.forward(rng.normal(size=(2, 8, 2)), rng.normal(size=(2, 8, 5)), training=False)
    worst = 0.0
    for alpha in model.gate_log.alpha:
        if alpha is not None and (np.any(alpha <= 0) or np.any(alpha >= 1)):
            return CheckResult("gates in (0,1), kappa rows sum to 1", False, detail="alpha out of range")
    for beta in model.gate_log.beta:
        if beta is not None and (np.any(beta <= 0) or np.any(beta >= 1)):
            return CheckResult("gates in (0,1), kappa rows sum to 1", False, detail="beta out of range")
    for kappa in model.gate_log.kappa:
        if kappa is None:
            continue
        err = float(np.abs(kappa.sum(axis=-1) - 1.0).max())
        worst = max(worst, err)
        if err > 1e-9:
            return CheckResult("gates in (0,1), kappa rows sum to 1", False, worst, "kappa sum")
    return CheckResult("gates in (0,1), kappa rows sum to 1", True, worst)


def check_ablation_isolation() -> CheckResult:
    rng = np.random.default_rng(13)
    model = _toy_model(denoise=False)
    x = rng.normal(size=(1, 8, 2))
    tf = rng.normal(size=(1, 8, 5))
    before = model.forward(x, tf)
    for mem in model.memories:
        mem.insert(rng.normal(size=(8, 4)))
    after = model.forward(x, tf)
    if not np.array_equal(before, after):
        return CheckResult("disabled modules are bit-isolated", False, detail="memory leaked into output")

    cfg = HMNetConfig(
        num_variables=2, input_length=8, horizon=2, hidden_dim=4,
        levels=make_levels([2, 2], enable_interact=False, memory_capacity=32, top_k=4), seed=1,
    )
    model2 = HMNet(cfg)
    before = model2.forward(x, tf)
    for lp in model2.level_params:
        lp.w_v.tensor.data[...] = rng.normal(size=lp.w_v.data.shape)
        lp.w_alpha.tensor.data[...] = rng.normal(size=lp.w_alpha.data.shape)
    after = model2.forward(x, tf)
    if not np.array_equal(before, after):
        return CheckResult("disabled modules are bit-isolated", False, detail="interaction weights leaked")
    return CheckResult("disabled modules are bit-isolated", True, 0.0)


def check_stop_gradient() -> CheckResult:
    rng = np.random.default_rng(15)
    model = _toy_model()
    for _ in range(3):
        model.forward(rng.normal(size=(2, 8, 2)), rng.normal(size=(2, 8, 5)), training=True)
    model.track_retrievals = True
    pred, _ = model.forward_normalized(rng.normal(size=(1, 8, 2)), rng.normal(size=(1, 8, 5)))
    backward(T.mean(pred))
    if not model.retrieval_sources:
        return CheckResult("memory reads receive zero gradient", False, detail="no retrievals happened")
    for src in model.retrieval_sources:
        g = np.zeros_like(src.data) if src.grad is None else src.grad
        if np.any(g != 0.0):
            return CheckResult("memory reads receive zero gradient", False, detail="gradient reached the store")
    return CheckResult("memory reads receive zero gradient", True, 0.0)


def run_selfcheck(corrupt: str | None = None) -> list[CheckResult]:
    return [
        check_operator_gradients(),
        check_full_model_gradient(),
        check_retrieval_oracle(),
        check_fifo_and_norms(),
        check_shape_contract(),
        check_diagonal_mask(corrupt=corrupt),
        check_gates_and_kappa(),
        check_ablation_isolation(),
        check_stop_gradient(),
    ]
