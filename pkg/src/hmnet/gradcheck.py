"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .optim import Parameter
from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    """Worst-case disagreement between analytic and numeric gradients.

    Relative error per entry is |a - n| / max(|a|, |n|, rel_floor); the floor
    turns the comparison absolute for near-zero gradients.
    """

    max_rel_error: float
    tolerance: float
    step: float
    n_entries: int
    worst_name: str = ""
    worst_index: tuple = ()
    worst_analytic: float = 0.0
    worst_numeric: float = 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _rel_errors(analytic: np.ndarray, numeric: np.ndarray, rel_floor: float) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), rel_floor)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    rel_floor: float = 1.0,
) -> GradCheckReport:
    """Compare the analytic gradient of scalar-valued ``f`` at ``x`` against
    central differences. ``f`` must be deterministic."""
    probe = Tensor(x.data.copy(), requires_grad=True)
    loss = f(probe)
    backward(loss)
    analytic = np.zeros_like(probe.data) if probe.grad is None else probe.grad.copy()

    numeric = np.zeros_like(probe.data)
    flat = probe.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(probe).data)
        flat[i] = orig - step
        lo = float(f(probe).data)
        flat[i] = orig
        nflat[i] = (hi - lo) / (2.0 * step)

    errs = _rel_errors(analytic, numeric, rel_floor)
    worst = np.unravel_index(np.argmax(errs), errs.shape) if errs.size else ()
    return GradCheckReport(
        max_rel_error=float(errs.max()) if errs.size else 0.0,
        tolerance=tolerance,
        step=step,
        n_entries=int(errs.size),
        worst_index=tuple(int(i) for i in worst) if errs.size else (),
        worst_analytic=float(analytic[worst]) if errs.size else 0.0,
        worst_numeric=float(numeric[worst]) if errs.size else 0.0,
    )


def finite_diff_check_params(
    params: Sequence[Parameter],
    forward_loss: Callable[[], Tensor],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    rel_floor: float = 1.0,
    max_entries_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Gradient-check every parameter of a model against central differences.

    ``forward_loss`` rebuilds the graph from current parameter values and
    returns the scalar loss; it must be deterministic (fixed inputs, no
    stateful side effects such as memory writes).
    """
    for p in params:
        p.tensor.grad = None
    loss = forward_loss()
    backward(loss)
    analytic = {
        p.name: (np.zeros_like(p.data) if p.tensor.grad is None else p.tensor.grad.copy())
        for p in params
    }

    worst = GradCheckReport(0.0, tolerance, step, 0)
    total = 0
    for p in params:
        flat = p.tensor.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries_per_param is not None and flat.size > max_entries_per_param:
            gen = rng if rng is not None else np.random.default_rng(0)
            idx = gen.choice(flat.size, size=max_entries_per_param, replace=False)
        a_flat = analytic[p.name].reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            hi = float(forward_loss().data)
            flat[i] = orig - step
            lo = float(forward_loss().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            err = float(_rel_errors(np.array(a_flat[i]), np.array(numeric), rel_floor))
            total += 1
            if err > worst.max_rel_error:
                worst.max_rel_error = err
                worst.worst_name = p.name
                worst.worst_index = tuple(int(j) for j in np.unravel_index(i, p.tensor.data.shape))
                worst.worst_analytic = float(a_flat[i])
                worst.worst_numeric = numeric
    worst.n_entries = total
    return worst
