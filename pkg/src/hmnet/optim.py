"""Trainable parameters and the Adam optimizer."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


class MissingGradError(RuntimeError):
    """An optimizer step was requested before gradients were populated."""


class Parameter:
    """A named trainable tensor with an optional hard-zero mask.

    Entries where ``zero_mask`` is True are pinned to exactly 0.0: they are
    zeroed at construction and re-zeroed after every optimizer update.
    """

    def __init__(self, value: np.ndarray, name: str, zero_mask: np.ndarray | None = None):
        data = np.array(value, dtype=np.float64)
        if zero_mask is not None:
            zero_mask = np.asarray(zero_mask, dtype=bool)
            if zero_mask.shape != data.shape:
                raise ValueError(f"mask shape {zero_mask.shape} != value shape {data.shape} for {name}")
        self.tensor = Tensor(data, requires_grad=True)
        self.name = name
        self.zero_mask = zero_mask
        self.apply_mask()

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def apply_mask(self) -> None:
        if self.zero_mask is not None:
            self.tensor.data[self.zero_mask] = 0.0

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.tensor.shape})"


class Adam:
    """Adam with bias correction; parameter masks are re-applied after updates."""

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        """Update every parameter that received a gradient.

        A step with no gradients anywhere is a misuse (backward never ran)
        and raises. Individual parameters without a gradient are skipped:
        modules can be dynamically bypassed (e.g. while a pattern memory is
        still empty), in which case their weights are simply not touched.
        """
        if all(p.tensor.grad is None for p in self.params):
            raise MissingGradError("no parameter has a gradient; run backward first")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.tensor.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.tensor.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.apply_mask()

    def zero_grad(self) -> None:
        for p in self.params:
            p.tensor.grad = None
