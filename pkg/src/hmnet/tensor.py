"""Dense float64 tensors with tape-based reverse-mode autodiff.

Only the operators the forecasting network needs are implemented. Every op
records a backward closure on the output node; ``backward()`` walks the tape
in reverse topological order. Graphs are single-use: a second backward on the
same loss raises.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class AutodiffError(RuntimeError):
    """Raised on misuse of the tape (double backward, missing graph, ...)."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block. Forward values are unchanged."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """An n-dimensional float64 array with an optional gradient slot.

    ``data`` is a numpy array (row-major). ``grad`` stays ``None`` until a
    backward pass deposits into it. Nodes produced by ops keep references to
    their parents plus a closure that routes the output gradient to them;
    leaves have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[], None] | None = None
        self._done = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars are lifted to constant tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    grad_parents = tuple(p for p in parents if p.requires_grad)
    if _grad_enabled and grad_parents:
        out.requires_grad = True
        out._parents = grad_parents
        out._backward_fn = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through the recorded graph.

    Populates ``grad`` on every reachable tensor with ``requires_grad``. The
    graph is released afterwards; calling again on the same loss raises.
    """
    if loss._done:
        raise AutodiffError("backward already ran on this graph; re-run the forward pass first")
    if loss.size != 1:
        raise AutodiffError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise AutodiffError("loss does not require grad; no graph was recorded")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn()
        # release the graph; it is never reused
        node._parents = ()
        node._backward_fn = None
    loss._done = True


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def _bwd():
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(out.grad, b.shape))

    out = _make(out_data, (a, b), _bwd)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def _bwd():
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-out.grad, b.shape))

    out = _make(out_data, (a, b), _bwd)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data
    a_data, b_data = a.data, b.data

    def _bwd():
        if a.requires_grad:
            _accumulate(a, _unbroadcast(out.grad * b_data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(out.grad * a_data, b.shape))

    out = _make(out_data, (a, b), _bwd)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def _bwd():
        _accumulate(x, c * out.grad)

    out = _make(x.data * c, (x,), _bwd)
    return out


# ---------------------------------------------------------------------------
# nonlinearities


_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    # clipped to the nearest representable interior values so the output is
    # strictly inside (0, 1) even when float64 saturates
    y = np.clip(expit(x.data), _SIG_LO, _SIG_HI)

    def _bwd():
        _accumulate(x, out.grad * y * (1.0 - y))

    out = _make(y, (x,), _bwd)
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def _bwd():
        _accumulate(x, out.grad * (1.0 - y * y))

    out = _make(y, (x,), _bwd)
    return out


def relu(x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def _bwd():
        _accumulate(x, out.grad * (x.data > 0.0))

    out = _make(y, (x,), _bwd)
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def _bwd():
        pdf = np.exp(-0.5 * xd * xd) * _INV_SQRT_2PI
        _accumulate(x, out.grad * (cdf + xd * pdf))

    out = _make(xd * cdf, (x,), _bwd)
    return out


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "gelu": gelu,
    "relu": relu,
    "tanh": tanh,
    "identity": lambda t: t,
}


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def _bwd():
        g = out.grad
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, y * (g - dot))

    out = _make(y, (x,), _bwd)
    return out


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """Scale slices along ``axis`` to unit L2 norm (smoothed at zero)."""
    sq = (x.data * x.data).sum(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(sq + eps * eps)
    y = x.data * inv

    def _bwd():
        g = out.grad
        dot = (g * x.data).sum(axis=axis, keepdims=True)
        _accumulate(x, g * inv - x.data * (dot * inv ** 3))

    out = _make(y, (x,), _bwd)
    return out


# ---------------------------------------------------------------------------
# shape ops


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old_shape = x.shape

    def _bwd():
        _accumulate(x, out.grad.reshape(old_shape))

    out = _make(x.data.reshape(shape), (x,), _bwd)
    return out


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = np.argsort(axes)

    def _bwd():
        _accumulate(x, out.grad.transpose(inv))

    out = _make(x.data.transpose(axes), (x,), _bwd)
    return out


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != b.ndim:
        raise ShapeError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    axis = axis % a.ndim
    for i, (da, db) in enumerate(zip(a.shape, b.shape)):
        if i != axis and da != db:
            raise ShapeError(
                f"concat along axis {axis}: non-concat dimension {i} differs ({a.shape} vs {b.shape})"
            )
    split = a.shape[axis]

    def _bwd():
        ga, gb = np.split(out.grad, [split], axis=axis)
        if a.requires_grad:
            _accumulate(a, ga)
        if b.requires_grad:
            _accumulate(b, gb)

    out = _make(np.concatenate([a.data, b.data], axis=axis), (a, b), _bwd)
    return out


def stop_gradient(x: Tensor) -> Tensor:
    """Forward the value, block all gradient flow into ``x``."""
    return Tensor(x.data.copy())


# ---------------------------------------------------------------------------
# contractions


def _parse_spec(spec: str) -> tuple[str, str, str]:
    try:
        lhs, out_labels = spec.replace(" ", "").split("->")
        a_labels, b_labels = lhs.split(",")
    except ValueError as exc:
        raise ShapeError(f"bad contraction descriptor {spec!r}") from exc
    for part in (a_labels, b_labels, out_labels):
        if len(set(part)) != len(part):
            raise ShapeError(f"repeated label within one operand in {spec!r}")
    if not set(a_labels) <= set(out_labels) | set(b_labels):
        raise ShapeError(f"{spec!r}: every label of the first operand must appear elsewhere")
    if not set(b_labels) <= set(out_labels) | set(a_labels):
        raise ShapeError(f"{spec!r}: every label of the second operand must appear elsewhere")
    return a_labels, b_labels, out_labels


def matmul(a: Tensor, b: Tensor, spec: str) -> Tensor:
    """Generalized product of two tensors, contraction given as an einsum spec.

    Example: ``matmul(a, b, "ij,jk->ik")`` is the ordinary matrix product.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    a_labels, b_labels, out_labels = _parse_spec(spec)
    if len(a_labels) != a.ndim or len(b_labels) != b.ndim:
        raise ShapeError(
            f"{spec!r} does not match operand ranks: shapes {a.shape} and {b.shape}"
        )
    dims: dict[str, int] = {}
    for labels, shape in ((a_labels, a.shape), (b_labels, b.shape)):
        for lab, n in zip(labels, shape):
            if dims.setdefault(lab, n) != n:
                raise ShapeError(
                    f"dimension mismatch for {lab!r} in {spec!r}: shapes {a.shape} and {b.shape}"
                )
    a_data, b_data = a.data, b.data
    out_data = np.einsum(spec, a_data, b_data, optimize=True)

    def _bwd():
        g = out.grad
        if a.requires_grad:
            _accumulate(a, np.einsum(f"{out_labels},{b_labels}->{a_labels}", g, b_data, optimize=True))
        if b.requires_grad:
            _accumulate(b, np.einsum(f"{a_labels},{out_labels}->{b_labels}", a_data, g, optimize=True))

    out = _make(out_data, (a, b), _bwd)
    return out


def blocked_conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Non-overlapping 1-d convolution: kernel length equals the stride.

    ``x`` is ``[T, N, d]`` or ``[B, T, N, d]``; ``weight`` is ``[S, d, e]``
    and ``bias`` ``[e]``. Each block of S consecutive steps collapses to one
    output position, independently per variable.
    """
    if weight.ndim != 3:
        raise ShapeError(f"conv weight must be [S, d, e], got {weight.shape}")
    s, d_in, _ = weight.shape
    batched = x.ndim == 4
    if not batched and x.ndim != 3:
        raise ShapeError(f"conv input must be [T,N,d] or [B,T,N,d], got {x.shape}")
    t_axis = 1 if batched else 0
    t, n = x.shape[t_axis], x.shape[t_axis + 1]
    if x.shape[-1] != d_in:
        raise ShapeError(f"conv feature dim mismatch: input {x.shape} vs weight {weight.shape}")
    if t % s != 0:
        raise ShapeError(f"sequence length {t} is not divisible by block size {s}")
    p = t // s
    if batched:
        blocks = reshape(x, (x.shape[0], p, s, n, d_in))
        y = matmul(blocks, weight, "bpsnd,sde->bpne")
    else:
        blocks = reshape(x, (p, s, n, d_in))
        y = matmul(blocks, weight, "psnd,sde->pne")
    return add(y, bias)


# ---------------------------------------------------------------------------
# reductions


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    in_shape = x.shape

    def _bwd():
        g = out.grad
        if axis is None:
            _accumulate(x, np.broadcast_to(g, in_shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, in_shape))

    out = _make(x.data.sum(axis=axis, keepdims=keepdims), (x,), _bwd)
    return out


def mean(x: Tensor) -> Tensor:
    n = x.size

    def _bwd():
        _accumulate(x, np.full(x.shape, out.grad / n))

    out = _make(np.asarray(x.data.mean()), (x,), _bwd)
    return out


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences, differentiable w.r.t. both operands."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def _bwd():
        g = out.grad * (2.0 / n) * diff
        if pred.requires_grad:
            _accumulate(pred, g)
        if target.requires_grad:
            _accumulate(target, -g)

    out = _make(np.asarray((diff * diff).mean()), (pred, target), _bwd)
    return out
