"""Dense float64 tensors with reverse-mode gradient accumulation.

Define-by-run: every operation records a backward closure returning the
gradient contributions for its parents. backward() routes one pass of
gradients through the graph and adds the result into .grad of leaf tensors
(those constructed with requires_grad=True), so calling backward() twice
without zeroing doubles every gradient exactly.
"""

from __future__ import annotations

import math
import threading
from contextlib import contextmanager

import numpy as np


class TensorError(Exception):
    pass


class ShapeMismatch(TensorError):
    pass


class NotScalar(TensorError):
    pass


class TargetOutOfRange(TensorError):
    pass


class MissingGrad(TensorError):
    pass


# per-thread so a no_grad inference request can never disable gradient
# tracking for a training loop running on another thread
_grad_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph construction (inference paths) on this thread."""
    prev = grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = prev


def _as_array(value) -> np.ndarray:
    if isinstance(value, np.ndarray):
        return value.astype(np.float64, copy=False)
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = (
            np.zeros_like(self.data) if requires_grad else None
        )
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    # -- bookkeeping ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def _track(self, out: "Tensor", parents: tuple["Tensor", ...], backward) -> "Tensor":
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def backward(self) -> None:
        """One reverse sweep from a scalar; adds this pass's gradients into
        the .grad of every reachable leaf."""
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        flow: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flow.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
                continue
            for parent, contribution in node._backward(g):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in flow:
                    flow[key] = flow[key] + contribution
                else:
                    flow[key] = contribution

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data + other.data)

        def backward(g):
            return (
                (self, _unbroadcast(g, self.shape)),
                (other, _unbroadcast(g, other.shape)),
            )

        return self._track(out, (self, other), backward)

    __radd__ = __add__

    def __mul__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        out = Tensor(self.data * other.data)

        def backward(g):
            return (
                (self, _unbroadcast(g * other.data, self.shape)),
                (other, _unbroadcast(g * self.data, other.shape)),
            )

        return self._track(out, (self, other), backward)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other):
        return Tensor(other) + (-self)

    def __truediv__(self, other):
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self * other ** -1.0

    def __rtruediv__(self, other):
        return Tensor(other) * self ** -1.0

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent)

        def backward(g):
            return ((self, g * exponent * self.data ** (exponent - 1.0)),)

        return self._track(out, (self,), backward)

    def matmul(self, other: "Tensor") -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        if self.data.shape[-1] != other.data.shape[-2 if other.data.ndim > 1 else 0]:
            raise ShapeMismatch(
                f"matmul inner dims disagree: {self.shape} @ {other.shape}"
            )
        out = Tensor(self.data @ other.data)

        def backward(g):
            ga = _unbroadcast(g @ other.data.swapaxes(-1, -2), self.shape)
            gb = _unbroadcast(self.data.swapaxes(-1, -2) @ g, other.shape)
            return ((self, ga), (other, gb))

        return self._track(out, (self, other), backward)

    __matmul__ = matmul

    # -- elementwise -------------------------------------------------------------

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data))

        def backward(g):
            return ((self, g * out.data),)

        return self._track(out, (self,), backward)

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data))

        def backward(g):
            return ((self, g / self.data),)

        return self._track(out, (self,), backward)

    def tanh(self) -> "Tensor":
        out = Tensor(np.tanh(self.data))

        def backward(g):
            return ((self, g * (1.0 - out.data * out.data)),)

        return self._track(out, (self,), backward)

    def sigmoid(self) -> "Tensor":
        out = Tensor(1.0 / (1.0 + np.exp(-self.data)))

        def backward(g):
            return ((self, g * out.data * (1.0 - out.data)),)

        return self._track(out, (self,), backward)

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0))

        def backward(g):
            return ((self, g * (self.data > 0.0)),)

        return self._track(out, (self,), backward)

    # -- reductions / shaping ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims))

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return ((self, np.broadcast_to(g, self.shape).copy()),)

        return self._track(out, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        out = Tensor(self.data.reshape(*shape))

        def backward(g):
            return ((self, g.reshape(self.shape)),)

        return self._track(out, (self,), backward)

    def transpose(self, *axes) -> "Tensor":
        axes = axes or tuple(reversed(range(self.data.ndim)))
        out = Tensor(self.data.transpose(axes))
        inverse = np.argsort(axes)

        def backward(g):
            return ((self, g.transpose(inverse)),)

        return self._track(out, (self,), backward)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        out = Tensor(self.data.swapaxes(a, b))

        def backward(g):
            return ((self, g.swapaxes(a, b)),)

        return self._track(out, (self,), backward)

    def __getitem__(self, idx) -> "Tensor":
        out = Tensor(self.data[idx])

        def backward(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return ((self, full),)

        return self._track(out, (self,), backward)

    # -- masking -------------------------------------------------------------------

    def masked_fill(self, mask: np.ndarray, value: float) -> "Tensor":
        """Set positions where mask is True to value (mask is a constant)."""
        out = Tensor(np.where(mask, value, self.data))

        def backward(g):
            return ((self, _unbroadcast(np.where(mask, 0.0, g), self.shape)),)

        return self._track(out, (self,), backward)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        contributions = []
        for t, start, end in zip(tensors, offsets, offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis % g.ndim] = slice(start, end)
            contributions.append((t, g[tuple(index)]))
        return contributions

    return tensors[0]._track(out, tuple(tensors), backward)


def stack_time(tensors: list[Tensor], axis: int = 1) -> Tensor:
    """Stack same-shape tensors along a new axis (e.g. per-step RNN states)."""
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def backward(g):
        slices = np.moveaxis(g, axis, 0)
        return [(t, gs) for t, gs in zip(tensors, slices)]

    return tensors[0]._track(out, tuple(tensors), backward)


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: out[..., :] = table[ids[...], :]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise TargetOutOfRange(f"ids outside 0..{table.shape[0] - 1}")
    out = Tensor(table.data[ids])

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return ((table, full),)

    return table._track(out, (table,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Max-subtracted exponential normalization along the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    y = exp / exp.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((x, y * (g - dot)),)

    return x._track(out, (x,), backward)


def log_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = Tensor(shifted - lse)

    def backward(g):
        softmax = np.exp(out.data)
        return ((x, g - softmax * g.sum(axis=-1, keepdims=True)),)

    return x._track(out, (x,), backward)


def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    label_smoothing: float = 0.0,
    ignore_id: int | None = None,
) -> Tensor:
    """Mean smoothed negative log-likelihood over non-ignored positions.

    logits: (n, V); targets: (n,) integer ids. With smoothing eps the target
    distribution is (1-eps)*onehot + eps/V; eps=0 is plain NLL.
    """
    targets = np.asarray(targets).reshape(-1)
    if logits.data.ndim != 2:
        logits = logits.reshape(-1, logits.shape[-1])
    n, vocab = logits.shape
    if targets.size != n:
        raise ShapeMismatch(f"{n} logit rows vs {targets.size} targets")
    live = targets if ignore_id is None else targets[targets != ignore_id]
    if live.size and (live.min() < 0 or live.max() >= vocab):
        raise TargetOutOfRange(f"target ids outside 0..{vocab - 1}")

    weights = np.ones(n)
    if ignore_id is not None:
        weights = (targets != ignore_id).astype(np.float64)
    denom = weights.sum()
    if denom == 0.0:
        return Tensor(0.0)
    safe_targets = np.where(weights > 0, targets, 0)

    lp = log_softmax(logits)
    gold = lp[np.arange(n), safe_targets]
    w = Tensor(weights)
    nll_gold = -(gold * w).sum() * (1.0 / denom)
    if label_smoothing == 0.0:
        return nll_gold
    uniform = -(lp.sum(axis=-1) * w).sum() * (1.0 / (denom * vocab))
    return nll_gold * (1.0 - label_smoothing) + uniform * label_smoothing


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Seeded inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(mask)


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator, name: str = "") -> Tensor:
    """Seeded Glorot-uniform parameter initialization."""
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else shape[0]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True, name=name)


def zeros(shape: tuple[int, ...], requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name)


def assert_finite(x: Tensor, context: str = "") -> Tensor:
    if not np.isfinite(x.data).all():
        raise TensorError(f"non-finite values{' in ' + context if context else ''}")
    return x
