"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tensors wrap ndarrays and record a closure per operation; backward() walks
the graph in reverse topological order and accumulates gradients into leaf
tensors. Only the operations the transformer needs are provided, each with
a hand-written vector-Jacobian product (checked against central finite
differences in the test suite).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateRow, EmptyLossSupport


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, parents=(), vjp=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents if requires_grad else ()
        self._vjp = vjp if requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Accumulate gradients of this (scalar or any-shape seed) tensor."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        _accumulate(self, np.ones_like(self.data))
        for node in reversed(topo):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)

    # Operator sugar.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, vjp) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, parents=tuple(parents), vjp=vjp if requires else None)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), vjp)


def scale(a: Tensor, factor: float) -> Tensor:
    def vjp(g):
        _accumulate(a, g * factor)

    return _make(a.data * factor, (a,), vjp)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), vjp)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        _accumulate(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = a.data.shape

    def vjp(g):
        _accumulate(a, g.reshape(original))

    return _make(a.data.reshape(shape), (a,), vjp)


def embedding(weights: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)

    def vjp(g):
        if weights.grad is None:
            weights.grad = np.zeros_like(weights.data)
        np.add.at(weights.grad, ids, g)

    out = _make(weights.data[ids], (weights,), vjp)
    return out


def gather_positions(x: Tensor, positions: np.ndarray) -> Tensor:
    """x: (B, T, D) -> (B, D), picking one time step per batch row."""
    positions = np.asarray(positions)
    batch = np.arange(x.data.shape[0])

    def vjp(g):
        buf = np.zeros_like(x.data)
        buf[batch, positions] = g
        _accumulate(x, buf)

    return _make(x.data[batch, positions], (x,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mean = x.data.mean(axis=-1, keepdims=True)
    var = ((x.data - mean) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv
    out_data = gamma.data * xhat + beta.data
    dim = x.data.shape[-1]

    def vjp(g):
        _accumulate(gamma, _unbroadcast(g * xhat, gamma.data.shape))
        _accumulate(beta, _unbroadcast(g, beta.data.shape))
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        _accumulate(x, dx)

    return _make(out_data, (x, gamma, beta), vjp)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out_data = 0.5 * x.data * (1.0 + t)

    def vjp(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du
        _accumulate(x, g * dx)

    return _make(out_data, (x,), vjp)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis; -inf entries get probability zero.

    Raises DegenerateRow when a row has no finite entry.
    """
    row_max = np.max(x.data, axis=-1, keepdims=True)
    if np.any(np.isneginf(row_max)):
        raise DegenerateRow("attention row with no allowed key")
    shifted = x.data - row_max
    expd = np.where(np.isneginf(shifted), 0.0, np.exp(shifted))
    p = expd / expd.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * p).sum(axis=-1, keepdims=True)
        _accumulate(x, p * (g - inner))

    return _make(p, (x,), vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rate is 0 or no rng is supplied."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    factor = keep / (1.0 - rate)

    def vjp(g):
        _accumulate(x, g * factor)

    return _make(x.data * factor, (x,), vjp)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_id: int | None = None) -> Tensor:
    """Mean token-level cross-entropy over non-ignored positions.

    logits: (N, V); targets: (N,) int. Raises EmptyLossSupport when every
    position is ignored.
    """
    targets = np.asarray(targets)
    if ignore_id is None:
        mask = np.ones(targets.shape, dtype=bool)
    else:
        mask = targets != ignore_id
    count = int(mask.sum())
    if count == 0:
        raise EmptyLossSupport("no non-padding positions in the loss")
    safe_targets = np.where(mask, targets, 0)
    row_max = logits.data.max(axis=-1, keepdims=True)
    shifted = logits.data - row_max
    lse = np.log(np.exp(shifted).sum(axis=-1)) + row_max[..., 0]
    picked = np.take_along_axis(logits.data, safe_targets[:, None], axis=-1)[:, 0]
    nll = (lse - picked) * mask
    loss = nll.sum() / count

    def vjp(g):
        p = np.exp(shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True)))
        p[np.arange(len(safe_targets)), safe_targets] -= 1.0
        p *= (mask[:, None] * (g / count)).astype(logits.data.dtype)
        _accumulate(logits, p)

    return _make(np.asarray(loss), (logits,), vjp)


def add_constant(x: Tensor, constant: np.ndarray) -> Tensor:
    """Add a non-differentiable array (e.g. a causal/padding mask)."""

    def vjp(g):
        _accumulate(x, g)

    return _make(x.data + constant, (x,), vjp)
