"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2D array. Nodes record their parents and a closure that
pushes the upstream gradient back into them; :func:`backward` runs those
closures in reverse topological order.

Broadcasting is deliberately limited to ``scale`` (scalar times matrix) and
``add_bias`` (a 1×n row added to every row). Any other shape mismatch raises
:class:`ShapeError`.

Gradients accumulate: calling :func:`backward` twice without
:func:`zero_grad` in between adds the second sweep onto the first.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "ShapeError",
    "Node",
    "constant",
    "parameter",
    "matmul",
    "hadamard",
    "add",
    "sub",
    "scale",
    "add_bias",
    "concat",
    "activation",
    "embed",
    "reduce_sum",
    "reduce_mean",
    "softmax",
    "softmax_cross_entropy",
    "mse",
    "l1_penalty",
    "backward",
    "zero_grad",
    "ACTIVATIONS",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Node:
    __slots__ = ("value", "op", "parents", "grad", "requires_grad", "_backward")

    def __init__(self, value, op="leaf", parents=(), requires_grad=False):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise ShapeError(f"nodes hold 2D matrices, got ndim={value.ndim}")
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def constant(value) -> Node:
    return Node(value)


def parameter(value) -> Node:
    """Leaf that receives gradients. The array is used as-is (no copy)."""
    return Node(value, requires_grad=True)


def _as_node(x):
    return x if isinstance(x, Node) else Node(x)


def _same_shape(a, b, opname):
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def matmul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = Node(a.value @ b.value, "matmul", (a, b))

    def _backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    out._backward = _backward
    return out


def hadamard(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _same_shape(a, b, "hadamard")
    out = Node(a.value * b.value, "hadamard", (a, b))

    def _backward(g):
        a._accumulate(g * b.value)
        b._accumulate(g * a.value)

    out._backward = _backward
    return out


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _same_shape(a, b, "add")
    out = Node(a.value + b.value, "add", (a, b))

    def _backward(g):
        a._accumulate(g)
        b._accumulate(g)

    out._backward = _backward
    return out


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _same_shape(a, b, "sub")
    out = Node(a.value - b.value, "sub", (a, b))

    def _backward(g):
        a._accumulate(g)
        b._accumulate(-g)

    out._backward = _backward
    return out


def scale(a, c: float) -> Node:
    a = _as_node(a)
    c = float(c)
    out = Node(c * a.value, "scale", (a,))
    out._backward = lambda g: a._accumulate(c * g)
    return out


def add_bias(x, bias) -> Node:
    """``x + bias`` with ``bias`` a 1×n row broadcast over the rows of ``x``."""
    x, bias = _as_node(x), _as_node(bias)
    if bias.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias: bias {bias.shape} does not fit rows of {x.shape}")
    out = Node(x.value + bias.value, "add_bias", (x, bias))

    def _backward(g):
        x._accumulate(g)
        bias._accumulate(g.sum(axis=0, keepdims=True))

    out._backward = _backward
    return out


def concat(a, b) -> Node:
    """Column-wise concatenation ``[a, b]`` (rows must agree)."""
    a, b = _as_node(a), _as_node(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat: row counts differ, {a.shape} vs {b.shape}")
    k = a.shape[1]
    out = Node(np.concatenate([a.value, b.value], axis=1), "concat", (a, b))

    def _backward(g):
        a._accumulate(g[:, :k])
        b._accumulate(g[:, k:])

    out._backward = _backward
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _relu(x):
    y = np.maximum(x, 0.0)
    return y, (x > 0).astype(np.float64)


def _tanh(x):
    y = np.tanh(x)
    return y, 1.0 - y * y


def _sigmoid_fd(x):
    y = _sigmoid(x)
    return y, y * (1.0 - y)


def _silu(x):
    s = _sigmoid(x)
    return x * s, s * (1.0 + x * (1.0 - s))


def _gelu(x):
    # tanh approximation
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
    return y, dy


ACTIVATIONS = {
    "relu": _relu,
    "tanh": _tanh,
    "sigmoid": _sigmoid_fd,
    "silu": _silu,
    "gelu": _gelu,
}


def activation(kind: str, x) -> Node:
    x = _as_node(x)
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}; choose from {sorted(ACTIVATIONS)}") from None
    y, dy = fn(x.value)
    out = Node(y, kind, (x,))
    out._backward = lambda g: x._accumulate(g * dy)
    return out


def embed(table, indices) -> Node:
    """Gather rows of ``table``; backward scatter-adds into the gathered rows."""
    table = _as_node(table)
    idx = np.asarray(indices, dtype=np.int64).ravel()
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        bad = idx[(idx < 0) | (idx >= n)][0]
        raise IndexError(f"embed: index {bad} out of range for table with {n} rows")
    out = Node(table.value[idx], "embed", (table,))

    def _backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.value)
            np.add.at(full, idx, g)
            table._accumulate(full)

    out._backward = _backward
    return out


def reduce_sum(x) -> Node:
    x = _as_node(x)
    out = Node(x.value.sum(), "sum", (x,))
    out._backward = lambda g: x._accumulate(np.full_like(x.value, g[0, 0]))
    return out


def reduce_mean(x) -> Node:
    x = _as_node(x)
    n = x.value.size
    out = Node(x.value.mean(), "mean", (x,))
    out._backward = lambda g: x._accumulate(np.full_like(x.value, g[0, 0] / n))
    return out


def softmax(logits) -> np.ndarray:
    """Row-wise softmax of a plain array (no graph)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels) -> Node:
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    logits = _as_node(logits)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    b, c = logits.shape
    if labels.shape[0] != b:
        raise ShapeError(f"softmax_cross_entropy: {labels.shape[0]} labels for {b} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"softmax_cross_entropy: labels must lie in [0, {c})")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()
    out = Node(loss, "xent", (logits,))

    def _backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        logits._accumulate(g[0, 0] * p / b)

    out._backward = _backward
    return out


def mse(pred, target) -> Node:
    pred = _as_node(pred)
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 1 and pred.shape[1] == 1:
        target = target.reshape(-1, 1)
    if target.shape != pred.shape:
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    diff = pred.value - target
    n = diff.size
    out = Node(np.mean(diff * diff), "mse", (pred,))
    out._backward = lambda g: pred._accumulate(g[0, 0] * 2.0 * diff / n)
    return out


def l1_penalty(params, weight: float) -> Node:
    """``weight * sum_i |w_i|`` over all listed parameter nodes."""
    params = [_as_node(p) for p in params]
    weight = float(weight)
    total = weight * sum(float(np.abs(p.value).sum()) for p in params)
    out = Node(total, "l1", params)

    def _backward(g):
        for p in params:
            p._accumulate(g[0, 0] * weight * np.sign(p.value))

    out._backward = _backward
    return out


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Populate ``.grad`` on every node reachable from the scalar ``loss``."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    order = _topological(loss)
    # only leaves accumulate across calls; interior grads are per-sweep
    for node in order:
        if node.parents:
            node.grad = None
    loss._accumulate(np.ones((1, 1)))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(nodes) -> None:
    for n in nodes:
        n.grad = None
