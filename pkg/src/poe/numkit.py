"""Dense float64 tensors with tape-based reverse-mode differentiation and AdamW.

Every op records its inputs and a closure mapping the output gradient to
input gradients. Node ids increase monotonically with creation, so sorting a
graph by id gives a topological order; backward walks that order in reverse
and accumulates into inputs in a fixed order, which keeps results bitwise
reproducible.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

_ids = itertools.count()


class NumericalError(FloatingPointError):
    """Raised when a non-finite value shows up in a forward or backward pass."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 op: str = "leaf", parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self.id = next(_ids)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor<{self.op}#{self.id}{label} shape={self.shape}>"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, index): return take_slice(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    """Create an op node; skips graph bookkeeping when no input needs a gradient."""
    if any(t.requires_grad for t in inputs):
        return Tensor(data, requires_grad=True, op=op, parents=inputs, backward=backward)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _make(out, "sigmoid", (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # stable for large |z|
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    v = x.data
    v2 = v * v
    t = np.tanh(_GELU_C * v * (1.0 + 0.044715 * v2))
    out = 0.5 * v * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner),)

    return _make(out, "gelu", (x,), backward)


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), "log", (x,), lambda g: (g / x.data,))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """numpy ``@`` semantics; leading batch dims broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim > 2 and b.data.ndim == 2:
        return _matmul_2d_weight(a, b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, "matmul", (a, b), backward)


def _matmul_2d_weight(a: Tensor, b: Tensor) -> Tensor:
    # [..., k] @ [k, m] as one 2-D product; avoids a broadcast-then-sum weight grad
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, a.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, b.shape[-1])
        return (g2 @ b.data.T).reshape(a.shape), a2.T @ g2

    return _make((a2 @ b.data).reshape(*lead, b.shape[-1]), "matmul", (a, b), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data
    n = x.shape[-1]

    def backward(g):
        gx_hat = g * gain.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        return (gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape))

    return _make(out, "layer_norm", (x, gain, bias), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, "softmax", (x,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (grad,)

    return _make(table.data[ids], "embedding", (table,), backward)


# ---------------------------------------------------------------- reductions / layout

def sum_(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, "sum", (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    out = x.data.mean(axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(out, "mean", (x,), backward)


def concat(xs: list[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=axis), "concat", tuple(xs),
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def take_slice(x: Tensor, index) -> Tensor:
    def backward(g):
        grad = np.zeros_like(x.data)
        grad[index] = g
        return (grad,)

    return _make(x.data[index], "slice", (x,), backward)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(x.data.reshape(shape), "reshape", (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), "transpose", (x,), lambda g: (g.transpose(inverse),))


# ---------------------------------------------------------------- losses

def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-element binary cross-entropy of sigmoid(logits) against targets."""
    z = logits.data
    y = np.asarray(targets, dtype=np.float64)
    # softplus(z) - y*z, stable
    out = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - y * z
    return _make(out, "bce", (logits,), lambda g: (g * (_sigmoid(z) - y),))


# ---------------------------------------------------------------- graph + backward

@dataclass
class Graph:
    """The nodes reachable from an output, in topological (creation) order."""

    nodes: list[Tensor]

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            node = stack.pop()
            if node.id in seen or not node.requires_grad:
                continue
            seen[node.id] = node
            stack.extend(node._parents)
        return cls(nodes=[seen[k] for k in sorted(seen)])

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]


def backward(output: Tensor) -> Graph:
    """Populate ``.grad`` on every differentiable node feeding ``output``."""
    if output.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {output.shape} at {output!r}")
    if not np.isfinite(output.data).all():
        raise NumericalError(f"non-finite loss at {output!r}")
    graph = Graph.trace(output)
    for node in graph.nodes:
        node.grad = None
    output.grad = np.ones_like(output.data)
    for node in reversed(graph.nodes):
        if node.is_leaf or node.grad is None:
            continue
        in_grads = node._backward(node.grad)
        for parent, g in zip(node._parents, in_grads):
            if not parent.requires_grad:
                continue
            if not np.isfinite(g).all():
                raise NumericalError(f"non-finite gradient flowing from {node!r} into {parent!r}")
            parent.grad = g if parent.grad is None else parent.grad + g
    return graph


def forward_backward(fn: Callable[[dict[str, Tensor]], Tensor],
                     params: Mapping[str, np.ndarray],
                     trainable: Iterable[str] | None = None) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate ``fn`` on leaf tensors built from ``params`` and differentiate it.

    Returns the scalar loss and a gradient for every trainable name that the
    loss actually depends on. Names absent from the result received no
    gradient at all, which is different from receiving a zero gradient.
    """
    train = set(params) if trainable is None else set(trainable)
    leaves = {k: Tensor(v, requires_grad=k in train, name=k) for k, v in params.items()}
    loss = fn(leaves)
    if not np.isfinite(loss.data).all():
        raise NumericalError(f"non-finite loss at {loss!r}")
    if not loss.requires_grad:
        return loss.item(), {}
    backward(loss)
    grads = {k: t.grad for k, t in leaves.items() if t.requires_grad and t.grad is not None}
    return loss.item(), grads


def finite_diff_grad(f: Callable[[dict[str, np.ndarray]], float],
                     params: Mapping[str, np.ndarray], epsilon: float = 1e-5,
                     coords: Mapping[str, Iterable[int]] | None = None) -> dict[str, np.ndarray]:
    """Central-difference gradient estimate of a scalar function of named arrays.

    ``coords`` restricts the estimate to the given flat indices per name;
    unlisted coordinates are left at zero.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    out = {}
    for name, arr in work.items():
        grad = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        indices = range(flat.size) if coords is None else coords.get(name, ())
        for i in indices:
            orig = flat[i]
            flat[i] = orig + epsilon
            hi = f(work)
            flat[i] = orig - epsilon
            lo = f(work)
            flat[i] = orig
            if not (math.isfinite(hi) and math.isfinite(lo)):
                raise NumericalError(f"non-finite function value perturbing {name}[{i}]")
            gflat[i] = (hi - lo) / (2.0 * epsilon)
        out[name] = grad
    return out


# ---------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: dict[str, int] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray],
               state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One decoupled-weight-decay Adam update with bias correction, constant lr.

    Only parameters present in ``grads`` move; everything else is returned
    untouched (same array object), including its moments. Arrays are not
    modified in place.
    """
    b1, b2 = state.betas
    new = dict(params)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        else:
            v = state.v[name]
            if m.shape != p.shape:
                raise ValueError(f"moment shape {m.shape} != parameter shape {p.shape} for {name}")
        t = state.t.get(name, 0) + 1
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p = p * (1.0 - state.lr * state.weight_decay)
        new[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        state.m[name], state.v[name], state.t[name] = m, v, t
    state.step += 1
    return new, state
