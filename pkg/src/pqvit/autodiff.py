"""Dense tensors with tape-based reverse-mode differentiation.

Only the primitives the vision transformer needs are provided.  Every
primitive computes its value with numpy and, when a :class:`Tape` is active
and at least one operand requires a gradient, records a vector-Jacobian
product closure on the tape.  :func:`backward` replays those closures in
exact reverse execution order.

Example
-------
>>> x = Tensor([[1.0, 2.0]], requires_grad=True)
>>> with Tape() as tape:
...     loss = sum_all(matmul(x, Tensor([[3.0], [4.0]])))
>>> backward(tape, loss, {"x": x})["x"]
array([[3., 4.]])
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import ndtr

__all__ = [
    "ContractError",
    "ShapeError",
    "Tape",
    "Tensor",
    "add",
    "backward",
    "broadcast_to",
    "concat",
    "cross_entropy",
    "gelu",
    "layer_norm",
    "matmul",
    "mean_all",
    "mul",
    "reshape",
    "scale",
    "select",
    "softmax_rows",
    "sum_all",
    "transpose",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible with a primitive."""


class ContractError(ValueError):
    """A caller broke a documented precondition (e.g. non-scalar loss)."""


class Tensor:
    """A dense n-d array plus a flag saying whether gradients flow into it."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


@dataclass
class _Node:
    out: Tensor
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of executed primitives.

    Use as a context manager; primitives executed inside the block are
    appended in execution order.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(value: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(value)
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _ACTIVE[-1].nodes.append(_Node(out, parents, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    Adjoints are ``dA = dC·Bᵀ`` and ``dB = Aᵀ·dC``, summed over any
    broadcast batch axes.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        value = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def vjp(g):
        da = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        db = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return da, db

    return _record(value, (a, b), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data + b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _record(value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        value = a.data * b.data
    except ValueError as exc:
        raise ShapeError(str(exc)) from None

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(value, (a, b), vjp)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a non-differentiable constant."""
    a = _as_tensor(a)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    try:
        value = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _record(value, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    try:
        value = np.broadcast_to(a.data, tuple(shape))
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _record(value, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(value, tensors, vjp)


def select(a: Tensor, index: int, axis: int) -> Tensor:
    """Pick one slice along ``axis`` (the axis is dropped)."""
    a = _as_tensor(a)
    value = np.take(a.data, index, axis=axis)

    def vjp(g):
        out = np.zeros_like(a.data)
        sl = [slice(None)] * a.data.ndim
        sl[axis] = index
        out[tuple(sl)] = g
        return (out,)

    return _record(value, (a,), vjp)


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return _record(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    return _record(
        np.asarray(a.data.mean()), (a,), lambda g: (np.broadcast_to(g / n, a.shape).copy(),)
    )


def softmax_rows(m: Tensor) -> Tensor:
    """Softmax along the last axis, with max-subtraction for stability."""
    m = _as_tensor(m)
    shifted = m.data - m.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _record(s, (m,), vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise each vector along the last axis, then scale and shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: last dim {d} vs gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    value = xhat * gamma.data + beta.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return _record(value, (x, gamma, beta), vjp)


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """``x·Φ(x)`` with the exact Gaussian CDF."""
    x = _as_tensor(x)
    cdf = ndtr(x.data)
    value = x.data * cdf

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _record(value, (x,), vjp)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the leading batch axis.

    ``logits`` may be a single vector of length K (one label) or a B×K
    matrix (B labels).  The adjoint of each row is ``softmax − one_hot``,
    divided by B.
    """
    logits = _as_tensor(logits)
    z = logits.data
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    if z2.ndim != 2:
        raise ShapeError(f"cross_entropy expects K or B×K logits, got {z.shape}")
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b, k = z2.shape
    if lab.shape != (b,):
        raise ShapeError(f"{lab.shape[0]} labels for {b} logit rows")
    if np.any(lab < 0) or np.any(lab >= k):
        raise IndexError(f"label out of range [0, {k}): {lab.tolist()}")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(b)
    nll = logsum - shifted[rows, lab]
    value = np.asarray(nll.mean(), dtype=z.dtype)

    def vjp(g):
        p = np.exp(shifted - logsum[:, None])
        p[rows, lab] -= 1.0
        p *= g / b
        return (p[0] if single else p,)

    return _record(value, (logits,), vjp)


# ---------------------------------------------------------------------------
# reverse sweep
# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor, wrt: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every tensor in ``wrt``.

    Tensors in ``wrt`` that did not influence the loss get zero gradients.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = {}
    for name, t in wrt.items():
        g = grads.get(id(t))
        out[name] = np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    return out
