"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation on a tensor that requires gradients records a node holding its
parents and a local backward rule. Node ids come from a global monotone
counter, so sorting the nodes reachable from a loss by id yields a valid
topological order: that sorted list is the tape walked by :func:`backward`.

Broadcasting is limited to scalar-vs-tensor; everything else needs explicit
tiling (typically ``ones @ row``).
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "ContractError",
    "DomainError",
    "Tensor",
    "Tape",
    "tensor",
    "constant",
    "elementwise",
    "add",
    "sub",
    "mul",
    "neg",
    "log",
    "exp",
    "sigmoid",
    "tanh",
    "relu",
    "leaky_relu",
    "abs_",
    "clip",
    "matmul",
    "reduce",
    "sum_",
    "mean",
    "reshape",
    "concat_rows",
    "rows",
    "cols",
    "frozen",
    "backward",
    "gradient_check",
    "LEAKY_SLOPE",
    "LOG_FLOOR",
]

LEAKY_SLOPE = 0.2
LOG_FLOOR = 1e-12

_ids = itertools.count()


class ContractError(ValueError):
    """Raised when an operation's preconditions are violated."""


class DomainError(ValueError):
    """Raised when a value lies outside an operation's mathematical domain."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_track", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.node_id = next(_ids)
        self._parents: tuple = ()
        self._track: tuple = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.node_id = next(_ids)
    out._op = op
    out.grad = None  # non-leaf grads are filled by backward()
    track = tuple(p.requires_grad for p in parents)
    if any(track):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._track = track
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._track = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.full(shape, g.sum()) if shape else np.asarray(g.sum())


def _operands(a: Tensor, b: Tensor, kind: str):
    if a.shape == b.shape:
        return a.data, b.data
    if b.data.size == 1:
        return a.data, b.data.reshape(())
    if a.data.size == 1:
        return a.data.reshape(()), b.data
    raise ContractError(f"{kind}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    ad, bd = _operands(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(ad + bd, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    ad, bd = _operands(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(ad - bd, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    ad, bd = _operands(a, b, "mul")
    need_a, need_b = a.requires_grad, b.requires_grad

    def bw(g):
        ga = _unbroadcast(g * bd, a.shape) if need_a else None
        gb = _unbroadcast(g * ad, b.shape) if need_b else None
        return ga, gb

    return _result(ad * bd, (a, b), bw, "mul")


def neg(a) -> Tensor:
    a = constant(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def log(a) -> Tensor:
    """Natural log. Non-positive entries raise; clamp with :func:`clip` first."""
    a = constant(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of non-positive value; clamp the argument first")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def exp(a) -> Tensor:
    a = constant(a)
    y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,), "exp")


def sigmoid(a) -> Tensor:
    a = constant(a)
    y = expit(a.data)
    return _result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a) -> Tensor:
    a = constant(a)
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(a) -> Tensor:
    a = constant(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = constant(a)
    scale = a.data > 0
    scale = scale * (1.0 - slope) + slope
    return _result(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def abs_(a) -> Tensor:
    a = constant(a)
    s = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * s,), "abs")


def clip(a, lo: float = -np.inf, hi: float = np.inf) -> Tensor:
    a = constant(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


_UNARY = {
    "neg": neg,
    "log": log,
    "exp": exp,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "abs": abs_,
}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op_kind: str, a, b=None, **kwargs) -> Tensor:
    """Dispatch an elementwise primitive by name.

    ``clip`` takes ``lo``/``hi`` keywords; ``leaky_relu`` accepts ``slope``.
    """
    if op_kind in _BINARY:
        if b is None:
            raise ContractError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind == "clip":
        return clip(a, **kwargs)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a, **kwargs)
    raise ContractError(f"unknown elementwise kind {op_kind!r}")


# ---------------------------------------------------------------------------
# structural primitives


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    need_a, need_b = a.requires_grad, b.requires_grad

    def bw(g):
        ga = g @ b.data.T if need_a else None
        gb = a.data.T @ g if need_b else None
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def reduce(kind: str, a, axis: int | None = None) -> Tensor:
    a = constant(a)
    if axis is not None and not (0 <= axis < a.data.ndim):
        raise ContractError(f"reduce: axis {axis} out of range for rank {a.data.ndim}")
    if kind not in ("sum", "mean"):
        raise ContractError(f"unknown reduction {kind!r}")
    count = a.data.size if axis is None else a.shape[axis]
    y = a.data.sum(axis=axis)
    scale = 1.0
    if kind == "mean":
        scale = 1.0 / count
        y = y * scale

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, a.shape).copy(),)

    return _result(np.asarray(y), (a,), bw, kind)


def sum_(a, axis: int | None = None) -> Tensor:
    return reduce("sum", a, axis)


def mean(a, axis: int | None = None) -> Tensor:
    return reduce("mean", a, axis)


def reshape(a, shape) -> Tensor:
    a = constant(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ContractError(f"reshape: cannot view {a.shape} as {shape}")
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def concat_rows(parts) -> Tensor:
    """Stack 2-D tensors with equal column counts along axis 0."""
    parts = [constant(p) for p in parts]
    if any(p.data.ndim != 2 or p.shape[1] != parts[0].shape[1] for p in parts):
        raise ContractError("concat_rows needs 2-D tensors with equal column counts")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _result(np.concatenate([p.data for p in parts], axis=0), parts, bw, "concat_rows")


def rows(a, start: int, stop: int) -> Tensor:
    """Contiguous row slice ``a[start:stop]``."""
    a = constant(a)
    if not (0 <= start < stop <= a.shape[0]):
        raise ContractError(f"rows: bad slice {start}:{stop} for {a.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _result(a.data[start:stop], (a,), bw, "rows")


def cols(a, start: int, stop: int) -> Tensor:
    """Contiguous column slice ``a[:, start:stop]`` of a matrix."""
    a = constant(a)
    if a.data.ndim != 2 or not (0 <= start < stop <= a.shape[1]):
        raise ContractError(f"cols: bad slice {start}:{stop} for shape {a.shape}")

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _result(a.data[:, start:stop], (a,), bw, "cols")


# ---------------------------------------------------------------------------
# tape and backward


class Tape:
    """Topologically ordered operation records reachable from a root tensor."""

    def __init__(self, root: Tensor):
        seen = set()
        nodes = []
        stack = [root]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(p for p, tr in zip(t._parents, t._track) if tr)
        nodes.sort(key=lambda t: t.node_id)
        self.records = nodes

    def __len__(self):
        return len(self.records)


class frozen:
    """Context manager: treat the given parameters as constants while recording."""

    def __init__(self, params):
        self.params = list(params)

    def __enter__(self):
        for p in self.params:
            p.requires_grad = False
        return self

    def __exit__(self, *exc):
        for p in self.params:
            p.requires_grad = True
        return False


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every reachable tensor."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = Tape(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.records):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if node.grad is None:
            node.grad = g
        elif node.is_leaf:
            node.grad += g
        else:
            # intermediate buffers may alias a sibling's; never mutate in place
            node.grad = node.grad + g
        if node._backward is None:
            continue
        for parent, pg, tr in zip(node._parents, node._backward(g), node._track):
            if pg is None or not tr:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg


def gradient_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, coords=None) -> float:
    """Max relative error between backprop and central differences of ``f`` at ``x``.

    ``x`` must be a leaf with ``requires_grad``; it is perturbed in place and
    restored, so ``f`` may ignore its argument and close over ``x`` instead
    (handy for network parameters). ``coords`` restricts the check to a subset
    of flat indices. Any NaN yields ``inf``.
    """
    if not (x.is_leaf and x.requires_grad):
        raise ContractError("gradient_check needs a leaf tensor with requires_grad")
    saved_grad = x.grad.copy()
    x.grad.fill(0.0)
    backward(f(x))
    analytic = x.grad.ravel().copy()
    x.grad[...] = saved_grad

    flat = x.data.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    worst = 0.0
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x).item()
        flat[i] = orig - h
        fm = f(x).item()
        flat[i] = orig
        numeric = (fp - fm) / (2.0 * h)
        a = analytic[i]
        if not (np.isfinite(a) and np.isfinite(numeric)):
            return float("inf")
        err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
        worst = max(worst, err)
    return worst
