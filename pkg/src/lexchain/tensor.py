"""Dense float64 tensors with reverse-mode automatic differentiation.

The engine is define-by-run: a :class:`Tape` is opened around a forward
computation, every kernel that touches a gradient-carrying tensor appends a
node (inputs, output, local backward rule) in creation order, and
:func:`backward` walks the tape once in reverse.  Tensors are thin wrappers
around C-contiguous ``numpy`` arrays; all kernels are pure functions that
return fresh tensors.

Row-vector convention: vectors are 1xd matrices where a matmul is involved,
so ``x @ W`` applies a linear map.  Kernels never mutate their inputs.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, EvaluationError, ShapeError

Array = np.ndarray


class Tensor:
    """A dense double-precision array, optionally tracked on the active tape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "node_id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data: Array = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = requires_grad
        self.grad: Array | None = None
        self.name = name
        self.node_id: int | None = None

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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self) -> float:
        raise ContractError(f"item() needs a scalar tensor, got shape {self.data.shape}")

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; all routed through the module-level kernels.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class _TapeNode:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Records operations in creation order (a valid topological order)."""

    def __init__(self):
        self.nodes: list[_TapeNode] = []
        self.watched: list[Tensor] = []

    def watch(self, *tensors: Tensor) -> None:
        """Mark tensors as gradient leaves for this tape."""
        seen = {id(t) for t in self.watched}
        for t in tensors:
            t.requires_grad = True
            if id(t) not in seen:
                self.watched.append(t)
                seen.add(id(t))

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPE_STACK.pop()
        return False


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    """Append a node to the active tape when any input carries gradients."""
    if _TAPE_STACK and any(t.requires_grad for t in inputs):
        tape = _TAPE_STACK[-1]
        out.requires_grad = True
        out.node_id = len(tape.nodes)
        tape.nodes.append(_TapeNode(out, inputs, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor) -> dict[str, Tensor]:
    """Reverse sweep over ``tape`` from scalar ``loss``.

    Sets ``.grad`` on every reached gradient-carrying tensor and returns a
    name->gradient mapping for the tape's watched tensors; watched tensors on
    no path to the loss get zeros.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    reached: set[int] = {id(loss)}
    loss.grad = grads[id(loss)]
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        node.out.grad = np.ascontiguousarray(g)
        for t, gi in zip(node.inputs, node.backward_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            reached.add(key)
            t.grad = np.ascontiguousarray(grads[key])
    out: dict[str, Tensor] = {}
    for t in tape.watched:
        if id(t) not in reached:
            t.grad = np.zeros_like(t.data)
        if t.name is not None:
            out[t.name] = Tensor(t.grad)
    return out


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _record(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _record(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bw(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return _record(out, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.data.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)
        return ga, gb

    return _record(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def sqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)
    out = Tensor(root)
    return _record(out, (a,), lambda g: (g * 0.5 / root,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes do not conform: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")
    out = Tensor(a.data.T)
    return _record(out, (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return _record(out, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # Branch on sign so exp never overflows.
    s = np.where(x >= 0.0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),))


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax of a matrix, stabilized by row-max subtraction."""
    if a.data.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.data.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def bw(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _record(out, (a,), bw)


def log_softmax_rows(a: Tensor) -> Tensor:
    """Row-wise log-softmax, fused for numerical stability."""
    if a.data.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects a matrix, got shape {a.data.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Tensor(z - lse)
    s = np.exp(z - lse)

    def bw(g):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return _record(out, (a,), bw)


def tsum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _record(out, (a,), bw)


def tmean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy() / count,)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy() / count,)

    return _record(out, (a,), bw)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    arrs = [p.data for p in parts]
    out = Tensor(np.concatenate(arrs, axis=axis))
    sizes = [arr.shape[axis] for arr in arrs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _record(out, tuple(parts), bw)


def stack_rows(vectors: Sequence[Tensor]) -> Tensor:
    """Stack 1xd row tensors into an n x d matrix."""
    return concat(list(vectors), axis=0)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.data.shape),))


def gather_rows(table: Tensor, ids) -> Tensor:
    """Select rows ``table[ids]``; gradients scatter-add back into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[idx])

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), bw)


def pick(a: Tensor, rows, cols) -> Tensor:
    """Gather entries ``a[rows[i], cols[i]]`` into a vector."""
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)
    out = Tensor(a.data[r, c])

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (r, c), g)
        return (ga,)

    return _record(out, (a,), bw)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout with a mask drawn from ``rng``; identity at rate 0."""
    if rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * mask)
    return _record(out, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# Verification helpers
# ---------------------------------------------------------------------------


def grad_check(
    params: Mapping[str, Tensor],
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central finite differences.

    ``fn`` must be a deterministic map from the (shared) parameter mapping to a
    scalar tensor.  Error per scalar parameter is
    ``|analytic - (f(p+eps) - f(p-eps)) / 2 eps| / max(1, |analytic|)``.
    """

    def evaluate() -> float:
        value = fn(params)
        v = value.data.reshape(-1)
        if v.size != 1 or not np.isfinite(v[0]):
            raise EvaluationError(f"grad_check objective returned a bad value: shape {value.data.shape}")
        return float(v[0])

    with Tape() as tape:
        for t in params.values():
            tape.watch(t)
        loss = fn(params)
        if loss.data.size != 1 or not np.isfinite(loss.data.reshape(-1)[0]):
            raise EvaluationError("grad_check objective is not a finite scalar")
        backward(tape, loss)

    worst = 0.0
    for t in params.values():
        analytic = t.grad.reshape(-1) if t.grad is not None else np.zeros(t.data.size)
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = evaluate()
            flat[i] = orig - eps
            f_minus = evaluate()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * eps)
            err = abs(analytic[i] - fd) / max(1.0, abs(analytic[i]))
            if err > worst:
                worst = err
    return worst


def global_norm(arrays: Iterable[Array]) -> float:
    total = 0.0
    for a in arrays:
        total += float(np.sum(a * a))
    return float(np.sqrt(total))
