"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Just enough machinery to express an MLP encoder, a batch-normalized
projector, and composite contrastive losses, while keeping every backward
rule small enough to verify against central finite differences.

Conventions:
  * ops record onto the currently active :class:`Tape` (a context manager);
    with no active tape, ops run forward-only (inference mode);
  * elementwise broadcasting is restricted to leading-axis expansion: the
    smaller shape must be a suffix of the larger one (scalars included);
  * ``backward(loss)`` accumulates into ``.grad`` of every tensor on the
    path that has ``requires_grad``; repeated calls accumulate until grads
    are reset.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation, DimensionError, DomainError

_EPS_L2 = 1e-12

_ACTIVE_TAPE: Optional["Tape"] = None


class Tensor:
    """A dense float64 array, optionally carrying a gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # operator sugar; constants are wrapped as non-differentiable tensors
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return powc(self, float(exponent))


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Entry:
    __slots__ = ("op", "out", "inputs", "backward_fn")

    def __init__(self, op: str, out: Tensor, inputs: tuple[Tensor, ...], backward_fn):
        self.op = op
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


class Tape:
    """Chronological record of primitive ops for one differentiable pass.

    The record order is topological by construction (an op's inputs exist
    before the op runs), so one reversed scan visits each node exactly once.
    """

    def __init__(self):
        self.entries: list[_Entry] = []
        self.backward_visits = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise ContractViolation("nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None

    def first_nonfinite(self) -> tuple[str, Tensor] | None:
        """(op name, tensor) of the earliest non-finite op output, if any."""
        for entry in self.entries:
            if not np.all(np.isfinite(entry.out.data)):
                return entry.op, entry.out
        return None


def _record(op: str, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _ACTIVE_TAPE is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = _ACTIVE_TAPE
        _ACTIVE_TAPE.entries.append(_Entry(op, out, inputs, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` with d(loss)/d(tensor) for the loss's tape.

    The loss must be scalar. Gradients accumulate across calls; reset with
    ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise ContractViolation(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or not tape.entries:
        raise ContractViolation("loss was not recorded on a tape (nothing to differentiate)")

    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {id(loss): loss}
    visits = 0
    for entry in reversed(tape.entries):
        visits += 1
        g = flow.pop(id(entry.out), None)
        if g is None:
            continue
        leaves.pop(id(entry.out), None)
        if entry.out.requires_grad:
            entry.out.accumulate_grad(g)
        for inp, gi in zip(entry.inputs, entry.backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in flow:
                flow[key] = flow[key] + gi
            else:
                flow[key] = gi
                leaves[key] = inp
    tape.backward_visits = visits

    # whatever is left in `flow` belongs to leaf tensors (never produced on tape)
    for key, g in flow.items():
        leaves[key].accumulate_grad(g)


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# broadcasting helpers (leading-axis expansion only)
# ---------------------------------------------------------------------------


def _check_broadcast(op: str, sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    if sa == sb:
        return
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(small) == len(big) or small != big[len(big) - len(small):]:
        raise DimensionError(f"{op}: shapes {sa} and {sb} do not broadcast over leading axes")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra)))


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a.shape, b.shape)
    out = Tensor(a.data + b.data)
    return _record("add", out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a.shape, b.shape)
    out = Tensor(a.data - b.data)
    return _record("sub", out, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a.shape, b.shape)
    out = Tensor(a.data * b.data)
    return _record("mul", out, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a.shape, b.shape)
    out = Tensor(a.data / b.data)
    return _record("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record("neg", out, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    return _record("matmul", out, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected a matrix, got shape {a.shape}")
    out = Tensor(a.data.T)
    return _record("transpose", out, (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return _record("relu", out, (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))
    return _record("exp", out, (a,), lambda g: (g * out.data,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record("log", out, (a,), lambda g: (g / a.data,))


def powc(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data ** c)
    return _record("powc", out, (a,),
                   lambda g: (g * c * a.data ** (c - 1.0),))


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis))

    def bwd(g):
        if axis is None:
            return (np.full_like(a.data, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _record("sum", out, (a,), bwd)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    out = Tensor(a.data.mean(axis=axis))

    def bwd(g):
        if axis is None:
            return (np.full_like(a.data, float(g) / count),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy() / count,)

    return _record("mean", out, (a,), bwd)


def logsumexp(a: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted log-sum-exp along ``axis``; exact for inputs in [-1e3, 1e3]."""
    if a.shape == () or a.shape[axis] == 0:
        raise DomainError(f"logsumexp over an empty axis (shape {a.shape}, axis {axis})")
    m = a.data.max(axis=axis, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = Tensor(np.squeeze(m + np.log(total), axis=axis))
    soft = shifted / total

    def bwd(g):
        return (np.expand_dims(g, axis) * soft,)

    return _record("logsumexp", out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Rows sum to 1 within 1e-12; computed via the logsumexp shift."""
    if a.shape == () or a.shape[axis] == 0:
        raise DomainError(f"softmax over an empty axis (shape {a.shape}, axis {axis})")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _record("softmax", out, (a,), bwd)


def l2_normalize(a: Tensor) -> Tensor:
    """Normalize the last axis to unit length (eps-guarded).

    An exactly-zero vector maps to the zero vector with zero gradient.
    """
    sumsq = (a.data * a.data).sum(axis=-1, keepdims=True)
    norm = np.sqrt(sumsq + _EPS_L2)
    y = a.data / norm
    out = Tensor(y)
    live = (sumsq > 0.0).astype(np.float64)

    def bwd(g):
        inner = (g * a.data).sum(axis=-1, keepdims=True)
        return (live * (g / norm - a.data * inner / norm**3),)

    return _record("l2_normalize", out, (a,), bwd)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DomainError("concat of an empty sequence")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _record("concat", out, tuple(parts), bwd)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[start:stop])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _record("slice", out, (a,), bwd)


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows by index (duplicates allowed); backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[idx])

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _record("take_rows", out, (a,), bwd)
