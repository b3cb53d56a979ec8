"""Dense float64 tensors with tape-based reverse-mode differentiation.

Everything downstream (char CNN, BiLSTM encoder, attention pooling,
classifier) is expressed in the primitive ops defined here.  A forward
pass records onto an explicit :class:`Graph`; ``Graph.backward`` walks
the tape once in reverse and accumulates gradients into every
``requires_grad`` tensor reachable from the loss.

Ops run fine with no active graph (pure forward, nothing recorded),
which is how inference and the numeric side of ``grad_check`` work.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """Screen every op output for NaN/Inf.  Slow; meant for tests."""
    global _debug_checks
    _debug_checks = enabled


class TensorError(Exception):
    """Base class for tensor-level failures."""


class ShapeError(TensorError):
    """Operands do not conform for the attempted op."""


class GraphError(TensorError):
    """Misuse of the recording / backward machinery."""


class Tensor:
    """A dense n-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data: np.ndarray = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        # Fast construction for op outputs: data is already a DTYPE ndarray.
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = False
        t.grad = None
        return t

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
        if self.data.size != 1:
            raise ShapeError(f"item: tensor has shape {self.shape}, not scalar")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Arithmetic sugar over the module-level primitives.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


_BackwardFn = Callable[[np.ndarray], tuple]


class Graph:
    """Tape of executed primitives for one forward/backward pass.

    Records are appended in execution order, so every op's inputs
    precede its output and one reverse sweep visits each op exactly
    once.  A graph is single-use: entering starts recording, exiting
    stops it, and ``backward`` may run once.
    """

    _active: Optional["Graph"] = None

    def __init__(self) -> None:
        self._records: list[tuple[Tensor, tuple[Tensor, ...], _BackwardFn]] = []
        self._tracked: set[int] = set()
        self._spent = False

    def __enter__(self) -> "Graph":
        if Graph._active is not None:
            raise GraphError("a Graph is already recording on this thread")
        Graph._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        Graph._active = None
        return False

    def __len__(self) -> int:
        return len(self._records)

    def _connected(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for reachable leaves."""
        if loss.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._spent:
            raise GraphError("backward already ran on this graph")
        self._spent = True

        flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward in reversed(self._records):
            gout = flowing.pop(id(out), None)
            if gout is None:
                continue  # op output does not feed the loss
            for t, g in zip(inputs, backward(gout)):
                if g is None:
                    continue
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                elif id(t) in self._tracked:
                    prev = flowing.get(id(t))
                    flowing[id(t)] = g if prev is None else prev + g


def _apply(
    name: str,
    out_data: np.ndarray,
    inputs: tuple[Tensor, ...],
    backward: _BackwardFn,
) -> Tensor:
    if _debug_checks and not np.all(np.isfinite(out_data)):
        raise TensorError(f"{name}: non-finite values in output")
    out = Tensor._wrap(out_data)
    g = Graph._active
    if g is not None and any(g._connected(t) for t in inputs):
        g._records.append((out, inputs, backward))
        g._tracked.add(id(out))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g down to ``shape``, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_axis(name: str, t: Tensor, axis: int) -> None:
    if not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"{name}: axis {axis} out of range for shape {t.shape}")


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _apply("matmul", out, (a, b), backward)


def _elementwise(name: str, a: Tensor, b: Tensor, fwd, bwd) -> Tensor:
    ad, bd = a.data, b.data
    try:
        np.broadcast_shapes(ad.shape, bd.shape)
    except ValueError:
        raise ShapeError(f"{name}: {a.shape} vs {b.shape}") from None
    out = fwd(ad, bd)

    def backward(g):
        ga, gb = bwd(g, ad, bd)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _apply(name, out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise("add", a, b, lambda x, y: x + y, lambda g, x, y: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise("sub", a, b, lambda x, y: x - y, lambda g, x, y: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _elementwise("mul", a, b, lambda x, y: x * y, lambda g, x, y: (g * y, g * x))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    out = np.abs(ad)

    def backward(g):
        return (g * np.sign(ad),)

    return _apply("absolute", out, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # exp overflow saturates to the correct 0/1
        out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return (g * out * (1.0 - out),)

    return _apply("sigmoid", out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _apply("tanh", out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    ad = a.data
    out = np.maximum(ad, 0.0)

    def backward(g):
        return (g * (ad > 0.0),)

    return _apply("relu", out, (a,), backward)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty input list")
    _check_axis("concat", parts[0], axis)
    ndim = parts[0].ndim
    for p in parts[1:]:
        if p.ndim != ndim:
            raise ShapeError(
                f"concat: rank mismatch {parts[0].shape} vs {p.shape}"
            )
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[p.shape for p in parts]} along axis {axis}"
        ) from None
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i]:offsets[i + 1]], 0, axis)
            for i in range(len(sizes))
        )

    return _apply("concat", out, tuple(parts), backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    _check_axis("slice_axis", a, axis)
    dim = a.shape[axis]
    if not 0 <= start < stop <= dim:
        raise ShapeError(
            f"slice_axis: range [{start}:{stop}] invalid for axis {axis} of {a.shape}"
        )
    index = (slice(None),) * axis + (slice(start, stop),)
    ad = a.data
    out = ad[index]

    def backward(g):
        z = np.zeros_like(ad)
        z[index] = g
        return (z,)

    return _apply("slice_axis", out, (a,), backward)


def take_rows(a: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D tensor; backward scatter-adds into them."""
    if a.ndim != 2:
        raise ShapeError(f"take_rows: expected 2-D table, got {a.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: ids must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(
            f"take_rows: id out of range [0, {a.shape[0]}) in {idx.tolist()}"
        )
    ad = a.data
    out = ad[idx]

    def backward(g):
        z = np.zeros_like(ad)
        np.add.at(z, idx, g)
        return (z,)

    return _apply("take_rows", out, (a,), backward)


def sum_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    _check_axis("sum_axis", a, axis)
    ad = a.data
    out = ad.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ad.shape),)

    return _apply("sum_axis", out, (a,), backward)


def max_axis(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max over an axis; gradient routes to the first argmax on ties."""
    _check_axis("max_axis", a, axis)
    ad = a.data
    out = ad.max(axis=axis, keepdims=keepdims)
    argmax = np.expand_dims(ad.argmax(axis=axis), axis)  # first index on ties

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        z = np.zeros_like(ad)
        np.put_along_axis(z, argmax, g, axis=axis)
        return (z,)

    return _apply("max_axis", out, (a,), backward)


def l2norm(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Euclidean norm over an axis; zero vectors get zero gradient."""
    _check_axis("l2norm", a, axis)
    ad = a.data
    norm = np.sqrt((ad * ad).sum(axis=axis, keepdims=True))
    out = norm if keepdims else norm.squeeze(axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(norm == 0.0, 1.0, norm)  # 0-vector rows yield 0/1 = 0
        return (g * ad / safe,)

    return _apply("l2norm", out, (a,), backward)


def div(a: Tensor, s) -> Tensor:
    """Divide a tensor by a scalar (python number or size-1 tensor)."""
    if not isinstance(s, Tensor):
        s = Tensor(np.asarray(s, dtype=DTYPE))
    if s.size != 1:
        raise ShapeError(f"div: divisor must be scalar, got shape {s.shape}")
    ad, sd = a.data, s.data
    out = ad / sd

    def backward(g):
        ga = g / sd
        gs = np.asarray(-(g * ad).sum() / (sd * sd).reshape(())).reshape(s.data.shape)
        return ga, gs

    return _apply("div", out, (a, s), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, computed with the max-shift trick."""
    ad = a.data
    shifted = ad - ad.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return ((g - inner) * out,)

    return _apply("softmax", out, (a,), backward)


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore"):  # caller clamps; log(0) -> -inf
        out = np.log(ad)

    def backward(g):
        return (g / ad,)

    return _apply("log", out, (a,), backward)


# ---------------------------------------------------------------------------
# Verification harness
# ---------------------------------------------------------------------------

def grad_check(
    f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5
) -> float:
    """Compare analytic gradients of ``f`` at ``x`` with central differences.

    Returns max over coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    ``f`` must be deterministic and scalar-valued; ``x.requires_grad``
    must be set so the analytic gradient lands somewhere.
    """
    if eps <= 0:
        raise ValueError(f"grad_check: eps must be positive, got {eps}")
    if not x.requires_grad:
        raise ValueError("grad_check: x must have requires_grad=True")

    x.grad = None
    with Graph() as g:
        out = f(x)
        if out.data.size != 1:
            raise GraphError(
                f"grad_check: f must be scalar-valued, got shape {out.shape}"
            )
        g.backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x).data.reshape(()))
        flat[i] = orig - eps
        fm = float(f(x).data.reshape(()))
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    return float(rel.max()) if rel.size else 0.0
