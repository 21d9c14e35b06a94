"""Dense 2-D float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their operands requires a gradient::

    with Tape() as tape:
        loss = dot(w, x)
    (gw,) = backward(tape, loss, [w])

Outside a tape nothing is recorded, which is how inference runs.

Every tensor is a matrix. Scalars are ``(1, 1)``; one-dimensional input is
read as a row vector. The only implicit broadcast is the row-vector bias in
:func:`add_row`; everything else needs matching shapes.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import math

import numpy as np
from scipy.special import expit

from .errors import NonFinite, NotScalarLoss, ShapeMismatch

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


class Tape:
    """Append-only record of differentiable operations, in execution order."""

    def __init__(self):
        self.records: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.records)

    def clear(self) -> None:
        for t in self.records:
            t._parents = ()
            t._backward = None
        self.records = []


def active_tape() -> Optional[Tape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_matrix(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeMismatch(f"tensors are 2-D, got {arr.ndim}-D data")
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    # a NaN or inf anywhere makes the sum non-finite; only then look closer
    if math.isfinite(arr.sum()):
        return
    if not np.isfinite(arr).all():
        raise NonFinite(f"{what} produced a non-finite value")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_matrix(data)
        _check_finite(self.data, name or "tensor creation")
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ShapeMismatch(f"item() needs a (1, 1) tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, what: str) -> Tensor:
    """Wrap an op's output and put it on the tape if any parent needs a gradient."""
    _check_finite(data, what)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = what
    out._parents = ()
    out._backward = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.records.append(out)
    return out


def matmul(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def back(g):
        return g @ B.T, A.T @ g

    return _result(A @ B, (a, b), back, "matmul")


def propagate(P, h) -> Tensor:
    """``P @ h`` for a constant (dense or sparse) square propagation matrix."""
    h = _tensor(h)
    if P.shape[1] != h.shape[0] or P.shape[0] != P.shape[1]:
        raise ShapeMismatch(f"propagate {P.shape} @ {h.shape}")

    def back(g):
        return (np.asarray(P.T @ g),)

    return _result(np.asarray(P @ h.data), (h,), back, "propagate")


def add(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add {a.shape} + {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def add_row(x, bias) -> Tensor:
    """Add a ``(1, m)`` row vector to every row of ``x``."""
    x, bias = _tensor(x), _tensor(bias)
    if bias.shape != (1, x.shape[1]):
        raise ShapeMismatch(f"add_row {x.shape} + {bias.shape}")
    return _result(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0, keepdims=True)), "add_row")


def relu(x) -> Tensor:
    x = _tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _tensor(x)
    mask = x.data > 0
    factor = np.where(mask, 1.0, slope)
    return _result(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def sigmoid(x) -> Tensor:
    x = _tensor(x)
    y = expit(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def _row_sum(a: np.ndarray) -> np.ndarray:
    # summing each row in sorted order makes the result independent of column order
    return np.sort(a, axis=1).sum(axis=1, keepdims=True)


def mean_cols(x) -> Tensor:
    """``(B, 1)`` row means, invariant to permuting the columns bitwise."""
    x = _tensor(x)
    m = x.shape[1]
    return _result(_row_sum(x.data) / m, (x,), lambda g: (np.repeat(g / m, m, axis=1),), "mean_cols")


def softmax_rows(x) -> Tensor:
    """Row-wise softmax with max subtraction; equivariant to column permutations bitwise."""
    x = _tensor(x)
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / _row_sum(e)

    def back(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (x,), back, "softmax")


def softmax_vec(x) -> Tensor:
    x = _tensor(x)
    if x.shape[0] != 1:
        raise ShapeMismatch(f"softmax_vec expects a row vector, got {x.shape}")
    return softmax_rows(x)


def concat_cols(*xs) -> Tensor:
    xs = [_tensor(x) for x in xs]
    if not xs:
        raise ShapeMismatch("concat_cols needs at least one tensor")
    rows = xs[0].shape[0]
    if any(x.shape[0] != rows for x in xs):
        raise ShapeMismatch(f"concat_cols row counts {[x.shape[0] for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])

    def back(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return _result(np.concatenate([x.data for x in xs], axis=1), xs, back, "concat_cols")


def scale_add(coeffs: Sequence[float], xs) -> Tensor:
    """``sum(c_i * x_i)`` with constant coefficients."""
    xs = [_tensor(x) for x in xs]
    if len(coeffs) != len(xs) or not xs:
        raise ShapeMismatch("scale_add needs one coefficient per tensor")
    shape = xs[0].shape
    if any(x.shape != shape for x in xs):
        raise ShapeMismatch(f"scale_add shapes {[x.shape for x in xs]}")
    coeffs = [float(c) for c in coeffs]
    out = coeffs[0] * xs[0].data
    for c, x in zip(coeffs[1:], xs[1:]):
        out = out + c * x.data
    return _result(out, xs, lambda g: tuple(c * g for c in coeffs), "scale_add")


def scale_rows(x, s) -> Tensor:
    """Multiply row ``i`` of ``x`` by the scalar ``s[i, 0]``."""
    x, s = _tensor(x), _tensor(s)
    if s.shape != (x.shape[0], 1):
        raise ShapeMismatch(f"scale_rows {x.shape} by {s.shape}")
    X, S = x.data, s.data

    def back(g):
        return g * S, (g * X).sum(axis=1, keepdims=True)

    return _result(X * S, (x, s), back, "scale_rows")


def take_rows(x, idx) -> Tensor:
    x = _tensor(x)
    idx = np.asarray(idx, dtype=np.intp).reshape(-1)
    n = x.shape[0]

    def back(g):
        out = np.zeros((n, x.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _result(x.data[idx], (x,), back, "take_rows")


def take_cols(x, cols) -> Tensor:
    """Column selection by slice or index list."""
    x = _tensor(x)
    if isinstance(cols, slice):
        sel = cols
    else:
        sel = np.asarray(cols, dtype=np.intp).reshape(-1)
    m = x.shape[1]

    def back(g):
        out = np.zeros((x.shape[0], m))
        if isinstance(sel, slice):
            out[:, sel] = g
        else:
            np.add.at(out.T, sel, g.T)
        return (out,)

    return _result(x.data[:, sel], (x,), back, "take_cols")


def mean_vec(x) -> Tensor:
    x = _tensor(x)
    n = x.data.size
    shape = x.shape
    return _result(np.array([[x.data.mean()]]), (x,), lambda g: (np.full(shape, g[0, 0] / n),), "mean")


def dot(a, b) -> Tensor:
    a, b = _tensor(a), _tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"dot {a.shape} . {b.shape}")
    A, B = a.data, b.data
    return _result(
        np.array([[float(np.sum(A * B))]]), (a, b), lambda g: (g[0, 0] * B, g[0, 0] * A), "dot"
    )


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor] = ()) -> list[np.ndarray]:
    """Reverse sweep from ``loss``; returns one gradient array per entry of ``params``.

    Gradients are also stored on each parameter's ``grad`` attribute.
    Parameters the loss does not depend on receive zeros. The tape is
    cleared afterwards.
    """
    if loss.shape != (1, 1):
        raise NotScalarLoss(f"loss must be (1, 1), got {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for node in reversed(tape.records):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = []
    for p in params:
        g = grads.get(id(p))
        g = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(p.shape)
        p.grad = g
        out.append(g)
    tape.clear()
    return out


def numeric_gradient(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> list[np.ndarray]:
    """Central differences of the scalar ``f()`` with respect to every entry of ``params``.

    ``f`` reads the parameters' current data; entries are perturbed in place
    and restored.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    out = []
    for p in params:
        g = np.zeros(p.shape)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f().item()
            flat[i] = orig - step
            lo = f().item()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out


def relative_error(g_ad: np.ndarray, g_fd: np.ndarray) -> np.ndarray:
    return np.abs(g_ad - g_fd) / (np.abs(g_fd) + 1e-8)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Largest relative error between autodiff and central-difference gradients."""
    with Tape() as tape:
        loss = f()
    g_ad = backward(tape, loss, params)
    g_fd = numeric_gradient(f, params, step)
    return max((float(relative_error(a, n).max()) for a, n in zip(g_ad, g_fd)), default=0.0)


PROB_CLAMP = 1e-12


def binary_cross_entropy(yhat, y) -> Tensor:
    """Mean negative log-likelihood of 0/1 targets ``y`` under probabilities ``yhat``.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]``; the clamp passes no
    gradient.
    """
    yhat = _tensor(yhat)
    y = np.asarray(y, dtype=np.float64).reshape(yhat.shape)
    m = y.size
    p = np.clip(yhat.data, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (yhat.data >= PROB_CLAMP) & (yhat.data <= 1.0 - PROB_CLAMP)
    loss = -np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p)) / m

    def back(g):
        return (g[0, 0] * inside * (-(y / p) + (1.0 - y) / (1.0 - p)) / m,)

    return _result(np.array([[loss]]), (yhat,), back, "bce")
