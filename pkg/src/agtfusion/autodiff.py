"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` are recorded in execution
order; :meth:`Tape.backward` walks the records once, in reverse, and
accumulates gradients into the ``grad`` buffers of leaf tensors that were
created with ``requires_grad=True``.  Outside a tape nothing is recorded, so
inference pays no bookkeeping cost.

    >>> w = Tensor([[2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = (w * w).sum()
    ...     tape.backward(loss)
    >>> w.grad
    array([[4.]])

Every forward value and every gradient is checked for NaN/Inf; a non-finite
result raises :class:`~agtfusion.errors.NonFiniteError` instead of
propagating silently.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, NonFiniteError

__all__ = [
    "Tensor",
    "Tape",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "power",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "relu",
    "gelu",
    "matmul",
    "sum",
    "mean",
    "reshape",
    "swapaxes",
    "getitem",
    "concat",
    "stack",
    "softmax",
    "log_softmax",
    "cross_entropy",
    "layer_norm",
    "l2_normalize",
    "zero_grad",
    "AdamState",
    "adam_init",
    "adam_step",
    "numerical_gradient",
    "max_relative_error",
]

_local = threading.local()


def _tape_stack() -> list[Tape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """An immutable float64 array that can take part in a gradient tape.

    ``data`` is a read-only ndarray.  ``grad`` is only ever populated on leaf
    tensors (those not produced by an operation) with ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_produced", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, *, _produced: bool = False):
        if _produced:
            # op outputs are fresh arrays already checked by _apply
            arr = np.asarray(data, dtype=np.float64)
        else:
            arr = np.array(data, dtype=np.float64)
            _check_finite(arr, "tensor data")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._produced = _produced

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return not self._produced

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> Tensor:
        return swapaxes(self, -1, -2)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager; operations run while the tape is active are
    appended to ``records``.  Tapes nest (innermost wins) and are
    thread-local.
    """

    records: list[_Record] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> Tape:
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def _push(self, record: _Record) -> None:
        if self.consumed:
            raise RuntimeError("tape already consumed by backward(); open a new Tape")
        self.records.append(record)

    def backward(self, loss: Tensor, grad=None) -> None:
        """Accumulate d(loss)/d(leaf) into every participating leaf's ``grad``."""
        if self.consumed:
            raise RuntimeError("backward() may only be called once per tape")
        if grad is None:
            if loss.size != 1:
                raise DimensionError(
                    f"backward() without an explicit seed needs a scalar loss, got shape {loss.shape}"
                )
            seed = np.ones_like(loss.data)
        else:
            seed = np.broadcast_to(np.asarray(grad, dtype=np.float64), loss.shape).copy()
        _check_finite(seed, "backward seed")

        if not loss._produced:
            if loss.requires_grad:
                _accumulate_leaf(loss, seed)
            self.consumed = True
            return

        pending: dict[int, np.ndarray] = {id(loss): seed}
        for rec in reversed(self.records):
            g = pending.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for inp, gi in zip(rec.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                gi = _unbroadcast(np.asarray(gi, dtype=np.float64), inp.shape)
                _check_finite(gi, f"backward of {rec.name}")
                if inp._produced:
                    prev = pending.get(id(inp))
                    pending[id(inp)] = gi if prev is None else prev + gi
                else:
                    _accumulate_leaf(inp, gi)
        self.records.clear()
        self.consumed = True


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    if g.shape != shape:
        raise DimensionError(f"cannot reduce gradient of shape {g.shape} to {shape}")
    return g


def _apply(name: str, out: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    _check_finite(out, name)
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs, _produced=True)
    if needs:
        tape._push(_Record(name, tuple(inputs), result, backward))
    return result


def _broadcast_check(name: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    return _apply("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    return _apply("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _apply("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return _apply("div", out, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _apply("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    p = float(exponent)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad**p
    return _apply("power", out, (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _apply("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _apply("log", out, (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _apply("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _apply("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _apply("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation (smooth everywhere, so finite differences behave)."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner),)

    return _apply("gelu", out, (a,), backward)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    Gradients: dA = dC @ Bᵀ, dB = Aᵀ @ dC (summed over broadcast axes).
    A 1-D operand is treated as a row (left) or column (right) vector and
    the added axis is dropped from the result, as in numpy.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 and b.ndim >= 1:
        out = matmul(reshape(a, (1, a.shape[0])), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1 and a.ndim >= 2:
        out = matmul(a, reshape(b, (b.shape[0], 1)))
        return reshape(out, out.shape[:-1])
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _apply("matmul", ad @ bd, (a, b), backward)


# ---------------------------------------------------------------- reductions / shape


def _norm_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _apply("sum", out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum(a, axis=axes, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(int(s) for s in shape)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {src} as {shape}") from None
    return _apply("reshape", out, (a,), lambda g: (g.reshape(src),))


def swapaxes(a, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, axis1, axis2)
    return _apply("swapaxes", out, (a,), lambda g: (np.swapaxes(g, axis1, axis2),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    shape = a.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _apply("getitem", np.array(out), (a,), backward)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat: need at least one tensor")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {[t.shape for t in ts]}: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _apply("concat", out, ts, lambda g: np.split(g, bounds, axis=axis))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("stack: need at least one tensor")
    if len({t.shape for t in ts}) != 1:
        raise DimensionError(f"stack: shapes differ {[t.shape for t in ts]}")
    out = np.stack([t.data for t in ts], axis=axis)
    n = len(ts)
    return _apply(
        "stack",
        out,
        ts,
        lambda g: [np.take(g, i, axis=axis) for i in range(n)],
    )


# ---------------------------------------------------------------- fused ops


def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[axis] < 1:
        raise DimensionError(f"softmax: empty axis in shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _apply("softmax", y, (x,), backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _apply("log_softmax", out, (x,), backward)


def cross_entropy(logits, labels: Sequence[int]) -> Tensor:
    """Mean negative log-softmax probability of each row's true class."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy: logits must be [batch, classes], got {logits.shape}")
    b, n_classes = logits.shape
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if y.shape[0] != b:
        raise DimensionError(f"cross_entropy: {b} rows of logits but {y.shape[0]} labels")
    if b == 0:
        raise DimensionError("cross_entropy: empty batch")
    if np.any((y < 0) | (y >= n_classes)):
        bad = sorted({int(v) for v in y if not 0 <= v < n_classes})
        raise ValueError(f"cross_entropy: labels {bad} outside [0, {n_classes})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(b)
    loss = -logp[rows, y].mean()

    def backward(g):
        grad = np.exp(logp)
        grad[rows, y] -= 1.0
        return (grad * (g / b),)

    return _apply("cross_entropy", np.array(loss), (logits,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(
            f"layer_norm: gamma {gamma.shape} / beta {beta.shape} must be ({d},) for input {x.shape}"
        )
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward(g):
        dxhat = g * gd
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, g * xhat, g

    return _apply("layer_norm", out, (x, gamma, beta), backward)


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    x = as_tensor(x)
    norm = sqrt(sum(x * x, axis=axis, keepdims=True) + eps)
    return x / norm


# ---------------------------------------------------------------- optimiser


@dataclass(frozen=True)
class AdamState:
    step: int
    m: Mapping[str, np.ndarray]
    v: Mapping[str, np.ndarray]


def adam_init(params: Mapping[str, np.ndarray]) -> AdamState:
    return AdamState(
        0,
        {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
        {k: np.zeros_like(p, dtype=np.float64) for k, p in params.items()},
    )


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update.  Inputs are left untouched.

    A missing (``None``) gradient is treated as zero.  ``weight_decay`` > 0
    adds decoupled decay ``lr * weight_decay * p`` (AdamW); at 0 the update
    is plain Adam.
    """
    if set(state.m) != set(params):
        raise DimensionError("adam_step: optimiser state does not match parameter names")
    t = state.step + 1
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise DimensionError(f"adam_step: shape mismatch for {k!r}: param {p.shape}, grad {g.shape}")
        m = beta1 * state.m[k] + (1.0 - beta1) * g
        v = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        if weight_decay:
            update = update + (lr * weight_decay) * p
        _check_finite(update, f"adam update of {k!r}")
        new_p[k] = p - update
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(t, new_m, new_v)


# ---------------------------------------------------------------- finite differences


def numerical_gradient(
    f: Callable[..., float], arrays: Sequence[np.ndarray], h: float = 1e-5
) -> list[np.ndarray]:
    """Central-difference gradient of scalar ``f(*arrays)`` w.r.t. each array.

    Uses forward evaluations only, so it is independent of the tape.
    """
    work = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for arr in work:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(*work))
            flat[i] = orig - h
            fm = float(f(*work))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray]) -> float:
    """Largest absolute deviation divided by the largest gradient magnitude.

    Normalising by the overall scale (not per element) keeps structurally
    zero gradient entries from turning finite-difference noise into huge
    ratios.
    """
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-300)
    return float(np.abs(a - n).max(initial=0.0) / scale)
