"""Dense float64 tensors with reverse-mode differentiation.

Every operation records its adjoint on a tape, so calling ``backward()`` on a
scalar result accumulates gradients into every reachable :class:`Parameter`.
The op set is intentionally small: matrix products, broadcast arithmetic,
row gather/scatter, strided pooling, leaky ReLU, and a numerically stable
masked softmax -- enough to express the whole forecasting network.

All data is 64-bit; every op checks its output for NaN/Inf and raises
:class:`NumericError` on the first non-finite value.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateMaskError,
    DeterminismError,
    NumericError,
    ShapeError,
)

LEAKY_SLOPE = 0.01

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (forward values only)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    # A finite sum proves all entries finite; on overflow fall back to the
    # exact elementwise check before deciding.
    with np.errstate(over="ignore", invalid="ignore"):
        total = arr.sum()
    if not np.isfinite(total) and not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {op}")


class Tensor:
    """A node of the computation tape holding a float64 array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backprop: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            # Copy: g may alias a buffer another accumulation will reuse.
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse accumulation from this scalar into all parameters."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar loss")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backprop is not None and node.grad is not None:
                node._backprop(node.grad)

    # Small operator sugar; the named functions below do the real work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A named learnable tensor carrying its gradient and Adam moments."""

    __slots__ = ("name", "adam_m", "adam_v")

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backprop, op: str) -> Tensor:
    _check_finite(data, op)
    track = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backprop(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backprop, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def backprop(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backprop, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backprop(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backprop, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
        )
    data = a.data @ b.data

    def backprop(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(data, (a, b), backprop, "matmul")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")

    def backprop(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(a.data.T.copy(), (a,), backprop, "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.data.shape} into {shape}")

    def backprop(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backprop, "reshape")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + [p.data.shape[axis] for p in parts])

    def backprop(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                p._accumulate(g[tuple(sl)])

    return _make(data, parts, backprop, "concat")


def take_rows(a, idx) -> Tensor:
    """Gather rows ``idx`` of a matrix; duplicate indices are allowed."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    if a.data.ndim != 2:
        raise ShapeError("take_rows expects a 2-D tensor")
    n = a.data.shape[0]

    def backprop(g):
        if a.requires_grad:
            # bincount per column beats np.add.at by a wide margin
            buf = np.stack(
                [np.bincount(idx, weights=g[:, c], minlength=n) for c in range(g.shape[1])],
                axis=1,
            )
            a._accumulate(buf)

    return _make(a.data[idx], (a,), backprop, "take_rows")


def put_rows(sub, idx, n_rows: int) -> Tensor:
    """Scatter the rows of ``sub`` into an otherwise-zero matrix."""
    sub = as_tensor(sub)
    idx = np.asarray(idx, dtype=np.intp)
    data = np.zeros((n_rows, sub.data.shape[1]))
    data[idx] = sub.data

    def backprop(g):
        if sub.requires_grad:
            sub._accumulate(g[idx])

    return _make(data, (sub,), backprop, "put_rows")


def scatter_pairs(values, rows, cols, shape: tuple[int, int]) -> Tensor:
    """Place a column of values at (rows[i], cols[i]) of a zero matrix."""
    values = as_tensor(values)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    flat = values.data.reshape(-1)
    if flat.shape[0] != rows.shape[0]:
        raise ShapeError("scatter_pairs value count does not match index count")
    data = np.zeros(shape)
    data[rows, cols] = flat

    def backprop(g):
        if values.requires_grad:
            values._accumulate(g[rows, cols].reshape(values.data.shape))

    return _make(data, (values,), backprop, "scatter_pairs")


def pool(a, width: int, mode: str = "avg") -> Tensor:
    """Non-overlapping pooling over rows with stride = kernel = ``width``.

    Trailing rows that do not fill a window are dropped.
    """
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("pool expects a 2-D tensor")
    h, d = a.data.shape
    if h < width:
        raise ShapeError(f"pool window {width} exceeds {h} rows")
    n_out = h // width
    blocks = a.data[: n_out * width].reshape(n_out, width, d)
    if mode == "avg":
        data = blocks.mean(axis=1)

        def backprop(g):
            if a.requires_grad:
                buf = np.zeros_like(a.data)
                buf[: n_out * width] = np.repeat(g / width, width, axis=0)
                a._accumulate(buf)

    elif mode == "max":
        arg = blocks.argmax(axis=1)
        data = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]

        def backprop(g):
            if a.requires_grad:
                buf3 = np.zeros_like(blocks)
                np.put_along_axis(buf3, arg[:, None, :], g[:, None, :], axis=1)
                buf = np.zeros_like(a.data)
                buf[: n_out * width] = buf3.reshape(n_out * width, d)
                a._accumulate(buf)

    else:
        raise ShapeError(f"unknown pool mode {mode!r}")
    return _make(data, (a,), backprop, f"pool[{mode}]")


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    """Elementwise max(x, slope*x); the adjoint uses slope below zero."""
    if not 0.0 < slope < 1.0:
        raise NumericError("leaky_relu slope must lie in (0, 1)")
    a = as_tensor(a)
    data = np.where(a.data >= 0.0, a.data, slope * a.data)

    def backprop(g):
        if a.requires_grad:
            a._accumulate(np.where(a.data >= 0.0, g, slope * g))

    return _make(data, (a,), backprop, "leaky_relu")


def masked_softmax(logits, mask, c: float) -> Tensor:
    """Row softmax of ``logits - (1 - mask) * c`` for a binary mask.

    ``c`` must be positive and large enough to bury masked entries; rows whose
    mask is all zero are rejected with :class:`DegenerateMaskError`.  Row-max
    subtraction keeps the exponentials in range, and fully masked positions
    underflow to exactly zero once c dominates the logits.
    """
    logits = as_tensor(logits)
    if c <= 0.0:
        raise NumericError("masked_softmax constant c must be positive")
    mask_arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if mask_arr.shape != logits.data.shape:
        raise ShapeError("mask shape must equal logits shape")
    if not np.all((mask_arr == 0.0) | (mask_arr == 1.0)):
        raise ShapeError("mask must be binary")
    if np.any(mask_arr.sum(axis=1) == 0.0):
        raise DegenerateMaskError("a softmax row is masked out entirely")
    shifted = logits.data - (1.0 - mask_arr) * c
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def backprop(g):
        if logits.requires_grad:
            inner = (g * data).sum(axis=1, keepdims=True)
            logits._accumulate(data * (g - inner))

    return _make(data, (logits,), backprop, "masked_softmax")


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def backprop(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g)))

    return _make(np.asarray(a.data.sum()), (a,), backprop, "sum_all")


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size

    def backprop(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g) / n))

    return _make(np.asarray(a.data.mean()), (a,), backprop, "mean_all")


# ---------------------------------------------------------------------------
# Parameter initialisation and small MLPs


def uniform_init(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Uniform in +-sqrt(6 / (fan_in + fan_out))."""
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


def mlp_forward(x, layers: Sequence[tuple[Parameter, Parameter]]) -> Tensor:
    """Affine stack with leaky-ReLU between layers; last layer affine only."""
    x = as_tensor(x)
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        x = add(matmul(x, w), b)
        if i < last:
            x = leaky_relu(x)
    return x


class Mlp:
    """A stack of (weight, bias) parameter pairs applied by mlp_forward."""

    def __init__(self, widths: Sequence[int], rng: np.random.Generator, name: str):
        if len(widths) < 2:
            raise ShapeError("an MLP needs at least input and output widths")
        self.layers: list[tuple[Parameter, Parameter]] = []
        for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = Parameter(uniform_init(rng, w_in, w_out), f"{name}.w{i}")
            b = Parameter(uniform_init(rng, 1, w_out), f"{name}.b{i}")
            self.layers.append((w, b))

    def __call__(self, x) -> Tensor:
        return mlp_forward(x, self.layers)

    def parameters(self) -> list[Parameter]:
        return [p for pair in self.layers for p in pair]


# ---------------------------------------------------------------------------
# Optimiser and gradient checking


def adam_step(
    p: Parameter,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    t: int = 1,
) -> None:
    """One bias-corrected Adam update, in place.

    The step is lr * m_hat / sqrt(v_hat + eps); with a zero gradient the
    value is untouched.
    """
    if t < 1:
        raise NumericError("adam_step requires step count t >= 1")
    if p.grad is None or not np.all(np.isfinite(p.grad)):
        raise NumericError(f"non-finite or missing gradient for {p.name}")
    p.adam_m *= beta1
    p.adam_m += (1.0 - beta1) * p.grad
    p.adam_v *= beta2
    p.adam_v += (1.0 - beta2) * np.square(p.grad)
    m_hat = p.adam_m / (1.0 - beta1**t)
    v_hat = p.adam_v / (1.0 - beta2**t)
    p.data -= lr * m_hat / np.sqrt(v_hat + eps)
    _check_finite(p.data, "adam_step")


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Parameter],
    h: float = 1e-5,
    samples: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare recorded adjoints against central finite differences.

    ``loss_fn`` must rebuild the forward pass from the live parameter values
    on every call and return a scalar.  Returns the worst
    |analytic - numeric| / max(1, |numeric|) over the sampled coordinates.
    """
    if not 1e-7 <= h <= 1e-3:
        raise NumericError("grad_check step h must lie in [1e-7, 1e-3]")
    params = list(params)
    first = float(loss_fn().data)
    second = float(loss_fn().data)
    if first != second:
        raise DeterminismError("loss_fn returned different values on repeat calls")

    for p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = [p.grad.copy() for p in params]

    coords: list[tuple[int, int]] = [
        (pi, ci) for pi, p in enumerate(params) for ci in range(p.data.size)
    ]
    if samples is not None and samples < len(coords):
        rng = rng or np.random.default_rng(0)
        chosen = rng.choice(len(coords), size=samples, replace=False)
        coords = [coords[int(i)] for i in chosen]

    worst = 0.0
    for pi, ci in coords:
        p = params[pi]
        orig = p.data.flat[ci]
        p.data.flat[ci] = orig + h
        up = float(loss_fn().data)
        p.data.flat[ci] = orig - h
        down = float(loss_fn().data)
        p.data.flat[ci] = orig
        numeric = (up - down) / (2.0 * h)
        err = abs(analytic[pi].flat[ci] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
