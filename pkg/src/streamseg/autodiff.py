"""Reverse-mode automatic differentiation over dense float64 arrays.

Deliberately small: only the kernels the segmentation model needs, each with
an exact hand-written adjoint. Values live in numpy arrays; the graph is a
set of parent links plus one backward closure per node, discarded after the
backward pass. Single-threaded and deterministic for a fixed seed.

Float64 is the default. ``set_default_dtype(np.float32)`` switches new leaf
tensors to 32-bit (gradient checks then need ~1e-3 tolerance instead of 1e-6).
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "concat",
    "conv1d",
    "layer_norm",
    "masked_attention",
    "rotary_tables",
    "apply_rotary",
    "finite_difference_gradient",
    "set_default_dtype",
    "get_default_dtype",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

_default_dtype = np.float64


def set_default_dtype(dtype) -> None:
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


class ShapeError(ValueError):
    """Operands passed to a kernel do not conform."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording.

    Forward values are computed by the exact same numpy calls, so results
    are bitwise identical to a recorded pass over the same inputs.
    """

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense array with optional gradient tracking.

    `data` is a row-major numpy array (float64 unless the default dtype was
    changed); `grad`, once backward() has run, is a same-shape array holding
    d(root)/d(self). Gradients accumulate additively across uses.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=_default_dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._backward: Callable[[], None] | None = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape, dtype=_default_dtype), requires_grad)

    @classmethod
    def ones(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(shape, dtype=_default_dtype), requires_grad)

    @staticmethod
    def _wrap(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def _make(self, data: np.ndarray, parents: tuple["Tensor", ...],
              backward: Callable[[], None]) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- basic properties -----------------------------------------------------

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
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # -- elementwise arithmetic -----------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = self._wrap(other)
        try:
            data = self.data + other.data
        except ValueError:
            raise ShapeError(f"add: shapes {self.shape} and {other.shape} do not broadcast")
        a, b = self, other

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))

        out = self._make(data, (a, b), backward)
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def backward():
            a._accum(-out.grad)

        out = self._make(-self.data, (a,), backward)
        return out

    def __sub__(self, other) -> "Tensor":
        other = self._wrap(other)
        try:
            data = self.data - other.data
        except ValueError:
            raise ShapeError(f"sub: shapes {self.shape} and {other.shape} do not broadcast")
        a, b = self, other

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g, b.shape))

        out = self._make(data, (a, b), backward)
        return out

    def __rsub__(self, other) -> "Tensor":
        return self._wrap(other).__sub__(self)

    def __mul__(self, other) -> "Tensor":
        other = self._wrap(other)
        try:
            data = self.data * other.data
        except ValueError:
            raise ShapeError(f"mul: shapes {self.shape} and {other.shape} do not broadcast")
        a, b = self, other

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        out = self._make(data, (a, b), backward)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / other)

    def __pow__(self, exponent: float) -> "Tensor":
        p = float(exponent)
        a = self

        def backward():
            a._accum(out.grad * p * a.data ** (p - 1.0))

        out = self._make(self.data ** p, (a,), backward)
        return out

    # -- linear algebra ---------------------------------------------------------

    def __matmul__(self, other: "Tensor") -> "Tensor":
        other = self._wrap(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(f"matmul: operands must be at least 2-D, got {self.shape} and {other.shape}")
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul: shapes {self.shape} and {other.shape} do not conform")
        a, b = self, other

        def backward():
            g = out.grad
            if a.requires_grad:
                a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

        out = self._make(self.data @ other.data, (a, b), backward)
        return out

    def transpose(self, *axes: int) -> "Tensor":
        order = axes if axes else tuple(reversed(range(self.ndim)))
        inverse = np.argsort(order)
        a = self

        def backward():
            a._accum(out.grad.transpose(inverse))

        out = self._make(self.data.transpose(order), (a,), backward)
        return out

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def reshape(self, *shape: int) -> "Tensor":
        a = self
        old = self.shape

        def backward():
            a._accum(out.grad.reshape(old))

        out = self._make(self.data.reshape(shape), (a,), backward)
        return out

    def __getitem__(self, index) -> "Tensor":
        a = self

        def backward():
            g = np.zeros_like(a.data)
            np.add.at(g, index, out.grad)
            a._accum(g)

        out = self._make(self.data[index], (a,), backward)
        return out

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def backward():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape).copy())

        out = self._make(self.data.sum(axis=axis, keepdims=keepdims), (a,), backward)
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        elif isinstance(axis, tuple):
            count = int(np.prod([self.shape[ax] for ax in axis]))
        else:
            count = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- nonlinearities -----------------------------------------------------------

    def exp(self) -> "Tensor":
        a = self

        def backward():
            a._accum(out.grad * out.data)

        out = self._make(np.exp(self.data), (a,), backward)
        return out

    def log(self) -> "Tensor":
        a = self

        def backward():
            a._accum(out.grad / a.data)

        out = self._make(np.log(self.data), (a,), backward)
        return out

    def clamp_min(self, floor: float) -> "Tensor":
        a = self

        def backward():
            a._accum(out.grad * (a.data > floor))

        out = self._make(np.maximum(self.data, floor), (a,), backward)
        return out

    def sigmoid(self) -> "Tensor":
        a = self

        def backward():
            a._accum(out.grad * out.data * (1.0 - out.data))

        out = self._make(expit(self.data), (a,), backward)
        return out

    def gelu(self) -> "Tensor":
        a = self
        phi = 0.5 * (1.0 + erf(self.data * _INV_SQRT2))

        def backward():
            density = np.exp(-0.5 * a.data * a.data) * _INV_SQRT2PI
            a._accum(out.grad * (phi + a.data * density))

        out = self._make(self.data * phi, (a,), backward)
        return out

    def softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
        a = self

        def backward():
            g = out.grad
            dot = (g * out.data).sum(axis=axis, keepdims=True)
            a._accum(out.data * (g - dot))

        out = self._make(y, (a,), backward)
        return out

    # -- backward pass --------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {self.shape}")
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
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()


# -- multi-input and structured kernels ---------------------------------------------


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [Tensor._wrap(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input list")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[p.shape for p in parts]} do not align on axis {axis}")

    def backward():
        offset = 0
        for p in parts:
            n = p.shape[axis]
            sel = [slice(None)] * data.ndim
            sel[axis] = slice(offset, offset + n)
            if p.requires_grad:
                p._accum(out.grad[tuple(sel)])
            offset += n

    out = parts[0]._make(data, tuple(parts), backward)
    return out


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, dilation: int = 1,
           pad_left: int = 0, pad_right: int = 0) -> Tensor:
    """Dilated 1-D convolution over the leading (time) axis.

    x: (T, C_in), w: (K, C_in, C_out), b: (C_out,). Output t is
    sum_i x[t + i*dilation] @ w[i], computed over the zero-padded input.
    """
    x = Tensor._wrap(x)
    w = Tensor._wrap(w)
    if x.ndim != 2 or w.ndim != 3:
        raise ShapeError(f"conv1d: expected x (T, C_in) and w (K, C_in, C_out), got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input channels {x.shape} do not match weight {w.shape}")
    kw = w.shape[0]
    t_out = x.shape[0] + pad_left + pad_right - (kw - 1) * dilation
    if t_out < 1:
        raise ShapeError(f"conv1d: input {x.shape} too short for kernel {w.shape} at dilation {dilation}")
    xp = np.pad(x.data, ((pad_left, pad_right), (0, 0)))
    y = np.zeros((t_out, w.shape[2]), dtype=x.data.dtype)
    for i in range(kw):
        y += xp[i * dilation: i * dilation + t_out] @ w.data[i]
    if b is not None:
        if b.shape != (w.shape[2],):
            raise ShapeError(f"conv1d: bias {b.shape} does not match weight {w.shape}")
        y += b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward():
        g = out.grad
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kw):
                gxp[i * dilation: i * dilation + t_out] += g @ w.data[i].T
            x._accum(gxp[pad_left: pad_left + x.shape[0]])
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for i in range(kw):
                gw[i] = xp[i * dilation: i * dilation + t_out].T @ g
            w._accum(gw)
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=0))

    out = x._make(y, parents, backward)
    return out


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-12) -> Tensor:
    """Normalize each row of the last axis to zero mean and unit variance."""
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    y = centered * ((var + eps) ** -0.5)
    if gamma is not None:
        y = y * gamma
    if beta is not None:
        y = y + beta
    return y


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention with an optional additive mask.

    q: (n, d), k: (m, d), v: (m, d_v); mask broadcastable to (n, m) with 0
    where attention is allowed and a large negative number where it is not.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query {q.shape} and key {k.shape} widths differ")
    scores = (q @ k.T) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = scores + Tensor(mask)
    return scores.softmax(axis=-1) @ v


_ROTARY_CACHE: dict[tuple[int, int, float], tuple[np.ndarray, np.ndarray]] = {}


def rotary_tables(n: int, dim: int, base: float = 10000.0) -> tuple[np.ndarray, np.ndarray]:
    """Cos/sin tables for rotary position encoding of `n` positions, width `dim`."""
    if dim % 2 != 0:
        raise ShapeError(f"rotary: width must be even, got {dim}")
    key = (n, dim, base)
    hit = _ROTARY_CACHE.get(key)
    if hit is not None:
        return hit
    inv_freq = base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = np.arange(n, dtype=np.float64)[:, None] * inv_freq[None, :]
    cos = np.concatenate([np.cos(angles), np.cos(angles)], axis=-1)
    sin = np.concatenate([np.sin(angles), np.sin(angles)], axis=-1)
    _ROTARY_CACHE[key] = (cos, sin)
    return cos, sin


def apply_rotary(t: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate feature pairs of each row by its position angle (query/key encoding)."""
    half = t.shape[-1] // 2
    rotated = concat([-t[:, half:], t[:, :half]], axis=-1)
    return t * Tensor(cos) + rotated * Tensor(sin)


def finite_difference_gradient(f: Callable[[Tensor], "Tensor | float"], x: Tensor,
                               h: float = 1e-5) -> Tensor:
    """Central-difference gradient estimate of a scalar function, coordinate-wise."""

    def evaluate() -> float:
        with no_grad():
            result = f(x)
        return result.item() if isinstance(result, Tensor) else float(result)

    flat = x.data.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        upper = evaluate()
        flat[i] = orig - h
        lower = evaluate()
        flat[i] = orig
        grad[i] = (upper - lower) / (2.0 * h)
    return Tensor(grad.reshape(x.shape))
