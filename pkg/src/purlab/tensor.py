"""Reverse-mode differentiation engine over float64 numpy arrays.

Just enough machinery for small convolutional networks and pixel-space
optimization loops: a ``DiffTensor`` value type, a ``Tape`` that records
primitive applications, and ``backward`` replaying their adjoints in
reverse order. Everything is float64 and deterministic: adjoints are
accumulated in the reverse of recording order, so identical seeds give
bit-identical gradients.

Broadcasting is deliberately limited to scalar-tensor; the few shaped
adds a network needs (biases, per-sample scales) are dedicated
primitives. Saved inputs are captured by reference: do not mutate
tensors between a recorded forward and its backward.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence, Union

import numpy as np

from purlab import backend

__all__ = [
    "ShapeError", "DiffTensor", "Tape", "no_tape", "backward",
    "add", "sub", "mul", "matmul", "conv2d", "upsample2x", "relu", "silu",
    "tanh", "sigmoid", "exp", "log", "square", "sqrt", "clamp",
    "l2norm_channels", "mse", "concat_channels", "add_bias", "add_rows",
    "scale_rows", "reshape", "finite_difference_check",
]

Scalar = Union[int, float]


class ShapeError(ValueError):
    pass


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return np.ascontiguousarray(arr)


class DiffTensor:
    """An n-dimensional float64 value with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, values, requires_grad: bool = False):
        self.data = _as_array(values)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    # -- reductions / shape --------------------------------------------
    def sum(self, axis=None) -> "DiffTensor":
        return _reduce(self, axis, op="sum")

    def mean(self, axis=None) -> "DiffTensor":
        return _reduce(self, axis, op="mean")

    def reshape(self, *shape) -> "DiffTensor":
        return reshape(self, shape[0] if len(shape) == 1 and
                       isinstance(shape[0], (tuple, list)) else shape)

    # -- operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, DiffTensor):
            raise TypeError("tensor/tensor division is not a primitive; "
                            "divide by a scalar")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return (f"DiffTensor(shape={self.shape}, requires_grad="
                f"{self.requires_grad})")


class _Node:
    __slots__ = ("out", "parents", "bwd")

    def __init__(self, out: DiffTensor, parents: tuple, bwd: Callable):
        self.out = out
        self.parents = parents
        self.bwd = bwd


_TAPE_STACK: list[Optional["Tape"]] = []


class Tape:
    """Ordered record of primitive applications for one graph.

    Recording happens only while the tape is the active context;
    construction order is already a topological order, so ``backward``
    replays adjoints over ``reversed(nodes)``.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape contexts closed out of order"
        return False

    def _record(self, node: _Node):
        node.out._tape = self
        self._nodes.append(node)

    def backward(self, loss: DiffTensor):
        backward(loss, tape=self)


class no_tape:
    """Context that suppresses recording (constant evaluation)."""

    def __enter__(self):
        _TAPE_STACK.append(None)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


def _active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _make(out_data: np.ndarray, parents: Sequence, bwd: Callable) -> DiffTensor:
    tape = _active_tape()
    track = tape is not None and any(
        isinstance(p, DiffTensor) and p.requires_grad for p in parents)
    out = DiffTensor(out_data, requires_grad=track)
    if track:
        tape._record(_Node(out, tuple(parents), bwd))
    return out


def _accumulate(t, g: Optional[np.ndarray]):
    if g is None or not isinstance(t, DiffTensor) or not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: DiffTensor, tape: Optional[Tape] = None):
    """Populate grads of every requires_grad tensor reachable from loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else loss._tape
    if tape is None or loss._tape is not tape:
        raise RuntimeError("loss was not produced on the active tape")
    seeds = {id(loss): np.ones_like(loss.data)}
    _accumulate(loss, seeds[id(loss)])
    for node in reversed(tape._nodes):
        g = node.out.grad
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.bwd(g)):
            _accumulate(parent, pg)


# ---------------------------------------------------------------------------
# elementwise arithmetic (same shape, or scalar-tensor)

def _binary(a, b, fwd, bwd_a, bwd_b) -> DiffTensor:
    a_t, b_t = isinstance(a, DiffTensor), isinstance(b, DiffTensor)
    av = a.data if a_t else float(a)
    bv = b.data if b_t else float(b)
    if a_t and b_t and a.data.shape != b.data.shape:
        raise ShapeError(f"elementwise op needs matching shapes, got "
                         f"{a.data.shape} vs {b.data.shape}")
    out = fwd(av, bv)

    def bwd(g):
        return (bwd_a(g, av, bv) if a_t else None,
                bwd_b(g, av, bv) if b_t else None)

    return _make(out, (a, b), bwd)


def add(a, b) -> DiffTensor:
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> DiffTensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> DiffTensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


# ---------------------------------------------------------------------------
# unary maps

def _unary(x: DiffTensor, fwd, dydx) -> DiffTensor:
    out = fwd(x.data)

    def bwd(g):
        return (g * dydx(x.data, out),)

    return _make(out, (x,), bwd)


def relu(x: DiffTensor) -> DiffTensor:
    return _unary(x, lambda v: np.maximum(v, 0.0),
                  lambda v, y: (v > 0).astype(np.float64))


def sigmoid(x: DiffTensor) -> DiffTensor:
    return _unary(x, lambda v: 1.0 / (1.0 + np.exp(-v)),
                  lambda v, y: y * (1.0 - y))


def silu(x: DiffTensor) -> DiffTensor:
    def fwd(v):
        return v / (1.0 + np.exp(-v))

    def dydx(v, y):
        s = 1.0 / (1.0 + np.exp(-v))
        return s * (1.0 + v * (1.0 - s))

    return _unary(x, fwd, dydx)


def tanh(x: DiffTensor) -> DiffTensor:
    return _unary(x, np.tanh, lambda v, y: 1.0 - y * y)


def exp(x: DiffTensor) -> DiffTensor:
    return _unary(x, np.exp, lambda v, y: y)


def log(x: DiffTensor) -> DiffTensor:
    return _unary(x, np.log, lambda v, y: 1.0 / v)


def square(x: DiffTensor) -> DiffTensor:
    return _unary(x, np.square, lambda v, y: 2.0 * v)


def sqrt(x: DiffTensor) -> DiffTensor:
    return _unary(x, np.sqrt, lambda v, y: 0.5 / np.maximum(y, 1e-300))


def clamp(x: DiffTensor, lo: float, hi: float) -> DiffTensor:
    """Clip to [lo, hi]; the adjoint is zero outside the bounds."""
    if lo > hi:
        raise ValueError(f"clamp needs lo <= hi, got lo={lo}, hi={hi}")
    return _unary(x, lambda v: np.clip(v, lo, hi),
                  lambda v, y: ((v >= lo) & (v <= hi)).astype(np.float64))


# ---------------------------------------------------------------------------
# reductions

def _reduce(x: DiffTensor, axis, op: str) -> DiffTensor:
    if axis is not None and not isinstance(axis, tuple):
        axis = (axis,)
    if op == "sum":
        out = x.data.sum(axis=axis)
    else:
        out = x.data.mean(axis=axis)
    scale = 1.0 if op == "sum" else out.size / x.data.size

    def bwd(g):
        if axis is None:
            gx = np.broadcast_to(g, x.data.shape)
        else:
            expand = list(x.data.shape)
            for ax in axis:
                expand[ax] = 1
            gx = np.broadcast_to(g.reshape(expand), x.data.shape)
        return (gx * scale,)

    return _make(out, (x,), bwd)


def mse(a: DiffTensor, b) -> DiffTensor:
    """Mean squared error between same-shape tensors (scalar output)."""
    return square(sub(a, b)).mean()


# ---------------------------------------------------------------------------
# linear algebra and structure

def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul needs (n,k)@(k,m), got "
                         f"{a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return _make(out, (a, b), bwd)


def reshape(x: DiffTensor, shape) -> DiffTensor:
    shape = tuple(int(s) for s in shape)
    out = np.ascontiguousarray(x.data.reshape(shape))

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return _make(out, (x,), bwd)


def concat_channels(parts: Sequence[DiffTensor]) -> DiffTensor:
    if not parts:
        raise ShapeError("concat_channels needs at least one tensor")
    for p in parts[1:]:
        if p.data.ndim != parts[0].data.ndim:
            raise ShapeError(f"concat rank mismatch: {parts[0].data.shape} "
                             f"vs {p.data.shape}")
    out = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece)
                     for piece in np.split(g, splits, axis=1))

    return _make(out, tuple(parts), bwd)


def add_bias(x: DiffTensor, v: DiffTensor) -> DiffTensor:
    """Shaped bias add: (B,M)+(M,), (B,C,H,W)+(C,), or (B,C,H,W)+(B,C)."""
    xd, vd = x.data, v.data
    if xd.ndim == 2 and vd.ndim == 1 and xd.shape[1] == vd.shape[0]:
        out = xd + vd[None, :]
        reduce_axes = (0,)
    elif xd.ndim == 4 and vd.ndim == 1 and xd.shape[1] == vd.shape[0]:
        out = xd + vd[None, :, None, None]
        reduce_axes = (0, 2, 3)
    elif xd.ndim == 4 and vd.ndim == 2 and xd.shape[:2] == vd.shape:
        out = xd + vd[:, :, None, None]
        reduce_axes = (2, 3)
    else:
        raise ShapeError(f"add_bias cannot pair {xd.shape} with {vd.shape}")

    def bwd(g):
        return (g, g.sum(axis=reduce_axes))

    return _make(out, (x, v), bwd)


def add_rows(x: DiffTensor, v) -> DiffTensor:
    """Add a per-row scalar v[b] to each leading-axis slice of x."""
    v_t = isinstance(v, DiffTensor)
    vv = v.data if v_t else np.asarray(v, dtype=np.float64)
    if vv.ndim != 1 or vv.shape[0] != x.data.shape[0]:
        raise ShapeError(f"add_rows needs v of shape ({x.data.shape[0]},), "
                         f"got {vv.shape}")
    out = x.data + vv.reshape((-1,) + (1,) * (x.data.ndim - 1))

    def bwd(g):
        gv = g.sum(axis=tuple(range(1, x.data.ndim))) if v_t else None
        return (g, gv)

    return _make(out, (x, v), bwd)


def scale_rows(x: DiffTensor, s) -> DiffTensor:
    """Multiply each leading-axis slice by its own scalar s[b]."""
    s_t = isinstance(s, DiffTensor)
    sv = s.data if s_t else np.asarray(s, dtype=np.float64)
    if sv.ndim != 1 or sv.shape[0] != x.data.shape[0]:
        raise ShapeError(f"scale_rows needs s of shape ({x.data.shape[0]},), "
                         f"got {sv.shape}")
    shaped = sv.reshape((-1,) + (1,) * (x.data.ndim - 1))
    out = x.data * shaped

    def bwd(g):
        gs = ((g * x.data).sum(axis=tuple(range(1, x.data.ndim)))
              if s_t else None)
        return (g * shaped, gs)

    return _make(out, (x, s), bwd)


def l2norm_channels(x: DiffTensor, eps: float = 1e-10) -> DiffTensor:
    """Unit-normalize each spatial location's channel vector (B,C,H,W).

    eps sits inside the square root so the map (and its adjoint) stays
    finite on all-zero channel vectors.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"l2norm_channels needs (B,C,H,W), got {x.data.shape}")
    sq = np.sum(x.data * x.data, axis=1, keepdims=True)
    n = np.sqrt(sq + eps)
    out = x.data / n

    def bwd(g):
        dot = np.sum(g * x.data, axis=1, keepdims=True)
        return (g / n - x.data * (dot / (n * n * n)),)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# convolution and resampling

def conv2d(x: DiffTensor, w: DiffTensor, bias: Optional[DiffTensor] = None,
           stride: int = 1, padding: int = 0) -> DiffTensor:
    """2-d convolution (cross-correlation), zero padding, stride 1 or 2."""
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d needs 4-d x and w, got {xd.shape} and {wd.shape}")
    if xd.shape[1] != wd.shape[1]:
        raise ShapeError(f"conv2d channel mismatch: x {xd.shape} vs w {wd.shape}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d stride must be 1 or 2, got {stride}")
    if padding < 0:
        raise ValueError(f"conv2d padding must be >= 0, got {padding}")
    kh, kw = wd.shape[2], wd.shape[3]
    if xd.shape[2] + 2 * padding < kh or xd.shape[3] + 2 * padding < kw:
        raise ShapeError(f"kernel {wd.shape} larger than padded input {xd.shape}")

    out = backend.conv2d_forward(xd, wd, stride, padding)

    def bwd(g):
        g = np.ascontiguousarray(g)
        gx = backend.conv2d_bwd_input(g, wd, stride, padding,
                                      xd.shape[2], xd.shape[3])
        gw = backend.conv2d_bwd_weight(xd, g, stride, padding, kh, kw)
        return (gx, gw)

    y = _make(out, (x, w), bwd)
    if bias is not None:
        y = add_bias(y, bias)
    return y


def upsample2x(x: DiffTensor) -> DiffTensor:
    """Nearest-neighbor 2x spatial upsample of (B,C,H,W)."""
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2x needs (B,C,H,W), got {x.data.shape}")
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def bwd(g):
        b, c, h2, w2 = g.shape
        return (g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), bwd)


# ---------------------------------------------------------------------------
# validation oracle

def finite_difference_check(f: Callable[[DiffTensor], DiffTensor],
                            x: DiffTensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    f must be a pure scalar-valued function of x; rejected if f(x) is
    not finite.
    """
    if not 1e-6 <= h <= 1e-3:
        raise ValueError(f"h must lie in [1e-6, 1e-3], got {h}")
    probe = DiffTensor(x.data.copy(), requires_grad=True)
    with Tape() as tape:
        y = f(probe)
        if y.data.size != 1:
            raise ShapeError(f"f must be scalar-valued, got shape {y.shape}")
        if not np.isfinite(y.data).all():
            raise ValueError("f(x) is not finite")
        tape.backward(y)
    analytic = (probe.grad if probe.grad is not None
                else np.zeros_like(probe.data)).ravel()

    numeric = np.zeros_like(analytic)
    flat = x.data.copy()
    for idx in range(flat.size):
        for sign in (+1.0, -1.0):
            shifted = flat.copy()
            shifted.flat[idx] += sign * h
            val = f(DiffTensor(shifted)).item()
            if not np.isfinite(val):
                raise ValueError("f(x +/- h) is not finite")
            numeric[idx] += sign * val / (2.0 * h)

    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-8)
    return float(err.max()) if err.size else 0.0
