"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything in the model (convolutions, attention, quantization losses) is
built from the primitives here.  Gradients are accumulated into ``.grad``
arrays on every tensor that requires them; ``backward`` may only be called
on a scalar.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operands are shape-incompatible for an op."""


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """A dense float64 array node in a compute graph.

    Tensors created by operations hold a backward closure and references to
    their parents; leaves created by the user have neither.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def zeros(shape, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape), requires_grad)

    @staticmethod
    def from_op(data, parents, backward, op: str) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, grad={self.requires_grad})"

    # -- autodiff --------------------------------------------------------------

    def backward(self):
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # -- operator sugar ----------------------------------------------------------

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- elementwise arithmetic -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "add")
    out = a.data + b.data

    def bwd(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return Tensor.from_op(out, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "sub")
    out = a.data - b.data

    def bwd(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return Tensor.from_op(out, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "mul")
    out = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return Tensor.from_op(out, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a.data, b.data, "div")
    out = a.data / b.data

    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return Tensor.from_op(out, (a, b), bwd, "div")


def square(a) -> Tensor:
    a = _wrap(a)
    out = a.data * a.data

    def bwd(g):
        return (2.0 * g * a.data,)

    return Tensor.from_op(out, (a,), bwd, "square")


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / np.maximum(out, 1e-300),)

    return Tensor.from_op(out, (a,), bwd, "sqrt")


def log(a) -> Tensor:
    a = _wrap(a)
    out = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return Tensor.from_op(out, (a,), bwd, "log")


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return Tensor.from_op(out, (a,), bwd, "exp")


def clamp_min(a, floor: float) -> Tensor:
    a = _wrap(a)
    out = np.maximum(a.data, floor)

    def bwd(g):
        return (g * (a.data > floor),)

    return Tensor.from_op(out, (a,), bwd, "clamp_min")


def relu(a) -> Tensor:
    a = _wrap(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g):
        return (g * (a.data > 0.0),)

    return Tensor.from_op(out, (a,), bwd, "relu")


def stop_gradient(a) -> Tensor:
    """Forward identity; blocks all gradient flow (the sg[.] barrier)."""
    a = _wrap(a)
    return Tensor(a.data.copy())


# -- reductions -------------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).copy(),)

    return Tensor.from_op(out, (a,), bwd, "sum")


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        n = a.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / n, a.shape).copy(),)

    return Tensor.from_op(out, (a,), bwd, "mean")


def l2norm(a, axis=-1) -> Tensor:
    """Unsquared Euclidean norm along ``axis``; subgradient 0 at the origin."""
    a = _wrap(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def bwd(g):
        denom = np.maximum(np.expand_dims(out, axis), 1e-300)
        return (np.expand_dims(g, axis) * a.data / denom,)

    return Tensor.from_op(out, (a,), bwd, "l2norm")


# -- shape manipulation -------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.shape),)

    return Tensor.from_op(out, (a,), bwd, "reshape")


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    out = a.data.transpose(axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bwd(g):
        return (g.transpose(inv),)

    return Tensor.from_op(out, (a,), bwd, "transpose")


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor.from_op(out, tuple(tensors), bwd, "concat")


def embedding(table, idx) -> Tensor:
    """Row lookup ``table[idx]``; gradients scatter-add back into the table."""
    table = _wrap(table)
    idx = np.asarray(idx, dtype=np.int64)
    out = table.data[idx]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return Tensor.from_op(out, (table,), bwd, "embedding")


# -- linear algebra -----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.outer(g, b.data).reshape(a.shape)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.outer(a.data, g).reshape(b.shape)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return Tensor.from_op(out, (a, b), bwd, "matmul")


# -- neural-net primitives ---------------------------------------------------------


def softmax(a, axis=-1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor.from_op(out, (a,), bwd, "softmax")


def layer_norm(a, eps: float = 1e-5, axis=-1) -> Tensor:
    """Normalize to zero mean, unit variance along ``axis`` (no affine)."""
    a = _wrap(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv
    n = a.shape[axis]

    def bwd(g):
        gx = inv * (
            g
            - g.mean(axis=axis, keepdims=True)
            - out * (g * out).mean(axis=axis, keepdims=True)
        )
        return (gx,)

    return Tensor.from_op(out, (a,), bwd, "layer_norm")


def conv1d(
    x,
    w,
    stride: int = 1,
    dilation: int = 1,
    groups: int = 1,
    padding: tuple[int, int] = (0, 0),
) -> Tensor:
    """Grouped 1-D convolution.

    x: (B, C_in, T); w: (C_out, C_in/groups, k). Zero padding is applied
    as (left, right) before the strided window gather.
    """
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"conv1d: expected 3-D operands, got {x.shape} and {w.shape}")
    B, Cin, T = x.shape
    Cout, Cg, k = w.shape
    if dilation < 1 or stride < 1:
        raise ShapeError(f"conv1d: stride/dilation must be >= 1, got {stride}/{dilation}")
    if Cin % groups or Cout % groups or Cg != Cin // groups:
        raise ShapeError(
            f"conv1d: group mismatch, x {x.shape}, w {w.shape}, groups {groups}"
        )
    pl, pr = padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr)))
    Tp = xp.shape[2]
    span = (k - 1) * dilation + 1
    if span > Tp:
        raise ShapeError(
            f"conv1d: kernel span {span} exceeds padded length {Tp} "
            f"(x {x.shape}, w {w.shape})"
        )
    T_out = (Tp - span) // stride + 1
    O = Cout // groups
    s0, s1, s2 = xp.strides
    # gather windows grouped and time-major so both passes are plain matmuls
    win = np.lib.stride_tricks.as_strided(
        xp,
        (B, groups, T_out, Cg, k),
        (s0, s1 * Cg, s2 * stride, s1, s2 * dilation),
    )
    winc = np.ascontiguousarray(win).reshape(B, groups, T_out, Cg * k)
    wmat = w.data.reshape(groups, O, Cg * k)
    out = np.matmul(winc, wmat.swapaxes(-1, -2))  # (B, G, T_out, O)
    out = np.ascontiguousarray(out.transpose(0, 1, 3, 2)).reshape(B, Cout, T_out)

    def bwd(g):
        gr = g.reshape(B, groups, O, T_out)
        gw = np.matmul(gr, winc).sum(axis=0).reshape(w.shape)
        gwin = np.matmul(gr.transpose(0, 1, 3, 2), wmat)  # (B, G, T_out, Cg*k)
        gwin = gwin.reshape(B, groups, T_out, Cg, k)
        gxp = np.zeros_like(xp)
        gxpG = gxp.reshape(B, groups, Cg, Tp)
        for j in range(k):
            start = j * dilation
            gxpG[:, :, :, start : start + stride * T_out : stride] += gwin[
                :, :, :, :, j
            ].transpose(0, 1, 3, 2)
        gx = gxp[:, :, pl : Tp - pr] if pr else gxp[:, :, pl:]
        return (gx, gw)

    return Tensor.from_op(out, (x, w), bwd, "conv1d")


# -- gradient checking --------------------------------------------------------------


def finite_difference_grad(fn, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-valued fn at x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(x)
        flat[i] = orig - step
        fm = fn(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * step)
    return g
