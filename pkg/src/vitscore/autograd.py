"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every primitive returns a :class:`Tensor` and, when any input requires a
gradient, records a closure that maps the output gradient to input
gradients. :func:`backward` walks the recorded graph in reverse topological
order and accumulates into ``.grad`` of the leaves.

All data is float64.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

DTYPE = np.float64

_state = threading.local()


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised when finite inputs produce a non-finite output."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """An n-dimensional float64 array that can take part in the tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self.name = name

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
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op}" if not self.is_leaf else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _raise_item(t: Tensor) -> float:
    raise ShapeError(f"item: tensor has shape {t.shape}, expected a single element")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(arrs: Iterable[np.ndarray]) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrs)


def _make(op: str, data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    data = np.asarray(data, dtype=DTYPE)
    if not np.all(np.isfinite(data)) and _finite(p.data for p in parents):
        raise NonFiniteError(f"{op}: non-finite output from finite inputs")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.op = op
    out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return _make("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    return _make(
        "mul", ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _make("div", out, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    ad = a.data
    return _make("pow", ad**p, (a,), lambda g: (g * p * ad ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _make("log", out, (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _make("sqrt", out, (a,), lambda g: (0.5 * g / out,))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make("abs", np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _make("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    """log(1 + exp(a)), evaluated stably."""
    a = as_tensor(a)
    ad = a.data
    return _make("softplus", np.logaddexp(0.0, ad), (a,), lambda g: (g * special.expit(ad),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact GELU, x * Phi(x), with Phi the standard normal CDF."""
    a = as_tensor(a)
    ad = a.data
    cdf = special.ndtr(ad)

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * ad * ad)
        return (g * (cdf + ad * pdf),)

    return _make("gelu", ad * cdf, (a,), backward)


def where(mask, a, b) -> Tensor:
    """Select ``a`` where ``mask`` is true, else ``b``. The mask is constant."""
    a, b = as_tensor(a), as_tensor(b)
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    try:
        shape = np.broadcast_shapes(m.shape, a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"where: incompatible shapes {m.shape}, {a.shape}, {b.shape}") from None
    zero = np.zeros(shape)

    def backward(g):
        return _unbroadcast(np.where(m, g, zero), a.shape), _unbroadcast(np.where(m, zero, g), b.shape)

    return _make("where", np.where(m, a.data, b.data), (a, b), backward)


def stop_gradient(a) -> Tensor:
    """Identity on values; propagates a zero gradient into ``a``."""
    a = as_tensor(a)
    return _make("stop_gradient", a.data.copy(), (a,), lambda g: (np.zeros_like(g),))


# ------------------------------------------------------------------ reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axes = _norm_axis(axis, a.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _make("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return sum_(a, axis=axes, keepdims=keepdims) * (1.0 / n)


def cumsum(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make("cumsum", np.cumsum(a.data, axis=axis), (a,), backward)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make("softmax", out, (a,), backward)


# ------------------------------------------------------------ shape handling


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {tuple(shape)}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    try:
        data = a.data[index]
    except IndexError as exc:
        raise ShapeError(f"getitem: {exc} for shape {shape}") from None
    return _make("getitem", np.array(data), (a,), backward)


def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (the channel axis for [B, C, T] data)."""
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: no inputs")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g):
        return tuple(np.take(g, range(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))

    return _make("concat", np.concatenate([t.data for t in ts], axis=ax), ts, backward)


def take_along_axis(a, indices: np.ndarray, axis: int = -1) -> Tensor:
    """Gather ``a`` along ``axis`` at integer ``indices`` (non-differentiable)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        full = np.broadcast_to(idx, g.shape)
        grids = list(np.indices(g.shape, sparse=True))
        grids[axis % len(shape)] = full
        np.add.at(out, tuple(grids), g)
        return (out,)

    try:
        data = np.take_along_axis(a.data, idx, axis=axis)
    except (ValueError, IndexError) as exc:
        raise ShapeError(f"take_along_axis: {exc}; shapes {shape} and {idx.shape}") from None
    return _make("take_along_axis", data, (a,), backward)


def pad_last(a, before: float | None, after: float | None) -> Tensor:
    """Append constant columns to the last axis (used for spline knots)."""
    a = as_tensor(a)
    parts = []
    lead = a.shape[:-1] + (1,)
    if before is not None:
        parts.append(Tensor(np.full(lead, before)))
    parts.append(a)
    if after is not None:
        parts.append(Tensor(np.full(lead, after)))
    return concat(parts, axis=-1)


# ------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make("matmul", ad @ bd, (a, b), backward)


def conv1d(x, weight, bias=None, dilation: int = 1, groups: int = 1) -> Tensor:
    """1-D convolution over [B, C_in, T] with length-preserving zero padding.

    Args:
        x: input of shape [B, C_in, T].
        weight: kernel of shape [C_out, C_in // groups, K]; K must be odd.
        bias: optional [C_out].
        dilation: spacing between kernel taps.
        groups: number of channel groups; ``groups == C_in`` is depthwise.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d: expected 3-D input and weight, got {x.shape} and {weight.shape}")
    bsz, cin, tlen = x.shape
    cout, cin_g, k = weight.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d: kernel size must be odd for same padding, got weight {weight.shape}")
    if cin % groups or cout % groups or cin // groups != cin_g:
        raise ShapeError(f"conv1d: input {x.shape} and weight {weight.shape} do not fit groups={groups}")
    cout_g = cout // groups
    pad = dilation * (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))).reshape(bsz, groups, cin_g, tlen + 2 * pad)
    w = weight.data.reshape(groups, cout_g, cin_g, k)
    out = np.zeros((bsz, groups, cout_g, tlen))
    for j in range(k):
        s = j * dilation
        out += np.einsum("goi,bgit->bgot", w[..., j], xp[..., s : s + tlen], optimize=True)
    out = out.reshape(bsz, cout, tlen)
    parents = (x, weight)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"conv1d: bias shape {bias.shape} does not match {cout} output channels")
        out = out + bias.data[None, :, None]
        parents = parents + (bias,)

    def backward(g):
        gg = g.reshape(bsz, groups, cout_g, tlen)
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        for j in range(k):
            s = j * dilation
            gw[..., j] = np.einsum("bgot,bgit->goi", gg, xp[..., s : s + tlen], optimize=True)
            gxp[..., s : s + tlen] += np.einsum("goi,bgot->bgit", w[..., j], gg, optimize=True)
        gx = gxp.reshape(bsz, cin, tlen + 2 * pad)[..., pad : pad + tlen]
        grads = [gx, gw.reshape(cout, cin_g, k)]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return _make("conv1d", out, parents, backward)


def layer_norm(x, gamma=None, beta=None, axis: int = 1, eps: float = 1e-5) -> Tensor:
    """Normalize over ``axis`` (channels for [B, C, T]), then scale and shift.

    ``gamma`` and ``beta`` have the length of ``axis`` and broadcast along it.
    """
    x = as_tensor(x)
    ax = axis % x.ndim
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=ax, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=ax, keepdims=True)
        gxm = (g * xhat).mean(axis=ax, keepdims=True)
        return (inv * (g - gm - xhat * gxm),)

    out = _make("layer_norm", xhat, (x,), backward)
    if gamma is not None or beta is not None:
        bshape = [1] * x.ndim
        bshape[ax] = x.shape[ax]
        if gamma is not None:
            out = out * reshape(gamma, bshape)
        if beta is not None:
            out = out + reshape(beta, bshape)
    return out


# ---------------------------------------------------------------- backward


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Raises:
        ShapeError: if ``loss`` is not a single element.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
