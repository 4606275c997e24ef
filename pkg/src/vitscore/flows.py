"""Invertible transforms with log-determinants.

Sequence data is laid out as [B, C, T]. Every layer's ``__call__`` takes
``(x, g=None, reverse=False)`` and returns ``(y, logdet)`` where ``logdet``
has shape [B] and is ``log|det dy/dx|`` of the direction actually applied.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, as_tensor
from .nn import Conv1d, DDSConv, Module, param

DEFAULT_TAIL_BOUND = 5.0
MIN_BIN_WIDTH = 1e-3
MIN_BIN_HEIGHT = 1e-3
MIN_DERIVATIVE = 1e-3


class FlowError(ValueError):
    pass


# ------------------------------------------------------------- spline core


@dataclass
class SplineParams:
    """Monotonic rational-quadratic spline on [-B, B].

    ``widths`` and ``heights`` have K entries on the last axis, each set
    summing to ``2 * tail_bound``; ``derivatives`` holds the K - 1 interior
    knot slopes. The boundary slopes are fixed to 1 so the spline joins the
    identity tails smoothly.
    """

    widths: Tensor
    heights: Tensor
    derivatives: Tensor
    tail_bound: float = DEFAULT_TAIL_BOUND

    def __post_init__(self):
        self.widths = as_tensor(self.widths)
        self.heights = as_tensor(self.heights)
        self.derivatives = as_tensor(self.derivatives)
        k = self.widths.shape[-1]
        if self.heights.shape != self.widths.shape or self.derivatives.shape[-1] != k - 1:
            raise FlowError(
                f"spline params: widths {self.widths.shape}, heights {self.heights.shape}, "
                f"derivatives {self.derivatives.shape} are inconsistent"
            )
        if self.tail_bound <= 0:
            raise FlowError(f"tail_bound must be positive, got {self.tail_bound}")
        for label, t in (("width", self.widths), ("height", self.heights), ("derivative", self.derivatives)):
            if not np.all(t.data > 0):
                raise FlowError(f"spline params: nonpositive bin {label} (non-monotone spline)")
        span = 2 * self.tail_bound
        for label, t in (("widths", self.widths), ("heights", self.heights)):
            if not np.allclose(t.data.sum(axis=-1), span, rtol=1e-9, atol=1e-9):
                raise FlowError(f"spline params: bin {label} must sum to {span}")

    @property
    def num_bins(self) -> int:
        return self.widths.shape[-1]


def spline_params_from_raw(raw, num_bins: int = 10, tail_bound: float = DEFAULT_TAIL_BOUND,
                           min_bin_width: float = MIN_BIN_WIDTH, min_bin_height: float = MIN_BIN_HEIGHT,
                           min_derivative: float = MIN_DERIVATIVE) -> SplineParams:
    """Map unconstrained [..., 3K-1] values to spline parameters.

    Widths and heights come from a softmax floored at the minimum bin size;
    derivatives from a softplus shifted so that a raw 0 gives slope exactly 1.
    An all-zero input therefore yields the identity spline.
    """
    raw = as_tensor(raw)
    k = num_bins
    if raw.ndim < 1 or raw.shape[-1] != 3 * k - 1:
        raise FlowError(f"spline_params_from_raw: last dimension must be {3 * k - 1} for K={k}, got {raw.shape}")
    if min_bin_width * k >= 1 or min_bin_height * k >= 1:
        raise FlowError("minimum bin size too large for the number of bins")
    span = 2.0 * tail_bound
    w = ag.softmax(raw[..., :k], axis=-1)
    h = ag.softmax(raw[..., k : 2 * k], axis=-1)
    w = (min_bin_width + (1 - min_bin_width * k) * w) * span
    h = (min_bin_height + (1 - min_bin_height * k) * h) * span
    shift = np.log(np.expm1(1.0 - min_derivative))
    d = min_derivative + ag.softplus(raw[..., 2 * k :] + shift)
    return SplineParams(w, h, d, tail_bound)


def _knots(sizes: Tensor, bound: float) -> Tensor:
    inner = ag.cumsum(sizes[..., :-1], axis=-1) - bound
    return ag.pad_last(inner, -bound, bound)


def _bin_index(knots: np.ndarray, x: np.ndarray) -> np.ndarray:
    k = knots.shape[-1] - 1
    idx = np.sum(x[..., None] >= knots[..., 1:-1], axis=-1)
    return np.clip(idx, 0, k - 1)[..., None]


def rq_spline_apply(x, params: SplineParams, inverse: bool = False) -> tuple[Tensor, Tensor]:
    """Apply the spline elementwise; identity outside [-B, B].

    Args:
        x: values of shape S; params fields have shape S + (K,) / S + (K-1,)
            or broadcast to it.
        inverse: solve for the preimage instead.

    Returns:
        ``(y, logabsdet)`` with ``logabsdet`` elementwise, shape S, for the
        applied direction.
    """
    x = as_tensor(x)
    bound = params.tail_bound
    inside = (x.data >= -bound) & (x.data <= bound)
    xin = ag.where(inside, x, 0.0)

    lead = np.broadcast_shapes(x.shape + (1,), params.widths.shape[:-1] + (1,))
    k = params.num_bins
    widths = params.widths if params.widths.shape[:-1] == lead[:-1] else params.widths + np.zeros(lead)
    heights = params.heights if params.heights.shape[:-1] == lead[:-1] else params.heights + np.zeros(lead)
    derivs = params.derivatives
    if derivs.shape[:-1] != lead[:-1]:
        derivs = derivs + np.zeros(lead)
    if xin.shape != lead[:-1]:
        xin = xin + np.zeros(lead[:-1])
        inside = np.broadcast_to(inside, lead[:-1])

    cw = _knots(widths, bound)
    ch = _knots(heights, bound)
    bin_w = cw[..., 1:] - cw[..., :-1]
    bin_h = ch[..., 1:] - ch[..., :-1]
    delta = bin_h / bin_w
    dfull = ag.pad_last(derivs, 1.0, 1.0)

    idx = _bin_index(ch.data if inverse else cw.data, xin.data)

    def pick(t: Tensor) -> Tensor:
        return ag.reshape(ag.take_along_axis(t, idx, axis=-1), xin.shape)

    x_k, w_k = pick(cw[..., :-1]), pick(bin_w)
    y_k, h_k = pick(ch[..., :-1]), pick(bin_h)
    s_k = pick(delta)
    d_k, d_k1 = pick(dfull[..., :-1]), pick(dfull[..., 1:])
    curv = d_k1 + d_k - 2.0 * s_k

    if not inverse:
        theta = (xin - x_k) / w_k
        tt = theta * (1.0 - theta)
        num = h_k * (s_k * theta * theta + d_k * tt)
        den = s_k + curv * tt
        out = y_k + num / den
    else:
        r = xin - y_k
        a = h_k * (s_k - d_k) + r * curv
        b = h_k * d_k - r * curv
        c = -s_k * r
        disc = b * b - 4.0 * a * c
        disc = ag.where(disc.data > 0, disc, 0.0)
        theta = (2.0 * c) / (-b - ag.sqrt(disc))
        tt = theta * (1.0 - theta)
        den = s_k + curv * tt
        out = theta * w_k + x_k
    one_m = 1.0 - theta
    dnum = s_k * s_k * (d_k1 * theta * theta + 2.0 * s_k * tt + d_k * one_m * one_m)
    lad = ag.log(dnum) - 2.0 * ag.log(den)
    if inverse:
        lad = -lad
    if x.shape != xin.shape:
        x = x + np.zeros(xin.shape)
    y = ag.where(inside, out, x)
    logdet = ag.where(inside, lad, 0.0)
    return y, logdet


# ------------------------------------------------------------------ layers


def _split(channels: int, flip: bool) -> tuple[slice, slice]:
    half = channels // 2
    if flip:
        return slice(channels - half, channels), slice(0, channels - half)
    return slice(0, half), slice(half, channels)


def _merge(keep: Tensor, moved: Tensor, flip: bool) -> Tensor:
    return ag.concat([moved, keep] if flip else [keep, moved], axis=1)


def affine_coupling_forward(x, shift_fn: Callable[[Tensor], Tensor], flip: bool = False):
    """Mean-only coupling: y_b = x_b + shift(x_a); log-determinant is zero.

    ``x`` is [B, C, T] with C even. ``shift_fn`` maps the pass-through half to
    a shift for the transformed half.
    """
    return _affine_coupling(as_tensor(x), shift_fn, flip, sign=1.0)


def affine_coupling_inverse(y, shift_fn: Callable[[Tensor], Tensor], flip: bool = False):
    return _affine_coupling(as_tensor(y), shift_fn, flip, sign=-1.0)


def _affine_coupling(x: Tensor, shift_fn, flip: bool, sign: float):
    if x.ndim != 3:
        raise FlowError(f"affine coupling expects [B, C, T], got {x.shape}")
    c = x.shape[1]
    if c % 2:
        raise FlowError(f"affine coupling needs an even channel count, got {c}")
    keep_s, move_s = _split(c, flip)
    keep, move = x[:, keep_s], x[:, move_s]
    shift = as_tensor(shift_fn(keep))
    if shift.shape != move.shape:
        raise FlowError(f"shift network returned {shift.shape}, expected {move.shape}")
    y = _merge(keep, move + sign * shift, flip)
    return y, Tensor(np.zeros(x.shape[0]))


class AffineCoupling(Module):
    """Volume-preserving coupling with a DDSConv shift network."""

    kind = "affine_coupling"

    def __init__(self, channels: int, hidden: int, kernel_size: int = 3, n_layers: int = 3,
                 flip: bool = False, cond_channels: int = 0, rng: np.random.Generator | None = None,
                 zero_init: bool = True):
        if channels % 2:
            raise FlowError(f"affine coupling needs an even channel count, got {channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.hidden, self.kernel_size, self.n_layers = channels, hidden, kernel_size, n_layers
        self.flip, self.cond_channels = flip, cond_channels
        half = channels // 2
        self.pre = Conv1d(half, hidden, 1, rng=rng)
        self.net = DDSConv(hidden, kernel_size, n_layers, rng=rng)
        self.cond = Conv1d(cond_channels, hidden, 1, rng=rng) if cond_channels else None
        self.post = Conv1d(hidden, half, 1, rng=rng, zero_init=zero_init)

    def config(self) -> dict:
        return dict(type=self.kind, channels=self.channels, hidden=self.hidden, kernel_size=self.kernel_size,
                    n_layers=self.n_layers, flip=self.flip, cond_channels=self.cond_channels)

    def shift(self, keep: Tensor, g: Tensor | None = None) -> Tensor:
        cond = self.cond(g) if (self.cond is not None and g is not None) else None
        return self.post(self.net(self.pre(keep), cond))

    def __call__(self, x, g=None, reverse: bool = False):
        fn = lambda keep: self.shift(keep, g)  # noqa: E731
        if reverse:
            return affine_coupling_inverse(x, fn, self.flip)
        return affine_coupling_forward(x, fn, self.flip)


class SplineCoupling(Module):
    """Coupling layer whose transformed half goes through a rational-quadratic spline.

    The pass-through half, plus an optional [B, hidden, T] condition, is
    encoded by a DDSConv block and projected to 3K-1 raw spline parameters per
    transformed channel. The projection starts at zero, so a fresh layer is
    the identity.
    """

    kind = "spline_coupling"

    def __init__(self, channels: int, hidden: int, num_bins: int = 10, tail_bound: float = DEFAULT_TAIL_BOUND,
                 kernel_size: int = 3, n_layers: int = 3, flip: bool = False,
                 rng: np.random.Generator | None = None, zero_init: bool = True):
        if channels < 2:
            raise FlowError(f"spline coupling needs at least 2 channels, got {channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels, self.hidden, self.num_bins, self.tail_bound = channels, hidden, num_bins, tail_bound
        self.kernel_size, self.n_layers, self.flip = kernel_size, n_layers, flip
        keep_s, move_s = _split(channels, flip)
        self.n_keep = keep_s.stop - keep_s.start
        self.n_move = move_s.stop - move_s.start
        self.pre = Conv1d(self.n_keep, hidden, 1, rng=rng)
        self.convs = DDSConv(hidden, kernel_size, n_layers, rng=rng)
        self.proj = Conv1d(hidden, self.n_move * (3 * num_bins - 1), 1, rng=rng, zero_init=zero_init)

    def config(self) -> dict:
        return dict(type=self.kind, channels=self.channels, hidden=self.hidden, num_bins=self.num_bins,
                    tail_bound=self.tail_bound, kernel_size=self.kernel_size, n_layers=self.n_layers,
                    flip=self.flip)

    def spline_params(self, keep: Tensor, g: Tensor | None = None) -> SplineParams:
        b, _, t = keep.shape
        h = self.proj(self.convs(self.pre(keep), g))
        k = self.num_bins
        raw = ag.transpose(ag.reshape(h, (b, self.n_move, 3 * k - 1, t)), (0, 1, 3, 2))
        scale = np.ones(3 * k - 1)
        scale[: 2 * k] = 1.0 / np.sqrt(self.hidden)
        return spline_params_from_raw(raw * scale, k, self.tail_bound)

    def __call__(self, x, g=None, reverse: bool = False):
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise FlowError(f"spline coupling expects [B, {self.channels}, T], got {x.shape}")
        keep_s, move_s = _split(self.channels, self.flip)
        keep, move = x[:, keep_s], x[:, move_s]
        params = self.spline_params(keep, g)
        y, lad = rq_spline_apply(move, params, inverse=reverse)
        return _merge(keep, y, self.flip), ag.sum_(lad, axis=(1, 2))


class ElementwiseAffine(Module):
    """y = m + exp(logs) * x per channel."""

    kind = "elementwise_affine"

    def __init__(self, channels: int):
        self.channels = channels
        self.m = param(np.zeros((channels, 1)))
        self.logs = param(np.zeros((channels, 1)))

    def config(self) -> dict:
        return dict(type=self.kind, channels=self.channels)

    def __call__(self, x, g=None, reverse: bool = False):
        x = as_tensor(x)
        t = x.shape[2]
        if not reverse:
            y = self.m + ag.exp(self.logs) * x
            logdet = ag.sum_(self.logs) * t
        else:
            y = (x - self.m) * ag.exp(-self.logs)
            logdet = ag.sum_(self.logs) * (-t)
        return y, logdet * np.ones(x.shape[0])


LAYER_TYPES = {cls.kind: cls for cls in (AffineCoupling, SplineCoupling, ElementwiseAffine)}


class FlowStack(Module):
    """Ordered composition of flow layers."""

    def __init__(self, layers: Sequence[Module] = ()):
        self.layers = list(layers)

    def __call__(self, x, g=None, reverse: bool = False):
        return flow_stack_apply(x, self, reverse=reverse, g=g)

    def config(self) -> list[dict]:
        return [layer.config() for layer in self.layers]

    @classmethod
    def from_config(cls, configs: Sequence[dict]) -> "FlowStack":
        layers = []
        for cfg in configs:
            cfg = dict(cfg)
            kind = cfg.pop("type")
            if kind not in LAYER_TYPES:
                raise FlowError(f"unknown flow layer type {kind!r}")
            layers.append(LAYER_TYPES[kind](**cfg))
        return cls(layers)


def flow_stack_apply(x, stack: FlowStack, reverse: bool = False, g=None) -> tuple[Tensor, Tensor]:
    """Run the stack forward, or its inverse in reverse layer order.

    The returned log-determinant belongs to the direction applied, so the
    inverse direction yields the negated forward value.
    """
    x = as_tensor(x)
    total = Tensor(np.zeros(x.shape[0]))
    layers = reversed(stack.layers) if reverse else stack.layers
    for layer in layers:
        x, ld = layer(x, g=g, reverse=reverse)
        total = total + ld
    return x, total


def build_spline_stack(channels: int, hidden: int, n_layers: int = 4, num_bins: int = 10,
                       tail_bound: float = DEFAULT_TAIL_BOUND, kernel_size: int = 3,
                       rng: np.random.Generator | None = None, zero_init: bool = True,
                       elementwise_affine: bool = False) -> FlowStack:
    rng = rng if rng is not None else np.random.default_rng(0)
    layers: list[Module] = [ElementwiseAffine(channels)] if elementwise_affine else []
    for i in range(n_layers):
        layers.append(SplineCoupling(channels, hidden, num_bins, tail_bound, kernel_size,
                                     flip=bool(i % 2), rng=rng, zero_init=zero_init))
    return FlowStack(layers)


def build_affine_stack(channels: int, hidden: int, n_layers: int = 4, kernel_size: int = 3,
                       cond_channels: int = 0, rng: np.random.Generator | None = None,
                       zero_init: bool = True, dds_layers: int = 3) -> FlowStack:
    rng = rng if rng is not None else np.random.default_rng(0)
    return FlowStack([
        AffineCoupling(channels, hidden, kernel_size, dds_layers, flip=bool(i % 2),
                       cond_channels=cond_channels, rng=rng, zero_init=zero_init)
        for i in range(n_layers)
    ])


def randomize(module: Module, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Overwrite every parameter with N(0, scale^2) noise; used by the oracle checks."""
    for p in module.parameters():
        p.data = rng.normal(0.0, scale, size=p.shape)
