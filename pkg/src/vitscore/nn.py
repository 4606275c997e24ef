"""Parameter containers and the small layers shared by the flow networks."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Attribute-discovered parameter tree, in the style of ``torch.nn``."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            value = np.asarray(state[k], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{k}: shape {value.shape} does not match parameter {p.shape}")
            p.data = value.copy()

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Conv1d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 1, dilation: int = 1,
                 groups: int = 1, rng: np.random.Generator | None = None, zero_init: bool = False):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = (in_ch // groups) * kernel_size
        bound = 1.0 / np.sqrt(fan_in)
        shape = (out_ch, in_ch // groups, kernel_size)
        w = np.zeros(shape) if zero_init else rng.uniform(-bound, bound, size=shape)
        b = np.zeros(out_ch) if zero_init else rng.uniform(-bound, bound, size=out_ch)
        self.weight = param(w)
        self.bias = param(b)
        self.dilation = dilation
        self.groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv1d(x, self.weight, self.bias, dilation=self.dilation, groups=self.groups)


class LayerNorm(Module):
    """Channel-wise layer norm for [B, C, T] inputs."""

    def __init__(self, channels: int, eps: float = 1e-5):
        self.gamma = param(np.ones(channels))
        self.beta = param(np.zeros(channels))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta, axis=1, eps=self.eps)


class DDSConv(Module):
    """Residual stack of dilated depthwise-separable convolutions.

    Layer ``i`` uses dilation ``kernel_size ** i``; each depthwise and each
    pointwise convolution is followed by layer norm and GELU.
    """

    def __init__(self, channels: int, kernel_size: int = 3, n_layers: int = 3,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.convs_sep = []
        self.convs_1x1 = []
        self.norms_1 = []
        self.norms_2 = []
        for i in range(n_layers):
            d = kernel_size**i
            self.convs_sep.append(Conv1d(channels, channels, kernel_size, dilation=d, groups=channels, rng=rng))
            self.convs_1x1.append(Conv1d(channels, channels, 1, rng=rng))
            self.norms_1.append(LayerNorm(channels))
            self.norms_2.append(LayerNorm(channels))

    def __call__(self, x: Tensor, g: Tensor | None = None) -> Tensor:
        if g is not None:
            x = x + g
        for sep, pw, n1, n2 in zip(self.convs_sep, self.convs_1x1, self.norms_1, self.norms_2):
            y = ag.gelu(n1(sep(x)))
            y = ag.gelu(n2(pw(y)))
            x = x + y
        return x


class ConditionEncoder(Module):
    """1x1 conv, DDSConv block, 1x1 conv."""

    def __init__(self, in_ch: int, hidden: int, kernel_size: int = 3, n_layers: int = 3,
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.pre = Conv1d(in_ch, hidden, 1, rng=rng)
        self.convs = DDSConv(hidden, kernel_size, n_layers, rng=rng)
        self.proj = Conv1d(hidden, hidden, 1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(self.convs(self.pre(x)))
