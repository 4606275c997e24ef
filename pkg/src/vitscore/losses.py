"""Training losses as differentiable functions of :class:`Tensor` inputs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor, as_tensor
from .flows import FlowStack, flow_stack_apply

LOG_2PI = math.log(2.0 * math.pi)
COMPONENTS = ("recon", "kl", "dur", "adv_g", "fm")


@dataclass
class DiagGaussian:
    """Factorized normal with ``mu`` and ``sigma`` of equal shape."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        self.mu = as_tensor(self.mu)
        self.sigma = as_tensor(self.sigma)
        if self.mu.shape != self.sigma.shape:
            raise ShapeError(f"DiagGaussian: mu {self.mu.shape} and sigma {self.sigma.shape} differ")
        if not np.all(self.sigma.data > 0):
            raise ValueError("DiagGaussian: sigma must be strictly positive")

    def log_prob(self, z) -> Tensor:
        """Elementwise log-density."""
        z = as_tensor(z)
        r = (z - self.mu) / self.sigma
        return -0.5 * LOG_2PI - ag.log(self.sigma) - 0.5 * ag.square(r)

    def rsample(self, rng: np.random.Generator) -> Tensor:
        return self.mu + self.sigma * rng.standard_normal(self.mu.shape)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _values(x) -> Tensor:
    return as_tensor(x.values if hasattr(x, "values") and not isinstance(x, Tensor) else x)


def recon_loss(x_mel, x_hat_mel, reduction: str = "mean") -> Tensor:
    """L1 distance between target and predicted log-mel spectrograms."""
    a, b = _values(x_mel), _values(x_hat_mel)
    _same_shape("recon_loss", a, b)
    diff = ag.abs_(a - b)
    if reduction == "mean":
        return ag.mean(diff)
    if reduction == "sum":
        return ag.sum_(diff)
    raise ValueError(f"unknown reduction {reduction!r}")


def kl_terms(z, posterior: DiagGaussian, prior: DiagGaussian, prior_flow: FlowStack | None = None,
             g=None) -> Tensor:
    """Per-batch-element log q(z) - log p(z), shape [B], for ``z`` of shape [B, C, T].

    The prior density of ``z`` is N(f(z); mu_p, sigma_p) * |det df/dz|.
    """
    z = as_tensor(z)
    _same_shape("kl_loss", z, posterior.mu)
    if z.ndim < 2:
        raise ShapeError(f"kl_loss: expected a leading batch axis, got shape {z.shape}")
    axes = tuple(range(1, z.ndim))
    log_q = ag.sum_(posterior.log_prob(z), axis=axes)
    if prior_flow is None or not prior_flow.layers:
        fz, logdet = z, Tensor(np.zeros(z.shape[0]))
    else:
        fz, logdet = flow_stack_apply(z, prior_flow, g=g)
    _same_shape("kl_loss", fz, prior.mu)
    log_p = ag.sum_(prior.log_prob(fz), axis=axes) + logdet
    return log_q - log_p


def kl_loss(z, posterior: DiagGaussian, prior: DiagGaussian, prior_flow: FlowStack | None = None,
            g=None) -> Tensor:
    """Single-sample KL estimate with a flow-augmented prior, summed over the batch."""
    return ag.sum_(kl_terms(z, posterior, prior, prior_flow, g))


def kl_closed_form(posterior: DiagGaussian, prior: DiagGaussian) -> Tensor:
    """KL(q || p) for diagonal Gaussians, summed over elements."""
    _same_shape("kl_closed_form", posterior.mu, prior.mu)
    mq, sq, mp, sp = posterior.mu, posterior.sigma, prior.mu, prior.sigma
    terms = ag.log(sp / sq) + (ag.square(sq) + ag.square(mq - mp)) / (2.0 * ag.square(sp)) - 0.5
    return ag.sum_(terms)


def adv_loss_d(d_real, d_fake) -> Tensor:
    """Least-squares discriminator loss: mean of (D(y) - 1)^2 + D(G(z))^2."""
    r, f = as_tensor(d_real), as_tensor(d_fake)
    _same_shape("adv_loss_d", r, f)
    return ag.mean(ag.square(r - 1.0) + ag.square(f))


def adv_loss_g(d_fake) -> Tensor:
    """Least-squares generator loss: mean of (D(G(z)) - 1)^2."""
    return ag.mean(ag.square(as_tensor(d_fake) - 1.0))


def fm_loss(real_feats: Sequence, fake_feats: Sequence) -> Tensor:
    """Sum over layers of the mean absolute feature difference."""
    if len(real_feats) != len(fake_feats):
        raise ShapeError(f"fm_loss: {len(real_feats)} real layers vs {len(fake_feats)} fake layers")
    total = Tensor(0.0)
    for r, f in zip(real_feats, fake_feats):
        r, f = as_tensor(r), as_tensor(f)
        _same_shape("fm_loss", r, f)
        total = total + ag.mean(ag.abs_(r - f))
    return total


def total_loss(components, weights=None) -> Tensor:
    """Weighted sum of (recon, kl, dur, adv_g, fm); weights default to ones.

    ``components`` is a mapping keyed by :data:`COMPONENTS` or a sequence in
    that order.
    """
    if isinstance(components, dict):
        missing = [k for k in COMPONENTS if k not in components]
        if missing:
            raise KeyError(f"total_loss: missing components {missing}")
        values = [components[k] for k in COMPONENTS]
    else:
        values = list(components)
        if len(values) != len(COMPONENTS):
            raise ValueError(f"total_loss: expected {len(COMPONENTS)} components, got {len(values)}")
    if weights is None:
        weights = [1.0] * len(COMPONENTS)
    elif isinstance(weights, dict):
        weights = [weights.get(k, 1.0) for k in COMPONENTS]
    out = Tensor(0.0)
    for w, v in zip(weights, values):
        out = out + float(w) * as_tensor(v)
    return out
