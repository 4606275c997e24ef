"""Flow-based stochastic duration predictor.

Integer durations are dequantized by a learned offset ``u`` in [0, 1) and
augmented with a learned auxiliary channel ``nu``; both come from a
conditional posterior flow. The main flow maps ``[d - u, nu]`` to standard
normal noise, and the training loss is the negative variational bound

    L_dur = -(log p(d - u, nu | c) - log q(u, nu | d, c)).

Tensors follow the [B, C, T] layout; durations are [B, T].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import NonFiniteError, Tensor, as_tensor
from .flows import build_spline_stack, flow_stack_apply
from .nn import ConditionEncoder, Module
from .optim import OptimizerState, adamw_step

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class SDPConfig:
    in_channels: int = 8
    hidden_dim: int = 32
    n_coupling_layers: int = 4
    spline_bins: int = 10
    kernel_size: int = 3
    n_dds_layers: int = 3
    tail_bound: float = 5.0
    noise_scale: float = 0.8
    log_durations: bool = False

    def __post_init__(self):
        if self.n_coupling_layers < 1:
            raise ValueError("n_coupling_layers must be at least 1")
        if self.hidden_dim < 1 or self.in_channels < 1:
            raise ValueError("hidden_dim and in_channels must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")


@dataclass
class DurationBatch:
    """Equal-length duration sequences with their condition features.

    ``d`` is [B, T] positive integers and ``cond`` is [B, in_channels, T].
    """

    d: np.ndarray
    cond: Tensor

    def __post_init__(self):
        self.d = np.atleast_2d(np.asarray(self.d))
        if not np.issubdtype(self.d.dtype, np.integer):
            if not np.all(self.d == np.round(self.d)):
                raise ValueError("durations must be integers")
            self.d = self.d.astype(np.int64)
        if np.any(self.d < 1):
            raise ValueError("every duration must be >= 1")
        self.cond = as_tensor(self.cond)
        if self.cond.ndim == 2:
            self.cond = ag.reshape(self.cond, (1,) + self.cond.shape)
        if self.cond.ndim != 3 or self.cond.shape[0] != self.d.shape[0] or self.cond.shape[2] != self.d.shape[1]:
            raise ValueError(f"condition shape {self.cond.shape} does not match durations {self.d.shape}")


@dataclass
class DequantSample:
    u: Tensor
    nu: Tensor
    log_q: Tensor
    noise: np.ndarray = field(repr=False, default=None)


def std_normal_logpdf(z: Tensor) -> Tensor:
    """Sum of standard-normal log-densities over all but the batch axis."""
    z = as_tensor(z)
    dens = -0.5 * (ag.square(z) + LOG_2PI)
    return ag.sum_(dens, axis=tuple(range(1, z.ndim)))


def _check(t: Tensor, what: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"{what}: non-finite value (parameter blow-up?)")
    return t


class StochasticDurationPredictor(Module):
    def __init__(self, config: SDPConfig | None = None, seed: int = 0):
        self.config = cfg = config or SDPConfig()
        rng = np.random.default_rng(seed)
        h = cfg.hidden_dim
        self.text_encoder = ConditionEncoder(cfg.in_channels, h, cfg.kernel_size, cfg.n_dds_layers, rng=rng)
        self.duration_encoder = ConditionEncoder(1, h, cfg.kernel_size, cfg.n_dds_layers, rng=rng)
        common = dict(n_layers=cfg.n_coupling_layers, num_bins=cfg.spline_bins, tail_bound=cfg.tail_bound,
                      kernel_size=cfg.kernel_size, elementwise_affine=True)
        self.flow = build_spline_stack(2, h, rng=rng, **common)
        self.post_flow = build_spline_stack(2, h, rng=rng, **common)

    # -- pieces --------------------------------------------------------------

    def encode_condition(self, cond) -> Tensor:
        """Stop-gradient on the raw condition, then the text condition encoder."""
        return self.text_encoder(ag.stop_gradient(as_tensor(cond)))

    def posterior_sample(self, d: np.ndarray, cond_h: Tensor, rng: np.random.Generator,
                         noise: np.ndarray | None = None) -> DequantSample:
        """Draw (u, nu) from q(u, nu | d, c) with its log-density.

        Args:
            d: [B, T] durations.
            cond_h: encoded condition, [B, hidden, T].
            noise: optional [B, 2, T] base noise instead of drawing from ``rng``.
        """
        d = np.asarray(d, dtype=np.float64)
        b, t = d.shape
        g = cond_h + self.duration_encoder(Tensor(d[:, None, :]))
        eps = rng.standard_normal((b, 2, t)) if noise is None else np.asarray(noise, dtype=np.float64)
        z, logdet = flow_stack_apply(Tensor(eps), self.post_flow, g=g)
        z_u, nu = z[:, :1], z[:, 1:]
        u = ag.sigmoid(z_u)
        # u must stay below 1 so that d - u > 0 for d = 1
        u = ag.where(u.data < 1.0, u, np.nextafter(1.0, 0.0))
        sig_logdet = -ag.sum_(ag.softplus(z_u) + ag.softplus(-z_u), axis=(1, 2))
        log_q = std_normal_logpdf(Tensor(eps)) - logdet - sig_logdet
        return DequantSample(u, nu, _check(log_q, "posterior_sample"), eps)

    def augmented_log_likelihood(self, d_minus_u, nu, cond_h: Tensor) -> Tensor:
        """log p(d - u, nu | c) per batch element, shape [B]."""
        x0 = as_tensor(d_minus_u)
        nu = as_tensor(nu)
        if x0.ndim == 2:
            x0 = ag.reshape(x0, (x0.shape[0], 1, x0.shape[1]))
        if nu.ndim == 2:
            nu = ag.reshape(nu, (nu.shape[0], 1, nu.shape[1]))
        if not np.all(x0.data > 0):
            raise ValueError("augmented_log_likelihood: d - u must be strictly positive")
        extra = Tensor(np.zeros(x0.shape[0]))
        if self.config.log_durations:
            x0 = ag.log(x0)
            extra = -ag.sum_(x0, axis=(1, 2))
        z, logdet = flow_stack_apply(ag.concat([x0, nu], axis=1), self.flow, g=cond_h)
        return _check(std_normal_logpdf(z) + logdet + extra, "augmented_log_likelihood")

    # -- objectives and sampling ----------------------------------------------

    def elbo_terms(self, batch: DurationBatch, rng: np.random.Generator,
                   noise: np.ndarray | None = None) -> Tensor:
        """Single-sample bound log p(d-u, nu|c) - log q(u, nu|d, c), shape [B]."""
        cond_h = self.encode_condition(batch.cond)
        s = self.posterior_sample(batch.d, cond_h, rng, noise)
        d = Tensor(batch.d[:, None, :].astype(np.float64))
        return self.augmented_log_likelihood(d - s.u, s.nu, cond_h) - s.log_q

    def duration_loss(self, batch: DurationBatch, rng: np.random.Generator,
                      noise: np.ndarray | None = None) -> Tensor:
        """Negative bound summed over tokens, averaged over the batch."""
        return -ag.mean(self.elbo_terms(batch, rng, noise))

    def sample_durations(self, cond, noise_scale: float | None = None,
                         rng: np.random.Generator | None = None) -> np.ndarray:
        """Integer durations [B, T] from scaled noise through the inverse main flow."""
        scale = self.config.noise_scale if noise_scale is None else noise_scale
        if scale < 0:
            raise ValueError("noise_scale must be nonnegative")
        rng = rng if rng is not None else np.random.default_rng(0)
        cond = as_tensor(cond)
        if cond.ndim == 2:
            cond = ag.reshape(cond, (1,) + cond.shape)
        with ag.no_grad():
            cond_h = self.encode_condition(cond)
            b, _, t = cond.shape
            z = rng.standard_normal((b, 2, t)) * scale
            x, _ = flow_stack_apply(Tensor(z), self.flow, reverse=True, g=cond_h)
            w = x.data[:, 0]
            if self.config.log_durations:
                w = np.exp(w)
        _check(Tensor(w), "sample_durations")
        return np.maximum(np.ceil(w), 1).astype(np.int64)


# ------------------------------------------------------------------ training


def batches_by_length(rows: Sequence[tuple[np.ndarray, np.ndarray]]) -> dict[int, list[int]]:
    buckets: dict[int, list[int]] = {}
    for i, (d, _) in enumerate(rows):
        buckets.setdefault(len(d), []).append(i)
    return buckets


def make_batch(rows: Sequence[tuple[np.ndarray, np.ndarray]], idx: Sequence[int]) -> DurationBatch:
    d = np.stack([rows[i][0] for i in idx])
    cond = np.stack([np.asarray(rows[i][1], dtype=np.float64).T for i in idx])
    return DurationBatch(d, Tensor(cond))


def train_sdp(model: StochasticDurationPredictor, rows: Sequence[tuple[np.ndarray, np.ndarray]],
              steps: int, opt: OptimizerState, rng: np.random.Generator, batch_size: int = 8,
              on_step: Callable[[int, float], None] | None = None) -> list[float]:
    """Train with AdamW on rows of (durations [T], condition [T, in_channels]).

    Each step draws a batch of equal-length rows. The learning rate decays once
    per epoch, an epoch being ``ceil(len(rows) / batch_size)`` steps.
    """
    if not rows:
        raise ValueError("train_sdp: empty dataset")
    buckets = batches_by_length(rows)
    keys = sorted(buckets)
    weights = np.array([len(buckets[k]) for k in keys], dtype=np.float64)
    weights /= weights.sum()
    steps_per_epoch = max(1, math.ceil(len(rows) / batch_size))
    params = dict(model.named_parameters())
    losses = []
    for step in range(1, steps + 1):
        key = keys[rng.choice(len(keys), p=weights)]
        pool = buckets[key]
        idx = rng.choice(pool, size=min(batch_size, len(pool)), replace=False)
        batch = make_batch(rows, idx)
        model.zero_grad()
        loss = model.duration_loss(batch, rng)
        ag.backward(loss)
        adamw_step(params, opt)
        if step % steps_per_epoch == 0:
            opt.end_epoch()
        losses.append(loss.item())
        if on_step is not None:
            on_step(step, losses[-1])
    return losses


def synthetic_rows(n_rows: int, length: int, in_channels: int, rng: np.random.Generator,
                   low: int = 1, high: int = 4) -> list[tuple[np.ndarray, np.ndarray]]:
    """Durations i.i.d. uniform on {low..high} with random N(0, 1) conditions."""
    return [
        (rng.integers(low, high + 1, size=length), rng.standard_normal((length, in_channels)))
        for _ in range(n_rows)
    ]


def read_duration_jsonl(path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rows of ``{"durations": [...], "condition": [[...], ...]}``.

    ``condition`` holds one feature vector per token. Raises ``ValueError``
    naming the offending line.
    """
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
                d = np.asarray(obj["durations"])
                cond = np.asarray(obj["condition"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{where}: malformed row ({exc})") from None
            if d.ndim != 1 or d.size == 0 or not np.all(np.equal(np.mod(d, 1), 0)) or np.any(d < 1):
                raise ValueError(f"{where}: durations must be a non-empty list of integers >= 1")
            if cond.ndim != 2 or cond.shape[0] != d.size or not np.all(np.isfinite(cond)):
                raise ValueError(f"{where}: condition must be {d.size} finite feature vectors")
            if width is not None and cond.shape[1] != width:
                raise ValueError(f"{where}: condition width {cond.shape[1]} differs from earlier rows ({width})")
            width = cond.shape[1]
            rows.append((d.astype(np.int64), cond))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return rows


def write_duration_jsonl(path, rows: Sequence[tuple[np.ndarray, np.ndarray]]) -> None:
    with open(path, "w") as f:
        for d, cond in rows:
            f.write(json.dumps({"durations": [int(v) for v in d],
                                "condition": [[float(v) for v in r] for r in cond]}) + "\n")
