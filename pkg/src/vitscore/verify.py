"""Oracle and property checks, grouped into suites.

Each check compares an implementation against an independent route
(brute-force enumeration, finite differences, quadrature, a direct DFT) and
returns a :class:`CheckResult`. ``run_suites`` backs ``vitscore verify``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import alignment, dsp
from . import autograd as ag
from . import flows as F
from . import losses as L
from .autograd import Tensor
from .duration import DurationBatch, SDPConfig, StochasticDurationPredictor, synthetic_rows, train_sdp
from .gradcheck import check_gradients
from .optim import OptimizerState


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.suite}/{self.name}: {self.detail} ({self.seconds:.1f}s)"


# ----------------------------------------------------------------------- MAS


def check_mas_oracle(n: int = 1000, seed: int = 0, max_tx: int = 6, max_ty: int = 10):
    rng = np.random.default_rng(seed)
    bad_score = bad_member = 0
    worst = 0.0
    t0 = time.perf_counter()
    for _ in range(n):
        t_x = int(rng.integers(1, max_tx + 1))
        t_y = int(rng.integers(t_x, max_ty + 1))
        value = rng.standard_normal((t_x, t_y))
        path = alignment.mas(value)
        best, best_paths = alignment.mas_bruteforce(value)
        gap = abs(alignment.path_score(value, path) - best)
        worst = max(worst, gap)
        bad_score += gap > 1e-9
        bad_member += alignment.path_rows(path) not in best_paths
    elapsed = time.perf_counter() - t0
    ok = bad_score == 0 and bad_member == 0 and elapsed < 30.0
    return ok, (f"{n} instances, max score gap {worst:.2e}, {bad_member} outside argmax set, "
                f"{elapsed:.1f}s (limit 30s)")


def check_mas_structure(n: int = 10_000, seed: int = 1):
    rng = np.random.default_rng(seed)
    invalid = 0
    for _ in range(n):
        t_x = int(rng.integers(1, 9))
        t_y = int(rng.integers(t_x, 25))
        invalid += not alignment.is_valid_path(alignment.mas(rng.standard_normal((t_x, t_y))))
    return invalid == 0, f"{n} instances, {invalid} invalid paths"


def check_mas_shift_invariance(n: int = 500, seed: int = 2):
    rng = np.random.default_rng(seed)
    changed = 0
    for _ in range(n):
        t_x = int(rng.integers(1, 7))
        t_y = int(rng.integers(t_x, 15))
        v = rng.standard_normal((t_x, t_y))
        c = float(rng.integers(-50, 50))  # integer shift keeps sums exact
        changed += not np.array_equal(alignment.mas(v), alignment.mas(v + c))
    return changed == 0, f"{n} instances, {changed} paths moved under a constant shift"


# --------------------------------------------------------------------- flows


def _random_spline(rng, n, scale=1.0, k=10, bound=5.0):
    return F.spline_params_from_raw(rng.normal(0.0, scale, size=(n, 3 * k - 1)), k, bound)


def check_spline_roundtrip(n: int = 1000, seed: int = 3):
    rng = np.random.default_rng(seed)
    params = _random_spline(rng, n, scale=1.5)
    x = rng.uniform(-6.0, 6.0, size=n)
    y, _ = F.rq_spline_apply(x, params)
    xr, _ = F.rq_spline_apply(y, params, inverse=True)
    err = float(np.max(np.abs(xr.data - x)))
    return err < 1e-8, f"max |inverse(forward(x)) - x| = {err:.2e} over {n} draws (limit 1e-8)"


def check_affine_roundtrip(n: int = 1000, seed: int = 4):
    rng = np.random.default_rng(seed)
    worst = 0.0
    n_nets = 10
    per = n // n_nets
    for i in range(n_nets):
        layer = F.AffineCoupling(4, 8, flip=bool(i % 2), rng=rng, zero_init=False)
        F.randomize(layer, rng, 0.5)
        x = Tensor(rng.normal(0, 2, size=(per, 4, 3)))
        y, ld = layer(x)
        xr, ldr = layer(y, reverse=True)
        worst = max(worst, float(np.max(np.abs(xr.data - x.data))))
        if np.any(ld.data != 0) or np.any(ldr.data != 0):
            return False, "nonzero log-determinant from a volume-preserving layer"
    return worst < 1e-12, f"max round-trip error {worst:.2e} over {n} inputs (limit 1e-12)"


def check_spline_logdet(n: int = 1000, seed: int = 5, step: float = 1e-5):
    rng = np.random.default_rng(seed)
    params = _random_spline(rng, n)
    x = rng.uniform(-4.99, 4.99, size=n)
    _, lad = F.rq_spline_apply(x, params)
    yp, _ = F.rq_spline_apply(x + step, params)
    ym, _ = F.rq_spline_apply(x - step, params)
    fd = np.log((yp.data - ym.data) / (2 * step))
    err = float(np.max(np.abs(fd - lad.data)))
    return err < 1e-5, f"max |logdet - log FD slope| = {err:.2e} (limit 1e-5)"


def _jacobian_logdet(fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-5) -> float:
    d = x.size
    jac = np.zeros((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = step
        jac[:, i] = (fn(x + e) - fn(x - e)) / (2 * step)
    return float(np.linalg.slogdet(jac)[1])


def random_spline_stack(rng, hidden: int = 8, n_layers: int = 4, scale: float = 0.3) -> F.FlowStack:
    stack = F.build_spline_stack(2, hidden, n_layers, rng=rng, zero_init=False, elementwise_affine=True)
    for layer in stack.layers:
        if isinstance(layer, F.SplineCoupling):
            layer.proj.weight.data = rng.normal(0, scale, size=layer.proj.weight.shape)
            layer.proj.bias.data = rng.normal(0, scale, size=layer.proj.bias.shape)
        else:
            F.randomize(layer, rng, 0.2)
    return stack


def check_stack(n: int = 50, seed: int = 6):
    rng = np.random.default_rng(seed)
    worst_rt = worst_ld = 0.0
    with ag.no_grad():
        for _ in range(n):
            stack = random_spline_stack(rng)
            x = rng.uniform(-3, 3, size=(1, 2, 1))
            y, ld = F.flow_stack_apply(Tensor(x), stack)
            xr, ldr = F.flow_stack_apply(y, stack, reverse=True)
            worst_rt = max(worst_rt, float(np.max(np.abs(xr.data - x))))
            fwd = lambda v: F.flow_stack_apply(Tensor(v.reshape(1, 2, 1)), stack)[0].data.reshape(-1)  # noqa: E731
            fd = _jacobian_logdet(fwd, x.reshape(-1))
            worst_ld = max(worst_ld, abs(fd - ld.item()), abs(ld.item() + ldr.item()))
    ok = worst_rt < 1e-7 and worst_ld < 1e-4
    return ok, f"{n} random 4-layer stacks: round-trip {worst_rt:.2e} (limit 1e-7), logdet vs FD Jacobian {worst_ld:.2e} (limit 1e-4)"


def check_29_channel(seed: int = 7):
    rng = np.random.default_rng(seed)
    params = F.spline_params_from_raw(np.zeros((200, 29)))
    x = rng.uniform(-7, 7, size=200)
    y, lad = F.rq_spline_apply(x, params)
    err = float(max(np.max(np.abs(y.data - x)), np.max(np.abs(lad.data))))
    try:
        F.spline_params_from_raw(np.zeros((1, 28)))
        rejected = False
    except F.FlowError:
        rejected = True
    ok = params.num_bins == 10 and params.derivatives.shape[-1] == 9 and err < 1e-8 and rejected
    return ok, f"K={params.num_bins} bins from 29 channels, identity error {err:.2e} (limit 1e-8), 28 channels rejected={rejected}"


def check_density_normalizes(seed: int = 8, n_grid: int = 401):
    """Flow-transformed 2-D density integrates to 1 over [-B, B]^2."""
    rng = np.random.default_rng(seed)
    stack = F.build_spline_stack(2, 8, 2, rng=rng, zero_init=False)
    for layer in stack.layers:
        layer.proj.weight.data = rng.normal(0, 0.3, size=layer.proj.weight.shape)
    bound = 5.0
    grid = np.linspace(-bound, bound, n_grid)
    xx, yy = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1)[:, :, None]
    dens = np.empty(pts.shape[0])
    with ag.no_grad():
        for s in range(0, pts.shape[0], 20000):
            z, ld = F.flow_stack_apply(Tensor(pts[s : s + 20000]), stack)
            dens[s : s + 20000] = np.exp(-0.5 * np.sum(z.data**2, axis=(1, 2)) - math.log(2 * math.pi) + ld.data)
    total = float(np.trapezoid(np.trapezoid(dens.reshape(n_grid, n_grid), grid, axis=1), grid))
    return abs(total - 1) < 1e-3, f"integral {total:.6f} (limit |1 - I| < 1e-3)"


# ---------------------------------------------------------------------- grad


def _pos(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _shape(rng, nd=2, lo=1, hi=4):
    return tuple(int(s) for s in rng.integers(lo, hi + 1, size=nd))


def _grad_cases() -> dict[str, Callable[[np.random.Generator], tuple[Callable, list]]]:
    def _binary(op, pos_b=False):
        def make(rng):
            shape = _shape(rng, 3)
            bshape = tuple(1 if rng.random() < 0.3 else s for s in shape)
            a = rng.normal(size=shape)
            b = _pos(rng, bshape) * rng.choice([-1, 1], size=bshape) if pos_b else rng.normal(size=bshape)
            w = rng.normal(size=shape)
            return (lambda x, y: ag.sum_(op(x, y) * w)), [a, b]
        return make

    def abs_gen(rng, shape):
        return _pos(rng, shape) * rng.choice([-1, 1], size=shape)

    cases = {
        "add": _binary(ag.add),
        "sub": _binary(ag.sub),
        "mul": _binary(ag.mul),
        "div": _binary(ag.div, pos_b=True),
        "neg": lambda rng: _unary(rng, ag.neg),
        "pow": lambda rng: _unary(rng, lambda a: ag.power(a, 2.5), _pos),
        "square": lambda rng: _unary(rng, ag.square),
        "exp": lambda rng: _unary(rng, ag.exp),
        "log": lambda rng: _unary(rng, ag.log, _pos),
        "sqrt": lambda rng: _unary(rng, ag.sqrt, _pos),
        "abs": lambda rng: _unary(rng, ag.abs_, abs_gen),
        "sigmoid": lambda rng: _unary(rng, ag.sigmoid),
        "softplus": lambda rng: _unary(rng, ag.softplus),
        "tanh": lambda rng: _unary(rng, ag.tanh),
        "gelu": lambda rng: _unary(rng, ag.gelu),
        "sum": lambda rng: _unary(rng, lambda a: ag.sum_(a, axis=0, keepdims=True)),
        "mean": lambda rng: _unary(rng, lambda a: ag.mean(a, axis=-1)),
        "cumsum": lambda rng: _unary(rng, lambda a: ag.cumsum(a, axis=-1)),
        "softmax": lambda rng: _unary(rng, lambda a: ag.softmax(a, axis=-1)),
        "reshape": lambda rng: _unary(rng, lambda a: ag.reshape(a, (-1,))),
        "transpose": lambda rng: _unary(rng, lambda a: ag.transpose(a)),
        "getitem": lambda rng: _unary(rng, lambda a: a[..., :1] * a[..., -1:]),
        "where": _where_case,
        "concat": _concat_case,
        "take_along_axis": _gather_case,
        "matmul": _matmul_case,
        "conv1d": _conv_case,
        "conv1d_depthwise_dilated": _depthwise_case,
        "layer_norm": _layer_norm_case,
    }
    return cases


def _unary(rng, op, gen=None):
    shape = _shape(rng)
    x = gen(rng, shape) if gen else rng.normal(size=shape)
    with ag.no_grad():
        out_shape = op(Tensor(x)).shape
    w = rng.normal(size=out_shape)
    return (lambda a: ag.sum_(op(a) * w)), [x]


def _where_case(rng):
    shape = _shape(rng)
    m = rng.random(shape) < 0.5
    w = rng.normal(size=shape)
    return (lambda a, b: ag.sum_(ag.where(m, a * a, ag.exp(b)) * w)), [rng.normal(size=shape), rng.normal(size=shape)]


def _concat_case(rng):
    b, t = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    c1, c2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    w = rng.normal(size=(b, c1 + c2, t))
    return (lambda x, y: ag.sum_(ag.concat([x, y], axis=1) * w)), [rng.normal(size=(b, c1, t)), rng.normal(size=(b, c2, t))]


def _gather_case(rng):
    rows, k = int(rng.integers(1, 5)), int(rng.integers(2, 6))
    idx = rng.integers(0, k, size=(rows, 1))
    w = rng.normal(size=(rows, 1))
    return (lambda a: ag.sum_(ag.take_along_axis(a, idx, axis=-1) * w)), [rng.normal(size=(rows, k))]


def _matmul_case(rng):
    n, k, m = (int(v) for v in rng.integers(1, 5, size=3))
    w = rng.normal(size=(n, m))
    return (lambda a, b: ag.sum_(ag.matmul(a, b) * w)), [rng.normal(size=(n, k)), rng.normal(size=(k, m))]


def _conv_case(rng):
    b, cin, cout, t = 2, int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(3, 8))
    k = int(rng.choice([1, 3, 5]))
    dil = int(rng.integers(1, 3))
    w = rng.normal(size=(b, cout, t))
    fn = lambda x, wt, bias: ag.sum_(ag.conv1d(x, wt, bias, dilation=dil) * w)  # noqa: E731
    return fn, [rng.normal(size=(b, cin, t)), rng.normal(size=(cout, cin, k)), rng.normal(size=cout)]


def _depthwise_case(rng):
    c, t = int(rng.integers(1, 5)), int(rng.integers(3, 12))
    dil = int(rng.choice([1, 3, 9]))
    w = rng.normal(size=(1, c, t))
    fn = lambda x, wt: ag.sum_(ag.conv1d(x, wt, None, dilation=dil, groups=c) * w)  # noqa: E731
    return fn, [rng.normal(size=(1, c, t)), rng.normal(size=(c, 1, 3))]


def _layer_norm_case(rng):
    b, c, t = int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(1, 4))
    w = rng.normal(size=(b, c, t))
    fn = lambda x, g, bt: ag.sum_(ag.layer_norm(x, g, bt, axis=1) * w)  # noqa: E731
    return fn, [rng.normal(size=(b, c, t)), rng.normal(size=c), rng.normal(size=c)]


GRAD_CASES = _grad_cases()


def check_primitive_grad(name: str, trials: int = 100, seed: int = 9):
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    worst = 0.0
    for _ in range(trials):
        fn, inputs = GRAD_CASES[name](rng)
        worst = max(worst, check_gradients(fn, inputs))
    return worst < 1e-4, f"{trials} trials, max relative error {worst:.2e} (limit 1e-4)"


# -------------------------------------------------------------------- losses


def _loss_cases():
    def recon(rng):
        shape = _shape(rng, 2, 2, 5)
        a = rng.normal(size=shape)
        b = a + rng.uniform(0.1, 1.0, size=shape) * rng.choice([-1, 1], size=shape)
        return L.recon_loss, [a, b]

    def kl_flow(rng):
        b, c, t = 2, 2, int(rng.integers(1, 4))
        flow = F.build_affine_stack(c, 4, 2, rng=rng, zero_init=False, dds_layers=1)
        F.randomize(flow, rng, 0.3)

        def fn(z, mq, sq, mp, sp):
            return L.kl_loss(z, L.DiagGaussian(mq, sq), L.DiagGaussian(mp, sp), flow)
        shape = (b, c, t)
        return fn, [rng.normal(size=shape), rng.normal(size=shape), _pos(rng, shape),
                    rng.normal(size=shape), _pos(rng, shape)]

    def kl_spline_flow(rng):
        shape = (1, 2, int(rng.integers(1, 3)))
        flow = random_spline_stack(rng, hidden=4, n_layers=2)

        def fn(z, mp, sp):
            q = L.DiagGaussian(np.zeros(shape), np.ones(shape))
            return L.kl_loss(z, q, L.DiagGaussian(mp, sp), flow)
        return fn, [rng.normal(size=shape), rng.normal(size=shape), _pos(rng, shape)]

    def kl_closed(rng):
        shape = _shape(rng)

        def fn(mq, sq, mp, sp):
            return L.kl_closed_form(L.DiagGaussian(mq, sq), L.DiagGaussian(mp, sp))
        return fn, [rng.normal(size=shape), _pos(rng, shape), rng.normal(size=shape), _pos(rng, shape)]

    def adv_d(rng):
        shape = _shape(rng)
        return L.adv_loss_d, [rng.normal(size=shape), rng.normal(size=shape)]

    def adv_g(rng):
        return L.adv_loss_g, [rng.normal(size=_shape(rng))]

    def fm(rng):
        s1, s2 = _shape(rng), _shape(rng, 3)
        r1, r2 = rng.normal(size=s1), rng.normal(size=s2)
        f1 = r1 + rng.uniform(0.1, 1, size=s1) * rng.choice([-1, 1], size=s1)
        f2 = r2 + rng.uniform(0.1, 1, size=s2) * rng.choice([-1, 1], size=s2)
        return (lambda a, b, c, d: L.fm_loss([a, b], [c, d])), [r1, r2, f1, f2]

    def total(rng):
        w = rng.uniform(0.5, 2.0, size=5)
        return (lambda *xs: L.total_loss([ag.sum_(ag.square(x)) for x in xs], w)), [
            rng.normal(size=(2,)) for _ in range(5)]

    return {"recon_loss": recon, "kl_loss_affine_flow": kl_flow, "kl_loss_spline_flow": kl_spline_flow,
            "kl_closed_form": kl_closed, "adv_loss_d": adv_d, "adv_loss_g": adv_g, "fm_loss": fm,
            "total_loss": total}


LOSS_CASES = _loss_cases()


def check_loss_grad(name: str, trials: int = 100, seed: int = 10):
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    worst = 0.0
    for _ in range(trials):
        fn, inputs = LOSS_CASES[name](rng)
        worst = max(worst, check_gradients(fn, inputs))
    return worst < 1e-4, f"{trials} trials, max relative error {worst:.2e} (limit 1e-4)"


def check_kl_monte_carlo(n_pairs: int = 10, n_draws: int = 100_000, seed: int = 11):
    rng = np.random.default_rng(seed)
    shape = (1, 2, 3)
    worst = 0.0
    for _ in range(n_pairs):
        q = L.DiagGaussian(rng.normal(size=shape), rng.uniform(0.5, 1.5, size=shape))
        p = L.DiagGaussian(rng.normal(size=shape), rng.uniform(0.5, 1.5, size=shape))
        exact = L.kl_closed_form(q, p).item()
        tile = (n_draws, 1, 1)
        qb = L.DiagGaussian(np.tile(q.mu.data, tile), np.tile(q.sigma.data, tile))
        pb = L.DiagGaussian(np.tile(p.mu.data, tile), np.tile(p.sigma.data, tile))
        with ag.no_grad():
            terms = L.kl_terms(qb.rsample(rng), qb, pb).data
        se = terms.std(ddof=1) / math.sqrt(n_draws)
        worst = max(worst, abs(terms.mean() - exact) / se)
    return worst < 3.0, f"{n_pairs} pairs x {n_draws} draws, worst deviation {worst:.2f} SE (limit 3)"


def check_kl_quadrature(seed: int = 12, n_draws: int = 100_000, n_grid: int = 401):
    """Volume-preserving flow prior, [1, 2, 1] latent: MC against 2-D quadrature."""
    rng = np.random.default_rng(seed)
    flow = F.build_affine_stack(2, 8, 4, rng=rng, zero_init=False)
    F.randomize(flow, rng, 0.3)
    mq, sq = rng.normal(0, 0.5, size=(1, 2, 1)), rng.uniform(0.6, 1.2, size=(1, 2, 1))
    mp, sp = rng.normal(0, 0.5, size=(1, 2, 1)), rng.uniform(0.6, 1.2, size=(1, 2, 1))

    def batch(n):
        return (L.DiagGaussian(np.tile(mq, (n, 1, 1)), np.tile(sq, (n, 1, 1))),
                L.DiagGaussian(np.tile(mp, (n, 1, 1)), np.tile(sp, (n, 1, 1))))

    with ag.no_grad():
        qb, pb = batch(n_draws)
        mc = float(L.kl_terms(qb.rsample(rng), qb, pb, flow).data.mean())
        half = 9.0
        g0 = np.linspace(mq[0, 0, 0] - half * sq[0, 0, 0], mq[0, 0, 0] + half * sq[0, 0, 0], n_grid)
        g1 = np.linspace(mq[0, 1, 0] - half * sq[0, 1, 0], mq[0, 1, 0] + half * sq[0, 1, 0], n_grid)
        zz = np.stack(np.meshgrid(g0, g1, indexing="ij"), axis=-1).reshape(-1, 2, 1)
        qz, pz = batch(zz.shape[0])
        integrand = L.kl_terms(zz, qz, pz, flow).data
        log_q = np.sum(qz.log_prob(Tensor(zz)).data, axis=(1, 2))
        vals = (np.exp(log_q) * integrand).reshape(n_grid, n_grid)
    quad = float(np.trapezoid(np.trapezoid(vals, g1, axis=1), g0))
    err = abs(mc - quad)
    return err < 1e-2, f"MC {mc:.5f} vs quadrature {quad:.5f}, |diff| {err:.2e} (limit 1e-2)"


def check_gan_optima():
    ones, zeros, half = np.ones((3, 4)), np.zeros((3, 4)), np.full((3, 4), 0.5)
    vals = {
        "adv_loss_d(1, 0)": (L.adv_loss_d(ones, zeros).item(), 0.0),
        "adv_loss_g(1)": (L.adv_loss_g(ones).item(), 0.0),
        "adv_loss_d(0.5, 0.5)": (L.adv_loss_d(half, half).item(), 0.5),
        "fm_loss(identical)": (L.fm_loss([half, ones], [half, ones]).item(), 0.0),
    }
    ok = all(got == want for got, want in vals.values())
    return ok, ", ".join(f"{k}={got!r}" for k, (got, _) in vals.items())


# ------------------------------------------------------------------------ DSP


def check_sine_peak():
    cfg = dsp.StftConfig()
    k = 32
    t = np.arange(22050)
    w = dsp.Waveform(0.5 * np.sin(2 * np.pi * k * cfg.sample_rate / cfg.fft_size * t / cfg.sample_rate))
    spec = dsp.stft_magnitude(w, cfg)
    interior = spec.values[4:-4]
    peaks = np.argmax(interior, axis=1)
    return bool(np.all(peaks == k)), f"peak bins {sorted(set(peaks.tolist()))} over {len(peaks)} interior frames (expected {k})"


def check_zero_mel():
    spec = dsp.mel_spectrogram(dsp.Waveform(np.zeros(4096)))
    ok = bool(np.all(spec.values == np.log(1e-5)))
    return ok, f"all {spec.values.size} values == log(1e-5): {ok}"


def check_bins():
    w = dsp.Waveform(np.random.default_rng(13).uniform(-0.5, 0.5, 22050))
    lin = dsp.stft_magnitude(w)
    mel = dsp.mel_spectrogram(w)
    ok = lin.bins == 513 and mel.bins == 80 and lin.frames == mel.frames == 87
    return ok, f"linear {lin.frames}x{lin.bins}, mel {mel.frames}x{mel.bins} (expected 87x513, 87x80)"


def direct_dft(x: np.ndarray) -> np.ndarray:
    n = x.size
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def check_parseval(seed: int = 14):
    rng = np.random.default_rng(seed)
    cfg = dsp.StftConfig(fft_size=256, window_size=256, hop_size=64)
    w = dsp.Waveform(rng.uniform(-1, 1, 1000))
    spec = dsp.stft_magnitude(w, cfg, eps=0.0)
    frames = dsp.frame_signal(w.samples, cfg) * dsp.hann_window(cfg)
    worst = 0.0
    n = cfg.fft_size
    for i in range(0, spec.frames, 3):
        full = np.abs(direct_dft(frames[i])) ** 2
        mag2 = spec.values[i] ** 2
        energy = mag2[0] + mag2[-1] + 2 * mag2[1:-1].sum()
        worst = max(worst, abs(energy - full.sum()) / full.sum(), abs(full.sum() / n - np.sum(frames[i] ** 2)) / np.sum(frames[i] ** 2))
    return worst < 1e-6, f"max relative energy mismatch {worst:.2e} (limit 1e-6)"


# ------------------------------------------------------------ duration model


def randomize_sdp(model: StochasticDurationPredictor, rng: np.random.Generator, scale: float = 0.3) -> None:
    for stack in (model.flow, model.post_flow):
        for layer in stack.layers:
            if isinstance(layer, F.SplineCoupling):
                layer.proj.weight.data = rng.normal(0, scale, size=layer.proj.weight.shape)
                layer.proj.bias.data = rng.normal(0, scale, size=layer.proj.bias.shape)
            else:
                F.randomize(layer, rng, scale)


def integrated_log_likelihood(model: StochasticDurationPredictor, d: int, cond: np.ndarray,
                              n_u: int = 201, n_nu: int = 801, nu_range: float = 12.0) -> float:
    """log p(d | c) for a single token: trapezoid over u in [0, 1) and nu in [-R, R]."""
    u = np.linspace(0.0, 1.0, n_u)
    u[-1] = np.nextafter(1.0, 0.0)
    nu = np.linspace(-nu_range, nu_range, n_nu)
    uu, vv = np.meshgrid(u, nu, indexing="ij")
    x0 = (d - uu).reshape(-1, 1, 1)
    x1 = vv.reshape(-1, 1, 1)
    dens = np.empty(x0.shape[0])
    with ag.no_grad():
        for s in range(0, x0.shape[0], 20000):
            n = min(20000, x0.shape[0] - s)
            cond_h = model.encode_condition(np.broadcast_to(cond, (n,) + cond.shape[1:]))
            dens[s : s + n] = np.exp(model.augmented_log_likelihood(x0[s : s + n], x1[s : s + n], cond_h).data)
    inner = np.trapezoid(dens.reshape(n_u, n_nu), nu, axis=1)
    return float(np.log(np.trapezoid(inner, u)))


def check_elbo_validity(n_draws: int = 20, n_samples: int = 4000, seed: int = 15):
    rng = np.random.default_rng(seed)
    cfg = SDPConfig(hidden_dim=8, in_channels=4)
    worst_margin = math.inf
    gaps = []
    for i in range(n_draws):
        model = StochasticDurationPredictor(cfg, seed=i)
        randomize_sdp(model, rng)
        d = int(rng.integers(1, 5))
        cond = rng.normal(size=(1, cfg.in_channels, 1))
        logp = integrated_log_likelihood(model, d, cond)
        batch = DurationBatch(np.full((n_samples, 1), d), np.broadcast_to(cond, (n_samples, cfg.in_channels, 1)))
        with ag.no_grad():
            terms = model.elbo_terms(batch, rng).data
        mean, se = terms.mean(), terms.std(ddof=1) / math.sqrt(n_samples)
        worst_margin = min(worst_margin, logp + 3 * se - mean)
        gaps.append(logp - mean)
    return worst_margin >= 0, (f"{n_draws} draws, bound gap log p - ELBO in [{min(gaps):.3f}, {max(gaps):.3f}], "
                               f"min margin (log p + 3SE - ELBO) {worst_margin:.3f}")


def check_stop_gradient(seed: int = 16):
    rng = np.random.default_rng(seed)
    cfg = SDPConfig(hidden_dim=8, in_channels=4)
    model = StochasticDurationPredictor(cfg, seed=seed)
    randomize_sdp(model, rng)
    cond = Tensor(rng.normal(size=(2, cfg.in_channels, 5)), requires_grad=True)
    loss = model.duration_loss(DurationBatch(rng.integers(1, 5, size=(2, 5)), cond), rng)
    ag.backward(loss)
    n_param_grads = sum(p.grad is not None and np.any(p.grad != 0) for p in model.parameters())
    ok = cond.grad is not None and np.all(cond.grad == 0.0) and n_param_grads > 0
    return ok, f"max |dL/dcond| = {np.max(np.abs(cond.grad)):.1e}; {n_param_grads} parameters received gradient"


def run_toy_training(seed: int = 1234, steps: int = 500, n_rows: int = 256, length: int = 16,
                     batch_size: int = 8, config: SDPConfig | None = None, opt: OptimizerState | None = None):
    """Train on durations uniform on {1..4}; returns (model, losses, eval_before, eval_after, rows)."""
    cfg = config or SDPConfig()
    rng = np.random.default_rng(seed)
    rows = synthetic_rows(n_rows, length, cfg.in_channels, rng)
    model = StochasticDurationPredictor(cfg, seed=seed)
    eval_batch = DurationBatch(np.stack([r[0] for r in rows[:64]]), np.stack([r[1].T for r in rows[:64]]))

    def evaluate():
        with ag.no_grad():
            erng = np.random.default_rng(seed + 1)
            return float(np.mean([model.duration_loss(eval_batch, erng).item() for _ in range(8)]))

    before = evaluate()
    losses = train_sdp(model, rows, steps, opt or OptimizerState(), rng, batch_size=batch_size)
    return model, losses, before, evaluate(), rows


def check_toy_training(seed: int = 1234, steps: int = 500, n_samples: int = 10_000):
    t0 = time.perf_counter()
    model, losses, before, after, rows = run_toy_training(seed, steps)
    cfg = model.config
    srng = np.random.default_rng(seed + 2)
    n_tok = len(rows[0][0])
    n_seq = math.ceil(n_samples / n_tok)
    cond = srng.normal(size=(n_seq, cfg.in_channels, n_tok))
    samples = model.sample_durations(cond, cfg.noise_scale, srng).reshape(-1)[:n_samples]
    elapsed = time.perf_counter() - t0
    head, tail = float(np.mean(losses[:25])), float(np.mean(losses[-25:]))
    mean = float(samples.mean())
    ok = after < before and tail < head and abs(mean - 2.5) <= 0.25 and elapsed < 300
    return ok, (f"eval L_dur {before:.2f} -> {after:.2f}, train L_dur {head:.2f} -> {tail:.2f}; "
                f"sample mean {mean:.3f} over {samples.size} (target 2.5 +/- 0.25); {elapsed:.0f}s (limit 300s)")


# ------------------------------------------------------------------- suites


def check_stop_gradient_contract(trials: int = 100, seed: int = 17):
    """sum(stop_gradient(x) * w): grad(w) == x and grad(x) == 0, exactly."""
    rng = np.random.default_rng(seed)
    for _ in range(trials):
        shape = _shape(rng)
        x = Tensor(rng.normal(size=shape), requires_grad=True)
        w = Tensor(rng.normal(size=shape), requires_grad=True)
        sg = ag.stop_gradient(ag.stop_gradient(x)) if rng.random() < 0.5 else ag.stop_gradient(x)
        ag.backward(ag.sum_(sg * w))
        if not (np.array_equal(sg.data, x.data) and np.array_equal(w.grad, x.data) and np.all(x.grad == 0)):
            return False, "stop_gradient leaked a gradient or changed values"
    return True, f"{trials} trials, values preserved and zero gradient into the argument"


def _grad_suite():
    checks = [(f"grad_{name}", (lambda n=name: check_primitive_grad(n))) for name in GRAD_CASES]
    return checks + [("stop_gradient_contract", check_stop_gradient_contract)]


def _loss_grad_checks():
    return [(f"grad_{name}", (lambda n=name: check_loss_grad(n))) for name in LOSS_CASES]


SUITES: dict[str, Callable[[], list[tuple[str, Callable]]]] = {
    "mas": lambda: [
        ("oracle_equivalence", check_mas_oracle),
        ("structural_invariants", check_mas_structure),
        ("shift_invariance", check_mas_shift_invariance),
    ],
    "flows": lambda: [
        ("spline_roundtrip", check_spline_roundtrip),
        ("affine_roundtrip", check_affine_roundtrip),
        ("spline_logdet_fd", check_spline_logdet),
        ("stack_roundtrip_jacobian", check_stack),
        ("spline_29_channel", check_29_channel),
        ("density_normalizes", check_density_normalizes),
    ],
    "grad": _grad_suite,
    "losses": lambda: _loss_grad_checks() + [
        ("kl_monte_carlo", check_kl_monte_carlo),
        ("kl_quadrature_flow", check_kl_quadrature),
        ("gan_optima", check_gan_optima),
    ],
    "dsp": lambda: [
        ("sine_peak_bin", check_sine_peak),
        ("zero_signal_mel", check_zero_mel),
        ("bin_counts", check_bins),
        ("parseval", check_parseval),
    ],
    "sdp": lambda: [
        ("stop_gradient", check_stop_gradient),
        ("elbo_validity", check_elbo_validity),
        ("toy_training", check_toy_training),
    ],
}

SUITE_NAMES = ("all",) + tuple(SUITES)


def run_check(suite: str, name: str, fn: Callable) -> CheckResult:
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # a crashing check is a failed check
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    return CheckResult(suite, name, bool(ok), detail, time.perf_counter() - t0)


def run_suites(name: str = "all", echo: Callable[[str], None] | None = print) -> list[CheckResult]:
    if name not in SUITE_NAMES:
        raise KeyError(f"unknown suite {name!r}; choose from {', '.join(SUITE_NAMES)}")
    results = []
    for suite in SUITES if name == "all" else (name,):
        for check_name, fn in SUITES[suite]():
            res = run_check(suite, check_name, fn)
            if echo:
                echo(res.line())
            results.append(res)
    return results
