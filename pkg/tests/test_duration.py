import math

import numpy as np
import pytest
from scipy import integrate, special

from vitscore import autograd as ag
from vitscore import flows as F
from vitscore.autograd import Tensor
from vitscore.duration import (DurationBatch, SDPConfig, StochasticDurationPredictor, read_duration_jsonl,
                               synthetic_rows, train_sdp, write_duration_jsonl)
from vitscore.optim import OptimizerState
from vitscore.verify import _jacobian_logdet, randomize_sdp

SMALL = SDPConfig(in_channels=3, hidden_dim=8)
LOG_2PI = math.log(2 * math.pi)


def log_normal(x):
    return -0.5 * (x * x + LOG_2PI)


def softplus(x):
    return np.logaddexp(0.0, x)


@pytest.fixture
def model():
    return StochasticDurationPredictor(SMALL, seed=0)


def random_batch(rng, b=4, t=5, c=3):
    return DurationBatch(rng.integers(1, 5, size=(b, t)), rng.normal(size=(b, c, t)))


def test_posterior_u_range_and_finite_log_q(model, rng):
    randomize_sdp(model, rng)
    d = rng.integers(1, 5, size=(100, 100))
    cond_h = model.encode_condition(rng.normal(size=(100, 3, 100)))
    with ag.no_grad():
        s = model.posterior_sample(d, cond_h, rng)
    assert s.u.shape == (100, 1, 100)
    assert np.all(s.u.data >= 0) and np.all(s.u.data < 1)
    assert np.all(np.isfinite(s.log_q.data))


def test_identity_posterior_log_q_closed_form(model, rng):
    d = rng.integers(1, 5, size=(6, 7))
    eps = rng.normal(size=(6, 2, 7))
    with ag.no_grad():
        s = model.posterior_sample(d, model.encode_condition(rng.normal(size=(6, 3, 7))), rng, noise=eps)
    want = log_normal(eps).sum(axis=(1, 2)) + (softplus(eps[:, 0]) + softplus(-eps[:, 0])).sum(axis=1)
    np.testing.assert_allclose(s.log_q.data, want, rtol=0, atol=1e-10)
    np.testing.assert_allclose(s.u.data[:, 0], special.expit(eps[:, 0]), atol=1e-15)
    np.testing.assert_allclose(s.nu.data, eps[:, 1:], atol=1e-12)


def test_identity_flow_likelihood_is_standard_normal(model, rng):
    x0 = rng.uniform(0.1, 4, size=(3, 1, 5))
    nu = rng.normal(size=(3, 1, 5))
    cond_h = model.encode_condition(rng.normal(size=(3, 3, 5)))
    got = model.augmented_log_likelihood(x0, nu, cond_h).data
    np.testing.assert_allclose(got, (log_normal(x0) + log_normal(nu)).sum(axis=(1, 2)), atol=1e-12)


def test_dead_conditioning(model, rng):
    randomize_sdp(model, rng)
    for p in model.text_encoder.parameters():
        p.data[:] = 0.0
    x0, nu = rng.uniform(0.1, 4, size=(2, 1, 4)), rng.normal(size=(2, 1, 4))
    a = model.augmented_log_likelihood(x0, nu, model.encode_condition(rng.normal(size=(2, 3, 4)))).data
    b = model.augmented_log_likelihood(x0, nu, model.encode_condition(rng.normal(size=(2, 3, 4)))).data
    np.testing.assert_array_equal(a, b)


def test_one_layer_change_of_variables(rng):
    m = StochasticDurationPredictor(SDPConfig(in_channels=3, hidden_dim=8, n_coupling_layers=1), seed=1)
    randomize_sdp(m, rng)
    cond_h = m.encode_condition(rng.normal(size=(1, 3, 1)))
    for _ in range(10):
        x = np.array([rng.uniform(0.2, 3.5), rng.normal()])

        def fwd(v):
            return F.flow_stack_apply(Tensor(v.reshape(1, 2, 1)), m.flow, g=cond_h)[0].data.ravel()

        with ag.no_grad():
            want = log_normal(fwd(x)).sum() + _jacobian_logdet(fwd, x)
            got = m.augmented_log_likelihood(x[:1].reshape(1, 1), x[1:].reshape(1, 1), cond_h).item()
        assert abs(got - want) < 1e-5


def test_identity_flows_expected_loss(model):
    """E[L_dur] for frozen identity flows against 1-D quadrature over the u noise."""
    rng = np.random.default_rng(7)
    n = 100_000
    d = rng.integers(1, 5, size=(n, 1))
    with ag.no_grad():
        terms = -model.elbo_terms(DurationBatch(d, np.zeros((n, 3, 1))), rng).data

    def expected(dv):
        def integrand(e):
            inner = log_normal(dv - special.expit(e)) - softplus(e) - softplus(-e)
            return math.exp(log_normal(e)) * inner
        val, _ = integrate.quad(integrand, -np.inf, np.inf, epsabs=1e-12)
        return -(val - (-0.5 * LOG_2PI - 0.5))

    oracle = sum(expected(v) * np.mean(d[:, 0] == v) for v in range(1, 5))
    se = terms.std(ddof=1) / math.sqrt(n)
    assert abs(terms.mean() - oracle) < 3 * se


def test_stop_gradient_on_condition(model, rng):
    randomize_sdp(model, rng)
    cond = Tensor(rng.normal(size=(2, 3, 5)), requires_grad=True)
    loss = model.duration_loss(DurationBatch(rng.integers(1, 5, size=(2, 5)), cond), rng)
    assert np.isfinite(loss.item())
    ag.backward(loss)
    assert np.all(cond.grad == 0.0)
    assert any(np.any(p.grad != 0) for p in model.parameters())


def test_loss_finite_at_init(model, rng):
    for _ in range(5):
        assert np.isfinite(model.duration_loss(random_batch(rng), rng).item())


def test_sampling_zero_noise_deterministic(model, rng):
    randomize_sdp(model, rng)
    cond = rng.normal(size=(3, 3, 6))
    a = model.sample_durations(cond, 0.0, np.random.default_rng(1))
    b = model.sample_durations(cond, 0.0, np.random.default_rng(2))
    np.testing.assert_array_equal(a, b)
    s = model.sample_durations(cond, 1.5, rng)
    assert s.dtype == np.int64 and np.all(s >= 1)


def test_log_duration_mode(rng):
    m = StochasticDurationPredictor(SDPConfig(in_channels=3, hidden_dim=8, log_durations=True), seed=0)
    assert np.isfinite(m.duration_loss(random_batch(rng), rng).item())
    assert np.all(m.sample_durations(rng.normal(size=(2, 3, 4)), 0.8, rng) >= 1)


def test_batch_validation():
    with pytest.raises(ValueError):
        DurationBatch([[0, 1]], np.zeros((1, 3, 2)))
    with pytest.raises(ValueError):
        DurationBatch([[1, 2]], np.zeros((1, 3, 3)))
    with pytest.raises(ValueError):
        DurationBatch([[1.5, 2]], np.zeros((1, 3, 2)))


def test_training_deterministic_and_decreasing():
    def run():
        rng = np.random.default_rng(3)
        rows = synthetic_rows(32, 6, 3, rng)
        m = StochasticDurationPredictor(SMALL, seed=3)
        return train_sdp(m, rows, 60, OptimizerState(learning_rate=1e-2), rng)

    a, b = run(), run()
    assert a == b
    assert np.mean(a[-10:]) < np.mean(a[:10])


def test_jsonl_roundtrip(tmp_path, rng):
    rows = synthetic_rows(5, 4, 3, rng)
    write_duration_jsonl(tmp_path / "d.jsonl", rows)
    back = read_duration_jsonl(tmp_path / "d.jsonl")
    for (d0, c0), (d1, c1) in zip(rows, back):
        np.testing.assert_array_equal(d0, d1)
        np.testing.assert_array_equal(c0, c1)


@pytest.mark.parametrize("bad", [
    "not json",
    '{"durations": [1, 2]}',
    '{"durations": [1, 0], "condition": [[1], [2]]}',
    '{"durations": [1.5, 2], "condition": [[1], [2]]}',
    '{"durations": [1, 2], "condition": [[1]]}',
    '{"durations": [1], "condition": [[1, 2]]}',
])
def test_jsonl_rejects_malformed_with_line_number(tmp_path, bad):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"durations": [1], "condition": [[0.5]]}\n' + bad + "\n")
    with pytest.raises(ValueError, match=r"bad\.jsonl:2:"):
        read_duration_jsonl(path)


def test_jsonl_empty(tmp_path):
    (tmp_path / "e.jsonl").write_text("\n")
    with pytest.raises(ValueError, match="no data rows"):
        read_duration_jsonl(tmp_path / "e.jsonl")
