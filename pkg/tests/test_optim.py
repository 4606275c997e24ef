import math

import numpy as np
import pytest

from vitscore.autograd import Tensor
from vitscore.config import Config
from vitscore.optim import OptimizerState, adamw_step


def reference_adamw(p, g, steps, lr, b1, b2, wd, eps):
    """Scalar AdamW written out longhand."""
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        p = p - lr * wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p = p - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(p)
    return out


def test_defaults():
    s = OptimizerState()
    assert (s.learning_rate, s.beta1, s.beta2, s.weight_decay) == (2e-4, 0.8, 0.99, 0.01)
    assert s.lr_decay_per_epoch == 0.999 ** (1 / 8)
    o = Config().optim
    assert (o.learning_rate, o.beta1, o.beta2, o.weight_decay) == (2e-4, 0.8, 0.99, 0.01)


@pytest.mark.parametrize("g", [0.37, -2.5])
def test_three_steps_match_scalar_reference(g):
    state = OptimizerState(learning_rate=0.05)
    p = Tensor([1.3], requires_grad=True)
    ref = reference_adamw(1.3, g, 3, 0.05, 0.8, 0.99, 0.01, 1e-9)
    for want in ref:
        p.grad = np.array([g])
        adamw_step({"p": p}, state)
        assert abs(p.data[0] - want) < 1e-12


def test_zero_grad_zero_decay_is_fixed_point():
    state = OptimizerState(weight_decay=0.0)
    p = Tensor([0.7, -1.1], requires_grad=True)
    for _ in range(5):
        p.grad = np.zeros(2)
        adamw_step({"p": p}, state)
    np.testing.assert_array_equal(p.data, [0.7, -1.1])


def test_missing_grad_rejected():
    with pytest.raises(ValueError, match="'w'"):
        adamw_step({"w": Tensor([1.0], requires_grad=True)}, OptimizerState())


def test_epoch_decay():
    s = OptimizerState()
    for _ in range(8):
        s.end_epoch()
    assert s.learning_rate == pytest.approx(2e-4 * 0.999, rel=1e-12)


@pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"beta1": 1.0}, {"beta2": 0.0}, {"weight_decay": -1}])
def test_invalid_constants(kw):
    with pytest.raises(ValueError):
        OptimizerState(**kw)
