"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def numerical_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], index: int,
                   step: float = 1e-5) -> np.ndarray:
    """d fn / d arrays[index] by central differences; ``fn`` returns a scalar Tensor."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    out = np.zeros_like(base[index])
    flat = base[index].reshape(-1)
    grad = out.reshape(-1)
    with ag.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn(*[Tensor(a) for a in base]).item()
            flat[i] = orig - step
            fm = fn(*[Tensor(a) for a in base]).item()
            flat[i] = orig
            grad[i] = (fp - fm) / (2 * step)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n|| / max(||a||, ||n||), or the absolute error when both are below ``floor``."""
    diff = float(np.linalg.norm(np.ravel(analytic) - np.ravel(numeric)))
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)))
    return diff if scale < floor else diff / scale


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                    step: float = 1e-5) -> float:
    """Largest relative error between backward and finite differences over all inputs."""
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    ag.backward(fn(*tensors))
    worst = 0.0
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        worst = max(worst, relative_error(analytic, numerical_grad(fn, arrays, i, step)))
    return worst
