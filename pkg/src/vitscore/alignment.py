"""Monotonic alignment search over a token-by-frame log-likelihood matrix."""

from __future__ import annotations

import itertools
import math

import numpy as np

NEG_SENTINEL = -1e30
BRUTEFORCE_MAX_TX = 8
BRUTEFORCE_MAX_TY = 12


class AlignmentError(ValueError):
    pass


def _as_value(value) -> np.ndarray:
    v = np.array(value, dtype=np.float64)
    if v.ndim != 2:
        raise AlignmentError(f"likelihood matrix must be 2-D, got shape {v.shape}")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise AlignmentError("likelihood matrix contains NaN or +inf")
    v[v == -np.inf] = NEG_SENTINEL
    t_x, t_y = v.shape
    if t_x < 1:
        raise AlignmentError("likelihood matrix has no rows")
    if t_y < t_x:
        raise AlignmentError(f"no monotonic surjective path: t_y={t_y} < t_x={t_x}")
    return v


def build_likelihood_matrix(z, mu, sigma) -> np.ndarray:
    """value[i, j] = sum_c log N(z[j, c]; mu[i, c], sigma[i, c]).

    Args:
        z: flowed latents, [t_y, C].
        mu, sigma: prior parameters per token, [t_x, C].
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if mu.shape != sigma.shape or z.shape[1] != mu.shape[1]:
        raise AlignmentError(f"shape mismatch: z {z.shape}, mu {mu.shape}, sigma {sigma.shape}")
    if np.any(sigma <= 0):
        raise AlignmentError("sigma must be strictly positive")
    inv_var = 1.0 / (sigma * sigma)
    const = np.sum(-0.5 * math.log(2 * math.pi) - np.log(sigma), axis=1)  # [t_x]
    # expand the quadratic to get a [t_x, t_y] matrix without a 3-D temporary
    quad = (
        (z * z) @ (-0.5 * inv_var).T
        + z @ (mu * inv_var).T
        - 0.5 * np.sum(mu * mu * inv_var, axis=1)[None, :]
    )
    return const[:, None] + quad.T


def mas(value) -> np.ndarray:
    """Most likely monotonic, non-skipping alignment as a 0/1 [t_x, t_y] matrix.

    Ties during backtracking keep the current row.
    """
    v = _as_value(value)
    t_x, t_y = v.shape
    q = np.full((t_x, t_y), -np.inf)
    for y in range(t_y):
        for x in range(max(0, t_x + y - t_y), min(t_x, y + 1)):
            if y == 0:
                q[x, 0] = v[x, 0]
                continue
            v_prev = -np.inf if x == 0 else q[x - 1, y - 1]
            q[x, y] = v[x, y] + max(v_prev, q[x, y - 1])
    path = np.zeros((t_x, t_y), dtype=np.int64)
    index = t_x - 1
    for y in range(t_y - 1, -1, -1):
        path[index, y] = 1
        if index != 0 and (index == y or q[index, y - 1] < q[index - 1, y - 1]):
            index -= 1
    return path


def path_rows(path) -> tuple[int, ...]:
    """Row index chosen in each column."""
    return tuple(int(r) for r in np.argmax(np.asarray(path), axis=0))


def rows_to_path(rows, t_x: int) -> np.ndarray:
    path = np.zeros((t_x, len(rows)), dtype=np.int64)
    path[list(rows), range(len(rows))] = 1
    return path


def path_score(value, path) -> float:
    """Sum of selected entries, accumulated column by column."""
    v = np.asarray(value, dtype=np.float64)
    total = 0.0
    for y, x in enumerate(path_rows(path)):
        total += v[x, y]
    return total


def is_valid_path(path) -> bool:
    p = np.asarray(path)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < p.shape[0]:
        return False
    if not np.all((p == 0) | (p == 1)) or not np.all(p.sum(axis=0) == 1):
        return False
    rows = np.argmax(p, axis=0)
    steps = np.diff(rows)
    return rows[0] == 0 and rows[-1] == p.shape[0] - 1 and bool(np.all((steps == 0) | (steps == 1)))


def check_path(path) -> None:
    if not is_valid_path(path):
        raise AlignmentError("path is not a monotonic, non-skipping, surjective alignment")


def enumerate_paths(t_x: int, t_y: int):
    """Yield every valid row assignment; there are C(t_y - 1, t_x - 1) of them."""
    for cuts in itertools.combinations(range(1, t_y), t_x - 1):
        rows = []
        bounds = (0,) + cuts + (t_y,)
        for i in range(t_x):
            rows.extend([i] * (bounds[i + 1] - bounds[i]))
        yield tuple(rows)


def mas_bruteforce(value, tol: float = 1e-9) -> tuple[float, set[tuple[int, ...]]]:
    """Exhaustive search over all valid paths.

    Returns:
        The best score and the set of row assignments (see :func:`path_rows`)
        scoring within ``tol`` of it.
    """
    v = _as_value(value)
    t_x, t_y = v.shape
    if t_x > BRUTEFORCE_MAX_TX or t_y > BRUTEFORCE_MAX_TY:
        raise AlignmentError(
            f"instance {t_x}x{t_y} too large for brute force (limit {BRUTEFORCE_MAX_TX}x{BRUTEFORCE_MAX_TY})"
        )
    scored = []
    for rows in enumerate_paths(t_x, t_y):
        total = 0.0
        for y, x in enumerate(rows):
            total += v[x, y]
        scored.append((total, rows))
    best = max(s for s, _ in scored)
    return best, {rows for s, rows in scored if s >= best - tol}


def durations_from_path(path) -> np.ndarray:
    check_path(path)
    return np.asarray(path).sum(axis=1).astype(np.int64)
