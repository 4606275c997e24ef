import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitscore import alignment as al
from vitscore.alignment import AlignmentError


def test_likelihood_zero_residual():
    v = al.build_likelihood_matrix([[0.3]], [[0.3]], [[1.0]])
    assert v[0, 0] == pytest.approx(-0.9189385332046727, abs=1e-15)


def test_likelihood_unit_residual():
    v = al.build_likelihood_matrix([[1.0]], [[0.0]], [[1.0]])
    assert v[0, 0] == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5, abs=1e-15)


def test_likelihood_matches_direct_sum(rng):
    t_x, t_y, c = 3, 4, 2
    z = rng.normal(size=(t_y, c))
    mu = rng.normal(size=(t_x, c))
    sigma = rng.uniform(0.5, 2.0, size=(t_x, c))
    got = al.build_likelihood_matrix(z, mu, sigma)
    assert got.shape == (t_x, t_y)
    for i in range(t_x):
        for j in range(t_y):
            ref = 0.0
            for k in range(c):
                r = (z[j, k] - mu[i, k]) / sigma[i, k]
                ref += -0.5 * math.log(2 * math.pi) - math.log(sigma[i, k]) - 0.5 * r * r
            assert abs(got[i, j] - ref) < 1e-12


def test_likelihood_rejects_bad_sigma():
    with pytest.raises(AlignmentError):
        al.build_likelihood_matrix([[0.0]], [[0.0]], [[0.0]])


def test_one_by_one():
    np.testing.assert_array_equal(al.mas([[-3.0]]), [[1]])


def test_dominant_diagonal():
    np.testing.assert_array_equal(al.mas(10 * np.eye(3)), np.eye(3, dtype=int))


def test_two_by_three_example():
    v = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    path = al.mas(v)
    assert al.path_rows(path) == (0, 1, 1)
    assert al.path_score(v, path) == 2.0
    scores = {rows: al.path_score(v, al.rows_to_path(rows, 2)) for rows in al.enumerate_paths(2, 3)}
    assert scores == {(0, 1, 1): 2.0, (0, 0, 1): 1.0}
    np.testing.assert_array_equal(al.durations_from_path(path), [1, 2])


def test_path_count_is_binomial():
    assert len(list(al.enumerate_paths(2, 3))) == 2
    assert list(al.enumerate_paths(4, 4)) == [(0, 1, 2, 3)]
    for t_x, t_y in [(1, 5), (3, 7), (5, 9)]:
        assert len(list(al.enumerate_paths(t_x, t_y))) == math.comb(t_y - 1, t_x - 1)


def test_ties_stay_on_current_row():
    # both paths score 0; backtracking from the last column keeps the current row
    assert al.path_rows(al.mas(np.zeros((2, 3)))) == (0, 1, 1)


def test_bruteforce_4x7_equivalence():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        v = rng.normal(size=(4, 7))
        path = al.mas(v)
        best, paths = al.mas_bruteforce(v)
        assert abs(al.path_score(v, path) - best) <= 1e-9
        assert al.path_rows(path) in paths


def test_neg_inf_sentinel():
    v = np.array([[0.0, -np.inf, -np.inf], [-np.inf, 0.0, 0.0]])
    assert al.path_rows(al.mas(v)) == (0, 1, 1)


@pytest.mark.parametrize("value", [np.zeros((3, 2)), np.array([[np.nan]]), np.zeros(3)])
def test_invalid_inputs(value):
    with pytest.raises(AlignmentError):
        al.mas(value)


def test_too_short_message():
    with pytest.raises(AlignmentError, match="no monotonic surjective path"):
        al.mas(np.zeros((3, 2)))


def test_diagonal_durations():
    np.testing.assert_array_equal(al.durations_from_path(np.eye(4, dtype=int)), [1, 1, 1, 1])


def test_invalid_path_rejected():
    with pytest.raises(AlignmentError):
        al.durations_from_path([[1, 0, 1], [0, 1, 0]])
    assert not al.is_valid_path([[1, 0, 0], [0, 0, 1], [0, 1, 0]])
    assert not al.is_valid_path([[1, 1, 0], [0, 0, 0], [0, 0, 1]])


dims = st.integers(1, 6).flatmap(lambda t_x: st.tuples(st.just(t_x), st.integers(t_x, 10)))


@settings(max_examples=200, deadline=None)
@given(dims=dims, seed=st.integers(0, 2**32 - 1), shift=st.floats(-50, 50))
def test_mas_properties(dims, seed, shift):
    t_x, t_y = dims
    v = np.random.default_rng(seed).normal(size=(t_x, t_y))
    path = al.mas(v)
    assert al.is_valid_path(path)
    assert al.durations_from_path(path).sum() == t_y
    np.testing.assert_array_equal(al.mas(v), path)
    np.testing.assert_array_equal(al.mas(v + shift), path)
    best, paths = al.mas_bruteforce(v)
    assert abs(al.path_score(v, path) - best) <= 1e-9
    assert al.path_rows(path) in paths
