import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subtrack.moments import (
    LowRankMoments,
    plain_update,
    projection_aware_update,
    regularized_direction,
    zero_moments,
)
from subtrack.subspace import SubspaceBasis

from .conftest import random_orthonormal

B1, B2 = 0.9, 0.99


def rotated_second_moment_loop(Q, M, V):
    """Scalar expansion sum_j Q_ij^2 (V_jk - M_jk^2) + (sum_j Q_ij M_jk)^2."""
    r, n = M.shape
    out = np.zeros((Q.shape[0], n))
    for i in range(Q.shape[0]):
        for k in range(n):
            var = sum(Q[i, j] ** 2 * (V[j, k] - M[j, k] ** 2) for j in range(r))
            mean = sum(Q[i, j] * M[j, k] for j in range(r))
            out[i, k] = var + mean**2
    return out


def test_plain_cold_start(rng):
    C = rng.normal(size=(2, 3))
    out = plain_update(zero_moments(2, 3), C, B1, B2)
    np.testing.assert_allclose(out.M, (1 - B1) * C)
    np.testing.assert_allclose(out.V, (1 - B2) * C**2)
    assert out.t == 1


def test_plain_zero_gradient_decays(rng):
    st0 = LowRankMoments(M=rng.normal(size=(2, 2)), V=rng.random((2, 2)), t=3)
    out = plain_update(st0, np.zeros((2, 2)), B1, B2)
    np.testing.assert_array_equal(out.M, B1 * st0.M)
    np.testing.assert_array_equal(out.V, B2 * st0.V)


def test_plain_constant_gradient_closed_form(rng):
    C = rng.normal(size=(3, 2))
    state = zero_moments(3, 2)
    for _ in range(25):
        state = plain_update(state, C, B1, B2)
    np.testing.assert_allclose(state.M, (1 - B1**25) * C, rtol=1e-12)
    np.testing.assert_allclose(state.V, (1 - B2**25) * C**2, rtol=1e-12)


def test_plain_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        plain_update(zero_moments(2, 3), np.zeros((3, 2)), B1, B2)


def test_pao_identity_rotation(rng):
    S = SubspaceBasis(B=random_orthonormal(rng, 5, 2))
    st0 = LowRankMoments(M=rng.normal(size=(2, 4)), V=rng.random((2, 4)) + 1.0, t=4)
    Gt = rng.normal(size=(2, 4))
    out = projection_aware_update(st0, S, S, Gt, B1, B2)
    # S^T S is only the identity up to rounding for a random basis.
    ref_M = plain_update(st0, Gt, B1, B2).M
    np.testing.assert_allclose(out.M, ref_M, rtol=1e-12)
    np.testing.assert_allclose(out.V, B2 * ((1 - B2**4) * st0.V) + (1 - B2) * Gt**2, rtol=1e-12)


def test_pao_exact_identity_reduction(rng):
    I = SubspaceBasis(B=np.eye(3))
    st0 = LowRankMoments(M=rng.normal(size=(3, 4)), V=rng.random((3, 4)), t=6)
    Gt = rng.normal(size=(3, 4))
    out = projection_aware_update(st0, I, I, Gt, B1, B2)
    np.testing.assert_array_equal(out.M, B1 * st0.M + (1 - B1) * Gt)
    np.testing.assert_array_equal(out.V, B2 * ((1 - B2 ** (7 - 1)) * st0.V) + (1 - B2) * Gt**2)


def test_pao_cold_start_matches_plain(rng):
    S_old = SubspaceBasis(B=random_orthonormal(rng, 6, 3))
    S_new = SubspaceBasis(B=random_orthonormal(rng, 6, 3))
    Gt = rng.normal(size=(3, 2))
    out = projection_aware_update(zero_moments(3, 2), S_new, S_old, Gt, B1, B2)
    ref = plain_update(zero_moments(3, 2), Gt, B1, B2)
    np.testing.assert_array_equal(out.M, ref.M)
    np.testing.assert_array_equal(out.V, ref.V)


def test_pao_hand_case_row_swap():
    S_old = SubspaceBasis(B=np.eye(2))
    S_new = SubspaceBasis(B=np.array([[0.0, 1.0], [1.0, 0.0]]))
    st0 = LowRankMoments(M=np.array([[1.0], [2.0]]), V=np.array([[4.0], [9.0]]), t=1)
    out = projection_aware_update(st0, S_new, S_old, np.zeros((2, 1)), 0.9, 0.99)
    np.testing.assert_allclose(out.M, 0.9 * np.array([[2.0], [1.0]]))
    # Hand expansion: Q^2 (V - M^2) = [5, 3], (Q M)^2 = [4, 1], factor 1 - 0.99^1.
    np.testing.assert_allclose(out.V, 0.99 * 0.01 * np.array([[9.0], [4.0]]), rtol=1e-14)


@pytest.mark.parametrize("mode", ["abs", "clip"])
def test_pao_matches_scalar_expansion(rng, mode):
    S_old = SubspaceBasis(B=random_orthonormal(rng, 7, 3))
    S_new = SubspaceBasis(B=random_orthonormal(rng, 7, 3))
    M = rng.normal(size=(3, 4))
    V = rng.random((3, 4)) * 0.5
    Gt = rng.normal(size=(3, 4))
    out = projection_aware_update(LowRankMoments(M, V, 9), S_new, S_old, Gt, B1, B2, mode)
    inner = rotated_second_moment_loop(S_new.B.T @ S_old.B, M, V)
    h = np.abs(inner) if mode == "abs" else np.maximum(inner, 0)
    np.testing.assert_allclose(out.V, B2 * (1 - B2**9) * h + (1 - B2) * Gt**2, rtol=1e-12, atol=1e-15)


def test_pao_modes_differ_on_negative_variance():
    # V < M^2 forces a negative rotated variance: abs flips it, clip zeroes it.
    S_old = SubspaceBasis(B=np.eye(2))
    c = np.sqrt(0.5)
    S_new = SubspaceBasis(B=np.array([[c, -c], [c, c]]))
    st0 = LowRankMoments(M=np.array([[1.0], [-1.0]]), V=np.zeros((2, 1)), t=3)
    a = projection_aware_update(st0, S_new, S_old, np.zeros((2, 1)), B1, B2, "abs")
    k = projection_aware_update(st0, S_new, S_old, np.zeros((2, 1)), B1, B2, "clip")
    assert np.all(a.V >= 0) and np.all(k.V >= 0)
    assert np.any(a.V > k.V)


def test_pao_rejects_bad_step_and_mode(rng):
    S = SubspaceBasis(B=np.eye(2))
    with pytest.raises(ValueError, match="step"):
        projection_aware_update(zero_moments(2, 1), S, S, np.zeros((2, 1)), B1, B2, t=0)
    with pytest.raises(ValueError, match="variance_mode"):
        projection_aware_update(zero_moments(2, 1), S, S, np.zeros((2, 1)), B1, B2, "sqrt")
    with pytest.raises(ValueError, match="shape"):
        projection_aware_update(zero_moments(2, 1), S, S, np.zeros((2, 2)), B1, B2)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mode=st.sampled_from(["abs", "clip"]))
def test_variance_stays_nonnegative(seed, mode):
    rng = np.random.default_rng(seed)
    m, r, n = 6, 3, 4
    S = SubspaceBasis(B=random_orthonormal(rng, m, r))
    state = zero_moments(r, n)
    for step in range(30):
        Gt = rng.normal(size=(r, n)) * rng.choice([1e-3, 1.0, 1e3])
        if step % 3 == 0:
            S_new = SubspaceBasis(B=random_orthonormal(rng, m, r))
            state = projection_aware_update(state, S_new, S, Gt, B1, B2, mode)
            S = S_new
        else:
            state = plain_update(state, Gt, B1, B2)
        assert np.all(state.V >= 0)


def test_first_moment_bounded_by_gradients(rng):
    m, r, n = 8, 3, 5
    S = SubspaceBasis(B=random_orthonormal(rng, m, r))
    state = zero_moments(r, n)
    biggest = 0.0
    for step in range(40):
        Gt = rng.normal(size=(r, n))
        biggest = max(biggest, np.linalg.norm(Gt))
        S_new = SubspaceBasis(B=random_orthonormal(rng, m, r))
        state = projection_aware_update(state, S_new, S, Gt, B1, B2)
        S = S_new
        assert np.linalg.norm(state.M) <= biggest * (1 + 1e-8)


def test_regularized_direction_cases(rng):
    C = rng.normal(size=(2, 3))
    assert not np.any(regularized_direction(LowRankMoments(np.zeros((2, 3)), np.ones((2, 3))), 1e-8))
    np.testing.assert_allclose(regularized_direction(LowRankMoments(C, np.zeros((2, 3))), 1e-8), C / 1e-4)
    c = 4.0
    out = regularized_direction(LowRankMoments(np.full((2, 2), c), np.full((2, 2), c)), 1e-12)
    np.testing.assert_allclose(out, np.sqrt(c), rtol=1e-10)


def test_regularized_direction_is_odd(rng):
    M = rng.normal(size=(3, 3))
    V = rng.random((3, 3))
    pos = regularized_direction(LowRankMoments(M, V), 1e-8)
    neg = regularized_direction(LowRankMoments(-M, V), 1e-8)
    np.testing.assert_array_equal(neg, -pos)
    with pytest.raises(ValueError):
        regularized_direction(LowRankMoments(M, V), 0.0)
