import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subtrack.recovery import RecoveryState, apply_limiter, correction_term, scaling_factors
from subtrack.subspace import SubspaceBasis

from .conftest import random_orthonormal


def test_phi_identity(rng):
    G = rng.normal(size=(3, 5))
    np.testing.assert_allclose(scaling_factors(G, G), np.ones(5))


def test_phi_zero_column_guard(rng):
    G = rng.normal(size=(2, 4))
    G[:, 2] = 0.0
    phi = scaling_factors(G, rng.normal(size=(2, 4)))
    assert phi[2] == 0.0


def test_phi_padded_identity():
    low = np.zeros((2, 4))
    low[:, :2] = np.eye(2)
    phi = scaling_factors(low, 3 * low)
    np.testing.assert_allclose(phi, [3.0, 3.0, 0.0, 0.0])


def test_phi_shape_mismatch():
    with pytest.raises(ValueError):
        scaling_factors(np.zeros((2, 3)), np.zeros((3, 2)))


def test_correction_zero_cases(rng):
    S = SubspaceBasis(B=random_orthonormal(rng, 5, 2))
    G = S.B @ rng.normal(size=(2, 4))
    low = S.B.T @ G
    assert np.linalg.norm(correction_term(G, S, low, np.ones(4))) <= 1e-12
    G = rng.normal(size=(5, 4))
    assert not np.any(correction_term(G, S, S.B.T @ G, np.zeros(4)))


def test_correction_is_orthogonal_to_basis(rng):
    S = SubspaceBasis(B=random_orthonormal(rng, 9, 3))
    G = rng.normal(size=(9, 6))
    Lam = correction_term(G, S, S.B.T @ G, rng.random(6) * 5)
    assert np.linalg.norm(S.B.T @ Lam) <= 1e-9 * np.linalg.norm(Lam)


def test_correction_columns_scaled(rng):
    S = SubspaceBasis(B=random_orthonormal(rng, 4, 1))
    G = rng.normal(size=(4, 3))
    phi = np.array([1.0, 2.0, 0.5])
    resid = G - S.B @ (S.B.T @ G)
    np.testing.assert_allclose(correction_term(G, S, S.B.T @ G, phi), resid * phi)


def test_limiter_under_threshold(rng):
    Lam = rng.normal(size=(3, 3))
    out, state = apply_limiter(Lam, RecoveryState(np.linalg.norm(Lam)), 1.01)
    np.testing.assert_array_equal(out, Lam)
    assert state.prev_lambda_norm == pytest.approx(np.linalg.norm(Lam))


def test_limiter_clamps_growth(rng):
    Lam = rng.normal(size=(4, 2))
    Lam *= 10 / np.linalg.norm(Lam)
    out, state = apply_limiter(Lam, RecoveryState(1.0), 1.01)
    assert np.linalg.norm(out) == pytest.approx(1.01)
    np.testing.assert_allclose(out / np.linalg.norm(out), Lam / 10)
    assert state.prev_lambda_norm == pytest.approx(1.01)


def test_limiter_first_step(rng):
    Lam = rng.normal(size=(2, 2))
    out, state = apply_limiter(Lam, RecoveryState(), 1.01)
    np.testing.assert_array_equal(out, Lam)
    assert state.prev_lambda_norm == pytest.approx(np.linalg.norm(Lam))


def test_limiter_zero_history_clamps_to_zero(rng):
    out, state = apply_limiter(rng.normal(size=(2, 2)), RecoveryState(0.0), 1.5)
    assert not np.any(out) and state.prev_lambda_norm == 0.0


def test_limiter_rejects_bad_zeta():
    with pytest.raises(ValueError):
        apply_limiter(np.ones((1, 1)), RecoveryState(), 0.0)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), zeta=st.floats(0.5, 3.0))
def test_limiter_recurrence_and_direction(seed, zeta):
    rng = np.random.default_rng(seed)
    state = RecoveryState()
    prev = None
    for _ in range(25):
        Lam = rng.normal(size=(3, 4)) * 10.0 ** rng.uniform(-3, 3)
        out, state = apply_limiter(Lam, state, zeta)
        # Non-negative multiple of the input.
        k = np.sum(out * Lam) / np.sum(Lam * Lam)
        assert k >= 0
        np.testing.assert_allclose(out, k * Lam, rtol=1e-12, atol=1e-300)
        if prev is not None:
            assert np.linalg.norm(out) <= zeta * prev
        prev = np.linalg.norm(out)
