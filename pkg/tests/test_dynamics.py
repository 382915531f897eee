import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from converge.dsl import parse_system
from converge.dynamics import (augment, diagonal_distance, jacobian, simulate, simulate_batch,
                               transfer_matrix)
from converge.errors import InvalidShape, NonSmoothPoint, TransferUnavailable

from conftest import LINEAR_123, ex2_closed_form, ex3_closed_form


def test_ex2_trajectory(ex2):
    traj = simulate(ex2, 0, [1.0], 3)
    np.testing.assert_array_equal(traj.states[:, 0], [1, -0.5, -1.75, -2.875])
    k = np.arange(4)
    np.testing.assert_allclose(traj.states[:, 0], ex2_closed_form(k, 0, 1.0), atol=1e-15)


def test_ex3_trajectory(ex3):
    traj = simulate(ex3, 0, [1.0], 4)
    assert traj.states[-1, 0] == pytest.approx(1 / np.sqrt(5), abs=1e-15)
    np.testing.assert_allclose(traj.states[:, 0], ex3_closed_form(np.arange(5), 0, 1.0), atol=1e-15)


def test_zero_horizon(ex1):
    traj = simulate(ex1, 3, [1.0, 2.0], 0)
    np.testing.assert_array_equal(traj.states, [[1.0, 2.0]])
    assert traj.k_end == 3


def test_overflow_truncates(ex4):
    traj = simulate(ex4, 0, [1.0], 100)
    assert traj.overflowed
    assert traj.overflow_at == 57
    assert np.all(np.isfinite(traj.states))
    assert np.all(np.diff(traj.states[1:, 0]) > 0)


def test_trajectory_invariant(ex1):
    from converge.dsl import eval_map
    traj = simulate(ex1, -4, [0.3, -2.0], 30)
    for i in range(30):
        np.testing.assert_array_equal(traj.states[i + 1], eval_map(ex1, -4 + i, traj.states[i]))


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["ex1", "ex2", "ex3"]), st.integers(-20, 20), st.integers(0, 25), st.integers(0, 25),
       st.floats(-5, 5), st.floats(-5, 5))
def test_semigroup_bitwise(registry, name, k0, a, b, u, v):
    defn = registry[name].system()
    xi = np.array([u, v][:defn.n])
    k1, k2 = k0 + a, k0 + a + b
    direct = simulate(defn, k0, xi, k2 - k0).at(k2)
    mid = simulate(defn, k0, xi, k1 - k0).at(k1)
    np.testing.assert_array_equal(simulate(defn, k1, mid, k2 - k1).at(k2), direct)


def test_jacobian_methods(ex3, ex4):
    assert jacobian(ex4, 2, [7.0])[0, 0] == 5.0
    want = 5 ** -1.5
    assert jacobian(ex3, 0, [2.0])[0, 0] == pytest.approx(want, rel=1e-14)
    assert jacobian(ex3, 0, [2.0], method="fd")[0, 0] == pytest.approx(want, rel=1e-8)
    lin = parse_system(LINEAR_123 + "j11 = 1\nj12 = 2\nj21 = 0\nj22 = 3\n")
    for method in ("ad", "fd", "analytic"):
        np.testing.assert_allclose(jacobian(lin, 0, [1.0, -1.0], method), [[1, 2], [0, 3]], atol=1e-8)


def test_strict_jacobian_rejects_kink(ex1):
    with pytest.raises(NonSmoothPoint):
        jacobian(ex1, 0, [0.0, 0.0], strict=True)
    np.testing.assert_allclose(jacobian(ex1, 0, [0.0, 0.0]), 0.5 * np.eye(2))


def test_augment(ex2):
    aug = augment(ex2)
    assert aug.n == 2
    traj = simulate(aug, 0, [4.0, 0.0], 3)
    assert traj.states[-1, 0] - traj.states[-1, 1] == 0.5
    on_diag = simulate(aug, 2, [1.5, 1.5], 20)
    assert all(diagonal_distance(z) == 0 for z in on_diag.states)
    J = jacobian(aug, 0, [1.0, 2.0])
    np.testing.assert_array_equal(J, 0.5 * np.eye(2))


def test_augmented_distance_matches_pair(ex1):
    aug = augment(ex1)
    x1, x2 = np.array([1.0, -2.0]), np.array([0.5, 3.0])
    z = simulate(aug, 0, np.concatenate([x1, x2]), 10).states
    t1, t2 = simulate(ex1, 0, x1, 10).states, simulate(ex1, 0, x2, 10).states
    for zi, a, b in zip(z, t1, t2):
        assert diagonal_distance(zi) == pytest.approx(np.linalg.norm(a - b) / np.sqrt(2), abs=1e-12)


@pytest.mark.parametrize("z, d", [([2.0, 2.0], 0.0), ([1, 0, 0, 0], 1 / np.sqrt(2)), ([3, 1], np.sqrt(2))])
def test_diagonal_distance(z, d):
    assert diagonal_distance(z) == pytest.approx(d, abs=1e-15)


def test_diagonal_distance_odd_length():
    with pytest.raises(InvalidShape):
        diagonal_distance([1, 2, 3])


def test_transfer_matrix_examples(ex2, ex4, ex1):
    assert transfer_matrix(ex2, 0, 3, [9.0]).matrix[0, 0] == 0.125
    np.testing.assert_array_equal(transfer_matrix(ex1, 5, 5, [1.0, 1.0]).matrix, np.eye(2))
    assert transfer_matrix(ex4, 0, 2, [3.0]).matrix[0, 0] == 2.0
    with pytest.raises(TransferUnavailable):
        transfer_matrix(ex4, 0, 80, [1.0])


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["ex1", "ex2", "ex3"]), st.integers(-10, 10), st.integers(0, 15), st.integers(0, 15),
       st.floats(-3, 3), st.floats(-3, 3))
def test_cocycle(registry, name, k0, a, b, u, v):
    defn = registry[name].system()
    xi = np.array([u, v][:defn.n])
    # the origin of ex1 is a kink of the radius, where AD reports a one-sided derivative
    assume(np.linalg.norm(xi) > 1e-6)
    k1, k2 = k0 + a, k0 + a + b
    mid = simulate(defn, k0, xi, a).at(k1)
    full = transfer_matrix(defn, k0, k2, xi).matrix
    split = transfer_matrix(defn, k1, k2, mid).matrix @ transfer_matrix(defn, k0, k1, xi).matrix
    assert np.abs(full - split).max() <= 1e-9 * (1 + np.abs(full).max())


def test_linear_increments_match_transfer(linear):
    rng = np.random.default_rng(2)
    for _ in range(20):
        x1, x2 = rng.normal(size=2), rng.normal(size=2)
        sep = np.linalg.norm(simulate(linear, 0, x1, 12).at(12) - simulate(linear, 0, x2, 12).at(12))
        Phi = transfer_matrix(linear, 0, 12, x1).matrix
        assert sep == pytest.approx(np.linalg.norm(Phi @ (x1 - x2)), rel=1e-9)


def test_batch_matches_single(ex1):
    rng = np.random.default_rng(4)
    X = rng.uniform(-5, 5, size=(7, 2))
    states, overflow, _ = simulate_batch(ex1, 2, X, 9)
    assert np.all(overflow == -1)
    for i in range(7):
        np.testing.assert_array_equal(states[:, i], simulate(ex1, 2, X[i], 9).states)


def test_horizon_cap(ex2):
    with pytest.raises(ValueError):
        simulate(ex2, 0, [0.0], 10**6 + 1)
