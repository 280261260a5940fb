import math
import numpy as np
import pytest
from mccsr.core.operators import (
    BlockDiagonalDictionary,
    apply_channel_shift,
    build_edge_operator,
    build_joint_quadratic,
    build_training_quadratic,
    color_curvature,
    edge_penalty_matrix,
    eval_color_cost,
    pairwise_edge_differences,
    training_curvature,
)
from mccsr.core.errors import DimensionMismatchError, InvalidParameterError


def _dictionary(rows, atoms, seed):
    rng = np.random.default_rng(seed)
    return BlockDiagonalDictionary([rng.standard_normal((rows, atoms)) for _ in range(3)])


def _problem(seed=0, side=3, q=8, atoms=3):
    """Random LR/HR dictionaries, edge operator and LR features."""
    rng = np.random.default_rng(seed)
    d_l = _dictionary(q, atoms, seed + 100)
    d_h = _dictionary(side * side, atoms, seed + 200)
    s_op = build_edge_operator(side)
    y_l = rng.standard_normal(3 * q)
    return d_l, d_h, s_op, y_l


def test_valid_dictionary_init():
    d = _dictionary(4, 2, 0)
    assert d.rows == 4
    assert d.atoms == 2
    assert d.dense().shape == (12, 6)
    assert repr(d) == "BlockDiagonalDictionary(3 x 4x2)"
    assert d.copy() == d


def test_invalid_dictionary_init():
    with pytest.raises(InvalidParameterError):
        BlockDiagonalDictionary([np.zeros((2, 2))] * 2)
    with pytest.raises(InvalidParameterError):
        BlockDiagonalDictionary([np.zeros(4)] * 3)
    with pytest.raises(DimensionMismatchError):
        BlockDiagonalDictionary([np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((3, 2))])


def test_dictionary_products_match_dense():
    d = _dictionary(5, 3, 1)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((9, 4))
    y = rng.standard_normal((15, 4))
    assert np.allclose(d.reconstruct(x), d.dense() @ x)
    assert np.allclose(d.transpose_apply(y), d.dense().T @ y)
    assert BlockDiagonalDictionary.from_dense(d.dense(), 5, 3) == d
    with pytest.raises(DimensionMismatchError):
        d.reconstruct(np.zeros(8))
    with pytest.raises(DimensionMismatchError):
        d.transpose_apply(np.zeros(14))


def test_column_norms():
    d = BlockDiagonalDictionary([np.array([[3.0, 0.0], [4.0, 1.0]])] * 3)
    assert np.allclose(d.column_norms(), [[5.0, 1.0]] * 3)


def test_edge_operator_impulse():
    s_op = build_edge_operator(3)
    impulse = np.zeros(9)
    impulse[4] = 1.0
    out = s_op.apply(impulse)
    assert out[4] == 4.0
    for neighbour in (1, 3, 5, 7):
        assert out[neighbour] == -1.0
    for corner in (0, 2, 6, 8):
        assert out[corner] == 0.0


def test_edge_operator_annihilates_constants():
    for side in (2, 3, 5):
        s_op = build_edge_operator(side)
        assert s_op.size == side * side
        assert np.allclose(s_op.apply(np.full(side * side, 7.5)), 0.0)
        assert np.allclose(np.asarray(s_op.matrix.sum(axis=1)).ravel(), 0.0)


def test_edge_operator_invalid_side():
    with pytest.raises(InvalidParameterError):
        build_edge_operator(1)
    with pytest.raises(InvalidParameterError):
        build_edge_operator(0)


def test_channel_shift():
    r, g, b = np.array([1.0, 2.0]), np.array([3.0, 4.0]), np.array([5.0, 6.0])
    v = np.concatenate([r, g, b])
    assert np.array_equal(apply_channel_shift(v, 2), np.concatenate([b, r, g]))
    assert np.array_equal(
        apply_channel_shift(v, 2, transpose=True), np.concatenate([g, b, r])
    )
    thrice = apply_channel_shift(apply_channel_shift(apply_channel_shift(v, 2), 2), 2)
    assert np.array_equal(thrice, v)
    assert np.array_equal(apply_channel_shift(apply_channel_shift(v, 2), 2, True), v)
    assert math.isclose(
        np.linalg.norm(apply_channel_shift(v, 2)), np.linalg.norm(v)
    )
    with pytest.raises(DimensionMismatchError):
        apply_channel_shift(np.zeros(7), 2)


def test_edge_penalty_matrix_cached():
    s_op = build_edge_operator(3)
    penalty = edge_penalty_matrix(s_op)
    assert penalty.shape == (27, 27)
    assert edge_penalty_matrix(s_op) is penalty


def test_quadratic_matches_literal_cost():
    rng = np.random.default_rng(10)
    for trial in range(100):
        d_l, d_h, s_op, y_l = _problem(seed=trial)
        tau = float(rng.uniform(0.0, 2.0))
        lam = float(rng.uniform(0.0, 1.0))
        q = build_joint_quadratic(d_l, d_h, s_op, tau, lam, y_l)
        x = rng.standard_normal(q.dimension)
        literal = eval_color_cost(x, y_l, d_l, d_h, s_op, lam, tau)
        assert math.isclose(q.objective(x), literal, rel_tol=1e-10, abs_tol=1e-10)


def test_zero_code_costs_half_feature_energy():
    d_l, d_h, s_op, y_l = _problem(seed=3)
    x = np.zeros(9)
    assert math.isclose(
        eval_color_cost(x, y_l, d_l, d_h, s_op, 0.7, 0.3), 0.5 * float(y_l @ y_l)
    )
    q = build_joint_quadratic(d_l, d_h, s_op, 0.3, 0.7, y_l)
    assert math.isclose(q.objective(x), 0.5 * float(y_l @ y_l))


def test_quadratic_is_positive_semidefinite():
    for trial in range(20):
        d_l, d_h, s_op, y_l = _problem(seed=trial, q=2, atoms=4)
        q = build_joint_quadratic(d_l, d_h, s_op, 5.0, 0.1, y_l)
        assert np.allclose(q.q_sym, q.q_sym.T)
        eigenvalues = np.linalg.eigvalsh(q.q_sym)
        assert eigenvalues.min() >= -1e-9 * max(1.0, eigenvalues.max())


def test_zero_tau_decouples_channels():
    d_l, d_h, s_op, y_l = _problem(seed=4)
    q = build_joint_quadratic(d_l, d_h, s_op, 0.0, 0.1, y_l)
    m = d_l.atoms
    for c in range(3):
        for k in range(3):
            block = q.q_sym[c * m:(c + 1) * m, k * m:(k + 1) * m]
            if c == k:
                expected = 0.5 * d_l.blocks[c].T @ d_l.blocks[c]
                assert np.allclose(block, expected)
            else:
                assert np.all(block == 0.0)


def test_identical_channels_have_no_edge_difference():
    block = np.random.default_rng(5).standard_normal((9, 3))
    d_h = BlockDiagonalDictionary([block] * 3)
    s_op = build_edge_operator(3)
    x = np.tile(np.array([0.5, -1.0, 2.0]), 3)
    assert pairwise_edge_differences(d_h, s_op, x) == [0.0, 0.0, 0.0]
    edge = color_curvature(d_h, d_h, s_op).edge
    assert abs(float(x @ edge @ x)) < 1e-9


def test_training_quadratic_matches_literal_cost():
    rng = np.random.default_rng(11)
    for trial in range(30):
        d_l, d_h, s_op, y_l = _problem(seed=trial)
        y_h = rng.standard_normal(27)
        tau = float(rng.uniform(0.0, 1.0))
        gamma = float(rng.uniform(0.0, 1.0))
        lam = float(rng.uniform(0.0, 0.5))
        q = build_training_quadratic(d_l, d_h, s_op, tau, gamma, lam, y_l, y_h)
        x = rng.standard_normal(9)
        literal = (
            0.5 * gamma * float(np.sum((y_l - d_l.reconstruct(x)) ** 2))
            + 0.5 * (1.0 - gamma) * float(np.sum((y_h - d_h.reconstruct(x)) ** 2))
            + lam * float(np.abs(x).sum())
            + tau * sum(pairwise_edge_differences(d_h, s_op, x))
        )
        assert math.isclose(q.objective(x), literal, rel_tol=1e-10, abs_tol=1e-10)


def test_training_quadratic_gamma_limits():
    d_l, d_h, s_op, y_l = _problem(seed=6)
    y_h = np.random.default_rng(6).standard_normal(27)
    full_lr = build_training_quadratic(d_l, d_h, s_op, 0.0, 1.0, 0.2, y_l, y_h)
    joint = build_joint_quadratic(d_l, d_h, s_op, 0.0, 0.2, y_l)
    assert np.allclose(full_lr.q_sym, joint.q_sym)
    assert np.allclose(full_lr.b, joint.b)
    hr_only = build_training_quadratic(d_l, d_h, s_op, 0.0, 0.0, 0.2, y_l, y_h)
    other = build_training_quadratic(d_l, d_h, s_op, 0.0, 0.0, 0.2, 3 * y_l, y_h)
    assert np.array_equal(hr_only.b, other.b)
    assert np.allclose(hr_only.b, d_h.transpose_apply(y_h))


def test_training_curvature_splits_tau():
    d_l, d_h, s_op, _ = _problem(seed=7)
    curvature = training_curvature(d_l, d_h, s_op, 0.3)
    assert curvature.dimension == 9
    assert np.allclose(curvature.at(0.0), curvature.data)
    assert np.allclose(curvature.at(2.0) - curvature.at(1.0), curvature.edge)


def test_invalid_quadratic_parameters():
    d_l, d_h, s_op, y_l = _problem(seed=8)
    with pytest.raises(InvalidParameterError):
        build_joint_quadratic(d_l, d_h, s_op, -0.1, 0.1, y_l)
    with pytest.raises(InvalidParameterError):
        build_joint_quadratic(d_l, d_h, s_op, 0.1, -0.1, y_l)
    with pytest.raises(InvalidParameterError):
        build_training_quadratic(d_l, d_h, s_op, 0.1, 1.5, 0.1, y_l, np.zeros(27))
    with pytest.raises(DimensionMismatchError):
        build_joint_quadratic(d_l, d_h, s_op, 0.1, 0.1, y_l[:-3])
    with pytest.raises(DimensionMismatchError):
        build_joint_quadratic(d_l, d_h, build_edge_operator(2), 0.1, 0.1, y_l)
    with pytest.raises(DimensionMismatchError):
        build_joint_quadratic(d_l, _dictionary(9, 2, 0), s_op, 0.1, 0.1, y_l)


def test_gradient_matches_finite_differences():
    d_l, d_h, s_op, y_l = _problem(seed=9)
    q = build_joint_quadratic(d_l, d_h, s_op, 0.4, 0.0, y_l)
    x = np.random.default_rng(9).standard_normal(9)
    step = 1e-5
    numeric = np.array([
        (q.smooth(x + step * e) - q.smooth(x - step * e)) / (2 * step)
        for e in np.eye(9)
    ])
    assert np.allclose(q.gradient(x), numeric, rtol=1e-5, atol=1e-5)
