from __future__ import annotations

import numpy as np
import pytest

from lolnmpc import oracles
from lolnmpc.exceptions import QpInfeasible
from lolnmpc.qp import DenseQp, kkt_residual, solve_dense_qp, solve_or_raise


def test_unconstrained_is_newton_step(rng):
    M = rng.normal(size=(5, 5))
    H = M @ M.T + np.eye(5)
    g = rng.normal(size=5)
    res = solve_dense_qp(DenseQp(H, g))
    assert res.ok
    np.testing.assert_allclose(res.x, np.linalg.solve(H, -g), atol=1e-12)


def test_scalar_box_by_hand():
    # min (u - 2)^2 s.t. u <= 1
    qp = DenseQp(np.array([[2.0]]), np.array([-4.0]), C=np.eye(1), lb=np.array([-np.inf]),
                 ub=np.array([1.0]))
    res = solve_dense_qp(qp)
    assert res.x[0] == pytest.approx(1.0, abs=1e-14)
    assert abs(res.lam[0]) == pytest.approx(2.0, abs=1e-12)
    assert kkt_residual(qp, res) < 1e-12


@pytest.mark.parametrize("seed", range(40))
def test_matches_brute_force_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 13))
    m = int(rng.integers(1, 7))
    qp = oracles.random_qp(rng, n, m, n_eq=int(seed % 4 == 0), n_soft=int(rng.integers(0, 3)))
    res = solve_dense_qp(qp)
    assert res.ok
    np.testing.assert_allclose(res.x, oracles.brute_force_qp(qp), atol=1e-8)


def test_equality_constraints_hold(rng):
    qp = oracles.random_qp(rng, 6, 3, n_eq=2)
    res = solve_dense_qp(qp)
    np.testing.assert_allclose(qp.A_eq @ res.x, qp.b_eq, atol=1e-10)


def test_infeasible_reported():
    qp = DenseQp(np.eye(1), np.zeros(1), C=np.array([[1.0], [1.0]]), lb=np.array([1.0, -np.inf]),
                 ub=np.array([np.inf, 0.0]))
    assert solve_dense_qp(qp).status_name == "infeasible"
    with pytest.raises(QpInfeasible):
        solve_or_raise(qp)


def test_soft_rows_trade_violation_against_weight():
    # min 0.5 x^2 - 2x with soft x <= 1, weight w: optimum at x = (2 + w) / (1 + w)
    for w in (1.0, 10.0, 1000.0):
        qp = DenseQp(np.eye(1), np.array([-2.0]), C_soft=np.eye(1), lb_soft=np.array([-np.inf]),
                     ub_soft=np.array([1.0]), w_soft=w)
        res = solve_dense_qp(qp)
        assert res.x[0] == pytest.approx((2 + w) / (1 + w), abs=1e-12)
        assert res.slack[0] == pytest.approx(res.x[0] - 1.0, abs=1e-12)
