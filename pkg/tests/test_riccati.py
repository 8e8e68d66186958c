import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgc.game_model import (Dimensions, GameSpec, StageConstraint, StageCost,
                            StageDynamics, state_map)
from dgc.riccati import dump_riccati_csv, solve_riccati_E, solve_riccati_P
from gamegen import random_game


def scalar_game(K, A, B, Q, QK, R, N=1):
    """Identical scalar players; Q/QK/R may be per-player sequences."""
    def per(v):
        return v if isinstance(v, (list, tuple)) else [v] * N
    Q, QK, R = per(Q), per(QK), per(R)
    dims = Dimensions(N, K, 1, (1,) * N, (0,) * N)
    dyn = StageDynamics(A=np.full((K, 1, 1), A),
                        B=tuple(np.full((K, 1, 1), B) for _ in range(N)),
                        x0=np.array([1.0]))
    costs = []
    for i in range(N):
        Qs = np.full((K + 1, 1, 1), Q[i])
        Qs[K] = QK[i]
        Rs = [np.zeros((K, 1, 1)) for _ in range(N)]
        Rs[i] = np.full((K, 1, 1), R[i])
        costs.append(StageCost(Q=Qs, p=np.zeros((K + 1, 1)), R=tuple(Rs)))
    cons = tuple(StageConstraint(np.zeros((K, 0, 1)), np.zeros((K, 0, N)),
                                 np.zeros((K, 0))) for _ in range(N))
    return GameSpec(dims, dyn, tuple(costs), cons)


def own_value_hessian(g, i):
    """Hessian in x0 of min over u^i of J^i with the other players at zero."""
    K = g.K
    n, m = g.n, g.dims.m
    us = g.dims.control_slice(i)
    idx = np.concatenate([np.arange(k * m + us.start, k * m + us.stop) for k in range(K)])
    cost = g.costs[i]
    # x_k = Phi_k x0 + S_k U; build Phi_k from unit initial states
    _, S = state_map(g, np.zeros(n))
    Phi = np.stack([np.stack([state_map(g, e)[0][k] for e in np.eye(n)], axis=1)
                    for k in range(K + 1)])
    H = sum(S[k][:, idx].T @ cost.Q[k] @ S[k][:, idx] for k in range(K + 1))
    C = sum(S[k][:, idx].T @ cost.Q[k] @ Phi[k] for k in range(K + 1))
    W = sum(Phi[k].T @ cost.Q[k] @ Phi[k] for k in range(K + 1))
    mi = us.stop - us.start
    for k in range(K):
        H[k * mi:(k + 1) * mi, k * mi:(k + 1) * mi] += cost.R[i][k]
    return W - C.T @ np.linalg.solve(H, C)


def test_scalar_hand_values():
    g = scalar_game(K=2, A=1.0, B=1.0, Q=0.0, QK=1.0, R=1.0)
    re = solve_riccati_E(g)
    E = re.E[0][:, 0, 0]
    Y = re.Y[0][:, 0, 0]
    assert E == pytest.approx([1 / 3, 1 / 2, 1.0], abs=1e-15)
    assert Y == pytest.approx([3 / 2, 2.0], abs=1e-15)


def test_scalar_hand_values_grid_search():
    # minimise 1/2 (u0^2 + u1^2 + (1 + u0 + u1)^2) on a grid; value = E_0 / 2
    g = np.linspace(-1, 1, 801)
    u0, u1 = np.meshgrid(g, g)
    V = 0.5 * (u0 ** 2 + u1 ** 2 + (1 + u0 + u1) ** 2)
    assert 2 * V.min() == pytest.approx(1 / 3, abs=1e-5)


def test_horizon_one(rng):
    g = random_game(rng, n=3, m=2, K=1, constrained=False)
    re = solve_riccati_E(g)
    for i in range(g.N):
        B = g.dynamics.B[i][0]
        Y = g.costs[i].R[i][0] + B.T @ g.costs[i].Q[1] @ B
        assert np.allclose(re.Y[i][0], Y, rtol=1e-14, atol=1e-14)


def test_E_is_own_value_hessian(rng):
    for _ in range(10):
        g = random_game(rng, n=3, m=2, K=4, constrained=False)
        re = solve_riccati_E(g)
        for i in range(g.N):
            Vxx = own_value_hessian(g, i)
            assert np.allclose(re.E[i][0], Vxx, rtol=1e-9, atol=1e-9)


def test_single_player_P_equals_E(rng):
    for _ in range(10):
        g = random_game(rng, N=1, n=3, m=2, K=5, constrained=False)
        re, rp = solve_riccati_E(g), solve_riccati_P(g)
        assert rp.ok
        assert np.allclose(rp.P[0], re.E[0], rtol=1e-10, atol=1e-10)
        assert rp.max_asymmetry < 1e-10


def test_psd_Q_gives_pd_Y(rng):
    for _ in range(20):
        g = random_game(rng, n=2, m=2, K=4, constrained=False)
        re = solve_riccati_E(g)
        assert re.positive_definite and re.min_eig_Y > 0
        for i in range(g.N):
            for E in re.E[i]:
                assert np.linalg.eigvalsh(E).min() > -1e-12


def test_coupled_P_is_reported_asymmetric(rng):
    g = random_game(rng, n=3, m=1, K=4, constrained=False)
    rp = solve_riccati_P(g)
    assert rp.ok
    assert rp.max_asymmetry > 1e-6


def test_singular_Y_detected():
    g = scalar_game(K=3, A=1.0, B=1.0, Q=0.0, QK=-1.0, R=1.0)
    re = solve_riccati_E(g)
    assert not re.ok
    assert re.failed_stage == [2]
    assert not re.Y_invertible[2, 0]


def test_indefinite_Y_detected():
    g = scalar_game(K=2, A=1.0, B=1.0, Q=0.0, QK=-3.0, R=1.0)
    re = solve_riccati_E(g)
    assert re.ok and not re.positive_definite


def test_singular_Lambda_detected():
    g = scalar_game(K=3, A=1.0, B=1.0, Q=0.0, QK=-0.5, R=1.0, N=2)
    rp = solve_riccati_P(g)
    assert not rp.ok
    assert rp.failed_stage == 2
    assert not rp.Lam_invertible[2] and rp.Lam_invertible[:2].sum() == 0


def test_netflow_gates(netflow_spec):
    re, rp = solve_riccati_E(netflow_spec), solve_riccati_P(netflow_spec)
    assert re.positive_definite
    assert rp.ok and np.all(np.isfinite(rp.condition_number))


def test_dump_csv(tmp_path, rng):
    g = random_game(rng, n=2, K=3)
    re, rp = solve_riccati_E(g), solve_riccati_P(g)
    paths = dump_riccati_csv(re, rp, tmp_path)
    assert {p.name for p in paths} == {"E1.csv", "E2.csv", "Y1.csv", "Y2.csv", "P1.csv",
                                       "P2.csv", "Lambda.csv"}
    rows = (tmp_path / "P2.csv").read_text().splitlines()
    assert len(rows) == 1 + g.K + 1
    vals = np.array([float(v) for v in rows[1].split(",")[1:]])
    assert np.array_equal(vals, rp.P[1][0].reshape(-1))


def test_deterministic(rng):
    g = random_game(rng, n=3, K=5)
    a, b = solve_riccati_P(g), solve_riccati_P(g)
    assert all(np.array_equal(x, y) for x, y in zip(a.P, b.P))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), K=st.integers(1, 5), n=st.integers(1, 3))
def test_lambda_relation(seed, K, n):
    g = random_game(np.random.default_rng(seed), n=n, K=K, constrained=False)
    rp = solve_riccati_P(g)
    for k in range(K):
        L = np.eye(n)
        for j in range(g.N):
            B = g.dynamics.B[j][k]
            L = L + B @ np.linalg.solve(g.costs[j].R[j][k], B.T) @ rp.P[j][k + 1]
        assert np.allclose(L, rp.Lam[k], atol=1e-12)
        for i in range(g.N):
            rhs = g.costs[i].Q[k] + g.dynamics.A[k].T @ rp.P[i][k + 1] @ \
                np.linalg.solve(L, g.dynamics.A[k])
            assert np.allclose(rp.P[i][k], rhs, rtol=1e-9, atol=1e-9)
