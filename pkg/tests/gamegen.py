"""Random game instances for the test suite."""
import numpy as np

from dgc.game_model import (Dimensions, GameSpec, StageConstraint, StageCost,
                            StageDynamics, constraint_values, rollout)


def _spd(rng, k, lo=0.5):
    A = rng.normal(size=(k, k))
    return A @ A.T / k + lo * np.eye(k)


def _psd(rng, k):
    A = rng.normal(size=(k, rng.integers(1, k + 1)))
    return A @ A.T / k


def random_game(rng, N=2, n=2, m=1, K=3, c=2, constrained=True, stationary=False,
                cross_R=True, margin=0.3, scale=1.0):
    """Random LQ game; constraints are built strictly feasible at a random profile."""
    ms = (m,) * N if np.isscalar(m) else tuple(m)
    cs = (c,) * N if np.isscalar(c) else tuple(c)
    if not constrained:
        cs = (0,) * N
    mt = sum(ms)
    dims = Dimensions(N, K, n, ms, cs)

    def stages(fn, count):
        if stationary:
            v = fn()
            return np.repeat(v[None], count, 0)
        return np.stack([fn() for _ in range(count)])

    A = stages(lambda: rng.normal(size=(n, n)) * 0.6, K)
    B = tuple(stages(lambda mi=mi: rng.normal(size=(n, mi)), K) for mi in ms)
    x0 = rng.normal(size=n) * scale
    costs = []
    for i in range(N):
        Q = stages(lambda: _psd(rng, n), K + 1)
        p = stages(lambda: rng.normal(size=n) * 0.3, K + 1)
        R = []
        for j in range(N):
            if j == i:
                R.append(stages(lambda: _spd(rng, ms[i]), K))
            elif cross_R:
                R.append(stages(lambda j=j: _psd(rng, ms[j]) * 0.5, K))
            else:
                R.append(np.zeros((K, ms[i], ms[j])))
            if j != i and R[-1].shape[1] != R[-1].shape[2]:
                R[-1] = np.zeros((K, ms[i], ms[j]))
        costs.append(StageCost(Q=Q, p=p, R=tuple(R)))
    dyn = StageDynamics(A=A, B=B, x0=x0)
    cons = []
    u_ref = rng.normal(size=(K, mt)) * 0.5
    g0 = GameSpec(dims, dyn, tuple(costs),
                  tuple(StageConstraint(np.zeros((K, ci, n)), np.zeros((K, ci, mt)),
                                        np.zeros((K, ci))) for ci in cs))
    x_ref = rollout(g0, u_ref)
    for i in range(N):
        ci = cs[i]
        M = rng.normal(size=(K, ci, n)) * 0.5
        Nm = rng.normal(size=(K, ci, mt))
        r = np.zeros((K, ci))
        for k in range(K):
            r[k] = -(M[k] @ x_ref[k] + Nm[k] @ u_ref[k]) + rng.uniform(0.0, margin, ci)
        cons.append(StageConstraint(M=M, N=Nm, r=r))
    return GameSpec(dims, dyn, tuple(costs), tuple(cons), name="random")


def unconstrained_variant(g):
    dims = Dimensions(g.N, g.K, g.n, g.dims.control_dims, (0,) * g.N)
    cons = tuple(StageConstraint(np.zeros((g.K, 0, g.n)), np.zeros((g.K, 0, g.dims.m)),
                                 np.zeros((g.K, 0))) for _ in range(g.N))
    return GameSpec(dims, g.dynamics, g.costs, cons, name=g.name + "-free")


def _player_index(g, i):
    m = g.dims.m
    us = g.dims.control_slice(i)
    return np.concatenate([np.arange(k * m + us.start, k * m + us.stop) for k in range(g.K)])


def player_quadratic(g, i):
    """J^i(U) = 1/2 U'H U + f'U + const over the stacked joint control U."""
    from dgc.game_model import state_map
    a, S = state_map(g)
    cost = g.costs[i]
    H = sum(S[k].T @ cost.Q[k] @ S[k] for k in range(g.K + 1))
    f = sum(S[k].T @ (cost.Q[k] @ a[k] + cost.p[k]) for k in range(g.K + 1))
    m = g.dims.m
    for k in range(g.K):
        for j in range(g.N):
            sj = g.dims.control_slice(j)
            blk = slice(k * m + sj.start, k * m + sj.stop)
            H[blk, blk] += cost.R[j][k]
    return H, f


def dense_olne(g):
    """Unconstrained open-loop Nash profile from the stacked first-order conditions."""
    d = g.K * g.dims.m
    A = np.zeros((d, d))
    b = np.zeros(d)
    for i in range(g.N):
        H, f = player_quadratic(g, i)
        idx = _player_index(g, i)
        A[idx] = H[idx]
        b[idx] = -f[idx]
    return np.linalg.solve(A, b).reshape(g.K, g.dims.m)


def lqr(g):
    """Classical single-player LQR with linear state cost, (K, m) controls."""
    assert g.N == 1
    K = g.K
    A, B = g.dynamics.A, g.dynamics.B[0]
    Q, p, R = g.costs[0].Q, g.costs[0].p, g.costs[0].R[0]
    S, s = Q[K], p[K]
    gains = [None] * K
    for k in range(K - 1, -1, -1):
        Y = R[k] + B[k].T @ S @ B[k]
        Kx = np.linalg.solve(Y, B[k].T @ S @ A[k])
        kf = np.linalg.solve(Y, B[k].T @ s)
        gains[k] = (Kx, kf)
        Acl = A[k] - B[k] @ Kx
        s = p[k] + Acl.T @ s
        S = Q[k] + A[k].T @ S @ Acl
    x = g.x0.copy()
    u = np.zeros((K, B.shape[2]))
    for k in range(K):
        u[k] = -gains[k][0] @ x - gains[k][1]
        x = A[k] @ x + B[k] @ u[k]
    return u


def qp_active_set(H, f, G, h, tol=1e-10):
    """Minimiser of 1/2 v'Hv + f'v s.t. Gv + h >= 0 by enumerating active sets."""
    import itertools
    nv, nc = H.shape[0], G.shape[0]
    best = (np.inf, None)
    for size in range(min(nv, nc) + 1):
        for W in itertools.combinations(range(nc), size):
            W = list(W)
            kkt = np.block([[H, -G[W].T], [G[W], np.zeros((size, size))]])
            try:
                sol = np.linalg.solve(kkt, np.concatenate([-f, -h[W]]))
            except np.linalg.LinAlgError:
                continue
            v, lam = sol[:nv], sol[nv:]
            if np.any(lam < -tol) or np.any(G @ v + h < -tol):
                continue
            val = 0.5 * v @ H @ v + f @ v
            if val < best[0]:
                best = (val, v)
    return best


# one line per acceptance criterion, printed in the pytest terminal summary
ACCEPTANCE_LINES: list[str] = []


def record(criterion, ok, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok
