"""Numerical certificates for a candidate equilibrium.

Every check is a pure function of (game, result) and reports residuals
instead of raising.  ``verify_result`` bundles them into a ResidualReport
with one pass/fail verdict per family.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .game_model import GameSpec, constraint_map, constraint_values, player_costs, rollout
from .riccati import RiccatiE, RiccatiP, solve_riccati_E, solve_riccati_P

logger = logging.getLogger(__name__)

TOL_UNIT = 1e-8
TOL_LARGE = 1e-6
UNIT_SCALE = 10.0
TOL_IDENTITY = 1e-8
TOL_DEV_EXACT = 1e-8
TOL_DEV_HEURISTIC = 1e-5
EXACT_QP_MAX_VARS = 30
EXACT_QP_MAX_SUBSETS = 200_000
MAX_SHRINK = 60


# --------------------------------------------------------------------------
# Report


@dataclass
class Family:
    name: str
    residual: float
    tol: float
    details: dict = field(default_factory=dict)
    skipped: bool = False

    @property
    def ok(self) -> bool:
        return self.skipped or bool(self.residual <= self.tol)


@dataclass
class ResidualReport:
    families: dict = field(default_factory=dict)
    seed: int = 0

    def add(self, fam: Family) -> Family:
        self.families[fam.name] = fam
        return fam

    @property
    def ok(self) -> bool:
        return all(f.ok for f in self.families.values())

    @property
    def failed(self) -> list[str]:
        return [k for k, f in self.families.items() if not f.ok]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "verdict": "pass" if self.ok else "fail",
            "families": {
                k: {"max_residual": _num(f.residual), "tolerance": f.tol,
                    "verdict": "skipped" if f.skipped else ("pass" if f.ok else "fail"),
                    "details": _jsonable(f.details)}
                for k, f in self.families.items()
            },
        }

    def to_text(self) -> str:
        w = max([len(k) for k in self.families] + [6])
        lines = [f"{'family':<{w}}  {'max residual':>12}  {'tolerance':>9}  verdict"]
        for k, f in self.families.items():
            verdict = "skipped" if f.skipped else ("pass" if f.ok else "FAIL")
            lines.append(f"{k:<{w}}  {f.residual:12.3e}  {f.tol:9.1e}  {verdict}")
        lines.append(f"overall: {'pass' if self.ok else 'FAIL'}")
        return "\n".join(lines)

    def write(self, outdir: str | Path) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        (outdir / "report.txt").write_text(self.to_text() + "\n")


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return _num(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def lcs_tolerance(res) -> float:
    """Absolute tolerance for the LCS families, chosen by the solution scale."""
    scale = max(np.abs(res.x).max(initial=0.0), np.abs(res.lam).max(initial=0.0),
                np.abs(res.mu).max(initial=0.0), np.abs(res.u).max(initial=0.0))
    return TOL_UNIT if scale <= UNIT_SCALE else TOL_LARGE


# --------------------------------------------------------------------------
# Necessary conditions in state / co-state form


def control_law(g: GameSpec, lam: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """u_k^i = -(R_k^ii)^-1 (B_k^i' lam_{k+1}^i - [N_k^i]_i' mu_k^i)."""
    K = g.K
    u = np.zeros((K, g.dims.m))
    for k in range(K):
        for i in range(g.N):
            rhs = (g.dynamics.B[i][k].T @ lam[k + 1, i]
                   - g.own_block(i)[k].T @ mu[k, g.dims.constraint_slice(i)])
            u[k, g.dims.control_slice(i)] = -sla.solve(g.costs[i].R[i][k], rhs,
                                                       assume_a="pos")
    return u


def costate_backward(g: GameSpec, x: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """lam_K = Q_K x_K + p_K, lam_k = Q_k x_k + p_k + A_k' lam_{k+1} - M_k' mu_k."""
    K = g.K
    lam = np.zeros((K + 1, g.N, g.n))
    for i, cost in enumerate(g.costs):
        lam[K, i] = cost.Q[K] @ x[K] + cost.p[K]
        M = g.constraints[i].M
        cs = g.dims.constraint_slice(i)
        for k in range(K - 1, -1, -1):
            lam[k, i] = (cost.Q[k] @ x[k] + cost.p[k] + g.dynamics.A[k].T @ lam[k + 1, i]
                         - M[k].T @ mu[k, cs])
    return lam


def dynamic_residuals(g: GameSpec, x: np.ndarray, lam: np.ndarray, mu: np.ndarray,
                   u: np.ndarray | None = None) -> dict:
    """Per-stage residuals of the state, co-state and complementarity conditions.

    Returns arrays: ``state`` (K,), ``costate`` (K+1, N), ``slack_min``,
    ``mu_min`` and ``product`` (K, N).  ``u`` defaults to the control law.
    """
    K, N = g.K, g.N
    ulaw = control_law(g, lam, mu)
    u = ulaw if u is None else u
    state = np.zeros(K)
    for k in range(K):
        state[k] = np.abs(x[k + 1] - g.dynamics.A[k] @ x[k]
                          - g.dynamics.B_joint[k] @ ulaw[k]).max()
    costate = np.zeros((K + 1, N))
    for i, cost in enumerate(g.costs):
        costate[K, i] = np.abs(lam[K, i] - cost.Q[K] @ x[K] - cost.p[K]).max()
        cs = g.dims.constraint_slice(i)
        for k in range(K):
            ref = (cost.Q[k] @ x[k] + cost.p[k] + g.dynamics.A[k].T @ lam[k + 1, i]
                   - g.constraints[i].M[k].T @ mu[k, cs])
            costate[k, i] = np.abs(lam[k, i] - ref).max()
    slack = constraint_values(g, x, u)
    smin = np.zeros((K, N))
    mmin = np.zeros((K, N))
    prod = np.zeros((K, N))
    for i in range(N):
        cs = g.dims.constraint_slice(i)
        if cs.stop > cs.start:
            smin[:, i] = slack[:, cs].min(axis=1)
            mmin[:, i] = mu[:, cs].min(axis=1)
            prod[:, i] = np.abs(slack[:, cs] * mu[:, cs]).max(axis=1)
    return {"state": state, "costate": costate, "slack_min": smin, "mu_min": mmin,
            "product": prod, "control_gap": np.abs(u - ulaw).max(initial=0.0)}


def check_dynamic_system(g: GameSpec, res, tol: float | None = None) -> list[Family]:
    tol = lcs_tolerance(res) if tol is None else tol
    r = dynamic_residuals(g, res.x, res.lam, res.mu, res.u)
    viol_s = max(0.0, -r["slack_min"].min(initial=0.0))
    viol_m = max(0.0, -r["mu_min"].min(initial=0.0))
    out = [
        Family("dyn_state", float(r["state"].max(initial=0.0)), tol,
               {"worst_stage": int(np.argmax(r["state"])) if g.K else 0}),
        Family("dyn_costate", float(r["costate"].max(initial=0.0)), tol,
               {"worst_stage_player": list(np.unravel_index(np.argmax(r["costate"]),
                                                            r["costate"].shape))}),
        Family("dyn_complementarity", max(viol_s, viol_m,
                                           float(r["product"].max(initial=0.0))), tol,
               {"min_slack": float(r["slack_min"].min(initial=0.0)),
                "min_mu": float(r["mu_min"].min(initial=0.0)),
                "max_product": float(r["product"].max(initial=0.0))}),
        Family("control_law", float(r["control_gap"]), tol),
    ]
    lam_raw = costate_backward(g, res.x, res.mu)
    out.append(Family("costate_crosscheck", float(np.abs(lam_raw - res.lam).max()), tol))
    return out


# --------------------------------------------------------------------------
# Value certificate (E, e, b, f)


@dataclass
class CostCertificate:
    player: int
    e: np.ndarray  # (K+1, n)
    b: np.ndarray  # (K+1, m_i), b_K = 0
    f: np.ndarray  # (K+1,)
    eta: np.ndarray  # (K, n)
    alpha: np.ndarray  # (K, c_i)

    def value(self, E: np.ndarray, k: int, x: np.ndarray) -> float:
        return float(0.5 * x @ E[k] @ x + self.e[k] @ x + self.f[k])


def cost_certificate(g: GameSpec, re: RiccatiE, u: np.ndarray, mu: np.ndarray,
                     i: int) -> CostCertificate:
    """Backward e/b/f recursions for player i driven by the others' controls in u."""
    K, n = g.K, g.n
    cs = g.dims.constraint_slice(i)
    us = g.dims.control_slice(i)
    E, Y = re.E[i], re.Y[i]
    cost = g.costs[i]
    con = g.constraints[i]
    own = g.own_block(i)
    mi = us.stop - us.start
    e = np.zeros((K + 1, n))
    b = np.zeros((K + 1, mi))
    f = np.zeros(K + 1)
    eta = np.zeros((K, n))
    alpha = np.zeros((K, cs.stop - cs.start))
    e[K] = cost.p[K]
    for k in range(K - 1, -1, -1):
        A = g.dynamics.A[k]
        Bi = g.dynamics.B[i][k]
        others = float(0.0)
        for j in range(g.N):
            if j == i:
                continue
            uj = u[k, g.dims.control_slice(j)]
            eta[k] += g.dynamics.B[j][k] @ uj
            alpha[k] += con.N[k][:, g.dims.control_slice(j)] @ uj
            others += 0.5 * uj @ cost.R[j][k] @ uj
        m_k = mu[k, cs]
        Ee = E[k + 1] @ eta[k] + e[k + 1]
        b[k] = np.linalg.solve(Y[k], Bi.T @ Ee - own[k].T @ m_k)
        e[k] = A.T @ Ee - A.T @ E[k + 1] @ Bi @ b[k] + cost.p[k] - con.M[k].T @ m_k
        f[k] = (f[k + 1] + 0.5 * eta[k] @ (E[k + 1] @ eta[k] + 2.0 * e[k + 1]) + others
                - 0.5 * b[k] @ Y[k] @ b[k] - m_k @ (alpha[k] + con.r[k]))
    return CostCertificate(player=i, e=e, b=b, f=f, eta=eta, alpha=alpha)


def represented_cost(g: GameSpec, re: RiccatiE, u: np.ndarray, mu: np.ndarray,
                     i: int, x0: np.ndarray | None = None) -> float:
    """J^i(u) as V_0 + 1/2 sum ||u^i + y||_Y^2 + sum mu' (constraint value)."""
    x = rollout(g, u, x0)
    cert = cost_certificate(g, re, u, mu, i)
    E, Y = re.E[i], re.Y[i]
    us, cs = g.dims.control_slice(i), g.dims.constraint_slice(i)
    total = cert.value(E, 0, x[0])
    slack = constraint_values(g, x, u)
    for k in range(g.K):
        Bi = g.dynamics.B[i][k]
        y = np.linalg.solve(Y[k], Bi.T @ E[k + 1] @ g.dynamics.A[k] @ x[k]) + cert.b[k]
        v = u[k, us] + y
        total += 0.5 * v @ Y[k] @ v + mu[k, cs] @ slack[k, cs]
    return float(total)


def compute_costs(g: GameSpec, re: RiccatiE, res) -> tuple[np.ndarray, np.ndarray]:
    """(certificate value 1/2 x0'E_0 x0 + e_0'x0 + f_0, direct rollout value)."""
    direct = player_costs(g, res.u)
    cert = np.zeros(g.N)
    for i in range(g.N):
        c = cost_certificate(g, re, res.u, res.mu, i)
        cert[i] = c.value(re.E[i], 0, g.x0)
    return cert, direct


# --------------------------------------------------------------------------
# Static-game form


def beta_terms(g: GameSpec, mu_bar: np.ndarray, mu_star: np.ndarray) -> np.ndarray:
    """beta_k^i for every stage and player, shape (K, m) in joint-control layout.

    beta_k^i = [N_k^i]_i' dmu_k + sum_{tau > k} (A_{tau-1}..A_{k+1} B_k^i)' M_tau' dmu_tau
    """
    K = g.K
    dmu = mu_bar - mu_star
    beta = np.zeros((K, g.dims.m))
    for i in range(g.N):
        cs, us = g.dims.constraint_slice(i), g.dims.control_slice(i)
        M = g.constraints[i].M
        own = g.own_block(i)
        acc = np.zeros(g.n)  # sum_{tau > k} (A_{tau-1}..A_{k+1})' M_tau' dmu_tau
        for k in range(K - 1, -1, -1):
            beta[k, us] = own[k].T @ dmu[k, cs] + g.dynamics.B[i][k].T @ acc
            acc = g.dynamics.A[k].T @ acc + M[k].T @ dmu[k, cs]
    return beta


def static_tuple_from_dynamic(g: GameSpec, re: RiccatiE, x: np.ndarray, lam: np.ndarray,
                         mu: np.ndarray):
    """(u_bar, e, b) built from a solution of the dynamic system: e = lam - E x, b from its equation."""
    K = g.K
    ubar = control_law(g, lam, mu)
    e = np.zeros((K + 1, g.N, g.n))
    b = np.zeros((K + 1, g.dims.m))
    for i in range(g.N):
        for k in range(K + 1):
            e[k, i] = lam[k, i] - re.E[i][k] @ x[k]
        cs, us = g.dims.constraint_slice(i), g.dims.control_slice(i)
        for k in range(K):
            eta = g.dynamics.B_joint[k] @ ubar[k] - g.dynamics.B[i][k] @ ubar[k, us]
            rhs = (g.dynamics.B[i][k].T @ (re.E[i][k + 1] @ eta + e[k + 1, i])
                   - g.own_block(i)[k].T @ mu[k, cs])
            b[k, us] = np.linalg.solve(re.Y[i][k], rhs)
    return ubar, e, b


def static_residuals(g: GameSpec, re: RiccatiE, x: np.ndarray, e: np.ndarray,
                   b: np.ndarray, mu_bar: np.ndarray, mu_star: np.ndarray) -> dict:
    """Residuals of the static-game complementarity system, per (stage, player).

    Controls are those implied by the tuple,
    u_k^i = -Y^-1 B' E_{k+1} A x_k - b_k^i + Y^-1 beta_k^i.
    """
    K, N = g.K, g.N
    beta = beta_terms(g, mu_bar, mu_star)
    u = np.zeros((K, g.dims.m))
    for k in range(K):
        for i in range(N):
            us = g.dims.control_slice(i)
            Bi = g.dynamics.B[i][k]
            u[k, us] = (np.linalg.solve(re.Y[i][k], Bi.T @ re.E[i][k + 1]
                                        @ g.dynamics.A[k] @ x[k] - beta[k, us])
                        * -1.0 - b[k, us])
    state = np.zeros((K, N))
    evec = np.zeros((K + 1, N))
    bres = np.zeros((K, N))
    smin = np.zeros((K, N))
    mmin = np.zeros((K, N))
    prod = np.zeros((K, N))
    for i in range(N):
        us, cs = g.dims.control_slice(i), g.dims.constraint_slice(i)
        con, cost = g.constraints[i], g.costs[i]
        E, Y = re.E[i], re.Y[i]
        evec[K, i] = np.abs(e[K, i] - cost.p[K]).max()
        for k in range(K):
            A, Bi = g.dynamics.A[k], g.dynamics.B[i][k]
            eta = g.dynamics.B_joint[k] @ u[k] - Bi @ u[k, us]
            Yinv_BEA = np.linalg.solve(Y[k], Bi.T @ E[k + 1] @ A)
            Yinv_beta = np.linalg.solve(Y[k], beta[k, us])
            xn = (A @ x[k] - Bi @ (Yinv_BEA @ x[k]) - Bi @ b[k, us] + Bi @ Yinv_beta + eta)
            state[k, i] = np.abs(x[k + 1] - xn).max()
            eref = (A.T @ e[k + 1, i] + A.T @ E[k + 1] @ eta
                    - A.T @ E[k + 1] @ Bi @ b[k, us] + cost.p[k] - con.M[k].T @ mu_star[k, cs])
            evec[k, i] = np.abs(e[k, i] - eref).max()
            own = g.own_block(i)[k]
            alpha = con.N[k] @ u[k] - own @ u[k, us]
            slack = (own @ Yinv_beta + (con.M[k] - own @ Yinv_BEA) @ x[k]
                     - own @ b[k, us] + alpha + con.r[k])
            bres[k, i] = np.abs(Y[k] @ b[k, us] - Bi.T @ (E[k + 1] @ eta + e[k + 1, i])
                                + own.T @ mu_star[k, cs]).max(initial=0.0)
            if slack.size:
                smin[k, i] = slack.min()
                mmin[k, i] = mu_bar[k, cs].min()
                prod[k, i] = np.abs(slack * mu_bar[k, cs]).max()
    return {"state": state, "e": evec, "b": bres, "slack_min": smin, "mu_min": mmin,
            "product": prod, "beta": np.abs(beta).max(initial=0.0), "u": u}


def solve_static_given_mu(g: GameSpec, re: RiccatiE, mu: np.ndarray,
                        x0: np.ndarray | None = None):
    """Consistent static-game tuple (x, e, b) for fixed multipliers mu.

    With mu_bar = mu_star = mu the system is linear in (x_1..x_K, e_0..e_{K-1},
    b_0..b_{K-1}); it is assembled densely and solved in one shot.  This path
    does not use the coupled P/Lambda recursion.
    """
    x0 = g.x0 if x0 is None else np.asarray(x0, float)
    K, n, N, m = g.K, g.n, g.N, g.dims.m
    nx, ne = K * n, K * N * n
    nb = K * m
    dim = nx + ne + nb

    def xi(k):  # x_k for k >= 1
        return slice((k - 1) * n, k * n)

    def ei(k, i):  # e_k^i for k <= K-1
        s = nx + (k * N + i) * n
        return slice(s, s + n)

    def bi(k, i):
        us = g.dims.control_slice(i)
        s = nx + ne + k * m
        return slice(s + us.start, s + us.stop)

    Amat = np.zeros((dim, dim))
    rhs = np.zeros(dim)
    row = 0
    # u_k^j = -G_k^j x_k - b_k^j with G = Y^-1 B' E_{k+1} A
    Gain = [[np.linalg.solve(re.Y[j][k], g.dynamics.B[j][k].T @ re.E[j][k + 1]
                             @ g.dynamics.A[k]) for j in range(N)] for k in range(K)]
    for k in range(K):
        # x_{k+1} - (A - sum_j B^j G^j) x_k + sum_j B^j b^j = 0
        Acl = g.dynamics.A[k] - sum(g.dynamics.B[j][k] @ Gain[k][j] for j in range(N))
        r = slice(row, row + n)
        Amat[r, xi(k + 1)] += np.eye(n)
        if k == 0:
            rhs[r] += Acl @ x0
        else:
            Amat[r, xi(k)] -= Acl
        for j in range(N):
            Amat[r, bi(k, j)] += g.dynamics.B[j][k]
        row += n
    for i in range(N):
        cs = g.dims.constraint_slice(i)
        E, Y = re.E[i], re.Y[i]
        for k in range(K):
            A, Bi = g.dynamics.A[k], g.dynamics.B[i][k]
            own = g.own_block(i)[k]
            # eta = sum_{j != i} B^j u^j = -sum_{j!=i} B^j (G^j x_k + b^j)
            # Y b^i - B'(E eta + e_{k+1}) = -own' mu
            r = slice(row, row + Bi.shape[1])
            Amat[r, bi(k, i)] += Y[k]
            coef_x = np.zeros((Bi.shape[1], n))
            for j in range(N):
                if j == i:
                    continue
                Bj = g.dynamics.B[j][k]
                coef_x += Bi.T @ E[k + 1] @ Bj @ Gain[k][j]
                Amat[r, bi(k, j)] += Bi.T @ E[k + 1] @ Bj
            if k == 0:
                rhs[r] -= coef_x @ x0
            else:
                Amat[r, xi(k)] += coef_x
            if k + 1 < K:
                Amat[r, ei(k + 1, i)] -= Bi.T
                rhs[r] += -own.T @ mu[k, cs]
            else:
                rhs[r] += Bi.T @ g.costs[i].p[K] - own.T @ mu[k, cs]
            row += Bi.shape[1]
            # e_k - A'e_{k+1} - A'E eta + A'E B b^i = p_k - M' mu
            r = slice(row, row + n)
            Amat[r, ei(k, i)] += np.eye(n)
            AE = A.T @ E[k + 1]
            Amat[r, bi(k, i)] += AE @ Bi
            coef_x = np.zeros((n, n))
            for j in range(N):
                if j == i:
                    continue
                Bj = g.dynamics.B[j][k]
                coef_x += AE @ Bj @ Gain[k][j]
                Amat[r, bi(k, j)] += AE @ Bj
            rr = g.costs[i].p[k] - g.constraints[i].M[k].T @ mu[k, cs]
            if k == 0:
                rr = rr - coef_x @ x0
            else:
                Amat[r, xi(k)] += coef_x
            if k + 1 < K:
                Amat[r, ei(k + 1, i)] -= A.T
            else:
                rr = rr + A.T @ g.costs[i].p[K]
            rhs[r] += rr
            row += n
    assert row == dim
    try:
        sol = np.linalg.solve(Amat, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(Amat, rhs, rcond=None)[0]
    x = np.zeros((K + 1, n))
    x[0] = x0
    for k in range(1, K + 1):
        x[k] = sol[xi(k)]
    e = np.zeros((K + 1, N, n))
    b = np.zeros((K + 1, m))
    for i in range(N):
        e[K, i] = g.costs[i].p[K]
        for k in range(K):
            e[k, i] = sol[ei(k, i)]
            b[k, g.dims.control_slice(i)] = sol[bi(k, i)]
    return x, e, b


def check_static_system(g: GameSpec, re: RiccatiE, res, tol: float | None = None
                           ) -> list[Family]:
    tol = lcs_tolerance(res) if tol is None else tol
    ubar, e, b = static_tuple_from_dynamic(g, re, res.x, res.lam, res.mu)
    r = static_residuals(g, re, res.x, e, b, res.mu, res.mu)
    eq = max(r["state"].max(initial=0.0), r["e"].max(initial=0.0), r["b"].max(initial=0.0))
    comp = max(0.0, -r["slack_min"].min(initial=0.0), -r["mu_min"].min(initial=0.0),
               r["product"].max(initial=0.0))
    out = [
        Family("static_equations", float(eq), tol,
               {"state": float(r["state"].max(initial=0.0)),
                "e": float(r["e"].max(initial=0.0)), "b": float(r["b"].max(initial=0.0))}),
        Family("static_complementarity", float(comp), tol),
        Family("static_beta", float(r["beta"]), tol),
        Family("static_control_equality", float(np.abs(r["u"] - ubar).max(initial=0.0)
                                               if g.K else 0.0), tol),
    ]
    # reverse direction: independent static-game solve, then lam = E x + e
    xs, es, _ = solve_static_given_mu(g, re, res.mu)
    lam = np.zeros_like(res.lam)
    for i in range(g.N):
        for k in range(g.K + 1):
            lam[k, i] = re.E[i][k] @ xs[k] + es[k, i]
    r1 = dynamic_residuals(g, xs, lam, res.mu)
    rev = max(r1["state"].max(initial=0.0), r1["costate"].max(initial=0.0),
              max(0.0, -r1["slack_min"].min(initial=0.0)), r1["product"].max(initial=0.0))
    out.append(Family("static_to_dynamic", float(rev), tol,
                      {"trajectory_gap": float(np.abs(xs - res.x).max())}))
    return out


# --------------------------------------------------------------------------
# Deviation probes


def _feasible(g: GameSpec, u: np.ndarray, floor: np.ndarray) -> bool:
    s = constraint_values(g, rollout(g, u), u)
    return bool(np.all(s >= floor))


def sample_deviation(g: GameSpec, u_star: np.ndarray, players, rng, floor,
                     max_shrink: int = MAX_SHRINK) -> np.ndarray | None:
    """A random feasible profile that differs from u_star in the given players."""
    d = np.zeros_like(u_star)
    for i in players:
        us = g.dims.control_slice(i)
        d[:, us] = rng.standard_normal(d[:, us].shape) * (1.0 + np.abs(u_star[:, us]))
    t = 1.0
    for _ in range(max_shrink):
        cand = u_star + t * d
        if _feasible(g, cand, floor):
            return cand
        t *= 0.5
    return None


def check_cost_identity(g: GameSpec, re: RiccatiE, res, probes: int = 20, seed: int = 0,
                            tol: float = TOL_IDENTITY, joint: bool = True) -> list[Family]:
    """Cost identity and Nash inequality on random feasible deviations."""
    rng = np.random.default_rng(seed)
    s_star = constraint_values(g, res.x, res.u)
    floor = np.minimum(s_star, 0.0) - 1e-12
    J_star = player_costs(g, res.u)
    worst_id, worst_nash = 0.0, 0.0
    skipped, count = 0, 0
    groups = [[i] for i in range(g.N)]
    if joint and g.N > 1:
        groups.append(list(range(g.N)))
    for players in groups:
        for _ in range(probes):
            dev = sample_deviation(g, res.u, players, rng, floor)
            if dev is None:
                skipped += 1
                continue
            count += 1
            Jd = player_costs(g, dev)
            for i in (players if len(players) == 1 else range(g.N)):
                Jr = represented_cost(g, re, dev, res.mu, i)
                worst_id = max(worst_id, abs(Jd[i] - Jr) / (1.0 + abs(Jd[i])))
            if len(players) == 1:
                i = players[0]
                worst_nash = max(worst_nash, (J_star[i] - Jd[i]) / (1.0 + abs(J_star[i])))
    # the profile itself: J = V_0
    for i in range(g.N):
        Jr = represented_cost(g, re, res.u, res.mu, i)
        worst_id = max(worst_id, abs(J_star[i] - Jr) / (1.0 + abs(J_star[i])))
    info = {"probes": count, "skipped": skipped}
    return [Family("cost_identity", worst_id, tol, dict(info)),
            Family("nash_inequality", max(worst_nash, 0.0), tol, dict(info))]


def player_qp(g: GameSpec, u: np.ndarray, i: int):
    """Player i's cost and feasible set as a QP in its own stacked controls.

    Returns (H, f, const, G, h, idx) with J^i = 1/2 v'Hv + f'v + const and
    feasibility G v + h >= 0, where v = U[idx] and U is the stacked profile.
    """
    from .game_model import state_map
    K, m = g.K, g.dims.m
    us = g.dims.control_slice(i)
    idx = np.concatenate([np.arange(k * m + us.start, k * m + us.stop) for k in range(K)])
    U = u.reshape(-1).copy()
    U_other = U.copy()
    U_other[idx] = 0.0
    a, S = state_map(g)
    cost = g.costs[i]
    nv = idx.size
    H = np.zeros((nv, nv))
    f = np.zeros(nv)
    const = 0.0
    for k in range(K + 1):
        Si = S[k][:, idx]
        xk = a[k] + S[k] @ U_other
        H += Si.T @ cost.Q[k] @ Si
        f += Si.T @ (cost.Q[k] @ xk + cost.p[k])
        const += 0.5 * xk @ cost.Q[k] @ xk + cost.p[k] @ xk
    mi = us.stop - us.start
    for k in range(K):
        blk = slice(k * mi, (k + 1) * mi)
        H[blk, blk] += cost.R[i][k]
        for j in range(g.N):
            if j != i:
                uj = u[k, g.dims.control_slice(j)]
                const += 0.5 * uj @ cost.R[j][k] @ uj
    G_all, h_all = constraint_map(g)
    c = g.dims.c
    cs = g.dims.constraint_slice(i)
    rows = np.concatenate([np.arange(k * c + cs.start, k * c + cs.stop) for k in range(K)]) \
        if cs.stop > cs.start else np.zeros(0, int)
    G = G_all[rows][:, idx]
    h = h_all[rows] + G_all[rows] @ U_other
    return 0.5 * (H + H.T), f, const, G, h, idx


def _qp_exact(H, f, G, h, tol=1e-9):
    """Minimum of a convex QP by enumerating linearly independent active sets."""
    nv = H.shape[0]
    ncon = G.shape[0]
    best_val, best_v = np.inf, None
    for size in range(0, min(nv, ncon) + 1):
        for W in itertools.combinations(range(ncon), size):
            W = list(W)
            Gw = G[W]
            if size and np.linalg.matrix_rank(Gw) < size:
                continue
            kkt = np.zeros((nv + size, nv + size))
            kkt[:nv, :nv] = H
            kkt[:nv, nv:] = -Gw.T
            kkt[nv:, :nv] = Gw
            rhs = np.concatenate([-f, -h[W]])
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            v = sol[:nv]
            if np.abs(kkt @ sol - rhs).max() > 1e-8 * (1 + np.abs(rhs).max()):
                continue
            if ncon and (G @ v + h).min() < -tol:
                continue
            val = 0.5 * v @ H @ v + f @ v
            if val < best_val:
                best_val, best_v = val, v
    return best_val, best_v


def _qp_cvxopt(H, f, G, h):
    from cvxopt import matrix, solvers
    opts = {"show_progress": False, "abstol": 1e-12, "reltol": 1e-12, "feastol": 1e-12,
            "maxiters": 200}
    args = [matrix(H), matrix(f)]
    if G.shape[0]:
        args += [matrix(-G), matrix(h)]
    sol = solvers.qp(*args, options=opts)
    v = np.array(sol["x"]).reshape(-1)
    if G.shape[0]:
        # pull back onto the feasible set if the interior point solve overshot
        viol = -(G @ v + h).min()
        if viol > 0:
            logger.debug("cvxopt QP point violates constraints by %.3g", viol)
    return 0.5 * v @ H @ v + f @ v, v, sol["status"]


def check_deviation_qp(g: GameSpec, res, i: int, tol: float | None = None,
                       method: str = "auto") -> Family:
    """Best unilateral improvement for player i against the others' controls."""
    H, f, const, G, h, idx = player_qp(g, res.u, i)
    v_star = res.u.reshape(-1)[idx]
    J_star = 0.5 * v_star @ H @ v_star + f @ v_star
    n_sub = sum(_ncomb(G.shape[0], s) for s in range(min(H.shape[0], G.shape[0]) + 1))
    exact = method == "exact" or (method == "auto" and H.shape[0] <= EXACT_QP_MAX_VARS
                                  and n_sub <= EXACT_QP_MAX_SUBSETS)
    if exact:
        best, _ = _qp_exact(H, f, G, h)
        path = "exact"
        tol = TOL_DEV_EXACT if tol is None else tol
    else:
        best, v, status = _qp_cvxopt(H, f, G, h)
        path = f"interior-point ({status}, non-exhaustive)"
        tol = TOL_DEV_HEURISTIC if tol is None else tol
    improvement = float(J_star - best)
    # an infeasible reference profile certifies nothing, however cheap it is
    infeas = float(max(0.0, -(G @ v_star + h).min(initial=0.0)))
    return Family(f"deviation_qp_p{i + 1}", max(improvement, infeas, 0.0), tol,
                  {"path": path, "improvement": improvement, "infeasibility": infeas,
                   "cost": float(J_star + const)})


def _ncomb(n, k):
    from math import comb
    return comb(n, k)


# --------------------------------------------------------------------------
# Bundle


def verify_result(g: GameSpec, res, re: RiccatiE | None = None, rp: RiccatiP | None = None,
                  probes: int = 20, seed: int = 0, tolerances: dict | None = None,
                  deviation: bool = True) -> ResidualReport:
    """Run every check family on a solved result.

    ``tolerances`` may override per-family tolerances by family name, or the
    keys ``lcs`` (all LCS families) and ``identity``.
    """
    tolerances = dict(tolerances or {})
    re = re or solve_riccati_E(g)
    rp = rp or solve_riccati_P(g)
    tol_lcs = tolerances.get("lcs", lcs_tolerance(res))
    tol_id = tolerances.get("identity", TOL_IDENTITY)
    rep = ResidualReport(seed=seed)
    for fam in check_dynamic_system(g, res, tol_lcs):
        rep.add(fam)
    diag = getattr(res, "diagnostics", {}) or {}
    if "trajectory_gap" in diag:
        scale = 1.0 + np.abs(res.x).max()
        rep.add(Family("trajectory_consistency", diag["trajectory_gap"] / scale, 1e-8))
    for fam in check_static_system(g, re, res, tol_lcs):
        rep.add(fam)
    for fam in check_cost_identity(g, re, res, probes=probes, seed=seed, tol=tol_id):
        rep.add(fam)
    cert, direct = compute_costs(g, re, res)
    gap = np.abs(cert - direct) / np.maximum(1.0, np.abs(direct))
    rep.add(Family("cost_certificate", float(gap.max(initial=0.0)), tol_id,
                   {"certificate": cert, "direct": direct}))
    if deviation:
        for i in range(g.N):
            rep.add(check_deviation_qp(g, res, i))
    for name, fam in rep.families.items():
        if name in tolerances:
            fam.tol = float(tolerances[name])
    return rep
