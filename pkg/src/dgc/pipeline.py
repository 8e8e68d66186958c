"""Equilibrium computation: reduce the coupled necessary conditions to one LCP.

Stacking convention (used by every block formula below):

* multipliers ``mu_K`` are stage-major, then player, then constraint row:
  flat index of (k, i, row) is ``k*c + off_c[i] + row``;
* joint controls ``u_K`` are stage-major, then player, then component:
  flat index of (k, i, comp) is ``k*m + off_m[i] + comp``;
* stacked states ``x_K`` hold x_0..x_{K-1}; stacked co-state offsets
  ``zeta_K`` and ``p_K`` hold stages 1..K, each block ordered by player.

Block indices in the aggregated matrices are 1-based over stages 1..K, so
block row k of ``x_K`` is x_{k-1} and block column tau of ``mu_K`` is
mu_{tau-1}.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import lcp as lcp_mod
from .game_model import GameSpec, rollout, validate_game
from .riccati import RiccatiE, RiccatiP, solve_riccati_E, solve_riccati_P

logger = logging.getLogger(__name__)

TRAJ_TOL = 1e-8


class GateFailed(RuntimeError):
    """A solvability assumption or Riccati verdict did not hold."""

    def __init__(self, which: str, detail: str = ""):
        self.which = which
        super().__init__(f"{which}: {detail}" if detail else which)


class LcpUnsolved(RuntimeError):
    def __init__(self, status: str, instance: lcp_mod.LcpInstance, solution=None):
        self.status = status
        self.instance = instance
        self.solution = solution
        super().__init__(f"LCP not solved (status {status}, d = {instance.d})")


class VerificationFailed(RuntimeError):
    def __init__(self, result: "EquilibriumResult", failed: list[str]):
        self.result = result
        self.failed = failed
        super().__init__("verification failed: " + ", ".join(failed))


# --------------------------------------------------------------------------
# Stage operators


@dataclass
class StageOperators:
    """Per-stage blocks; arrays indexed by the stage subscript of each symbol.

    ``G[k], Gt[k], F[k], Ft[k], Hb[k]`` carry subscript k in 0..K-1.
    ``Gb[k], Fb[k], H[k]`` carry subscript k in 1..K (slot 0 is unused).
    """
    G: np.ndarray  # (K, n, n)
    Gb: np.ndarray  # (K+1, n, N n)
    Gt: np.ndarray  # (K, n, c)
    F: np.ndarray  # (K, m, n)
    Fb: np.ndarray  # (K+1, m, N n)
    Ft: np.ndarray  # (K, m, c)
    H: np.ndarray  # (K+1, N n, N n)
    Hb: np.ndarray  # (K, N n, c)
    Pstack: np.ndarray  # (K+1, N n, n), col(P_k^i)
    Lam_lu: list = field(repr=False, default_factory=list)
    Rinv_blocks: list = field(repr=False, default_factory=list)  # [k][i] cho factors


def _block_diag(blocks, rows, cols):
    out = np.zeros((rows, cols))
    r = c = 0
    for b in blocks:
        out[r:r + b.shape[0], c:c + b.shape[1]] = b
        r += b.shape[0]
        c += b.shape[1]
    return out


def build_stage_operators(g: GameSpec, rp: RiccatiP) -> StageOperators:
    if not rp.ok:
        raise GateFailed("Lambda invertibility",
                         f"Lambda_{rp.failed_stage} is numerically singular")
    K, n, N = g.K, g.n, g.N
    m, c = g.dims.m, g.dims.c
    Nn = N * n
    G = np.zeros((K, n, n))
    Gb = np.zeros((K + 1, n, Nn))
    Gt = np.zeros((K, n, c))
    F = np.zeros((K, m, n))
    Fb = np.zeros((K + 1, m, Nn))
    Ft = np.zeros((K, m, c))
    H = np.zeros((K + 1, Nn, Nn))
    Hb = np.zeros((K, Nn, c))
    Pst = np.zeros((K + 1, Nn, n))
    for k in range(K + 1):
        for i in range(N):
            Pst[k, i * n:(i + 1) * n] = rp.P[i][k]
    lus, rinvs = [], []
    coff = g.dims.constraint_offsets
    for k in range(K):
        A = g.dynamics.A[k]
        lu = sla.lu_factor(rp.Lam[k])
        lus.append(lu)
        facs = []
        Bbold = np.zeros((Nn, m))
        Nbold = np.zeros((c, m))
        Mbold = np.zeros((c, Nn))
        RinvBt = np.zeros((m, Nn))  # R^-1 B' (block diagonal)
        RinvNt = np.zeros((m, c))  # R^-1 N' (block diagonal)
        for i in range(N):
            Bi = g.dynamics.B[i][k]
            Ri = g.costs[i].R[i][k]
            own = g.own_block(i)[k]
            fac = sla.cho_factor(Ri)
            facs.append(fac)
            us = g.dims.control_slice(i)
            cs = slice(int(coff[i]), int(coff[i + 1]))
            xs = slice(i * n, (i + 1) * n)
            Bbold[xs, us] = Bi
            Nbold[cs, us] = own
            Mbold[cs, xs] = g.constraints[i].M[k]
            RinvBt[us, xs] = sla.cho_solve(fac, Bi.T)
            if own.shape[0]:
                RinvNt[us, cs] = sla.cho_solve(fac, own.T)
            Gb[k + 1][:, xs] = -sla.lu_solve(lu, Bi @ RinvBt[us, xs])
            if own.shape[0]:
                Gt[k][:, cs] = sla.lu_solve(lu, Bi @ RinvNt[us, cs])
        rinvs.append(facs)
        G[k] = sla.lu_solve(lu, A)
        P1 = Pst[k + 1]
        F[k] = -RinvBt @ P1 @ G[k]
        I_PGb = np.eye(Nn) + P1 @ Gb[k + 1]
        Fb[k + 1] = -RinvBt @ I_PGb
        Ft[k] = RinvNt - RinvBt @ P1 @ Gt[k]
        IA = np.kron(np.eye(N), A.T)
        H[k + 1] = IA @ I_PGb
        Hb[k] = IA @ P1 @ Gt[k] - Mbold.T
    return StageOperators(G=G, Gb=Gb, Gt=Gt, F=F, Fb=Fb, Ft=Ft, H=H, Hb=Hb,
                          Pstack=Pst, Lam_lu=lus, Rinv_blocks=rinvs)


# --------------------------------------------------------------------------
# Transition tables


@dataclass
class TransitionTables:
    phi: np.ndarray  # (K+1, K+1, n, n); phi[k, tau] valid for tau <= k
    psi: np.ndarray  # (K+1, K+1, Nn, Nn); psi[k, tau] valid for k <= tau

    def forward(self, k: int, tau: int) -> np.ndarray:
        if tau > k:
            raise IndexError("phi(k, tau) needs tau <= k")
        return self.phi[k, tau]

    def backward(self, k: int, tau: int) -> np.ndarray:
        if k > tau:
            raise IndexError("psi(k, tau) needs k <= tau")
        return self.psi[k, tau]


def build_transitions(ops: StageOperators) -> TransitionTables:
    """phi(k,tau) = G_{k-1}...G_tau and psi(k,tau) = H_{k+1}...H_tau."""
    K, n = ops.G.shape[0], ops.G.shape[1]
    Nn = ops.H.shape[1]
    phi = np.zeros((K + 1, K + 1, n, n))
    psi = np.zeros((K + 1, K + 1, Nn, Nn))
    eye_n, eye_Nn = np.eye(n), np.eye(Nn)
    for tau in range(K + 1):
        phi[tau, tau] = eye_n
        for k in range(tau + 1, K + 1):
            phi[k, tau] = ops.G[k - 1] @ phi[k - 1, tau]
    for k in range(K + 1):
        psi[k, k] = eye_Nn
        for tau in range(k + 1, K + 1):
            psi[k, tau] = psi[k, tau - 1] @ ops.H[tau]
    return TransitionTables(phi=phi, psi=psi)


# --------------------------------------------------------------------------
# LCP assembly


@dataclass
class AssembledLcp:
    Phi0: np.ndarray
    Phi1: np.ndarray
    Phi2: np.ndarray
    Psi1: np.ndarray
    Psi2: np.ndarray
    M: np.ndarray
    q: np.ndarray
    Fsyn: np.ndarray
    Psyn: np.ndarray
    pK: np.ndarray
    rK: np.ndarray

    @property
    def instance(self) -> lcp_mod.LcpInstance:
        return lcp_mod.LcpInstance(self.M, self.q)


def mu_index(g: GameSpec, k: int, i: int, row: int) -> int:
    return k * g.dims.c + int(g.dims.constraint_offsets[i]) + row


def u_index(g: GameSpec, k: int, i: int, comp: int) -> int:
    return k * g.dims.m + int(g.dims.control_offsets[i]) + comp


def _cross_sums(ops: StageOperators, tt: TransitionTables) -> np.ndarray:
    """C[k, tau] = sum_{rho=1}^{min(k,tau)} phi(k,rho) Gb_rho psi(rho,tau).

    Built by the recursion C[k] = G_{k-1} C[k-1] + [k <= tau] Gb_k psi(k,tau).
    """
    K, n = ops.G.shape[0], ops.G.shape[1]
    Nn = ops.H.shape[1]
    C = np.zeros((K + 1, K + 1, n, Nn))
    for k in range(1, K + 1):
        for tau in range(1, K + 1):
            acc = ops.G[k - 1] @ C[k - 1, tau]
            if k <= tau:
                acc = acc + ops.Gb[k] @ tt.psi[k, tau]
            C[k, tau] = acc
    return C


def assemble_lcp(g: GameSpec, ops: StageOperators, tt: TransitionTables,
                 x0: np.ndarray | None = None) -> AssembledLcp:
    x0 = g.x0 if x0 is None else np.asarray(x0, float)
    K, n, N = g.K, g.n, g.N
    m, c = g.dims.m, g.dims.c
    Nn = N * n
    C = _cross_sums(ops, tt)

    Phi0 = np.zeros((K * n, n))
    Phi1 = np.zeros((K * n, K * Nn))
    Phi2 = np.zeros((K * n, K * c))
    Psi1 = np.zeros((K * Nn, K * Nn))
    Psi2 = np.zeros((K * Nn, K * c))

    def xb(k):  # block row k (1-based) of the stacked state
        return slice((k - 1) * n, k * n)

    def zb(k):
        return slice((k - 1) * Nn, k * Nn)

    def mb(t):
        return slice((t - 1) * c, t * c)

    for k in range(1, K + 1):
        Phi0[xb(k)] = tt.phi[k - 1, 0]
        if k == 1:
            continue  # x_0 does not depend on p or mu
        for tau in range(1, K + 1):
            Phi1[xb(k), zb(tau)] = C[k - 1, tau]
            if tau == 1:
                Phi2[xb(k), mb(tau)] = tt.phi[k - 1, 1] @ ops.Gt[0]
            elif tau < k:
                Phi2[xb(k), mb(tau)] = (C[k - 1, tau - 1] @ ops.Hb[tau - 1]
                                        + tt.phi[k - 1, tau] @ ops.Gt[tau - 1])
            else:
                Phi2[xb(k), mb(tau)] = C[k - 1, tau - 1] @ ops.Hb[tau - 1]
    for k in range(1, K + 1):
        for tau in range(k, K + 1):
            Psi1[zb(k), zb(tau)] = tt.psi[k, tau]
            if tau > k:
                Psi2[zb(k), mb(tau)] = tt.psi[k, tau - 1] @ ops.Hb[tau - 1]

    Mb, Nb, rb = g.stacked_constraints()
    MK = np.zeros((K * c, K * n))
    NK = np.zeros((K * c, K * Nn))
    NtK = np.zeros((K * c, K * c))
    FK = np.zeros((K * m, K * n))
    FbK = np.zeros((K * m, K * Nn))
    FtK = np.zeros((K * m, K * c))
    for k in range(K):
        cr = slice(k * c, (k + 1) * c)
        ur = slice(k * m, (k + 1) * m)
        MK[cr, k * n:(k + 1) * n] = Mb[k] + Nb[k] @ ops.F[k]
        NK[cr, k * Nn:(k + 1) * Nn] = Nb[k] @ ops.Fb[k + 1]
        NtK[cr, cr] = Nb[k] @ ops.Ft[k]
        FK[ur, k * n:(k + 1) * n] = ops.F[k]
        FbK[ur, k * Nn:(k + 1) * Nn] = ops.Fb[k + 1]
        FtK[ur, cr] = ops.Ft[k]
    pK = np.concatenate([np.concatenate([g.costs[i].p[k] for i in range(N)])
                         for k in range(1, K + 1)])
    rK = rb.reshape(-1)

    Mlcp = MK @ Phi2 + NK @ Psi2 + NtK
    q = MK @ Phi0 @ x0 + (MK @ Phi1 + NK @ Psi1) @ pK + rK
    Fsyn = FK @ Phi2 + FbK @ Psi2 + FtK
    Psyn = FK @ Phi0 @ x0 + (FK @ Phi1 + FbK @ Psi1) @ pK
    return AssembledLcp(Phi0=Phi0, Phi1=Phi1, Phi2=Phi2, Psi1=Psi1, Psi2=Psi2,
                        M=Mlcp, q=q, Fsyn=Fsyn, Psyn=Psyn, pK=pK, rK=rK)


# --------------------------------------------------------------------------
# Stage recursions driven by a multiplier sequence


def zeta_recursion(g: GameSpec, rp: RiccatiP, ops: StageOperators,
                   mu: np.ndarray) -> np.ndarray:
    """Co-state offsets zeta_k^i, k = 0..K, shape (K+1, N, n).

    ``mu`` may carry trailing columns (shape (K, c, r)) to propagate several
    multiplier sequences at once.
    """
    K, n, N = g.K, g.n, g.N
    batch = mu.ndim == 3
    extra = mu.shape[2:] if batch else ()
    zeta = np.zeros((K + 1, N, n) + extra)
    coff = g.dims.constraint_offsets
    for i in range(N):
        pK = g.costs[i].p[K]
        zeta[K, i] = pK[:, None] if batch else pK
    for k in range(K - 1, -1, -1):
        A = g.dynamics.A[k]
        drive = 0.0
        for j in range(N):
            Bj = g.dynamics.B[j][k]
            own = g.own_block(j)[k]
            muj = mu[k, coff[j]:coff[j + 1]]
            inner = Bj.T @ zeta[k + 1, j] - own.T @ muj
            drive = drive + Bj @ sla.cho_solve(ops.Rinv_blocks[k][j], inner)
        Ld = sla.lu_solve(ops.Lam_lu[k], drive)
        for i in range(N):
            mui = mu[k, coff[i]:coff[i + 1]]
            pk = g.costs[i].p[k]
            pk = pk[:, None] if batch else pk
            zeta[k, i] = (A.T @ zeta[k + 1, i] - g.constraints[i].M[k].T @ mui
                          - A.T @ rp.P[i][k + 1] @ Ld + pk)
    return zeta


def state_recursion(g: GameSpec, ops: StageOperators, zeta: np.ndarray,
                    mu: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    """x_{k+1} = G_k x_k + Gb_{k+1} zeta_{k+1} + Gt_k mu_k."""
    x0 = g.x0 if x0 is None else np.asarray(x0, float)
    K, n, N = g.K, g.n, g.N
    batch = mu.ndim == 3
    x = np.zeros((K + 1, n) + mu.shape[2:])
    x[0] = x0[:, None] if batch else x0
    for k in range(K):
        zflat = zeta[k + 1].reshape((N * n,) + mu.shape[2:])
        x[k + 1] = ops.G[k] @ x[k] + ops.Gb[k + 1] @ zflat + ops.Gt[k] @ mu[k]
    return x


def control_from_costate(g: GameSpec, x: np.ndarray, zeta: np.ndarray,
                         P: list[np.ndarray], mu: np.ndarray) -> np.ndarray:
    """u_k^i = -(R^ii)^-1 (B^i' (P^i_{k+1} x_{k+1} + zeta^i_{k+1}) - [N^i]_i' mu^i)."""
    K, m = g.K, g.dims.m
    coff = g.dims.constraint_offsets
    u = np.zeros((K, m) + mu.shape[2:])
    for k in range(K):
        for i in range(g.N):
            Bi = g.dynamics.B[i][k]
            lam = P[i][k + 1] @ x[k + 1] + zeta[k + 1, i]
            rhs = Bi.T @ lam - g.own_block(i)[k].T @ mu[k, coff[i]:coff[i + 1]]
            u[k, g.dims.control_slice(i)] = -np.linalg.solve(g.costs[i].R[i][k], rhs)
    return u


def direct_lcp(g: GameSpec, rp: RiccatiP, ops: StageOperators,
               x0: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(M, q) of the multiplier LCP by probing the affine map mu -> slack.

    Independent of the aggregated block formulas: the stage recursions are
    run once for mu = 0 and once per unit multiplier (all in one batch).
    """
    K, c = g.K, g.dims.c
    d = K * c
    mus = np.zeros((K, c, d + 1))
    for j in range(d):
        mus[j // c, j % c, j + 1] = 1.0
    zeta = zeta_recursion(g, rp, ops, mus)
    x = state_recursion(g, ops, zeta, mus, x0)
    u = control_from_costate(g, x, zeta, rp.P, mus)
    Mb, Nb, rb = g.stacked_constraints()
    w = np.einsum("kcn,knr->kcr", Mb, x[:-1]) + np.einsum("kcm,kmr->kcr", Nb, u)
    w = w.reshape(d, d + 1)
    q = w[:, 0] + rb.reshape(-1)
    M = w[:, 1:] - w[:, [0]]
    return M, q


# --------------------------------------------------------------------------
# Equilibrium


@dataclass
class EquilibriumResult:
    u: np.ndarray  # (K, m) joint controls
    x: np.ndarray  # (K+1, n)
    mu: np.ndarray  # (K, c)
    lam: np.ndarray  # (K+1, N, n)
    zeta: np.ndarray  # (K+1, N, n)
    costs: np.ndarray | None = None  # (N,) via the value certificate
    costs_direct: np.ndarray | None = None  # (N,) via rollout
    lcp_status: str = ""
    lcp_pivots: int = 0
    uniqueness: str = "unknown"
    diagnostics: dict = field(default_factory=dict)
    report: object | None = None
    lcp: AssembledLcp | None = field(default=None, repr=False)
    riccati_E: RiccatiE | None = field(default=None, repr=False)
    riccati_P: RiccatiP | None = field(default=None, repr=False)

    def control(self, g: GameSpec, k: int, i: int) -> np.ndarray:
        return self.u[k, g.dims.control_slice(i)]

    def multiplier(self, g: GameSpec, k: int, i: int) -> np.ndarray:
        return self.mu[k, g.dims.constraint_slice(i)]


def check_gates(g: GameSpec, re: RiccatiE | None = None, rp: RiccatiP | None = None):
    """Raise GateFailed unless every solvability verdict passes."""
    rep = validate_game(g)
    if not rep.rank_ok:
        k, i, v = rep.rank_failures[0]
        raise GateFailed("rank of [N_k^i]_i",
                         f"stage {k}, player {i + 1} (sigma ratio {v:.3g})")
    if not rep.pd_ok:
        k, i, _ = rep.pd_failures[0]
        raise GateFailed("R_k^ii positive definite", f"stage {k}, player {i + 1}")
    re = re or solve_riccati_E(g)
    if not re.ok:
        i = next(j for j, s in enumerate(re.failed_stage) if s is not None)
        raise GateFailed("Y_k^i invertible",
                         f"player {i + 1}, stage {re.failed_stage[i]}")
    if not re.positive_definite:
        k, i = np.argwhere(~re.Y_positive_definite)[0]
        raise GateFailed("Y_k^i positive definite", f"stage {k}, player {i + 1}")
    rp = rp or solve_riccati_P(g)
    if not rp.ok:
        raise GateFailed("Lambda invertibility", f"stage {rp.failed_stage}")
    return rep, re, rp


def solve_golne(g: GameSpec, tol_piv: float = lcp_mod.TOL_PIV,
                max_pivots: int | None = None, tol_comp: float = lcp_mod.TOL_COMP,
                tol_feas: float = lcp_mod.TOL_FEAS, kernel: str | None = None,
                fallback: bool = True, verify: bool = True, probes: int = 20,
                seed: int = 0, check_uniqueness: bool = True,
                tolerances: dict | None = None) -> EquilibriumResult:
    """Compute one generalized open-loop Nash equilibrium.

    Raises GateFailed or LcpUnsolved.  Residual checks do not raise: a failed
    verification is flagged in ``result.report`` and the caller decides.
    """
    t0 = time.perf_counter()
    _, re, rp = check_gates(g)
    ops = build_stage_operators(g, rp)
    tt = build_transitions(ops)
    asm = assemble_lcp(g, ops, tt)
    t_asm = time.perf_counter()
    K, c = g.K, g.dims.c
    inst = asm.instance
    sol = lcp_mod.solve_lcp(inst, tol_piv=tol_piv, max_pivots=max_pivots,
                            tol_comp=tol_comp, tol_feas=tol_feas, kernel=kernel,
                            fallback=fallback)
    t_lcp = time.perf_counter()
    if not sol.solved:
        raise LcpUnsolved(sol.status, inst, sol)
    muK = np.maximum(sol.z, 0.0) if inst.d else np.zeros(0)
    mu = muK.reshape(K, c)

    u_syn = (asm.Fsyn @ muK + asm.Psyn).reshape(K, g.dims.m)
    zeta = zeta_recursion(g, rp, ops, mu)
    x_tr = state_recursion(g, ops, zeta, mu)
    x_raw = rollout(g, u_syn)
    gap_traj = float(np.abs(x_tr - x_raw).max())
    x_agg = (asm.Phi0 @ g.x0 + asm.Phi1 @ asm.pK + asm.Phi2 @ muK).reshape(K, g.n)
    gap_agg = float(np.abs(x_agg - x_raw[:-1]).max())
    zeta_agg = (asm.Psi1 @ asm.pK + asm.Psi2 @ muK).reshape(K, g.N, g.n)
    gap_zeta = float(np.abs(zeta_agg - zeta[1:]).max())
    scale = 1.0 + np.abs(x_raw).max()
    if gap_traj > TRAJ_TOL * scale:
        logger.warning("transition-form and raw trajectories differ by %.3g", gap_traj)

    lam = np.zeros((K + 1, g.N, g.n))
    for k in range(K + 1):
        for i in range(g.N):
            lam[k, i] = rp.P[i][k] @ x_raw[k] + zeta[k, i]

    uniq = "unknown"
    if check_uniqueness and 0 < inst.d <= 12:
        found = lcp_mod.enumeration_oracle(inst)
        uniq = "unique" if len(found) == 1 else f"multiple ({len(found)})"
    elif inst.d == 0:
        uniq = "unique"

    res = EquilibriumResult(
        u=u_syn, x=x_raw, mu=mu, lam=lam, zeta=zeta,
        lcp_status=sol.status, lcp_pivots=sol.pivots, uniqueness=uniq,
        diagnostics={
            "lcp_dim": inst.d,
            "lcp_method": sol.method,
            "lcp_attempts": [list(a) for a in sol.attempts],
            "lcp_comp_residual": sol.comp_residual,
            "lcp_feas_residual": sol.feas_residual,
            "trajectory_gap": gap_traj,
            "aggregate_state_gap": gap_agg,
            "aggregate_zeta_gap": gap_zeta,
            "min_eig_Y": re.min_eig_Y,
            "max_cond_Lambda": float(np.max(rp.condition_number)),
            "P_asymmetry": rp.max_asymmetry,
            "time_assemble_s": t_asm - t0,
            "time_lcp_s": t_lcp - t_asm,
        },
        lcp=asm, riccati_E=re, riccati_P=rp)

    from . import verify as verify_mod
    res.costs, res.costs_direct = verify_mod.compute_costs(g, re, res)
    if verify:
        res.report = verify_mod.verify_result(g, res, re=re, rp=rp, probes=probes,
                                              seed=seed, tolerances=tolerances)
    res.diagnostics["time_total_s"] = time.perf_counter() - t0
    return res


# --------------------------------------------------------------------------
# Solution archive


def spec_hash(g: GameSpec) -> str:
    import hashlib
    import json
    from .game_model import spec_to_dict
    blob = json.dumps(spec_to_dict(g, compact=False), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _csv_num(v: float) -> str:
    return f"{v:.17g}"


def write_trajectory_csv(g: GameSpec, res: EquilibriumResult, path) -> None:
    """One row per stage k = 0..K; controls and multipliers are blank at k = K."""
    n, K = g.n, g.K
    head = ["k"] + [f"x{a + 1}" for a in range(n)]
    for i in range(g.N):
        head += [f"u{i + 1}_{a + 1}" for a in range(g.dims.control_dims[i])]
    for i in range(g.N):
        head += [f"mu{i + 1}_{a + 1}" for a in range(g.dims.constraint_dims[i])]
    with open(path, "w") as fh:
        fh.write(",".join(head) + "\n")
        for k in range(K + 1):
            row = [str(k)] + [_csv_num(v) for v in res.x[k]]
            if k < K:
                row += [_csv_num(v) for v in res.u[k]] + [_csv_num(v) for v in res.mu[k]]
            else:
                row += [""] * (g.dims.m + g.dims.c)
            fh.write(",".join(row) + "\n")


def write_solution_archive(g: GameSpec, res: EquilibriumResult, outdir,
                           settings: dict | None = None) -> None:
    """solution.json, trajectory.csv and (if verified) report.json / report.txt."""
    import datetime
    import json
    from pathlib import Path
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    diag = {k: v for k, v in res.diagnostics.items() if not k.startswith("time_")}
    data = {
        "spec_name": g.name,
        "spec_sha256": spec_hash(g),
        "dims": {"players": g.N, "horizon": g.K, "state_dim": g.n,
                 "control_dims": list(g.dims.control_dims),
                 "constraint_dims": list(g.dims.constraint_dims)},
        "settings": settings or {},
        "lcp": {"status": res.lcp_status, "method": diag.get("lcp_method"),
                "attempts": diag.get("lcp_attempts"), "pivots": res.lcp_pivots,
                "dimension": diag.get("lcp_dim")},
        "uniqueness": res.uniqueness,
        "costs": {"certificate": _tolist(res.costs), "direct": _tolist(res.costs_direct)},
        "verification": None if res.report is None else
        ("pass" if res.report.ok else "fail"),
        "diagnostics": {k: v for k, v in diag.items()
                        if k not in ("lcp_method", "lcp_attempts", "lcp_dim")},
        "u": res.u.tolist(),
        "x": res.x.tolist(),
        "mu": res.mu.tolist(),
        "lam": res.lam.tolist(),
        "zeta": res.zeta.tolist(),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    (outdir / "solution.json").write_text(json.dumps(data, indent=1) + "\n")
    write_trajectory_csv(g, res, outdir / "trajectory.csv")
    if res.report is not None:
        res.report.write(outdir)


def _tolist(a):
    return None if a is None else np.asarray(a).tolist()


class ArchiveMismatch(ValueError):
    pass


def load_solution_archive(g: GameSpec, outdir) -> EquilibriumResult:
    """Rebuild an EquilibriumResult from solution.json; dims must match the spec."""
    import json
    from pathlib import Path
    path = Path(outdir)
    if path.is_dir():
        path = path / "solution.json"
    data = json.loads(path.read_text())
    try:
        u = np.asarray(data["u"], float).reshape(g.K, g.dims.m)
        x = np.asarray(data["x"], float).reshape(g.K + 1, g.n)
        mu = np.asarray(data["mu"], float).reshape(g.K, g.dims.c)
        lam = np.asarray(data["lam"], float).reshape(g.K + 1, g.N, g.n)
        zeta = np.asarray(data.get("zeta", np.zeros_like(lam)), float).reshape(
            g.K + 1, g.N, g.n)
    except (KeyError, ValueError) as exc:
        raise ArchiveMismatch(f"{path}: solution does not match the spec dims ({exc})") \
            from None
    gap = float(np.abs(rollout(g, u) - x).max())
    return EquilibriumResult(u=u, x=x, mu=mu, lam=lam, zeta=zeta,
                             lcp_status=data.get("lcp", {}).get("status", ""),
                             uniqueness=data.get("uniqueness", "unknown"),
                             diagnostics={"trajectory_gap": gap})
