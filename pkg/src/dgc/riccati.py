"""Backward matrix recursions for the value certificate and the co-state map.

``solve_riccati_E`` runs one decoupled recursion per player (the matrices
E_k^i, Y_k^i behind the completion-of-squares cost representation).
``solve_riccati_P`` runs the coupled recursion (P_k^i, Lambda_k) that makes
the co-state affine in the state.  Neither raises on singular data; the
verdict fields say where a recursion broke down.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .game_model import GameSpec

logger = logging.getLogger(__name__)

RCOND_MIN = 1e-12


def _rcond(Amat: np.ndarray) -> float:
    s = np.linalg.svd(Amat, compute_uv=False)
    if s.size == 0:
        return 1.0
    return float(s[-1] / s[0]) if s[0] > 0 else 0.0


def _sym(S: np.ndarray) -> np.ndarray:
    return 0.5 * (S + S.T)


@dataclass
class RiccatiE:
    E: list[np.ndarray]  # per player (K+1, n, n)
    Y: list[np.ndarray]  # per player (K, m_i, m_i)
    exists: np.ndarray  # (K, N) bool, stage reached and Y formed
    Y_invertible: np.ndarray  # (K, N)
    Y_positive_definite: np.ndarray  # (K, N)
    min_eig_Y: float
    failed_stage: list[int | None] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """True when every Y_k^i exists and is invertible."""
        return bool(self.exists.all() and self.Y_invertible.all())

    @property
    def positive_definite(self) -> bool:
        return bool(self.ok and self.Y_positive_definite.all())


@dataclass
class RiccatiP:
    P: list[np.ndarray]  # per player (K+1, n, n)
    Lam: np.ndarray  # (K, n, n)
    Lam_invertible: np.ndarray  # (K,)
    condition_number: np.ndarray  # (K,), inf where not reached
    failed_stage: int | None
    max_asymmetry: float  # max_k,i ||P - P'|| / max(1, ||P||)

    @property
    def ok(self) -> bool:
        return self.failed_stage is None


def solve_riccati_E(g: GameSpec, rcond_min: float = RCOND_MIN) -> RiccatiE:
    K, n, N = g.K, g.n, g.N
    A = g.dynamics.A
    E_all, Y_all = [], []
    exists = np.zeros((K, N), bool)
    inv = np.zeros((K, N), bool)
    pd = np.zeros((K, N), bool)
    failed: list[int | None] = []
    min_eig = np.inf
    for i in range(N):
        B = g.dynamics.B[i]
        Q = g.costs[i].Q
        R = g.costs[i].R[i]
        mi = B.shape[2]
        E = np.full((K + 1, n, n), np.nan)
        Y = np.full((K, mi, mi), np.nan)
        E[K] = Q[K]
        stop = None
        for k in range(K - 1, -1, -1):
            Yk = R[k] + B[k].T @ E[k + 1] @ B[k]
            Y[k] = Yk
            exists[k, i] = True
            eig = np.linalg.eigvalsh(_sym(Yk))
            min_eig = min(min_eig, float(eig[0]))
            pd[k, i] = eig[0] > 0
            if _rcond(Yk) < rcond_min:
                stop = k
                logger.info("Y_%d^%d is singular; E recursion stops", k, i + 1)
                break
            inv[k, i] = True
            EA = E[k + 1] @ A[k]
            gain = np.linalg.solve(Yk, B[k].T @ EA)
            E[k] = _sym(A[k].T @ EA + Q[k] - EA.T @ B[k] @ gain)
        E_all.append(E)
        Y_all.append(Y)
        failed.append(stop)
    return RiccatiE(E=E_all, Y=Y_all, exists=exists, Y_invertible=inv,
                    Y_positive_definite=pd, min_eig_Y=min_eig, failed_stage=failed)


def solve_riccati_P(g: GameSpec, rcond_min: float = RCOND_MIN) -> RiccatiP:
    """Coupled recursion P_k^i = Q_k^i + A_k' P_{k+1}^i Lambda_k^{-1} A_k.

    P_k^i is not symmetrized: for more than one player P^i Lambda^{-1} is in
    general not symmetric, and forcing symmetry would break the affine
    co-state relation.  The observed asymmetry is reported instead.
    """
    K, n, N = g.K, g.n, g.N
    A = g.dynamics.A
    P = [np.full((K + 1, n, n), np.nan) for _ in range(N)]
    for i in range(N):
        P[i][K] = g.costs[i].Q[K]
    Lam = np.full((K, n, n), np.nan)
    inv = np.zeros(K, bool)
    cond = np.full(K, np.inf)
    failed = None
    # S_k^j = B^j (R^jj)^{-1} B^j'
    for k in range(K - 1, -1, -1):
        L = np.eye(n)
        for j in range(N):
            Bj = g.dynamics.B[j][k]
            Rj = g.costs[j].R[j][k]
            Sj = Bj @ sla.cho_solve(sla.cho_factor(Rj), Bj.T)
            L += Sj @ P[j][k + 1]
        Lam[k] = L
        rc = _rcond(L)
        cond[k] = 1.0 / rc if rc > 0 else np.inf
        if rc < rcond_min:
            failed = k
            logger.info("Lambda_%d is singular; P recursion stops", k)
            break
        inv[k] = True
        lu = sla.lu_factor(L)
        LinvA = sla.lu_solve(lu, A[k])
        for i in range(N):
            P[i][k] = g.costs[i].Q[k] + A[k].T @ P[i][k + 1] @ LinvA
    asym = 0.0
    for i in range(N):
        for k in range(K + 1):
            Pk = P[i][k]
            if np.all(np.isfinite(Pk)):
                asym = max(asym, np.abs(Pk - Pk.T).max() / max(1.0, np.abs(Pk).max()))
    if N > 1 and asym > 1e-10:
        logger.info("P recursion is not symmetric (max relative asymmetry %.3g)", asym)
    return RiccatiP(P=P, Lam=Lam, Lam_invertible=inv, condition_number=cond,
                    failed_stage=failed, max_asymmetry=float(asym))


def dump_riccati_csv(re: RiccatiE | None, rp: RiccatiP | None, outdir: str | Path) -> list[Path]:
    """One CSV per symbol and player; row = stage, columns = row-major entries."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    def dump(name: str, stack: np.ndarray):
        path = outdir / f"{name}.csv"
        flat = stack.reshape(stack.shape[0], -1)
        with open(path, "w") as fh:
            cols = [f"{name}[{a},{b}]" for a in range(stack.shape[1])
                    for b in range(stack.shape[2])]
            fh.write("k," + ",".join(cols) + "\n")
            for k, row in enumerate(flat):
                fh.write(f"{k}," + ",".join(f"{v:.17g}" for v in row) + "\n")
        written.append(path)

    if re is not None:
        for i, (E, Y) in enumerate(zip(re.E, re.Y)):
            dump(f"E{i + 1}", E)
            dump(f"Y{i + 1}", Y)
    if rp is not None:
        for i, P in enumerate(rp.P):
            dump(f"P{i + 1}", P)
        dump("Lambda", rp.Lam)
    return written
