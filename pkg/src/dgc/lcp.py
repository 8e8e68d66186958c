"""Dense linear complementarity problems.

Find z >= 0 with w = M z + q >= 0 and z'w = 0.  ``lemke_solve`` is the
complementary pivoting solver.  ``newton_solve`` (semismooth Newton on the
Fischer-Burmeister reformulation, finished by an exact LP on the identified
support) is the fallback ``solve_lcp`` uses when Lemke ends on a secondary
ray, which can happen for matrices outside the copositive-plus class.
``enumeration_oracle`` is an exhaustive active-set search used to cross-check
small instances.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from . import _lemke_py

logger = logging.getLogger(__name__)

try:
    from ._lemke_ext import lemke_kernel as _compiled_kernel
except ImportError:  # pragma: no cover - depends on the build
    _compiled_kernel = None

KERNELS = {"python": _lemke_py.lemke_kernel}
if _compiled_kernel is not None:
    KERNELS["compiled"] = _compiled_kernel
DEFAULT_KERNEL = "compiled" if _compiled_kernel is not None else "python"

TOL_PIV = 1e-10
TOL_COMP = 1e-8
TOL_FEAS = 1e-8
ORACLE_MAX_DIM = 25

SOLVED = "Solved"
SECONDARY_RAY = "SecondaryRay"
PIVOT_LIMIT = "PivotLimit"
TRIVIAL = "TrivialQNonneg"
INACCURATE = "Inaccurate"
NO_CONVERGENCE = "NoConvergence"

_KERNEL_STATUS = {_lemke_py.SOLVED: SOLVED, _lemke_py.RAY: SECONDARY_RAY,
                  _lemke_py.PIVOT_LIMIT: PIVOT_LIMIT}


class LcpDimensionError(ValueError):
    pass


@dataclass(frozen=True)
class LcpInstance:
    M: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M, dtype=float)
        q = np.asarray(self.q, dtype=float).reshape(-1)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] != q.shape[0]:
            raise ValueError(f"LCP shapes do not match: M {M.shape}, q {q.shape}")
        if not (np.all(np.isfinite(M)) and np.all(np.isfinite(q))):
            raise ValueError("LCP data must be finite")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "q", q)

    @property
    def d(self) -> int:
        return self.q.shape[0]


@dataclass
class LcpSolution:
    z: np.ndarray
    w: np.ndarray
    status: str
    pivots: int = 0
    comp_residual: float = 0.0
    feas_residual: float = 0.0
    basis: np.ndarray | None = field(default=None, repr=False)
    method: str = "lemke"
    attempts: list = field(default_factory=list)  # (method, status) in order tried

    @property
    def solved(self) -> bool:
        return self.status in (SOLVED, TRIVIAL)


def residuals(M: np.ndarray, q: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, float, float]:
    w = M @ z + q
    comp = float(np.max(np.abs(z * w), initial=0.0))
    feas = float(max(0.0, -np.min(z, initial=0.0), -np.min(w, initial=0.0)))
    return w, comp, feas


def _refine(M, q, basis, d):
    """Recompute the basic solution from the original data (not the tableau)."""
    cols = np.zeros((d, d))
    for row, var in enumerate(basis):
        if var < d:
            cols[var, row] = 1.0
        else:
            cols[:, row] = -M[:, var - d]
    try:
        xb = np.linalg.solve(cols, q)
    except np.linalg.LinAlgError:
        return None
    z = np.zeros(d)
    for row, var in enumerate(basis):
        if d <= var < 2 * d:
            z[var - d] = xb[row]
    return z


def lemke_solve(p: LcpInstance, tol_piv: float = TOL_PIV, max_pivots: int | None = None,
                tol_comp: float = TOL_COMP, tol_feas: float = TOL_FEAS,
                kernel: str | None = None) -> LcpSolution:
    """Lemke's complementary pivoting with covering vector e = (1, ..., 1).

    Rows of (M, q) are equilibrated before pivoting; the returned z, w and
    residuals refer to the original data.  Ties in the ratio test are broken
    lexicographically.
    """
    M, q, d = p.M, p.q, p.d
    if d == 0 or np.all(q >= 0):
        return LcpSolution(z=np.zeros(d), w=q.copy(), status=TRIVIAL)
    if max_pivots is None:
        max_pivots = 50 * d
    run = KERNELS[kernel or DEFAULT_KERNEL]

    scale = np.abs(M).max(axis=1)
    scale = np.where(scale > 0, 1.0 / np.where(scale > 0, scale, 1.0), 1.0)
    T = np.zeros((d, 2 * d + 2))
    T[:, :d] = np.eye(d)
    T[:, d:2 * d] = -scale[:, None] * M
    T[:, 2 * d] = -1.0
    T[:, -1] = scale * q
    basis = np.arange(d, dtype=np.int64)

    code, pivots = run(T, basis, float(tol_piv), int(max_pivots))
    status = _KERNEL_STATUS[int(code)]
    if status != SOLVED:
        logger.info("Lemke stopped with %s after %d pivots", status, pivots)
        z = np.zeros(d)
        for row, var in enumerate(basis):
            if d <= var < 2 * d:
                z[var - d] = T[row, -1]
        w, comp, feas = residuals(M, q, z)
        return LcpSolution(z, w, status, pivots, comp, feas, basis.copy())

    z_tab = np.zeros(d)
    for row, var in enumerate(basis):
        if d <= var < 2 * d:
            z_tab[var - d] = T[row, -1]
    candidates = [z_tab]
    z_ref = _refine(M, q, basis, d)
    if z_ref is not None:
        candidates.insert(0, z_ref)
    best = None
    for z in candidates:
        w, comp, feas = residuals(M, q, z)
        if best is None or max(comp, feas) < max(best[2], best[3]):
            best = (z, w, comp, feas)
    z, w, comp, feas = best
    if comp > tol_comp or feas > tol_feas:
        logger.warning("Lemke terminated but residuals exceed tolerance "
                       "(comp %.3g, feas %.3g)", comp, feas)
        status = INACCURATE
    return LcpSolution(z, w, status, pivots, comp, feas, basis.copy())


def _fb(M, q, z):
    w = M @ z + q
    return np.sqrt(z * z + w * w) - z - w, w


def support_polish(M: np.ndarray, q: np.ndarray, z: np.ndarray,
                   eps: float = 1e-6) -> np.ndarray | None:
    """Exact solution on the support suggested by an approximate one.

    Rows with z_i > w_i (and z_i > eps) are taken as active (w_i = 0, z_i >= 0),
    the rest as inactive (z_i = 0, w_i >= 0); the resulting linear feasibility
    problem is solved by LP.  Returns None when that support admits no point.
    """
    d = q.shape[0]
    w = M @ z + q
    for S in (np.flatnonzero((z > w) & (z > eps)), np.flatnonzero(z > eps)):
        if S.size == 0:
            if np.all(q >= 0):
                return np.zeros(d)
            continue
        rest = np.ones(d, bool)
        rest[S] = False
        Ms = M[:, S]
        res = linprog(np.zeros(S.size), A_ub=-Ms[rest], b_ub=q[rest],
                      A_eq=Ms[S], b_eq=-q[S], bounds=(0, None), method="highs")
        if res.status == 0:
            out = np.zeros(d)
            out[S] = res.x
            return out
    return None


def newton_solve(p: LcpInstance, tol_comp: float = TOL_COMP, tol_feas: float = TOL_FEAS,
                 max_iter: int = 1000, z0: np.ndarray | None = None,
                 polish_below: float = 1e-2, polish_every: int = 10) -> LcpSolution:
    """Semismooth Newton on phi(z) = sqrt(z^2 + w^2) - z - w with Armijo search.

    Solutions of degenerate LCPs are often not isolated (several multiplier
    vectors give the same primal trajectory), which makes the Newton phase
    converge slowly.  Once the merit is small, the current point is handed to
    ``support_polish`` every few iterations and accepted as soon as the
    polished point meets the tolerances.
    """
    M, q, d = p.M, p.q, p.d
    if d == 0 or np.all(q >= 0):
        return LcpSolution(z=np.zeros(d), w=q.copy(), status=TRIVIAL, method="newton")
    z = np.zeros(d) if z0 is None else np.maximum(np.asarray(z0, float), 0.0)
    F, w = _fb(M, q, z)
    theta = 0.5 * F @ F
    eye = np.eye(d)
    it = 0
    for it in range(1, max_iter + 1):
        fmax = np.abs(F).max()
        if fmax < polish_below and (it % polish_every == 0 or fmax < 1e-10):
            zp = support_polish(M, q, z)
            if zp is not None:
                wp, comp, feas = residuals(M, q, zp)
                if comp <= tol_comp and feas <= tol_feas:
                    return LcpSolution(zp, wp, SOLVED, it, comp, feas, method="newton")
        r = np.sqrt(z * z + w * w)
        tiny = r < 1e-14
        rs = np.where(tiny, 1.0, r)
        a = np.where(tiny, np.sqrt(0.5) - 1.0, z / rs - 1.0)
        b = np.where(tiny, np.sqrt(0.5) - 1.0, w / rs - 1.0)
        J = a[:, None] * eye + b[:, None] * M
        grad = J.T @ F
        try:
            step = np.linalg.solve(J, -F)
            if not np.all(np.isfinite(step)) or grad @ step > -1e-12 * (step @ step):
                step = -grad
        except np.linalg.LinAlgError:
            step = -grad
        slope = grad @ step
        t = 1.0
        while True:
            zn = z + t * step
            Fn, wn = _fb(M, q, zn)
            thn = 0.5 * Fn @ Fn
            if thn <= theta + 1e-4 * t * slope or t < 1e-14:
                break
            t *= 0.5
        z, F, w, theta = zn, Fn, wn, thn
    zp = support_polish(M, q, z)
    cand = [np.maximum(z, 0.0)] + ([zp] if zp is not None else [])
    best = min(cand, key=lambda v: max(residuals(M, q, v)[1:]))
    wb, comp, feas = residuals(M, q, best)
    status = SOLVED if comp <= tol_comp and feas <= tol_feas else NO_CONVERGENCE
    return LcpSolution(best, wb, status, it, comp, feas, method="newton")


def solve_lcp(p: LcpInstance, tol_piv: float = TOL_PIV, max_pivots: int | None = None,
              tol_comp: float = TOL_COMP, tol_feas: float = TOL_FEAS,
              kernel: str | None = None, fallback: bool = True, restarts: int = 4,
              enumerate_below: int = 12, seed: int = 0) -> LcpSolution:
    """Lemke first; on any non-solved outcome optionally fall back.

    The fallback chain is semismooth Newton from z = 0, then from ``restarts``
    seeded random points, then (for d <= ``enumerate_below``) exhaustive support
    enumeration.  ``attempts`` records every method tried and its outcome.
    """
    sol = lemke_solve(p, tol_piv=tol_piv, max_pivots=max_pivots, tol_comp=tol_comp,
                      tol_feas=tol_feas, kernel=kernel)
    attempts = [("lemke", sol.status)]
    sol.attempts = attempts
    if sol.solved or not fallback:
        return sol
    logger.info("Lemke returned %s; retrying with semismooth Newton", sol.status)
    rng = np.random.default_rng(seed)
    starts = [None] + [rng.exponential(1.0, p.d) for _ in range(restarts)]
    for z0 in starts:
        alt = newton_solve(p, tol_comp=tol_comp, tol_feas=tol_feas, z0=z0)
        attempts.append(("newton", alt.status))
        if alt.solved:
            alt.attempts = attempts
            return alt
    if p.d <= enumerate_below:
        found = enumeration_oracle(p)
        attempts.append(("enumeration", SOLVED if len(found) else SECONDARY_RAY))
        if len(found):
            alt = found.solutions[0]
            alt.method = "enumeration"
            alt.attempts = attempts
            return alt
    return sol


@dataclass
class OracleResult:
    solutions: list[LcpSolution]
    singular_subsets: int

    def __iter__(self):
        return iter(self.solutions)

    def __len__(self):
        return len(self.solutions)


def enumeration_oracle(p: LcpInstance, tol: float = 1e-9, dedup: float = 1e-8,
                       max_dim: int = ORACLE_MAX_DIM) -> OracleResult:
    """Every LCP solution, by solving M_SS z_S = -q_S for all supports S."""
    M, q, d = p.M, p.q, p.d
    if d > max_dim:
        raise LcpDimensionError(
            f"enumeration oracle limited to d <= {max_dim} (got {d})")
    found: list[LcpSolution] = []
    singular = 0
    for size in range(d + 1):
        for S in itertools.combinations(range(d), size):
            z = np.zeros(d)
            if size:
                idx = list(S)
                Mss = M[np.ix_(idx, idx)]
                if np.linalg.matrix_rank(Mss) < size:
                    singular += 1
                    continue
                z[idx] = np.linalg.solve(Mss, -q[idx])
            w = M @ z + q
            if z.min(initial=0.0) < -tol or w.min(initial=0.0) < -tol:
                continue
            if size and np.abs(w[list(S)]).max() > tol * (1 + np.abs(q).max()):
                continue
            z = np.maximum(z, 0.0)
            if any(np.abs(z - s.z).max() <= dedup for s in found):
                continue
            _, comp, feas = residuals(M, q, z)
            found.append(LcpSolution(z, M @ z + q, SOLVED, 0, comp, feas))
    return OracleResult(found, singular)


# --------------------------------------------------------------------------
# Replay format: "LCP <d>" header, then d rows "M_i1 ... M_id | q_i"


def dump_lcp(p: LcpInstance, path: str | Path, comment: str = "") -> None:
    with open(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write(f"LCP {p.d}\n")
        for i in range(p.d):
            fh.write(" ".join(f"{v:.17g}" for v in p.M[i]))
            fh.write(f" | {p.q[i]:.17g}\n")


def load_lcp(path: str | Path) -> LcpInstance:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    head = lines[0].split()
    if len(head) != 2 or head[0] != "LCP":
        raise ValueError(f"{path}: missing 'LCP <d>' header")
    d = int(head[1])
    if len(lines) - 1 != d:
        raise ValueError(f"{path}: expected {d} rows, found {len(lines) - 1}")
    M = np.zeros((d, d))
    q = np.zeros(d)
    for i, ln in enumerate(lines[1:]):
        left, right = ln.split("|")
        M[i] = [float(v) for v in left.split()] if d else []
        q[i] = float(right)
    return LcpInstance(M, q)
