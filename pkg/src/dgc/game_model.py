"""Game instances: data types, JSON I/O, validation and feasibility probes.

A game is stored fully expanded: every stage-indexed matrix is a stacked
numpy array whose leading axis is the stage.  Stationary shorthand in the
JSON format is broadcast once, at load time.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linprog

logger = logging.getLogger(__name__)

SYM_TOL = 1e-9
TOL_RANK = 1e-10
TOL_PD = 1e-12


class SpecError(ValueError):
    """Base class for problems with a game spec."""


class SpecParseError(SpecError):
    pass


class SpecShapeError(SpecError):
    pass


class SpecValueError(SpecError):
    pass


@dataclass(frozen=True)
class Dimensions:
    num_players: int
    horizon: int
    state_dim: int
    control_dims: tuple[int, ...]
    constraint_dims: tuple[int, ...]

    def __post_init__(self):
        if self.num_players < 1 or self.horizon < 1 or self.state_dim < 1:
            raise SpecValueError("players, horizon and state_dim must be >= 1")
        if len(self.control_dims) != self.num_players:
            raise SpecShapeError("control_dims must have one entry per player")
        if len(self.constraint_dims) != self.num_players:
            raise SpecShapeError("constraint_dims must have one entry per player")
        if any(m < 1 for m in self.control_dims):
            raise SpecValueError("every control dimension must be >= 1")
        if any(c < 0 for c in self.constraint_dims):
            raise SpecValueError("constraint dimensions must be >= 0")

    @property
    def m(self) -> int:
        return int(sum(self.control_dims))

    @property
    def c(self) -> int:
        return int(sum(self.constraint_dims))

    @property
    def control_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.control_dims)]).astype(int)

    @property
    def constraint_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.constraint_dims)]).astype(int)

    def control_slice(self, i: int) -> slice:
        off = self.control_offsets
        return slice(int(off[i]), int(off[i + 1]))

    def constraint_slice(self, i: int) -> slice:
        off = self.constraint_offsets
        return slice(int(off[i]), int(off[i + 1]))


@dataclass(frozen=True)
class StageDynamics:
    A: np.ndarray  # (K, n, n)
    B: tuple[np.ndarray, ...]  # per player (K, n, m_i)
    x0: np.ndarray  # (n,)

    @property
    def B_joint(self) -> np.ndarray:
        """Stacked [B^1, ..., B^N] with shape (K, n, m)."""
        return np.concatenate(self.B, axis=2)


@dataclass(frozen=True)
class StageCost:
    Q: np.ndarray  # (K+1, n, n)
    p: np.ndarray  # (K+1, n)
    R: tuple[np.ndarray, ...]  # R[j] has shape (K, m_i, m_j)


@dataclass(frozen=True)
class StageConstraint:
    M: np.ndarray  # (K, c_i, n)
    N: np.ndarray  # (K, c_i, m)
    r: np.ndarray  # (K, c_i)


@dataclass(frozen=True)
class GameSpec:
    dims: Dimensions
    dynamics: StageDynamics
    costs: tuple[StageCost, ...]
    constraints: tuple[StageConstraint, ...]
    name: str = "game"
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def K(self) -> int:
        return self.dims.horizon

    @property
    def n(self) -> int:
        return self.dims.state_dim

    @property
    def N(self) -> int:
        return self.dims.num_players

    @property
    def x0(self) -> np.ndarray:
        return self.dynamics.x0

    def own_block(self, i: int) -> np.ndarray:
        """[N_k^i]_i for every stage, shape (K, c_i, m_i)."""
        return self.constraints[i].N[:, :, self.dims.control_slice(i)]

    def stacked_constraints(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Joint (M̄_k, N̄_k, r_k) for all stages: (K, c, n), (K, c, m), (K, c)."""
        K, n, m = self.K, self.n, self.dims.m
        if self.dims.c == 0:
            return np.zeros((K, 0, n)), np.zeros((K, 0, m)), np.zeros((K, 0))
        Mb = np.concatenate([con.M for con in self.constraints], axis=1)
        Nb = np.concatenate([con.N for con in self.constraints], axis=1)
        rb = np.concatenate([con.r for con in self.constraints], axis=1)
        return Mb, Nb, rb

    def with_x0(self, x0: Sequence[float]) -> "GameSpec":
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape != (self.n,):
            raise SpecShapeError(f"x0 must have length {self.n}")
        return replace(self, dynamics=replace(self.dynamics, x0=x0))


# --------------------------------------------------------------------------
# JSON loading / saving


def _as_array(value, name: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SpecParseError(f"{name}: not a numeric array ({exc})") from None
    if not np.all(np.isfinite(arr)):
        raise SpecValueError(f"{name}: non-finite entries")
    return arr


def _depth(value) -> int:
    d = 0
    while isinstance(value, (list, tuple)) and len(value) > 0:
        d += 1
        value = value[0]
    return d


def _mat(value, name: str, count: int, rows: int, cols: int) -> np.ndarray:
    """Broadcast a bare matrix, or check a per-stage list, to (count, rows, cols)."""
    if rows == 0 or cols == 0:
        return np.zeros((count, rows, cols))
    if value is None:
        raise SpecParseError(f"{name}: missing")
    depth = _depth(value)
    if depth == 2:
        arr = _as_array(value, name)
        if arr.shape != (rows, cols):
            raise SpecShapeError(
                f"{name}: expected shape ({rows}, {cols}), got {arr.shape}")
        return np.broadcast_to(arr, (count, rows, cols)).copy()
    if depth == 3:
        if len(value) != count:
            raise SpecShapeError(
                f"{name}: per-stage list must have length {count}, got {len(value)}")
        out = np.empty((count, rows, cols))
        for k, blk in enumerate(value):
            arr = _as_array(blk, f"{name} at stage {k}")
            if arr.shape != (rows, cols):
                raise SpecShapeError(
                    f"{name} at stage {k}: expected shape ({rows}, {cols}), "
                    f"got {arr.shape}")
            out[k] = arr
        return out
    raise SpecShapeError(f"{name}: expected a matrix or a list of {count} matrices")


def _vec(value, name: str, count: int, size: int) -> np.ndarray:
    if size == 0:
        return np.zeros((count, 0))
    if value is None:
        raise SpecParseError(f"{name}: missing")
    depth = _depth(value)
    if depth == 1:
        arr = _as_array(value, name)
        if arr.shape != (size,):
            raise SpecShapeError(f"{name}: expected length {size}, got {arr.shape[0]}")
        return np.broadcast_to(arr, (count, size)).copy()
    if depth == 2:
        if len(value) != count:
            raise SpecShapeError(
                f"{name}: per-stage list must have length {count}, got {len(value)}")
        out = np.empty((count, size))
        for k, v in enumerate(value):
            arr = _as_array(v, f"{name} at stage {k}")
            if arr.shape != (size,):
                raise SpecShapeError(f"{name} at stage {k}: expected length {size}")
            out[k] = arr
        return out
    raise SpecShapeError(f"{name}: expected a vector or a list of {count} vectors")


def _symmetrize(S: np.ndarray, name: str, tol: float = SYM_TOL) -> np.ndarray:
    asym = np.abs(S - np.swapaxes(S, -1, -2)).max(initial=0.0)
    scale = max(1.0, np.abs(S).max(initial=0.0))
    if asym > tol * scale:
        logger.warning("%s is not symmetric (max |S - S'| = %.3g); using (S + S')/2",
                       name, asym)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def _rkey(i: int, j: int, N: int) -> str:
    return f"{i + 1}{j + 1}" if N < 10 else f"{i + 1},{j + 1}"


def _parse_rkey(key: str, N: int) -> tuple[int, int]:
    if "," in key:
        a, b = key.split(",")
    elif len(key) == 2:
        a, b = key[0], key[1]
    else:
        raise SpecParseError(f"R key {key!r}: use 'ij' (N < 10) or 'i,j'")
    try:
        i, j = int(a) - 1, int(b) - 1
    except ValueError:
        raise SpecParseError(f"R key {key!r} is not a player pair") from None
    if not (0 <= i < N and 0 <= j < N):
        raise SpecShapeError(f"R key {key!r} refers to a player outside 1..{N}")
    return i, j


def spec_from_dict(data: dict[str, Any]) -> GameSpec:
    """Build an expanded GameSpec from the JSON-level dictionary."""
    if not isinstance(data, dict):
        raise SpecParseError("top level must be an object")
    try:
        N = int(data["players"])
        K = int(data["horizon"])
        n = int(data["state_dim"])
        mdims = tuple(int(v) for v in data["control_dims"])
        cdims = tuple(int(v) for v in data.get("constraint_dims", [0] * N))
        dyn = data["dynamics"]
        costs = data["costs"]
    except KeyError as exc:
        raise SpecParseError(f"missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise SpecParseError(str(exc)) from None
    dims = Dimensions(N, K, n, mdims, cdims)
    m = dims.m

    x0 = _as_array(data.get("x0"), "x0").reshape(-1) if data.get("x0") is not None \
        else None
    if x0 is None or x0.shape != (n,):
        raise SpecShapeError(f"x0: expected length {n}")

    A = _mat(dyn.get("A"), "A", K, n, n)
    Bs = dyn.get("B")
    if not isinstance(Bs, list) or len(Bs) != N:
        raise SpecShapeError(f"B: expected one entry per player ({N})")
    B = tuple(_mat(Bs[i], f"B^{i + 1}", K, n, mdims[i]) for i in range(N))

    if not isinstance(costs, list) or len(costs) != N:
        raise SpecShapeError(f"costs: expected one entry per player ({N})")
    cost_list = []
    for i, ci in enumerate(costs):
        Q = _symmetrize(_mat(ci.get("Q"), f"Q^{i + 1}", K + 1, n, n), f"Q^{i + 1}")
        p = _vec(ci.get("p", [0.0] * n), f"p^{i + 1}", K + 1, n)
        Rraw = ci.get("R", {})
        if not isinstance(Rraw, dict):
            raise SpecParseError(f"R of player {i + 1} must be an object keyed by 'ij'")
        R = [np.zeros((K, mdims[i], mdims[j])) for j in range(N)]
        seen = set()
        for key, val in Rraw.items():
            a, b = _parse_rkey(key, N)
            if a != i:
                raise SpecShapeError(
                    f"R^{key} listed under player {i + 1}; first index must be {i + 1}")
            R[b] = _mat(val, f"R^{key}", K, mdims[i], mdims[b])
            seen.add(b)
        if i not in seen:
            raise SpecParseError(f"R^{_rkey(i, i, N)} (own control cost) is required")
        R[i] = _symmetrize(R[i], f"R^{_rkey(i, i, N)}")
        cost_list.append(StageCost(Q=Q, p=p, R=tuple(R)))

    cons = data.get("constraints", [{} for _ in range(N)])
    if not isinstance(cons, list) or len(cons) != N:
        raise SpecShapeError(f"constraints: expected one entry per player ({N})")
    con_list = []
    for i, ci in enumerate(cons):
        c_i = cdims[i]
        Mi = _mat(ci.get("M"), f"M^{i + 1}", K, c_i, n)
        Ni = _mat(ci.get("N"), f"N^{i + 1}", K, c_i, m)
        ri = _vec(ci.get("r"), f"r^{i + 1}", K, c_i)
        con_list.append(StageConstraint(M=Mi, N=Ni, r=ri))

    meta = {k: data[k] for k in ("description",) if k in data}
    return GameSpec(dims=dims,
                    dynamics=StageDynamics(A=A, B=B, x0=x0),
                    costs=tuple(cost_list),
                    constraints=tuple(con_list),
                    name=str(data.get("name", "game")),
                    metadata=meta)


def _compact(arr: np.ndarray):
    """Per-stage list, or a bare block when every stage is identical."""
    if arr.shape[0] > 0 and np.all(arr == arr[0]):
        return arr[0].tolist()
    return arr.tolist()


def spec_to_dict(g: GameSpec, compact: bool = True) -> dict[str, Any]:
    enc = _compact if compact else (lambda a: a.tolist())
    N = g.N
    out: dict[str, Any] = {
        "name": g.name,
        "players": N,
        "horizon": g.K,
        "state_dim": g.n,
        "control_dims": list(g.dims.control_dims),
        "constraint_dims": list(g.dims.constraint_dims),
        "x0": g.x0.tolist(),
        "dynamics": {"A": enc(g.dynamics.A), "B": [enc(b) for b in g.dynamics.B]},
        "costs": [
            {"Q": enc(c.Q), "p": enc(c.p),
             "R": {_rkey(i, j, N): enc(c.R[j]) for j in range(N)}}
            for i, c in enumerate(g.costs)],
        "constraints": [
            {"M": enc(con.M), "N": enc(con.N), "r": enc(con.r)}
            for con in g.constraints],
    }
    if "description" in g.metadata:
        out["description"] = g.metadata["description"]
    return out


def load_spec(path: str | Path) -> GameSpec:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SpecParseError(f"{path}: {exc}") from None
    return spec_from_dict(data)


def save_spec(g: GameSpec, path: str | Path, compact: bool = True) -> None:
    # json writes floats with repr(), which round-trips doubles exactly
    with open(path, "w") as fh:
        json.dump(spec_to_dict(g, compact=compact), fh, indent=1)


def specs_equal(a: GameSpec, b: GameSpec) -> bool:
    """Bit-exact comparison of two expanded specs."""
    if a.dims != b.dims or a.name != b.name:
        return False
    pairs = [(a.dynamics.A, b.dynamics.A), (a.x0, b.x0)]
    pairs += list(zip(a.dynamics.B, b.dynamics.B))
    for ca, cb in zip(a.costs, b.costs):
        pairs += [(ca.Q, cb.Q), (ca.p, cb.p)] + list(zip(ca.R, cb.R))
    for ca, cb in zip(a.constraints, b.constraints):
        pairs += [(ca.M, cb.M), (ca.N, cb.N), (ca.r, cb.r)]
    return all(x.shape == y.shape and np.array_equal(x, y) for x, y in pairs)


# --------------------------------------------------------------------------
# Validation


@dataclass
class ValidationReport:
    rank_ok: bool
    pd_ok: bool
    rank_failures: list[tuple[int, int, float]]
    pd_failures: list[tuple[int, int, float]]
    boundedness: str = "not checked"

    @property
    def ok(self) -> bool:
        return self.rank_ok and self.pd_ok

    def rows(self) -> list[tuple[str, str, str]]:
        def fmt(fails):
            if not fails:
                return "-"
            k, i, v = fails[0]
            more = f" (+{len(fails) - 1} more)" if len(fails) > 1 else ""
            return f"stage {k}, player {i + 1}: {v:.3g}{more}"
        return [
            ("feasible set bounded", self.boundedness, "-"),
            ("own constraint block full rank", "pass" if self.rank_ok else "FAIL",
             fmt(self.rank_failures)),
            ("own control cost positive definite", "pass" if self.pd_ok else "FAIL",
             fmt(self.pd_failures)),
        ]


def _pd_margin(R: np.ndarray, tol_pd: float) -> float:
    """Smallest Cholesky pivot relative to the largest diagonal; <= tol fails."""
    scale = max(np.abs(np.diag(R)).max(initial=0.0), np.finfo(float).tiny)
    try:
        L = np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        return -np.inf
    return float(np.min(np.diag(L) ** 2) / scale)


def validate_game(g: GameSpec, tol_pd: float = TOL_PD,
                         tol_rank: float = TOL_RANK) -> ValidationReport:
    """Rank and definiteness checks on the stage data.

    Rank is tested as rank([N_k^i]_i) == min(c_i, m_i) via the ratio of the
    smallest to the largest relevant singular value.
    """
    rank_fail, pd_fail = [], []
    for i in range(g.N):
        own = g.own_block(i)
        for k in range(g.K):
            R = g.costs[i].R[i][k]
            margin = _pd_margin(R, tol_pd)
            if not margin > tol_pd:
                pd_fail.append((k, i, margin))
            if own.shape[1] == 0:
                continue
            s = np.linalg.svd(own[k], compute_uv=False)
            rmin = min(own.shape[1], own.shape[2])
            ratio = s[rmin - 1] / s[0] if s[0] > 0 else 0.0
            if not ratio > tol_rank:
                rank_fail.append((k, i, float(ratio)))
    return ValidationReport(rank_ok=not rank_fail, pd_ok=not pd_fail,
                            rank_failures=rank_fail, pd_failures=pd_fail)


# --------------------------------------------------------------------------
# Stacked (open-loop) representation of the game


def state_map(g: GameSpec, x0: np.ndarray | None = None):
    """Affine map from the stacked joint control to the trajectory.

    Returns (a, S) with x_k = a[k] + S[k] @ U for k = 0..K, where U stacks
    u_0, ..., u_{K-1} (each of length m, player blocks in order).
    """
    x0 = g.x0 if x0 is None else np.asarray(x0, float)
    K, n, m = g.K, g.n, g.dims.m
    A, B = g.dynamics.A, g.dynamics.B_joint
    a = np.zeros((K + 1, n))
    S = np.zeros((K + 1, n, K * m))
    a[0] = x0
    for k in range(K):
        a[k + 1] = A[k] @ a[k]
        S[k + 1] = A[k] @ S[k]
        S[k + 1][:, k * m:(k + 1) * m] += B[k]
    return a, S


def constraint_map(g: GameSpec, x0: np.ndarray | None = None):
    """Stacked joint constraints G @ U + h >= 0 (rows stage-major)."""
    K, m, c = g.K, g.dims.m, g.dims.c
    a, S = state_map(g, x0)
    Mb, Nb, rb = g.stacked_constraints()
    G = np.zeros((K * c, K * m))
    h = np.zeros(K * c)
    for k in range(K):
        rows = slice(k * c, (k + 1) * c)
        G[rows] = Mb[k] @ S[k]
        G[rows, k * m:(k + 1) * m] += Nb[k]
        h[rows] = Mb[k] @ a[k] + rb[k]
    return G, h


def rollout(g: GameSpec, u: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    """State trajectory (K+1, n) under joint controls u of shape (K, m)."""
    x0 = g.x0 if x0 is None else np.asarray(x0, float)
    A, B = g.dynamics.A, g.dynamics.B_joint
    x = np.zeros((g.K + 1, g.n))
    x[0] = x0
    for k in range(g.K):
        x[k + 1] = A[k] @ x[k] + B[k] @ u[k]
    return x


def constraint_values(g: GameSpec, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """M̄_k x_k + N̄_k u_k + r_k for every stage, shape (K, c)."""
    Mb, Nb, rb = g.stacked_constraints()
    return np.einsum("kcn,kn->kc", Mb, x[:-1]) + np.einsum("kcm,km->kc", Nb, u) + rb


def player_costs(g: GameSpec, u: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    """Every player's cost J^i evaluated by direct rollout."""
    x = rollout(g, u, x0)
    K = g.K
    J = np.zeros(g.N)
    for i, cost in enumerate(g.costs):
        total = 0.5 * x[K] @ cost.Q[K] @ x[K] + cost.p[K] @ x[K]
        for k in range(K):
            total += 0.5 * x[k] @ cost.Q[k] @ x[k] + cost.p[k] @ x[k]
            for j in range(g.N):
                uj = u[k, g.dims.control_slice(j)]
                total += 0.5 * uj @ cost.R[j][k] @ uj
        J[i] = total
    return J


# --------------------------------------------------------------------------
# Feasibility


@dataclass
class FeasibilityReport:
    status: str  # feasible | infeasible | unknown
    point: np.ndarray | None = None
    boundedness: str = "not checked"  # bounded | unbounded | unknown | not checked
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def feasibility_probe(g: GameSpec, check_bounded: bool = False) -> FeasibilityReport:
    """One LP over the stacked joint controls; optional 2Km boundedness LPs."""
    K, m = g.K, g.dims.m
    nvar = K * m
    if g.dims.c == 0:
        bounded = "unbounded" if check_bounded else "not checked"
        return FeasibilityReport("feasible", np.zeros(nvar), bounded,
                                 "no constraints")
    G, h = constraint_map(g)
    free = [(None, None)] * nvar
    res = linprog(np.zeros(nvar), A_ub=-G, b_ub=h, bounds=free, method="highs")
    if res.status == 2:
        return FeasibilityReport("infeasible", message=res.message)
    if res.status != 0:
        return FeasibilityReport("unknown", message=res.message)
    report = FeasibilityReport("feasible", np.asarray(res.x), message=res.message)
    if check_bounded:
        verdict = "bounded"
        for j in range(nvar):
            for sign in (1.0, -1.0):
                cvec = np.zeros(nvar)
                cvec[j] = sign
                r = linprog(cvec, A_ub=-G, b_ub=h, bounds=free, method="highs")
                if r.status == 3:
                    report.boundedness = "unbounded"
                    return report
                if r.status != 0:
                    verdict = "unknown"
        report.boundedness = verdict
    return report


# --------------------------------------------------------------------------
# Pure state constraints


def reformulate_state_constraints(
        g: GameSpec,
        pure: Sequence[tuple[int, int, np.ndarray, np.ndarray]]) -> GameSpec:
    """Rewrite pure state constraints S x_k + s >= 0 as stage-(k-1) mixed rows.

    Rows are appended to player i's block at stage k-1.  The per-player row
    count must be uniform across stages, so stages that receive fewer rows
    are padded with inert rows 0·x + 0·u + 1 >= 0.
    """
    K, n, m = g.K, g.n, g.dims.m
    A, B = g.dynamics.A, g.dynamics.B_joint
    added: list[list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]]] = [
        [[] for _ in range(K)] for _ in range(g.N)]
    for k, i, S, s in pure:
        S = np.atleast_2d(np.asarray(S, float))
        s = np.atleast_1d(np.asarray(s, float))
        if not 1 <= k <= K:
            raise SpecValueError(
                f"pure state constraint at stage {k}: only stages 1..{K} can be "
                "reformulated (stage-0 constraints restrict x0 instead)")
        if not 0 <= i < g.N:
            raise SpecValueError(f"player index {i} out of range")
        if S.shape[1] != n or S.shape[0] != s.shape[0]:
            raise SpecShapeError(f"state constraint at stage {k}: S must be c'x{n}")
        added[i][k - 1].append((S @ A[k - 1], S @ B[k - 1], s))

    new_cons = []
    cdims = list(g.dims.constraint_dims)
    for i, con in enumerate(g.constraints):
        extra = max(sum(blk[0].shape[0] for blk in added[i][k]) for k in range(K))
        if extra == 0:
            new_cons.append(con)
            continue
        Mx = np.zeros((K, extra, n))
        Nx = np.zeros((K, extra, m))
        rx = np.ones((K, extra))
        for k in range(K):
            row = 0
            for Mk, Nk, rk in added[i][k]:
                c2 = Mk.shape[0]
                Mx[k, row:row + c2] = Mk
                Nx[k, row:row + c2] = Nk
                rx[k, row:row + c2] = rk
                row += c2
        new_cons.append(StageConstraint(M=np.concatenate([con.M, Mx], axis=1),
                                        N=np.concatenate([con.N, Nx], axis=1),
                                        r=np.concatenate([con.r, rx], axis=1)))
        cdims[i] += extra
    dims = replace(g.dims, constraint_dims=tuple(cdims))
    return replace(g, dims=dims, constraints=tuple(new_cons))
