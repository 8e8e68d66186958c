"""Two-source, two-relay network flow game and its domain postprocessing.

Each source i routes data through relays l = 1, 2 at rates v^{il}.  Relay
batteries drain with the outgoing flow; players trade rate utility against
battery payoff.  Controls are shifted, u^{il} = v^{il} - w^{il}/t^{il}, and
the state carries a constant third component z = 1 to absorb affine terms.

Constraint rows per player, in order:
  1-2  v^{i1}, v^{i2} >= 0
  3-4  v^{i1} <= vbar^{i1}, v^{i2} <= vbar^{i2}
  5-6  relay loads L^l = v^{1l} + v^{2l} <= c^l
  7-8  next battery level x^l - delta^l L^l >= b_min^l
  9    destination load v^{i1} + v^{i2} <= c_dest^i
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game_model import (Dimensions, GameSpec, SpecValueError, StageConstraint,
                         StageCost, StageDynamics, constraint_values)

ACTIVE_TOL = 1e-6
STOP_TOL = 1e-6

ROW_LABELS = ("v1>=0", "v2>=0", "v1<=vbar1", "v2<=vbar2", "relay1", "relay2",
              "battery1", "battery2", "destination")


@dataclass(frozen=True)
class NetflowParams:
    K: int = 60
    x0: tuple = (9.0, 6.0)
    b_min: tuple = (1.0, 0.5)
    delta: tuple = (0.125, 0.075)
    beta: float = 0.95
    w: tuple = ((30.0, 16.0), (26.0, 10.0))
    t: tuple = ((10.0, 10.0), (10.0, 10.0))
    d: tuple = ((6.0, 6.0), (6.0, 6.0))
    D: tuple = ((8.0, 8.0), (8.0, 8.0))
    s: tuple = ((6.0, 5.5), (7.0, 7.5))
    S: tuple = ((8.0, 8.5), (9.0, 9.5))
    c: tuple = (5.4, 2.6)
    c_dest: tuple = (4.0, 3.0)

    def __post_init__(self):
        if self.K < 1:
            raise SpecValueError("K must be >= 1")
        if not 0.0 < self.beta < 1.0:
            raise SpecValueError("beta must lie in (0, 1)")
        for name in ("w", "t", "s", "S"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise SpecValueError(f"{name} must be positive")
        for name in ("c", "c_dest"):
            if np.any(np.asarray(getattr(self, name)) <= 0):
                raise SpecValueError(f"{name} must be positive")
        if np.any(np.asarray(self.delta) < 0) or np.any(np.asarray(self.b_min) < 0):
            raise SpecValueError("delta and b_min must be nonnegative")

    @property
    def vbar(self) -> np.ndarray:
        """Upper rate bounds w/t, shape (2, 2) indexed [player, relay]."""
        return np.asarray(self.w, float) / np.asarray(self.t, float)

    @property
    def alpha(self) -> np.ndarray:
        """alpha[0..5]: relay shifts, destination shifts, utility constants."""
        vb = self.vbar
        w = np.asarray(self.w, float)
        t = np.asarray(self.t, float)
        util = (w ** 2 / t).sum(axis=1)
        return np.array([vb[0, 0] + vb[1, 0], vb[0, 1] + vb[1, 1],
                         vb[0].sum(), vb[1].sum(), util[0], util[1]])


def build_netflow_spec(p: NetflowParams | None = None) -> GameSpec:
    p = p or NetflowParams()
    K, n, N = p.K, 3, 2
    delta = np.asarray(p.delta, float)
    al = p.alpha
    vb = p.vbar
    disc = p.beta ** np.arange(K + 1)

    A = np.array([[1.0, 0.0, -delta[0] * al[0]],
                  [0.0, 1.0, -delta[1] * al[1]],
                  [0.0, 0.0, 1.0]])
    B = np.array([[-delta[0], 0.0], [0.0, -delta[1]], [0.0, 0.0]])
    dyn = StageDynamics(A=np.repeat(A[None], K, 0),
                        B=(np.repeat(B[None], K, 0), np.repeat(B[None], K, 0)),
                        x0=np.array([p.x0[0], p.x0[1], 1.0]))

    Mt = np.zeros((9, 3))
    Mt[6:8, :2] = np.eye(2)
    N1 = -np.eye(2)
    N2 = -np.diag(delta)
    own = np.vstack([np.eye(2), -np.eye(2), N1, N2, [[-1.0, -1.0]]])
    other = np.vstack([np.zeros((4, 2)), N1, N2, np.zeros((1, 2))])

    costs, cons = [], []
    for i in range(N):
        s = np.diag(p.s[i])
        S = np.diag(p.S[i])
        dvec = np.asarray(p.d[i], float)
        Dvec = np.asarray(p.D[i], float)
        Qs = np.zeros((3, 3))
        Qs[:2, :2] = s
        Qs[:2, 2] = Qs[2, :2] = -dvec
        Qs[2, 2] = -al[4 + i]
        QK = np.zeros((3, 3))
        QK[:2, :2] = S
        QK[:2, 2] = QK[2, :2] = -Dvec
        Q = disc[:, None, None] * Qs
        Q[K] = disc[K] * QK
        Rii = disc[:K, None, None] * np.diag(p.t[i])
        R = [None, None]
        R[i] = Rii
        R[1 - i] = np.zeros((K, 2, 2))
        costs.append(StageCost(Q=Q, p=np.zeros((K + 1, 3)), R=tuple(R)))

        Nst = np.zeros((9, 4))
        Nst[:, 2 * i:2 * i + 2] = own
        Nst[:, 2 * (1 - i):2 * (1 - i) + 2] = other
        r = np.array([vb[i, 0], vb[i, 1], 0.0, 0.0,
                      p.c[0] - al[0], p.c[1] - al[1],
                      -delta[0] * al[0] - p.b_min[0],
                      -delta[1] * al[1] - p.b_min[1],
                      p.c_dest[i] - al[2 + i]])
        cons.append(StageConstraint(M=np.repeat(Mt[None], K, 0),
                                    N=np.repeat(Nst[None], K, 0),
                                    r=np.repeat(r[None], K, 0)))
    dims = Dimensions(N, K, n, (2, 2), (9, 9))
    return GameSpec(dims=dims, dynamics=dyn, costs=tuple(costs),
                    constraints=tuple(cons), name="netflow",
                    metadata={"description": "two-source two-relay network flow game"})


@dataclass
class NetflowReport:
    v: np.ndarray  # (K, 2, 2) rates [stage, player, relay]
    relay_load: np.ndarray  # (K, 2)
    dest_load: np.ndarray  # (K, 2)
    battery: np.ndarray  # (K+1, 2)
    slack: np.ndarray  # (K, 2, 9)
    active: list = field(default_factory=list)  # per stage: list of "P<i>:<label>"
    stop_stage: tuple = (None, None)  # per relay
    min_slack: float = 0.0

    def to_dict(self) -> dict:
        return {
            "v": self.v.tolist(),
            "relay_load": self.relay_load.tolist(),
            "destination_load": self.dest_load.tolist(),
            "battery": self.battery.tolist(),
            "active_constraints": self.active,
            "stop_stage": list(self.stop_stage),
            "min_constraint_slack": self.min_slack,
        }


def _stop_stage(flow: np.ndarray, tol: float) -> int | None:
    """First stage from which every later flow is <= tol."""
    off = np.all(flow <= tol, axis=1)
    if not off[-1]:
        return None
    k = len(off)
    while k > 0 and off[k - 1]:
        k -= 1
    return k


def postprocess_netflow(g: GameSpec, u: np.ndarray, x: np.ndarray,
                        p: NetflowParams | None = None,
                        tol_active: float = ACTIVE_TOL,
                        tol_stop: float = STOP_TOL) -> NetflowReport:
    """Rates, loads, batteries and active rows from a netflow trajectory."""
    p = p or NetflowParams()
    K = p.K
    if g.K != K or g.n != 3 or g.N != 2 or g.dims.control_dims != (2, 2) \
            or g.dims.constraint_dims != (9, 9):
        raise SpecValueError("trajectory does not have the netflow dimensions")
    u = np.asarray(u, float).reshape(K, 4)
    x = np.asarray(x, float).reshape(K + 1, 3)
    v = u.reshape(K, 2, 2) + p.vbar[None]
    slack = constraint_values(g, x, u).reshape(K, 2, 9)
    active = []
    for k in range(K):
        rows = [f"P{i + 1}:{ROW_LABELS[j]}" for i in range(2) for j in range(9)
                if slack[k, i, j] <= tol_active]
        active.append(rows)
    stops = tuple(_stop_stage(v[:, :, l], tol_stop) for l in range(2))
    return NetflowReport(v=v, relay_load=v.sum(axis=1), dest_load=v.sum(axis=2),
                         battery=x[:, :2].copy(), slack=slack, active=active,
                         stop_stage=stops, min_slack=float(slack.min()))
