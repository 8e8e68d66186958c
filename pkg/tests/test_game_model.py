import copy
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgc.game_model import (Dimensions, GameSpec, SpecParseError, SpecShapeError,
                            SpecValueError, StageConstraint, StageCost, StageDynamics,
                            constraint_map, constraint_values, feasibility_probe,
                            load_spec, player_costs, reformulate_state_constraints,
                            rollout, save_spec, spec_from_dict, spec_to_dict,
                            specs_equal, state_map, validate_game)
from gamegen import random_game


def scalar_dict(**over):
    d = {
        "name": "scalar",
        "players": 2, "horizon": 3, "state_dim": 1,
        "control_dims": [1, 1], "constraint_dims": [1, 1],
        "x0": [1.0],
        "dynamics": {"A": [[1.0]], "B": [[[1.0]], [[0.5]]]},
        "costs": [
            {"Q": [[1.0]], "p": [0.0], "R": {"11": [[1.0]]}},
            {"Q": [[2.0]], "R": {"22": [[1.0]], "21": [[0.3]]}},
        ],
        "constraints": [
            {"M": [[0.0]], "N": [[1.0, 0.0]], "r": [1.0]},
            {"M": [[0.0]], "N": [[0.0, 1.0]], "r": [1.0]},
        ],
    }
    d.update(over)
    return d


def test_stationary_shorthand_is_broadcast():
    g = spec_from_dict(scalar_dict())
    assert g.dynamics.A.shape == (3, 1, 1)
    assert g.costs[0].Q.shape == (4, 1, 1)
    assert g.costs[1].p.shape == (4, 1)
    assert g.constraints[0].N.shape == (3, 1, 2)
    assert np.all(g.costs[1].R[0] == 0.3)
    assert np.all(g.costs[0].R[1] == 0.0)


def test_per_stage_lists_accepted():
    d = scalar_dict()
    d["dynamics"]["A"] = [[[1.0]], [[2.0]], [[3.0]]]
    g = spec_from_dict(d)
    assert g.dynamics.A[:, 0, 0].tolist() == [1.0, 2.0, 3.0]


def test_round_trip_bit_exact(tmp_path, rng):
    for compact in (True, False):
        g = random_game(rng, K=3, c=2)
        path = tmp_path / f"g{compact}.json"
        save_spec(g, path, compact=compact)
        assert specs_equal(load_spec(path), g)


def test_netflow_round_trip(tmp_path, netflow_spec):
    path = tmp_path / "netflow.json"
    save_spec(netflow_spec, path)
    assert specs_equal(load_spec(path), netflow_spec)


def test_wrong_B_shape_names_matrix_and_stage():
    d = scalar_dict()
    d["dynamics"]["B"][0] = [[[1.0]], [[1.0], [2.0]], [[1.0]]]
    with pytest.raises(SpecShapeError, match=r"B\^1 at stage 1"):
        spec_from_dict(d)


def test_wrong_stage_count():
    d = scalar_dict()
    d["dynamics"]["A"] = [[[1.0]], [[2.0]]]
    with pytest.raises(SpecShapeError, match="length 3"):
        spec_from_dict(d)


@pytest.mark.parametrize("mutate,exc", [
    (lambda d: d.pop("horizon"), SpecParseError),
    (lambda d: d["dynamics"].__setitem__("A", [["a"]]), SpecParseError),
    (lambda d: d["costs"][0].__setitem__("R", {"12": [[1.0]]}), SpecParseError),
    (lambda d: d["costs"][0].__setitem__("R", {"11": [[1.0]], "1x": [[0.0]]}),
     SpecParseError),
    (lambda d: d["costs"][0].__setitem__("R", {"11": [[1.0]], "21": [[0.0]]}),
     SpecShapeError),
    (lambda d: d.__setitem__("x0", [1.0, 2.0]), SpecShapeError),
    (lambda d: d["dynamics"].__setitem__("A", [[float("nan")]]), SpecValueError),
    (lambda d: d.__setitem__("horizon", 0), SpecValueError),
])
def test_malformed_input_rejected(mutate, exc):
    d = scalar_dict()
    mutate(d)
    with pytest.raises(exc):
        spec_from_dict(d)


def test_load_spec_bad_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{ not json")
    with pytest.raises(SpecParseError):
        load_spec(path)


def test_asymmetric_Q_symmetrized_with_warning(caplog):
    d = scalar_dict(state_dim=2, x0=[1.0, 0.0])
    d["dynamics"] = {"A": np.eye(2).tolist(), "B": [[[1.0], [0.0]], [[0.0], [1.0]]]}
    d["costs"][0]["Q"] = [[1.0, 0.4], [0.0, 1.0]]
    d["costs"][0]["p"] = [0.0, 0.0]
    d["costs"][1]["Q"] = np.eye(2).tolist()
    for con in d["constraints"]:
        con["M"] = [[0.0, 0.0]]
    with caplog.at_level(logging.WARNING):
        g = spec_from_dict(d)
    assert "not symmetric" in caplog.text
    assert np.allclose(g.costs[0].Q[0], [[1.0, 0.2], [0.2, 1.0]])


def test_zero_own_block_fails_rank():
    d = scalar_dict()
    d["constraints"][0]["N"] = [[0.0, 1.0]]
    rep = validate_game(spec_from_dict(d))
    assert not rep.rank_ok and rep.pd_ok
    assert {(k, i) for k, i, _ in rep.rank_failures} == {(0, 0), (1, 0), (2, 0)}


def test_negative_R_fails_pd():
    d = scalar_dict()
    d["costs"][1]["R"]["22"] = [[-1.0]]
    rep = validate_game(spec_from_dict(d))
    assert rep.rank_ok and not rep.pd_ok
    assert all(i == 1 for _, i, _ in rep.pd_failures)


def test_netflow_passes_validation(netflow_spec):
    rep = validate_game(netflow_spec)
    assert rep.ok


def test_feasibility_infeasible():
    d = scalar_dict(constraint_dims=[2, 1])
    d["constraints"][0] = {"M": [[0.0], [0.0]], "N": [[1.0, 0.0], [-1.0, 0.0]],
                           "r": [-1.0, 0.0]}  # u >= 1 and u <= 0
    rep = feasibility_probe(spec_from_dict(d))
    assert rep.status == "infeasible" and not rep.feasible


def test_feasibility_no_constraints_is_unbounded():
    d = scalar_dict(constraint_dims=[0, 0])
    d.pop("constraints")
    rep = feasibility_probe(spec_from_dict(d), check_bounded=True)
    assert rep.feasible and rep.boundedness == "unbounded"


def test_feasibility_bounded_box():
    d = scalar_dict(constraint_dims=[2, 2])
    box = {"M": [[0.0], [0.0]], "r": [1.0, 1.0]}
    d["constraints"] = [dict(box, N=[[1.0, 0.0], [-1.0, 0.0]]),
                        dict(box, N=[[0.0, 1.0], [0.0, -1.0]])]
    rep = feasibility_probe(spec_from_dict(d), check_bounded=True)
    assert rep.feasible and rep.boundedness == "bounded"


def test_netflow_feasible(netflow_spec):
    rep = feasibility_probe(netflow_spec)
    assert rep.feasible
    s = constraint_values(netflow_spec, rollout(netflow_spec, rep.point.reshape(60, 4)),
                          rep.point.reshape(60, 4))
    assert s.min() >= -1e-7


def test_state_map_matches_rollout(rng):
    g = random_game(rng, n=3, m=2, K=4)
    u = rng.normal(size=(g.K, g.dims.m))
    a, S = state_map(g)
    x = rollout(g, u)
    for k in range(g.K + 1):
        assert np.allclose(a[k] + S[k] @ u.reshape(-1), x[k], atol=1e-12)
    G, h = constraint_map(g)
    assert np.allclose(G @ u.reshape(-1) + h, constraint_values(g, x, u).reshape(-1))


def test_player_costs_by_hand():
    g = spec_from_dict(scalar_dict(horizon=1))
    u = np.array([[2.0, -1.0]])
    # x1 = 1 + 2 - 0.5 = 2.5
    J = player_costs(g, u)
    assert J[0] == pytest.approx(0.5 * 1 + 0.5 * 2.5 ** 2 + 0.5 * 4)
    assert J[1] == pytest.approx(0.5 * 2 + 0.5 * 2 * 2.5 ** 2 + 0.5 * 1 + 0.5 * 0.3 * 4)


def _state_game(K=2):
    dims = Dimensions(2, K, 1, (1, 1), (0, 0))
    dyn = StageDynamics(A=np.full((K, 1, 1), 2.0),
                        B=(np.ones((K, 1, 1)), np.ones((K, 1, 1))), x0=np.array([1.0]))
    cost = StageCost(Q=np.ones((K + 1, 1, 1)), p=np.zeros((K + 1, 1)),
                     R=(np.ones((K, 1, 1)), np.zeros((K, 1, 1))))
    cost2 = StageCost(Q=np.ones((K + 1, 1, 1)), p=np.zeros((K + 1, 1)),
                      R=(np.zeros((K, 1, 1)), np.ones((K, 1, 1))))
    empty = StageConstraint(np.zeros((K, 0, 1)), np.zeros((K, 0, 2)), np.zeros((K, 0)))
    return GameSpec(dims, dyn, (cost, cost2), (empty, empty))


def test_reformulate_state_constraint():
    g = _state_game(K=2)
    g2 = reformulate_state_constraints(g, [(1, 0, [[1.0]], [0.0]),
                                           (2, 0, [[1.0]], [0.0])])
    con = g2.constraints[0]
    assert g2.dims.constraint_dims == (1, 0)
    # x_1 = 2 x_0 + u^1_0 + u^2_0 >= 0
    assert con.M[0].tolist() == [[2.0]]
    assert con.N[0].tolist() == [[1.0, 1.0]]
    assert con.r[0].tolist() == [0.0]


def test_reformulate_pads_uneven_stages():
    g = _state_game(K=3)
    g2 = reformulate_state_constraints(g, [(2, 1, [[1.0]], [0.5])])
    con = g2.constraints[1]
    assert con.M.shape == (3, 1, 1)
    assert con.r[:, 0].tolist() == [1.0, 0.5, 1.0]
    assert np.all(con.N[[0, 2]] == 0)


def test_reformulate_preserves_feasible_set(rng):
    g = _state_game(K=3)
    g2 = reformulate_state_constraints(g, [(k, 0, [[1.0]], [0.0]) for k in (1, 2, 3)])
    for _ in range(200):
        u = rng.normal(size=(3, 2)) * 2
        x = rollout(g, u)
        direct = bool(np.all(x[1:] >= 0))
        mixed = bool(np.all(constraint_values(g2, x, u) >= 0))
        assert direct == mixed


def test_reformulate_rejects_stage_zero():
    with pytest.raises(SpecValueError, match="stage 0"):
        reformulate_state_constraints(_state_game(), [(0, 0, [[1.0]], [0.0])])


def test_reformulated_zero_row_fails_rank():
    g2 = reformulate_state_constraints(_state_game(), [(1, 0, [[0.0]], [1.0])])
    assert not validate_game(g2).rank_ok


def test_with_x0_changes_only_initial_state(rng):
    g = random_game(rng)
    g2 = g.with_x0([5.0, -1.0])
    assert g2.x0.tolist() == [5.0, -1.0]
    assert np.array_equal(g2.dynamics.A, g.dynamics.A)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), K=st.integers(1, 4), n=st.integers(1, 3),
       c=st.integers(0, 3), stationary=st.booleans())
def test_round_trip_property(seed, K, n, c, stationary):
    g = random_game(np.random.default_rng(seed), n=n, K=K, c=c, stationary=stationary)
    g2 = spec_from_dict(copy.deepcopy(spec_to_dict(g)))
    assert specs_equal(g, g2)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), K=st.integers(1, 4))
def test_rollout_linear_in_controls(seed, K):
    rng = np.random.default_rng(seed)
    g = random_game(rng, K=K)
    u1, u2 = rng.normal(size=(2, K, g.dims.m))
    x0 = rollout(g, np.zeros_like(u1))
    lhs = rollout(g, u1 + u2) - x0
    rhs = (rollout(g, u1) - x0) + (rollout(g, u2) - x0)
    assert np.allclose(lhs, rhs, atol=1e-10)
