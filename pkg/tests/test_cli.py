import json

import numpy as np
import pytest

from dgc.cli import main
from dgc.game_model import save_spec, spec_from_dict


def game_dict(**over):
    d = {
        "name": "tiny", "players": 2, "horizon": 2, "state_dim": 1,
        "control_dims": [1, 1], "constraint_dims": [1, 1], "x0": [1.0],
        "dynamics": {"A": [[1.1]], "B": [[[1.0]], [[0.5]]]},
        "costs": [{"Q": [[1.0]], "R": {"11": [[1.0]]}},
                  {"Q": [[2.0]], "R": {"22": [[1.0]]}}],
        "constraints": [{"M": [[0.0]], "N": [[1.0, 0.0]], "r": [0.2]},
                        {"M": [[0.0]], "N": [[0.0, 1.0]], "r": [0.2]}],
    }
    d.update(over)
    return d


def write(tmp_path, d, name="spec.json"):
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return str(path)


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", write(tmp_path, game_dict())]) == 0
    out = capsys.readouterr().out
    assert "full rank" in out and "FAIL" not in out


def test_validate_rank_deficient(tmp_path, capsys):
    d = game_dict()
    d["constraints"][0]["N"] = [[0.0, 1.0]]
    assert main(["validate", write(tmp_path, d)]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_validate_malformed(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"players": 2')
    assert main(["validate", str(path)]) == 2
    assert main(["validate", str(tmp_path / "missing.json")]) == 2


def test_validate_netflow(tmp_path, netflow_spec):
    path = tmp_path / "netflow.json"
    save_spec(netflow_spec, path)
    assert main(["validate", str(path)]) == 0


def test_solve_and_verify(tmp_path, capsys):
    spec = write(tmp_path, game_dict())
    out = tmp_path / "run"
    assert main(["solve", spec, "-o", str(out), "--dump-riccati"]) == 0
    assert (out / "riccati" / "Lambda.csv").exists()
    for name in ("solution.json", "trajectory.csv", "report.json", "report.txt"):
        assert (out / name).exists()
    assert main(["verify", spec, str(out)]) == 0

    data = json.loads((out / "solution.json").read_text())
    data["mu"][0][0] += 0.5
    (out / "solution.json").write_text(json.dumps(data))
    assert main(["verify", spec, str(out)]) == 1
    assert "dyn_" in capsys.readouterr().err


def test_verify_dims_mismatch(tmp_path):
    spec = write(tmp_path, game_dict())
    out = tmp_path / "run"
    assert main(["solve", spec, "-o", str(out)]) == 0
    other = write(tmp_path, game_dict(horizon=3), "other.json")
    assert main(["verify", other, str(out)]) == 2


def test_solve_unconstrained(tmp_path):
    d = game_dict(constraint_dims=[0, 0])
    d.pop("constraints")
    out = tmp_path / "run"
    assert main(["solve", write(tmp_path, d), "-o", str(out)]) == 0
    data = json.loads((out / "solution.json").read_text())
    assert data["mu"] == [[], []]
    head = (out / "trajectory.csv").read_text().splitlines()[0]
    assert "mu" not in head


def test_solve_infeasible(tmp_path):
    d = game_dict(constraint_dims=[2, 1])
    d["constraints"][0] = {"M": [[0.0], [0.0]], "N": [[1.0, 0.0], [-1.0, 0.0]],
                           "r": [-1.0, 0.0]}
    out = tmp_path / "run"
    assert main(["solve", write(tmp_path, d), "-o", str(out)]) == 3
    replay = (out / "lcp_replay.txt").read_text()
    assert "LCP 6" in replay and "sha256" in replay


def test_solve_gate_failure(tmp_path):
    d = game_dict()
    d["costs"][0]["R"]["11"] = [[-1.0]]
    assert main(["solve", write(tmp_path, d), "-o", str(tmp_path / "run")]) == 1


def test_bad_options(tmp_path):
    spec = write(tmp_path, game_dict())
    assert main(["solve", spec, "--tol-comp", "-1"]) == 2
    with pytest.raises(SystemExit):
        main(["solve", spec, "--kernel", "nope"])


def test_family_tolerance_override(tmp_path):
    spec = write(tmp_path, game_dict())
    out = tmp_path / "run"
    code = main(["solve", spec, "-o", str(out), "--family-tol", "dyn_state=1e-300",
                 "--family-tol", "cost_certificate=1e-300"])
    rep = json.loads((out / "report.json").read_text())
    fams = rep["families"]
    assert fams["dyn_state"]["tolerance"] == 1e-300
    # a certificate gap of a few ulps cannot meet 1e-300: solved but not verified
    assert fams["cost_certificate"]["verdict"] == "fail"
    assert code == 4


def test_solution_json_deterministic(tmp_path):
    spec = write(tmp_path, game_dict())
    blobs = []
    for run in ("a", "b"):
        assert main(["solve", spec, "-o", str(tmp_path / run), "--kernel", "python"]) == 0
        data = json.loads((tmp_path / run / "solution.json").read_text())
        data.pop("created")
        blobs.append(json.dumps(data, sort_keys=True))
    assert blobs[0] == blobs[1]
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() == \
        (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_example_emit_spec(tmp_path, netflow_spec):
    from dgc.game_model import load_spec, specs_equal
    assert main(["example", "netflow", "--emit", "spec", "-o", str(tmp_path)]) == 0
    assert specs_equal(load_spec(tmp_path / "netflow.json"), netflow_spec)


def test_example_emit_solve(tmp_path, capsys):
    assert main(["example", "netflow", "--emit", "solve", "-o", str(tmp_path)]) == 0
    rows = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert len(rows) == 62
    rep = json.loads((tmp_path / "netflow_report.json").read_text())
    assert np.asarray(rep["v"]).shape == (60, 2, 2)
    assert "transmission stops" in capsys.readouterr().out
    assert main(["verify", str(_emit_spec(tmp_path)), str(tmp_path)]) == 0


def _emit_spec(tmp_path):
    main(["example", "netflow", "--emit", "spec", "-o", str(tmp_path)])
    return tmp_path / "netflow.json"


def test_no_fallback_reports_lemke_failure(tmp_path):
    path = _emit_spec(tmp_path)
    assert main(["solve", str(path), "-o", str(tmp_path / "run"), "--no-fallback"]) == 3
