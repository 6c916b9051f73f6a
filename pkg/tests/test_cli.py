import json
import math
from pathlib import Path

import numpy as np
import pytest

from transpoint.cli import main

SPHERE = {"kind": "round-sphere", "dim": 2, "radius": 1.0}
SMALL = {"scan": {"points": 80, "directions": 10, "max_seeds": 60}}


def _write(path: Path, payload) -> str:
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


@pytest.fixture
def rotation_cfg(tmp_path):
    return _write(tmp_path / "rot.json", {"manifold": SPHERE,
                                          "homotopy": {"kind": "rotation", "angle": math.pi / 3},
                                          "window": [0, 2 * math.pi], "tolerances": SMALL})


def test_solve_classify_continue_pipeline(tmp_path, rotation_cfg):
    out = tmp_path / "records.json"
    assert main(["solve", "--config", rotation_cfg, "--window", "0,3", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["config"]["window"] == [0.0, 3.0]
    assert data["records"] and all(abs(r["state"]["t"] - math.pi / 3) < 1e-6 for r in data["records"])

    small = tmp_path / "few.json"
    small.write_text(json.dumps({"config": data["config"], "records": data["records"][:2]}))
    classified = tmp_path / "classified.json"
    assert main(["classify", "--records", str(small), "--out", str(classified)]) == 0
    recs = json.loads(classified.read_text())["records"]
    assert all(r["kernel_dim"] == 1 and r["nondegenerate"] is False for r in recs)
    assert all(isinstance(r["morse_index"], int) for r in recs)

    ident = tmp_path / "ident.json"
    assert main(["solve", "--config", _write(tmp_path / "i.json", {"manifold": SPHERE, "map": {"kind": "identity"},
                                                                     "tolerances": SMALL}),
                 "--out", str(ident)]) == 0
    few = json.loads(ident.read_text())
    few["records"] = few["records"][:1]
    src = _write(tmp_path / "id1.json", few)
    branches = tmp_path / "branches.json"
    assert main(["continue", "--config", rotation_cfg, "--from", src, "--steps", "10",
                 "--out", str(branches)]) == 0
    b = json.loads(branches.read_text())["branches"][0]
    # the orientation of the starting great circle about the rotation axis picks the branch
    start = few["records"][0]["state"]
    sign = math.copysign(1.0, float(np.cross(start["x"], start["v"])[2]))
    assert b["end"]["state"]["t"] == pytest.approx(2 * math.pi + sign * math.pi / 3, abs=1e-6)


def test_audit_exit_codes(tmp_path):
    ident = _write(tmp_path / "id.json", {"manifold": SPHERE, "map": {"kind": "identity"}, "tolerances": SMALL})
    out = tmp_path / "audit.json"
    # identity is degenerate: the count audit reports a violated hypothesis
    assert main(["audit-zoll", "--config", ident, "--out", str(out)]) == 1
    verdicts = {v["name"]: v["status"] for v in json.loads(out.read_text())["verdicts"]}
    assert verdicts["zoll-tower"] == "pass"
    assert verdicts["morse-count"] == "hypothesis-violated"

    ell = _write(tmp_path / "ell.json", {"manifold": {"kind": "ellipsoid", "semi_axes": [1.0, 1.0, 0.8]},
                                         "map": {"kind": "sphere-rotation", "angle": 0.5}, "window": [0, 1.0],
                                         "tolerances": {"scan": {"points": 40, "directions": 8, "max_seeds": 3}}})
    assert main(["audit-zoll", "--config", ell, "--out", str(tmp_path / "e.json")]) == 0


def test_spectrum_outputs(tmp_path, rotation_cfg):
    out, csv, svg = tmp_path / "s.json", tmp_path / "s.csv", tmp_path / "s.svg"
    assert main(["spectrum", "--config", rotation_cfg, "--out", str(out), "--csv", str(csv), "--svg", str(svg)]) == 0
    shifts = [s["t"] for s in json.loads(out.read_text())["shifts"]]
    assert shifts == sorted(shifts)
    assert csv.read_text().startswith("t,x,v,index,kernel_dim,family_id,flags")
    assert svg.read_text().startswith("<svg")


def test_config_errors_exit_two(tmp_path, capsys):
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--config", str(bad)]) == 2
    assert main(["solve", "--config", _write(tmp_path / "k.json", {"manifold": {"kind": "torus-of-doom"},
                                                                    "map": {"kind": "identity"}})]) == 2
    assert main(["solve"]) == 2
    assert main(["nonsense"]) == 2
    assert main(["solve", "--window", "1"]) == 2
    assert main(["continue", "--config", _write(tmp_path / "n.json", {"manifold": SPHERE,
                                                                       "map": {"kind": "identity"}}),
                 "--from", str(bad)]) == 2


def test_log_level_from_environment(tmp_path, monkeypatch, rotation_cfg):
    monkeypatch.setenv("TP_LOG", "debug")
    assert main(["solve", "--config", rotation_cfg, "--window", "0,2", "--out", str(tmp_path / "o.json")]) == 0
