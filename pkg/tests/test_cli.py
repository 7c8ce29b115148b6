import json
import subprocess
import sys

import pytest

from cfurllc.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, main
from cfurllc.model import NetworkInstance

SMALL = ["--seed", "3", "--M", "4", "--K", "4", "--N", "2"]


def test_gen_round_trip(tmp_path):
    out = tmp_path / "inst.json"
    assert main(["gen", *SMALL, "-o", str(out)]) == EXIT_OK
    inst = NetworkInstance.from_json(out.read_text())
    assert (inst.M, inst.K, inst.N) == (4, 4, 2)


def test_gen_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["gen", *SMALL, "-o", str(a)])
    main(["gen", *SMALL, "-o", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_pilot_then_power_then_validate(tmp_path):
    inst = tmp_path / "inst.json"
    asg = tmp_path / "asg.json"
    pw = tmp_path / "power.json"
    rep = tmp_path / "report.json"
    main(["gen", *SMALL, "-o", str(inst)])
    assert main(["pilot", "--instance", str(inst), "--rate-req", "0.3", "-o", str(asg)]) == EXIT_OK
    doc = json.loads(asg.read_text())
    assert doc["tau"] == len(doc["groups"])
    assert "history" in doc and "admitted" in doc
    assert main(["power", "--instance", str(inst), "--rate-req", "0.3", "--assignment", str(asg), "-o", str(pw)]) == EXIT_OK
    res = json.loads(pw.read_text())
    assert res["status"] == "ok"
    assert all(b >= a - 1e-6 for a, b in zip(res["history"], res["history"][1:]))
    code = main(["validate", "--instance", str(inst), "--rate-req", "0.3", "--assignment", str(asg), "--powers", str(pw), "--mc-samples", "200", "-o", str(rep)])
    report = json.loads(rep.read_text())
    assert code == EXIT_OK, report["problems"]
    assert report["valid"]


def test_validate_flags_cap_violation(tmp_path):
    inst = tmp_path / "inst.json"
    main(["gen", *SMALL, "-o", str(inst)])
    pw = tmp_path / "p.json"
    pw.write_text(json.dumps({"pilot": [1.0] * 4, "downlink": [[1.0] * 4] * 4}))
    rep = tmp_path / "r.json"
    code = main(["validate", "--instance", str(inst), "--scheme", "orthogonal", "--powers", str(pw), "-o", str(rep)])
    assert code == EXIT_ERROR
    assert any("cap" in p for p in json.loads(rep.read_text())["problems"])


def test_power_infeasible_exit_code(tmp_path):
    out = tmp_path / "p.json"
    code = main(["power", *SMALL, "--rate-req", "25", "--scheme", "orthogonal", "-o", str(out)])
    assert code == EXIT_INFEASIBLE
    assert json.loads(out.read_text())["status"] == "infeasible"


def test_missing_file_is_error():
    assert main(["gen", "--instance", "/nonexistent/inst.json"]) == EXIT_ERROR


def test_bad_arguments_exit_nonzero():
    with pytest.raises(SystemExit) as err:
        main(["power", "--scheme", "tabu"])
    assert err.value.code != 0


def test_experiment_command(tmp_path, capsys):
    code = main(["experiment", "fig5", "--seeds", "2", "--K-list", "4", "6", "--M", "4", "--output-dir", str(tmp_path)])
    assert code == EXIT_OK
    assert (tmp_path / "fig5.csv").exists()
    assert (tmp_path / "fig5.manifest.json").exists()
    assert "status counts" in capsys.readouterr().out


def test_experiment_all_infeasible_exit_code(tmp_path):
    args = ["experiment", "custom", "--seeds", "1", "--K-list", "4", "--M", "4", "--N-list", "2", "--schemes", "orthogonal/joint", "--metrics", "wsr", "--rate-req", "25", "--output-dir", str(tmp_path)]
    assert main(args) == EXIT_INFEASIBLE


def test_experiment_from_toml_config(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text(f'experiment = "fig5"\nseeds = 1\nK_list = [4]\nM = 4\noutput_dir = "{tmp_path}"\n')
    assert main(["experiment", "--config", str(cfg), "--seeds", "2"]) == EXIT_OK
    manifest = json.loads((tmp_path / "fig5.manifest.json").read_text())
    assert manifest["config"]["seeds"] == 2


def test_experiment_compare(tmp_path, capsys):
    args = ["experiment", "custom", "--compare", "--seeds", "2", "--K-list", "4", "--M", "4", "--N-list", "2", "--rate-req", "0.3", "--output-dir", str(tmp_path)]
    assert main(args) == EXIT_OK
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines() if l.startswith("{")]
    assert {(r["scheme_a"], r["scheme_b"]) for r in lines} >= {("proposed/joint", "orthogonal/joint")}


def test_module_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "cfurllc", "gen", *SMALL], capture_output=True, text=True, check=True)
    assert NetworkInstance.from_json(out.stdout).K == 4
