import csv
import json
import math

import pytest

from cfurllc import experiments as ex
from cfurllc.experiments import ExperimentConfig, compare_baselines, load_config, run_experiment


def _small(tmp_path, experiment="custom", **kw):
    base = dict(seeds=2, K_list=[4], M=4, N_list=[2], output_dir=str(tmp_path))
    return ExperimentConfig.preset(experiment, **{**base, **kw})


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_preset_defaults():
    cfg = ExperimentConfig.preset("fig8")
    assert cfg.zero_infeasible and cfg.rate_req == 0.5 and cfg.seeds == 30
    assert ExperimentConfig.preset("fig4").metrics == ["admitted_prob"]
    with pytest.raises(ValueError):
        ExperimentConfig.preset("fig99")


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(schemes=["magic/joint"])
    with pytest.raises(ValueError):
        ExperimentConfig(seeds=0)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"nonsense": 1})


def test_config_hash_ignores_workers_and_paths(tmp_path):
    a = _small(tmp_path)
    b = _small(tmp_path / "x", workers=3)
    c = _small(tmp_path, seeds=3)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_csv_layout_and_row_count(tmp_path):
    cfg = _small(tmp_path, schemes=["dsatur/equal", "orthogonal/equal"], metrics=["wsr", "tau", "admitted_prob"])
    res = run_experiment(cfg)
    rows = _read(res.csv_path)
    assert tuple(rows[0]) == ex.CSV_COLUMNS
    assert len(rows) == cfg.seeds * len(cfg.schemes) * len(cfg.metrics)
    manifest = json.loads(res.manifest_path.read_text())
    assert manifest["n_rows"] == len(rows)
    assert manifest["config_hash"] == cfg.config_hash()
    assert set(manifest["versions"]) >= {"cfurllc", "numpy", "scipy"}


def test_csv_byte_identical_across_runs(tmp_path):
    cfg = _small(tmp_path / "a", schemes=["proposed/joint", "orthogonal/equal"], metrics=["wsr", "tau"])
    first = run_experiment(cfg).csv_path.read_bytes()
    again = run_experiment(cfg).csv_path.read_bytes()
    cfg2 = _small(tmp_path / "b", schemes=["proposed/joint", "orthogonal/equal"], metrics=["wsr", "tau"], workers=2)
    parallel = run_experiment(cfg2).csv_path.read_bytes()
    assert first == again == parallel


def test_fig5_orthogonal_tau_equals_K(tmp_path):
    cfg = _small(tmp_path, "fig5", K_list=[3, 6, 9], M=9, schemes=["orthogonal", "dsatur"])
    res = run_experiment(cfg, write=False)
    for row in res.rows:
        if row[4] == "orthogonal:tau":
            assert row[5] == row[3]
        if row[4] == "dsatur:tau":
            assert row[5] <= row[3]


def test_fig3_sweeps_antenna_product(tmp_path):
    cfg = _small(tmp_path, "fig3", N_list=[1, 4], mc_samples=200)
    res = run_experiment(cfg, write=False)
    assert {r[2] for r in res.rows} == {"MN"}
    assert {r[3] for r in res.rows} == {4, 16}
    assert {r[4] for r in res.rows} == {"proposed/equal:wsr_lb", "proposed/equal:wsr_mc", "proposed/equal:wsr_mc_stderr"}


def test_fig6_history_columns(tmp_path):
    cfg = _small(tmp_path, "fig6", K_list=[4], history_len=4)
    res = run_experiment(cfg, write=False)
    names = {r[4] for r in res.rows}
    assert {f"proposed/joint:wsr_iter{i}" for i in range(4)} <= names


def test_infeasible_rows_marked(tmp_path):
    cfg = _small(tmp_path, schemes=["orthogonal/joint"], metrics=["wsr"], rate_req=20.0)
    res = run_experiment(cfg, write=False)
    assert res.all_infeasible
    assert all(math.isnan(r[5]) for r in res.rows)
    assert res.statuses == {"infeasible": cfg.seeds}


def test_fig8_zeroes_infeasible(tmp_path):
    cfg = _small(tmp_path, "fig8", schemes=["orthogonal/joint"], rate_req=20.0)
    res = run_experiment(cfg, write=False)
    assert all(r[5] == 0.0 and r[6] == "infeasible" for r in res.rows)


def test_degenerate_status(tmp_path):
    cfg = _small(tmp_path, schemes=["orthogonal/joint"], metrics=["wsr"], L=4)
    res = run_experiment(cfg, write=False)
    assert res.statuses == {"degenerate": cfg.seeds}


def test_load_config_json_and_toml(tmp_path):
    doc = {"experiment": "fig7", "seeds": 3, "K_list": [4, 8], "rate_req": 0.4}
    jp = tmp_path / "c.json"
    jp.write_text(json.dumps(doc))
    tp = tmp_path / "c.toml"
    tp.write_text('experiment = "fig7"\nseeds = 3\nK_list = [4, 8]\nrate_req = 0.4\n')
    a, b = load_config(jp), load_config(tp)
    assert a == b
    assert a.schemes == ex.PRESETS["fig7"]["schemes"]


def test_compare_baselines(tmp_path):
    cfg = _small(tmp_path, seeds=3, rate_req=0.3)
    table = compare_baselines(cfg, schemes=["proposed/joint", "proposed/fixed-pilot"])
    assert len(table) == 1
    row = table[0]
    assert row["n_pairs"] <= min(row["feasible_a"], row["feasible_b"]) <= 3
    assert row["n_pairs"] > 0
    assert 0.0 <= row["frac_a_ge_b"] <= 1.0
    assert math.isfinite(row["mean_diff"])
    assert (tmp_path / "custom.compare.csv").exists()


def test_compare_detects_instance_mismatch(tmp_path, monkeypatch):
    cfg = _small(tmp_path, seeds=1)
    calls = iter(range(100))

    def fake(instance, qos, cfg_, scheme, *a, **k):
        return {"status": "ok", "wsr": 1.0, "fingerprint": f"fp{next(calls)}"}

    monkeypatch.setattr(ex, "evaluate_scheme", fake)
    with pytest.raises(RuntimeError):
        compare_baselines(cfg, schemes=["proposed/joint", "dsatur/joint"], write=False)
