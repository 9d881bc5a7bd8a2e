import json

import pytest

import bison_ocil as bo


def small_config():
    cfg = bo.default_config()
    cfg["dataset"]["train_per_class"] = 60
    cfg["dataset"]["test_per_class"] = 20
    cfg["model"] = {"hidden": [16], "embed_dim": 8}
    cfg["methods"] = ["er", "bison"]
    cfg["seeds"] = [0, 1]
    return cfg


def test_worked_example():
    m = bo.metrics([[0.8], [0.5, 0.9]], [0.9, 0.9])
    assert m["aa"] == pytest.approx(0.7, abs=1e-12)
    assert m["af"] == pytest.approx(0.3, abs=1e-12)
    assert m["ai"] == pytest.approx(0.05, abs=1e-12)
    assert bo.metrics([[0.4]])["af"] is None


def test_similarity():
    s = bo.similarity([[6, 3, 1, 0], [2, 2, 0, 4], [0, 0, 5, 5], [0, 0, 0, 0]], [(0, 1)])
    assert s["p_sim"][0] == pytest.approx(2 / 3, abs=1e-12)
    assert s["p_sim"][3] is None
    for c, row in enumerate(s["row_normalized"]):
        assert s["sc_at_1"][c] + row[c] <= 1.0


def test_gradient_checks():
    for r in bo.grad_check(seed=1, instances=3):
        assert r["max_rel_error"] <= 1e-4
    assert bo.gradient_flow(seed=1, instances=2)["ok"]


def test_reservoir():
    r = bo.reservoir_bench(seed=2, trials=100, property_sequences=1000)
    assert abs(r["first_half_fraction"] - 0.5) <= 0.1
    assert r["capacity_violations"] == 0


def test_config_errors():
    with pytest.raises(bo.ConfigError) as e:
        bo.validate_config({"seeds": []})
    assert e.value.field == "seeds"
    assert isinstance(e.value, ValueError)
    assert bo.config_schema()["type"] == "object"


def test_run_and_report(tmp_path):
    cfg = small_config()
    results = bo.run_experiment(cfg, jobs=2)
    assert len(results["cells"]) == 4
    assert all(c.get("error") is None for c in results["cells"])
    assert {a["method"] for a in results["aggregates"]} == {"er", "bison"}
    files = bo.emit_report(results, tmp_path)
    assert (tmp_path / "summary.csv").exists()
    assert (tmp_path / "interplay.svg").read_text().count('class="marker"') == 2
    written = json.loads((tmp_path / "results.json").read_text())
    assert written["format"] == results["format"]
    assert len(files) == 1 + 4 + 4 + 2
