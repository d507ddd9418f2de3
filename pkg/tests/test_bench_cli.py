import json

import pytest

from nicsim.bench import scenario as sc
from nicsim.bench.cli import main
from nicsim.bench.metrics import Completion, latency_stats, steady_rate


def test_steady_rate_on_hand_built_trace():
    # 20 messages of 1000 B finishing every 1 us; first 10% excluded
    comps = [Completion(0, (i + 1) * 1_000_000, 1000) for i in range(20)]
    bps, mps = steady_rate(comps)
    assert mps == pytest.approx(1e6)
    assert bps == pytest.approx(1e9)
    with pytest.raises(ValueError):
        steady_rate(comps[:1])


def test_latency_stats_on_hand_built_trace():
    comps = [Completion(1000 * i, 1000 * i + lat, 64) for i, lat in enumerate([100_000] * 98 + [500_000] * 2)]
    mean, p50, p99 = latency_stats(comps)
    assert p50 == 100.0 and p99 == 500.0
    assert mean == pytest.approx(108.0)


def small(name="tiny", **over):
    s = {"name": name, "kind": "kv", "seed": 3, "workload": {"n_requests": 400, "n_keys": 32, "n_queues": 4},
         "sweep": {"param": "n_hash_cores", "values": [1, 2]},
         "accept": [{"name": "one core", "row": {"param": "n_hash_cores", "value": 1, "metric": "throughput_mops"},
                     "min": 2.8, "max": 3.5}]}
    s.update(over)
    return s


@pytest.mark.parametrize("mutate,path", [
    (lambda s: s.pop("kind"), "kind"),
    (lambda s: s["sweep"].__setitem__("values", [1, -2]), r"sweep.values\[1\]"),
    (lambda s: s["sweep"].__setitem__("values", []), "sweep.values"),
    (lambda s: s["workload"].__setitem__("n_keys", "many"), "workload.n_keys"),
    (lambda s: s["accept"][0]["row"].__setitem__("metric", "speed"), r"accept\[0\].row.metric"),
    (lambda s: s["accept"][0].pop("min") and s["accept"][0].pop("max"), r"accept\[0\]"),
])
def test_validation_reports_key_path(mutate, path):
    s = small()
    mutate(s)
    with pytest.raises(sc.ScenarioError, match=path):
        sc.validate(s)


def test_bundled_scenarios_validate():
    names = sc.bundled_names()
    assert names == ["kv_scaling", "microbench", "rdma_sweep", "retx_sweep"]
    for n in names:
        sc.validate(sc.load(n))


def test_microbench_shape():
    s = sc.load("microbench")
    rows = sc.run_scenario(s)
    assert len(rows) == 12 * 5
    assert all(ok for _, ok, _ in sc.evaluate(s, rows))


def test_empty_results_rejected(tmp_path):
    with pytest.raises(ValueError):
        sc.emit_csv([], tmp_path / "x.csv")
    with pytest.raises(ValueError):
        sc.summarize(small(), [])


def test_cli_run_is_deterministic(tmp_path, capsys):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(small()))
    for d in ("a", "b"):
        assert main(["run", str(path), "--out", str(tmp_path / d), "--accept"]) == 0
    a = (tmp_path / "a" / "tiny.csv").read_bytes()
    assert a == (tmp_path / "b" / "tiny.csv").read_bytes()
    lines = a.decode().splitlines()
    assert lines[0] == ",".join(sc.CSV_COLUMNS)
    assert len(lines) == 3 and lines[1].startswith("tiny,n_hash_cores,1,")
    assert "PASS  one core" in capsys.readouterr().out


def test_cli_seed_override_and_env_out(tmp_path, monkeypatch):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(small()))
    monkeypatch.setenv("NICSIM_OUT", str(tmp_path / "env"))
    assert main(["run", str(path), "--seed", "9"]) == 0
    row = (tmp_path / "env" / "tiny.csv").read_text().splitlines()[1].split(",")
    assert row[sc.CSV_COLUMNS.index("seed")] == "9"


def test_cli_accept_failure_exit_code(tmp_path):
    s = small()
    s["accept"][0]["min"] = 100
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(s))
    assert main(["run", str(path), "--out", str(tmp_path), "--accept"]) == 1
    assert main(["run", str(path), "--out", str(tmp_path)]) == 0


def test_cli_config_error_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(small(kind="quantum")))
    assert main(["run", str(path)]) == 2
    assert "kind" in capsys.readouterr().err
    assert main(["print-config", "no_such_scenario"]) == 2


def test_cli_list_and_print(capsys):
    assert main(["list-scenarios"]) == 0
    out = capsys.readouterr().out
    assert "rdma_sweep" in out and "kv_scaling" in out
    assert main(["print-config", "retx_sweep"]) == 0
    assert json.loads(capsys.readouterr().out)["kind"] == "retx"
