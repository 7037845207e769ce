import csv
import json

import numpy as np
import pytest

from netmrac.cli import main, parse_config_text, resolve, sweep
from netmrac.errors import ConfigParseError

SHORT = "sim.T = 5\nsim.stride = 50\n"


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_validate_defaults(capsys):
    assert main(["validate"]) == 0
    assert "valid" in capsys.readouterr().out


def test_validate_names_non_minimum_phase_agent(tmp_path, capsys):
    cfg = write(tmp_path, "network.topology = path\nnetwork.m = 2\n"
                          "plant.1.num = 1 5\nplant.1.den = 1 -5 6\n"
                          "plant.2.num = 1 -2\nplant.2.den = 1 1 1\n")
    assert main(["validate", "--config", cfg]) == 1
    out = capsys.readouterr().out
    assert "[FAIL] agent 2 minimum phase" in out
    assert "[FAIL] agent 1" not in out


@pytest.mark.parametrize("text", ["sim.T 5\n", "bogus.key = 1\n", "sim.T = abc\n",
                                  "sim.T = 1\nsim.T = 2\n", "tuner.kind = newton\n"])
def test_malformed_config_exit_code(tmp_path, text):
    assert main(["validate", "--config", write(tmp_path, text)]) == 2


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == 2


def test_parse_config_lists_and_comments():
    cfg = parse_config_text("# c\nleader.num = 3, 3  # trailing\ndisturbance.nu_u = 0.1 0.2\n"
                            "tuner.q_scaling = exponential\n")
    assert cfg == {"leader.num": [3.0, 3.0], "disturbance.nu_u": [0.1, 0.2], "tuner.q_scaling": "exponential"}
    with pytest.raises(ConfigParseError):
        parse_config_text("plant.x.num = 1\n")


def test_simulate_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--config", write(tmp_path, SHORT), "--out", str(out)]) == 0
    rows = read_csv(out / "trace.csv")
    assert rows[0][0] == "t" and len(rows) == 5000 // 50 + 2
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and len(man["trace_sha256"]) == 64
    assert man["config"]["sim.T"] == 5.0
    assert read_csv(out / "metrics.csv")[0][:3] == ["topology", "m", "tuner"]


def test_simulate_matched_mode_tracks_exactly(tmp_path):
    out = tmp_path / "run"
    cfg = write(tmp_path, SHORT + "sim.mode = matched\nnetwork.topology = path\n")
    assert main(["simulate", "--config", cfg, "--out", str(out), "--no-trace"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["metrics"]["linf"] <= 1e-8
    assert not (out / "trace.csv").exists()


def test_repeat_runs_and_manifest_round_trip(tmp_path):
    cfg = write(tmp_path, SHORT + "tuner.kind = ht1\ninit.theta_noise = 0.2\n")
    hashes = []
    for name in ("a", "b"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / name), "--seed", "3"]) == 0
        hashes.append(json.loads((tmp_path / name / "manifest.json").read_text())["trace_sha256"])
    assert hashes[0] == hashes[1]
    assert main(["simulate", "--config", str(tmp_path / "a" / "manifest.json"), "--out", str(tmp_path / "c")]) == 0
    again = json.loads((tmp_path / "c" / "manifest.json").read_text())
    assert again["trace_sha256"] == hashes[0]
    assert again["config"]["sim.seed"] == 3


def test_numerical_abort_exit_code(tmp_path):
    cfg = write(tmp_path, "sim.T = 50\ntuner.gamma = 1e9\n")
    out = tmp_path / "run"
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "nonfinite" and man["last_finite_time"] < 50


def test_sweep_table_layout(tmp_path):
    out = tmp_path / "sw"
    rc = main(["sweep", "--config", write(tmp_path, "sim.T = 2\nsim.stride = 100\n"), "--out", str(out),
               "--m", "1,3,5", "--no-trace"])
    assert rc == 0
    rows = read_csv(out / "metrics.csv")
    assert len(rows) == 1 + 9
    tab = read_csv(out / "table_by_m_l2_squared.csv")
    assert tab[0] == ["topology", "tuner", "m=1", "m=3", "m=5"]
    assert [r[0] for r in tab[1:]] == ["cyclic_like", "path", "star_like"]


def test_sweep_random_all_tuners(tmp_path):
    out = tmp_path / "sw"
    rc = main(["sweep", "--config", write(tmp_path, "sim.T = 2\nsim.stride = 100\n"), "--out", str(out),
               "--topologies", "random", "--m", "9", "--tuners", "gradient,ht1,ht2", "--no-trace"])
    assert rc == 0
    tab = read_csv(out / "table_by_tuner_l2_squared.csv")
    assert tab[0] == ["topology", "m", "gradient", "ht1", "ht2"]
    assert len(tab) == 2 and all(np.isfinite(float(v)) for v in tab[1][2:])


def test_sweep_empty_grid(tmp_path):
    assert main(["sweep", "--out", str(tmp_path), "--m", ""]) == 2
    assert main(["sweep", "--out", str(tmp_path), "--m", "1,x"]) == 2


def test_sweep_workers_do_not_change_results(tmp_path):
    file_cfg = {"sim.T": 2.0, "sim.stride": 100}
    args = (["star_like", "path"], [1, 3], ["gradient", "ht2"])
    r1, m1 = sweep(file_cfg, *args, tmp_path / "w1", workers=1, write_trace=False)
    r2, m2 = sweep(file_cfg, *args, tmp_path / "w2", workers=2, write_trace=False)
    assert [m["trace_sha256"] for m in m1] == [m["trace_sha256"] for m in m2]
    assert [r.row() for r in r1] == [r.row() for r in r2]
    assert (tmp_path / "w1" / "metrics.csv").read_text() == (tmp_path / "w2" / "metrics.csv").read_text()


def test_flag_precedence(tmp_path):
    cfg = resolve({"sim.stride": 7, "sim.seed": 1}, {"sim.stride": 3, "sim.seed": None})
    assert cfg["sim.stride"] == 3 and cfg["sim.seed"] == 1
    assert resolve({})["sim.stride"] == 10
    out = tmp_path / "run"
    assert main(["simulate", "--config", write(tmp_path, SHORT), "--stride", "100", "--out", str(out)]) == 0
    assert len(read_csv(out / "trace.csv")) == 5000 // 100 + 2


def test_per_kind_default_gains():
    assert resolve({"tuner.kind": "ht2"})["tuner.beta"] == 100.0
    assert resolve({"tuner.kind": "ht2", "tuner.beta": 7.0})["tuner.beta"] == 7.0
    assert resolve({"network.topology": "star"})["network.topology"] == "star_like"
