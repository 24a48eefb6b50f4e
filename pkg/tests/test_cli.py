import json

import pytest

from calgate.cli import main

GEN = ["--n-streams", "6", "--ticks-per-stream", "120", "--scale", "4"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def data(tmp_path):
    path = tmp_path / "d.csv"
    assert run("gen-synth", "--out", path, *GEN, "--seed", 3) == 0
    return path


def test_gen_synth_deterministic(tmp_path, data):
    other = tmp_path / "again.csv"
    assert run("gen-synth", "--out", other, *GEN, "--seed", 3) == 0
    assert other.read_bytes() == data.read_bytes()
    manifest = json.loads((tmp_path / "d.csv.manifest.json").read_text())
    assert manifest["schema"] == "calgate.manifest/1" and manifest["seed"] == 3
    assert manifest["outputs"][0] == str(data)
    assert json.loads((tmp_path / "d.csv.synth.json").read_text())["overconfidence_scale"] == 4.0


def test_seed_from_environment(tmp_path, monkeypatch, data):
    monkeypatch.setenv("CALGATE_SEED", "3")
    env = tmp_path / "env.csv"
    assert run("gen-synth", "--out", env, *GEN) == 0
    assert env.read_bytes() == data.read_bytes()
    monkeypatch.setenv("CALGATE_SEED", "x")
    assert run("gen-synth", "--out", tmp_path / "bad.csv", *GEN) == 1


def test_full_pipeline(tmp_path, data, capsys):
    prefix = tmp_path / "part_"
    assert run("split", "--data", data, "--out-prefix", prefix) == 0
    val, test = tmp_path / "part_val.csv", tmp_path / "part_test.csv"
    assert val.exists() and test.exists()
    for method in ("ts", "platt", "isotonic"):
        assert run("calibrate", "--method", method, "--val", val, "--out", tmp_path / f"{method}.json") == 0
    assert json.loads((tmp_path / "ts.json").read_text())["kind"] == "temperature"
    assert run("eval", "--data", test, "--map", tmp_path / "ts.json", "--out", tmp_path / "r.json") == 0
    assert (tmp_path / "r.csv").read_text().startswith("bin_lo,bin_hi")
    assert run("sweep", "--data", test, "--taus", "0.2,0.5 0.9", "--out", tmp_path / "s.csv") == 0
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 4
    assert run("simulate", "--data", test, "--map", tmp_path / "isotonic.json", "--taus", "0.3 0.6",
               "--band", "0.05", "--out", tmp_path / "sim.csv", "--trace", tmp_path / "t.csv") == 0
    assert (tmp_path / "t.csv").exists()
    assert run("simulate", "--data", test, "--tau-on", "0.6", "--tau-off", "0.5",
               "--out", tmp_path / "one.csv") == 0
    assert len((tmp_path / "one.csv").read_text().splitlines()) == 2


def test_replay_reproduces_outputs(tmp_path, data):
    out = tmp_path / "sim.csv"
    assert run("simulate", "--data", data, "--taus", "0.5", "--out", out) == 0
    first = out.read_bytes()
    out.unlink()
    assert run("replay", tmp_path / "sim.csv.manifest.json") == 0
    assert out.read_bytes() == first


def test_bench(tmp_path, capsys):
    assert run("bench", "--n-ticks", "1000", "--out", tmp_path / "b.json") == 0
    blob = json.loads(capsys.readouterr().out)
    assert blob["p99_us"] > 0 and blob["within_budget"] is True


@pytest.mark.parametrize("argv", [
    ["calibrate", "--method", "beta", "--val", "x.csv", "--out", "m.json"],
    ["eval", "--data", "x.csv"],
    ["sweep", "--data", "x.csv", "--taus", "a,b", "--out", "s.csv"],
    [],
])
def test_usage_errors_exit_1(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_validation_errors_exit_1(tmp_path, data, capsys):
    assert run("gen-synth", "--out", tmp_path / "x.csv", "--base-accuracy", "0.01") == 1
    assert "base_accuracy" in capsys.readouterr().err
    assert run("simulate", "--data", data, "--tau-on", "0.6", "--out", tmp_path / "o.csv") == 1
    assert run("simulate", "--data", data, "--tau-on", "0.4", "--tau-off", "0.6", "--out", tmp_path / "o.csv") == 1
    assert run("sweep", "--data", data, "--taus", "0.5 0.4", "--out", tmp_path / "s.csv") == 1
    bad = tmp_path / "bad.csv"
    bad.write_text("stream_id,t_ms,label,logit_0,logit_1\na,0,0,nan,1\n")
    assert run("eval", "--data", bad, "--out", tmp_path / "r.json") == 1
    assert "line 2" in capsys.readouterr().err


def test_io_errors_exit_2(tmp_path):
    assert run("eval", "--data", tmp_path / "missing.csv", "--out", tmp_path / "r.json") == 2
    assert run("replay", tmp_path / "missing.json") == 2


def test_degenerate_calibration_warns(tmp_path, capsys):
    val = tmp_path / "one.csv"
    val.write_text("stream_id,t_ms,label,logit_0,logit_1\na,0,0,3.0,0.0\n")
    assert run("calibrate", "--method", "ts", "--val", val, "--out", tmp_path / "m.json") == 0
    assert "warning (ts)" in capsys.readouterr().err
    assert json.loads((tmp_path / "m.json").read_text())["flags"] == ["temperature_at_lower_bound"]


def _toy(tmp_path, rows):
    path = tmp_path / "toy.csv"
    path.write_text("stream_id,t_ms,label,logit_0,logit_1\n" + "".join(f"a,{i},{y},{z},0\n" for i, (z, y) in enumerate(rows)))
    return path


def test_isotonic_all_correct_is_constant_one(tmp_path):
    val = _toy(tmp_path, [(1.0, 0), (2.0, 0), (0.5, 0)])
    assert run("calibrate", "--method", "isotonic", "--val", val, "--out", tmp_path / "m.json") == 0
    bps = json.loads((tmp_path / "m.json").read_text())["breakpoints"]
    assert [v for _, v in bps] == [1.0]


def test_platt_separable_warns_but_succeeds(tmp_path, capsys):
    val = _toy(tmp_path, [(3.0, 0), (2.5, 0), (0.5, 1), (0.2, 1)])
    assert run("calibrate", "--method", "platt", "--val", val, "--out", tmp_path / "m.json") == 0
    assert "warning (platt)" in capsys.readouterr().err
    assert "separable" in json.loads((tmp_path / "m.json").read_text())["flags"]


def test_single_bin_ece(tmp_path, data):
    assert run("eval", "--data", data, "--bins", "1", "--out", tmp_path / "r.json") == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    (b,) = rep["bins"]
    assert rep["ece"] == pytest.approx(abs(rep["top1"] - b["mean_confidence"]), abs=1e-12)


def test_ndjson_generation_twice_identical(tmp_path):
    for name in ("a.ndjson", "b.ndjson"):
        assert run("gen-synth", "--k", "21", "--seed", "7", "--n-streams", "3", "--ticks-per-stream", "50",
                   "--out", tmp_path / name) == 0
    assert (tmp_path / "a.ndjson").read_bytes() == (tmp_path / "b.ndjson").read_bytes()


def test_calibrate_ts_recovers_scale(tmp_path):
    data = tmp_path / "s3.csv"
    assert run("gen-synth", "--fixture", "--scale", "3", "--seed", "1", "--out", data) == 0
    assert run("calibrate", "--method", "ts", "--val", data, "--out", tmp_path / "ts.json") == 0
    assert 2.7 <= json.loads((tmp_path / "ts.json").read_text())["temperature"] <= 3.3
