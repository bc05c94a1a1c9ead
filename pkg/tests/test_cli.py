import json

import pytest

from mindiv.cli import EXIT_DOMAIN, EXIT_OK, EXIT_USAGE, load_schema, main
from mindiv.core import FiniteDistribution, dump_distribution


@pytest.fixture
def bern_file(tmp_path):
    path = tmp_path / "bern05.json"
    dump_distribution(FiniteDistribution.bernoulli(0.5), path)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_klinf_command(capsys, bern_file):
    code, out = run(capsys, "klinf", "--dist", bern_file, "--mu", "0.25")
    assert code == EXIT_OK
    assert out["value"] == pytest.approx(0.143841, abs=1e-6)
    code, out = run(capsys, "klinf", "--dist", bern_file, "--mu", "0.5")
    assert out["value"] == 0.0


def test_klinf_boundary_mean_is_domain_error(capsys, bern_file):
    code, _ = run(capsys, "klinf", "--dist", bern_file, "--mu", "1.0")
    assert code == EXIT_DOMAIN


def test_missing_file_is_domain_error(capsys, tmp_path):
    code, _ = run(capsys, "klinf", "--dist", tmp_path / "nope.json", "--mu", "0.3")
    assert code == EXIT_DOMAIN


def test_fdiv_command(capsys, bern_file):
    code, out = run(capsys, "fdiv", "--dist", bern_file, "--mu", "0.25", "--spec", "hellinger")
    assert code == EXIT_OK and out["value"] == pytest.approx(0.06815, abs=1e-5)
    _, kl = run(capsys, "fdiv", "--dist", bern_file, "--mu", "0.25", "--spec", "kl")
    _, ref = run(capsys, "klinf", "--dist", bern_file, "--mu", "0.25")
    assert kl["value"] == pytest.approx(ref["value"], abs=1e-6)
    _, red = run(capsys, "fdiv", "--dist", bern_file, "--mu", "0.25", "--spec", "chi2", "--reduced")
    assert red["value"] == pytest.approx(1 / 3, abs=1e-7)


def test_unknown_spec_is_usage_error(bern_file):
    with pytest.raises(SystemExit) as exc:
        main(["fdiv", "--dist", str(bern_file), "--mu", "0.25", "--spec", "tv"])
    assert exc.value.code == EXIT_USAGE


def test_general_command(capsys, bern_file):
    code, out = run(capsys, "general", "--dist", bern_file, "--g", "identity", "--set", '{"singleton": [0.25]}')
    assert code == EXIT_OK and out["value"] == pytest.approx(0.143841, abs=1e-6)
    _, out = run(capsys, "general", "--dist", bern_file, "--g", "identity",
                 "--set", '{"box": {"lo": [0.4], "hi": [0.6]}}')
    assert out["value"] == pytest.approx(0.0, abs=1e-9)
    code, _ = run(capsys, "general", "--dist", bern_file, "--g", "identity", "--set", '{"singleton": [0.2, 0.3]}')
    assert code == EXIT_DOMAIN
    code, _ = run(capsys, "general", "--dist", bern_file, "--g", "identity", "--set", "{not json")
    assert code == EXIT_USAGE


def test_channel_command(capsys, bern_file):
    code, out = run(capsys, "channel", "--dist", bern_file, "--k", "2")
    assert code == EXIT_OK and out["mean_out"] == out["mean_in"]


def test_oracle_check(capsys):
    code, a = run(capsys, "oracle-check", "--n", "5", "--K", "2", "--seed", "3")
    _, b = run(capsys, "oracle-check", "--n", "5", "--K", "2", "--seed", "3")
    assert code == EXIT_OK and a == b and a["within_1e-5"]
    code, _ = run(capsys, "oracle-check", "--K", "4")
    assert code == EXIT_USAGE


def scenario(tmp_path, bern_file, **extra):
    obj = {"null": bern_file.name, "alpha": 0.1, "n_max": 150, "replicates": 8, "seed": 5}
    obj.update(extra)
    path = tmp_path / "scen.json"
    path.write_text(json.dumps(obj))
    return path


@pytest.mark.parametrize("mode, extra, column", [
    ("test", {}, None),
    ("cs", {}, "coverage_violated"),
    ("cd", {"alt": {"dim": 1, "atoms": [[0], [1]], "weights": [0.1, 0.9]}, "change_at": 40}, "delay"),
])
def test_simulate_deterministic_csv(capsys, tmp_path, bern_file, mode, extra, column):
    scen = scenario(tmp_path, bern_file, **extra)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    code, summary = run(capsys, "simulate", "--scenario", scen, "--mode", mode, "--out", a)
    run(capsys, "simulate", "--scenario", scen, "--mode", mode, "--out", b)
    assert code == EXIT_OK and summary["replicates"] == 8
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0].split(",")
    assert header[:4] == ["replicate", "seed", "stop_time", "censored"]
    assert (header[4] if len(header) > 4 else None) == column


def test_simulate_rejects_bad_scenario(capsys, tmp_path, bern_file):
    scen = scenario(tmp_path, bern_file, colour="blue")
    code, _ = run(capsys, "simulate", "--scenario", scen, "--mode", "test", "--out", tmp_path / "x.csv")
    assert code == EXIT_USAGE
    scen = scenario(tmp_path, bern_file, change_at=10)
    code, _ = run(capsys, "simulate", "--scenario", scen, "--mode", "cd", "--out", tmp_path / "x.csv")
    assert code == EXIT_USAGE


def test_schemas_load():
    for name in ("distribution", "klinf_result", "fdiv_result", "general_result", "channel_result",
                 "oracle_report", "simulate_summary", "scenario"):
        assert load_schema(name)["type"] == "object"
