import json

import pytest

from toricenv.cli import EXPERIMENTS, RUNNERS, main, resolve_config


def run(tmp_path, config, *extra, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return main(["run", "--config", str(path), "--out", str(tmp_path / "out"), *extra])


def test_every_experiment_is_described_and_runnable():
    assert set(EXPERIMENTS) == set(RUNNERS)


def test_describe(capsys):
    assert main(["describe", "envelope"]) == 0
    assert capsys.readouterr().out.startswith("envelope: ")
    assert main(["describe", "nope"]) == 1


def test_h0_growth_rows(tmp_path):
    assert run(tmp_path, {"experiment": "h0-growth", "ks": [10, 100]}) == 0
    text = (tmp_path / "out" / "h0-growth" / "h0_growth.csv").read_text()
    assert text.splitlines() == ["k,metric,value", "10,normalized_count,0.6", "100,normalized_count,0.51"]


def test_lambda_zero_envelope_is_the_metric(tmp_path):
    assert run(tmp_path, {"experiment": "envelope", "lambda": 0}) == 0
    d = tmp_path / "out" / "envelope"
    assert (d / "envelope.csv").read_bytes() == (d / "metric.csv").read_bytes()
    side = json.loads((d / "envelope.csv.json").read_text())
    assert side["density"] == "logistic-product" and side["config"]["lambda"] == 0


def test_report_embeds_resolved_config(tmp_path):
    assert run(tmp_path, {"experiment": "envelope"}) == 0
    report = json.loads((tmp_path / "out" / "envelope" / "report.json").read_text())
    assert report["passed"]
    assert report["resolved_config"] == resolve_config({"experiment": "envelope", "out": str(tmp_path / "out")})
    assert "timestamp" in report["metadata"] and report["metadata"]["threads"] >= 1


def test_unknown_key_is_a_config_error(tmp_path):
    assert run(tmp_path, {"experiment": "envelope", "lamda": 0.5}) == 1


def test_bad_arguments_exit_one(tmp_path):
    assert main(["run"]) == 1
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 1
    assert run(tmp_path, {"experiment": "envelope"}, "--override", "tolerances.nonsense=1") == 1


def test_failed_check_exits_two_with_report(tmp_path):
    cfg = {"experiment": "envelope", "lambda": 0.5, "metric": "p1"}
    # a negative bound cannot be met by a violation measure
    assert run(tmp_path, cfg, "--override", "tolerances.convexity=-1") == 2
    failure = json.loads((tmp_path / "out" / "envelope" / "failure.json").read_text())
    assert failure["failed_checks"]
    assert failure["resolved_config"]["tolerances"] == {"convexity": -1}


def test_override_reaches_nested_keys(tmp_path):
    assert run(tmp_path, {"experiment": "envelope"}, "--override", "grid.points=65",
               "--override", "lambda=0.25") == 0
    report = json.loads((tmp_path / "out" / "envelope" / "report.json").read_text())
    assert report["resolved_config"]["grid"]["points"] == 65
    assert report["resolved_config"]["lambda"] == 0.25


def test_payloads_are_reproducible(tmp_path):
    cfg = {"experiment": "exhaustion", "metric": "simplex", "grid": {"points": 33}}
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert run(a, cfg) == 0 and run(b, cfg) == 0
    for f in (a / "out" / "exhaustion").glob("*.csv"):
        assert f.read_bytes() == (b / "out" / "exhaustion" / f.name).read_bytes()


@pytest.mark.parametrize("experiment", ["bergman-converge", "pushforward", "product"])
def test_experiments_pass_at_defaults(tmp_path, experiment):
    assert run(tmp_path, {"experiment": experiment}) == 0
