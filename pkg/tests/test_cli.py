import csv
import io
import json
import subprocess
import sys

import pytest

from failsafe_imitation.cli import CONFIG_ENV, main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_certify_empty_road(capsys):
    code, out, _ = run(capsys, "certify", "--scenario", "empty_road")
    assert code == 0
    d = json.loads(out)
    assert d["nSafe"] == 100 and d["mode"] == "L"


def test_certify_extremal_csv(capsys):
    code, out, _ = run(capsys, "certify", "--scenario", "toy_highd", "--mode", "E")
    assert code == 0 and json.loads(out)["heuristic"] is True


def test_certify_fallback_rule(capsys):
    code, out, _ = run(capsys, "certify", "--scenario", "adversarial", "--gamma-rule", "fallback")
    assert code == 0 and json.loads(out)["nSafe"] > 0


def test_mdp_bounds(capsys):
    code, out, _ = run(capsys, "mdp-bounds", "--tmax", "100", "--deltas", "0.01,0.05")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 2 * 99
    for r in rows:
        assert r["closed_form_pass"] == "True" and r["upper_pass"] == "True"
        assert r["lower_pass"] == "True" or r["lower_applicable"] == "False"


def test_rollout_adversarial(capsys, tmp_path):
    out = tmp_path / "r.json"
    code, _, _ = run(capsys, "rollout", "--scenario", "adversarial", "--seeds", "5", "--gamma-rule", "fallback",
                     "--out", str(out))
    assert code == 0
    d = json.loads(out.read_text())
    assert d["metrics"]["collisionProbability"] == 0.0 and len(d["records"]) == 5
    assert d["config"]["gammaRule"] == "fallback"


def test_rollout_byte_identical(capsys):
    args = ("rollout", "--scenario", "adversarial", "--seeds", "2", "--mode", "safe-E")
    _, a, _ = run(capsys, *args)
    _, b, _ = run(capsys, *args)
    assert a == b


def test_config_env(capsys, tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"grid": [4, 4], "gammaRule": "fallback"}))
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    code, out, _ = run(capsys, "rollout", "--scenario", "empty_road", "--seeds", "1", "--summary-only")
    d = json.loads(out)
    assert code == 0 and d["config"]["grid"] == [4, 4] and "records" not in d


def test_bad_config_is_data_error(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"grid": [4, 4], "bogus": 1}')
    code, _, err = run(capsys, "rollout", "--scenario", "empty_road", "--config", str(cfg))
    assert code == 2 and "bogus" in err


def test_density_check(capsys):
    code, out, _ = run(capsys, "density-check", "--seed", "1", "--trials", "4")
    d = json.loads(out)
    assert code == 0 and d["allPass"] and len(d["trials"]) == 4


@pytest.mark.parametrize("argv,code", [
    (["certify", "--scenario", "nope.json"], 2),
    (["certify", "--scenario", "empty_road", "--grid", "ax3"], 1),
    (["certify", "--scenario", "empty_road", "--stage", "20"], 1),
    (["certify", "--scenario", "toy_highd", "--window", "4"], 1),
    (["certify", "--scenario", "empty_road", "--gamma", "-1"], 1),
    (["mdp-bounds", "--deltas", "x"], 1),
    (["mdp-bounds", "--tmax", "1"], 1),
    (["rollout", "--scenario", "empty_road", "--seeds", "0"], 1),
    (["density-check", "--trials", "0"], 1),
])
def test_error_exit_codes(capsys, argv, code):
    assert run(capsys, *argv)[0] == code


def test_malformed_scenario(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schemaVersion": 1}')
    code, _, err = run(capsys, "certify", "--scenario", str(bad))
    assert code == 2 and "malformed" in err


def test_csv_without_sidecar(capsys, tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("frame,id,x,y,width,height,xVelocity,yVelocity\n")
    code, _, err = run(capsys, "certify", "--scenario", str(p))
    assert code == 2 and "sidecar" in err


@pytest.mark.parametrize("argv", [["--bogus"], ["certify"], ["rollout", "--scenario", "x", "--mode", "nope"]])
def test_usage_errors_exit_one(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1


def test_console_module():
    res = subprocess.run([sys.executable, "-m", "failsafe_imitation.cli", "mdp-bounds", "--tmax", "3",
                          "--deltas", "0.1"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.splitlines()[0].startswith("T,delta")
