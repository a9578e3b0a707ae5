import csv
import io
import json

import pytest

from anosovlab.cli import CSV_HEADERS, SUBCOMMANDS, ExperimentConfig, export, main, parse_config, run
from anosovlab.errors import ConfigError


def invoke(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_gkm_json(capsys):
    code, out = invoke(capsys, "gkm", "--map", "dissipative", "--epsilon", "0.1")
    assert code == 0
    rec = json.loads(out)
    assert rec["status"] == "ok"
    assert rec["result"]["lambda2_derivative"] == pytest.approx(0.54313, abs=5e-6)
    assert rec["result"]["accessibility"] == "accessible"


def test_exponents_linear(capsys):
    code, out = invoke(capsys, "exponents", "--map", "linear", "--samples", "4", "--horizon", "20")
    assert code == 0
    exps = json.loads(out)["result"]["exponents"]
    # independently: logs of the roots of X^3 - 5X^2 + 6X - 1
    assert [exps[k] for k in "scu"] == pytest.approx([-1.619173832, 0.441448621, 1.177725212], abs=1e-8)


def test_invalid_epsilon_exit_1(capsys):
    code, out = invoke(capsys, "ugibbs", "--epsilon", "0.9")
    assert code == 1
    rec = json.loads(out)
    assert rec["status"] == "error" and rec["error"]["type"] == "ConfigError"


def test_unknown_option_and_keys(capsys):
    assert invoke(capsys, "gkm", "--nonsense", "1")[0] == 1
    assert invoke(capsys, "gkm", "--set", "params.unknown=1")[0] == 1
    assert invoke(capsys, "gkm", "--set", "bogus.key=1")[0] == 1


def test_numerical_failure_exit_2(capsys, monkeypatch):
    from anosovlab import cli
    from anosovlab.errors import NonConvergence

    def failing(cfg, model):
        raise NonConvergence("sweep did not settle")

    monkeypatch.setitem(cli.RUNNERS, "gkm", failing)
    code, out = invoke(capsys, "gkm")
    assert code == 2
    rec = json.loads(out)
    assert rec["exit_code"] == 2 and rec["error"]["type"] == "NonConvergence"


def test_empty_window_exit_2(capsys):
    code, out = invoke(capsys, "ugibbs", "--points", "1", "--iters", "1", "--slab", "1e-9")
    assert code == 2
    assert json.loads(out)["error"]["type"] == "EmptyWindow"


def test_bad_leaf_radius_exit_1(capsys):
    assert invoke(capsys, "leaf", "--radius", "40")[0] == 1


def test_config_file_and_csv(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    out_path = tmp_path / "out.csv"
    cfg.write_text("# demo\nmap.kind = conservative\nmap.epsilon = 0.05\noutput.format = csv\n"
                   f"output.path = {out_path}\n")
    code, _ = invoke(capsys, "gkm", "--config", str(cfg))
    assert code == 0
    raw = out_path.read_bytes()
    assert b"\r\n" in raw
    rows = list(csv.reader(io.StringIO(raw.decode())))
    assert tuple(rows[0]) == CSV_HEADERS["gkm"]
    assert dict(rows[1:])["accessibility"] == "accessible"


def test_byte_identical_runs(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert invoke(capsys, "splitting", "--map", "dissipative", "--seed", "3", "--output", str(path))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_parse_config_rejects_unknown():
    with pytest.raises(ConfigError):
        parse_config("map.colour = red\n")
    with pytest.raises(ConfigError):
        parse_config("depths.leaf = ten\n")
    with pytest.raises(ConfigError):
        parse_config("no equals sign\n")
    cfg = parse_config("depths.leaf = 0\n")
    with pytest.raises(ConfigError):
        cfg.validate()


def test_json_round_trip():
    code, out, _ = run("gkm", ExperimentConfig(kind="conservative", epsilon=0.1))
    assert code == 0
    text = export(out, "json")
    assert export(json.loads(text), "json") == text


def test_every_subcommand_has_a_header():
    assert set(SUBCOMMANDS) == set(CSV_HEADERS)


def test_thread_cap(monkeypatch, capsys):
    monkeypatch.setenv("ANOSOVLAB_THREADS", "1")
    assert invoke(capsys, "gkm")[0] == 0
    monkeypatch.setenv("ANOSOVLAB_THREADS", "zero")
    assert invoke(capsys, "gkm")[0] == 1
