import csv
import io
import json
import re

import pytest

from rellich_lab.cli import ConfigError, main, parse_config, run


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def strip_time(text):
    return re.sub(r'"generated_at": "[^"]*"', '"generated_at": ""', text)


def test_minimal_constants_config_parses():
    cfg = parse_config("command=constants\nparams.p=2\nparams.k=5\n")
    assert cfg.command == "constants" and cfg.get("params.p") == 2.0


def test_p_must_exceed_one_cites_line():
    with pytest.raises(ConfigError) as info:
        parse_config("command=constants\n# comment\nparams.p=1\nparams.k=5\n")
    assert any(e.startswith("line 3:") and "p must exceed 1" in e for e in info.value.errors)


def test_rellich_mode_requires_k_above_2p():
    text = ("command=quotient\ngeometry.kind=point\ngeometry.N=4\nparams.p=2\nparams.k=4\n"
            "quotient.functional=rellich\n")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert any("line 5:" in e and "requires k>2p" in e for e in info.value.errors)


def test_all_errors_are_collected():
    text = "command=sweep\nbogus=1\nparams.p=abc\nseed=1\nseed=2\ngeometry.kind=ball\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    errs = "\n".join(info.value.errors)
    assert "line 2: unknown key" in errs
    assert "line 3:" in errs
    assert "line 5: duplicate key" in errs
    assert "equality-case geometry" in errs


def test_missing_report_input(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config("command=report\nreport.inputs=nope.json\n", base_dir=tmp_path)


def test_constants_prints_json(tmp_path, capsys):
    cfg = write(tmp_path, "command=constants\nparams.p=2\nparams.k=5\n")
    assert main(["constants", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["Qp"] == pytest.approx(25 / 16) and out["G"] == pytest.approx(13 / 8)


def test_identities_report(tmp_path):
    cfg = parse_config("command=identities\nidentities.samples=50\n")
    code, res, path = run(cfg, tmp_path)
    assert code == 0
    doc = json.loads(path.read_text())
    assert doc["schema_version"] and doc["summary"]["failed"] == 0
    assert (tmp_path / "identities.csv").read_text().startswith("#")


def test_bad_config_exit_1(tmp_path, capsys):
    cfg = write(tmp_path, "command=constants\nparams.p=1\n")
    assert main(["constants", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "line 2" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["frobnicate", "--config", str(cfg)])
    assert info.value.code == 1


def test_ball_convex_hypothesis_gives_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "command=check-geometry\ngeometry.kind=ball\ngeometry.N=2\n"
                          "params.p=2\nparams.s=1.5\n")
    assert main(["check-geometry", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "hypothesis violated" in capsys.readouterr().err


def test_hypothesis_failure_gives_exit_3(tmp_path):
    cfg = write(tmp_path, "command=quotient\ngeometry.kind=ball\ngeometry.N=2\nparams.p=2\n"
                          "params.s=1.5\nquotient.profiles=2\n")
    assert main(["quotient", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    doc = json.loads((tmp_path / "quotient_report.json").read_text())
    assert doc["hypothesis_failure"] and doc["checks"] == []


def test_empty_report_is_valid(tmp_path):
    cfg = write(tmp_path, "command=report\n")
    assert main(["report", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "report_report.json").read_text())
    assert doc["summary"]["checks"] == 0 and doc["exit_code"] == 0


def test_sweep_csv_rows_match_schedules(tmp_path):
    cfg = write(tmp_path, "command=sweep\ngeometry.kind=point\ngeometry.N=5\nparams.p=2\n"
                          "params.m=0\nsweep.mode=plain\nsweep.eps0=0.2,0.1,0.05\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    text = (tmp_path / "sweep.csv").read_text()
    assert text.startswith("#")
    rows = list(csv.reader(io.StringIO(text.split("\n", 1)[1])))
    assert len(rows) - 1 == 3


def test_report_merges_inputs(tmp_path):
    cfg = write(tmp_path, "command=constants\nparams.p=2\nparams.k=5\n")
    main(["constants", "--config", str(cfg), "--out", str(tmp_path)])
    rep = write(tmp_path, "command=report\nreport.inputs=constants_report.json\n", "rep.cfg")
    assert main(["report", "--config", str(rep), "--out", str(tmp_path / "merged")]) == 0
    doc = json.loads((tmp_path / "merged" / "report_report.json").read_text())
    assert doc["results"]["sources"][0]["command"] == "constants"


@pytest.mark.parametrize("text, command", [
    ("command=quotient\ngeometry.kind=subspace\ngeometry.N=7\ngeometry.k=5\nparams.p=2\n"
     "quotient.functional=j\nquotient.profiles=3\n", "quotient"),
    ("command=minimize\ngeometry.kind=point\ngeometry.N=5\nparams.p=2\nminimize.r_in=1e-2\n",
     "minimize"),
])
def test_reports_are_deterministic(tmp_path, text, command):
    cfg = write(tmp_path, text)
    outs = []
    for i in range(2):
        out = tmp_path / f"out{i}"
        main([command, "--config", str(cfg), "--out", str(out), "--seed", "5"])
        outs.append(strip_time((out / f"{command}_report.json").read_text()))
    assert outs[0] == outs[1]
