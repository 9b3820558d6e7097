import json

import pytest

from disentangle.cli import main

FLOW = ["flow", "--n", "4", "--r", "2", "--spectrum", "2,1", "--t-end", "5", "--name", "x"]


def test_dry_run_prints_config(tmp_path, capsys):
    assert main(["mod-add", "--dry-run", "--p", "11", "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["config"]["p"] == 11 and out["cells"] == 6
    assert not (tmp_path / "runs").exists()


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["mod-add", "--bogus", "3"])
    assert exc.value.code == 2


def test_bad_value_exits_2(capsys):
    assert main(["mod-add", "--p", "91", "--dry-run"]) == 2
    assert "not prime" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"p": 13, "hidden": 8}))
    assert main(["mod-add", "--config", str(cfg), "--p", "17", "--dry-run"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["config"]["p"] == 17 and out["config"]["hidden"] == 8
    cfg.write_text(json.dumps({"unknown": 1}))
    assert main(["mod-add", "--config", str(cfg), "--dry-run"]) == 2
    cfg.write_text("{not json")
    assert main(["mod-add", "--config", str(cfg), "--dry-run"]) == 2


def test_env_output_root(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DISENTANGLE_OUT", str(tmp_path))
    assert main(FLOW) == 0
    assert (tmp_path / "runs" / "flow" / "x" / "report.json").exists()


def test_flow_run_is_deterministic(tmp_path, capsys):
    assert main(FLOW + ["--out", str(tmp_path / "a")]) == 0
    assert main(FLOW + ["--out", str(tmp_path / "b")]) == 0
    a = sorted((tmp_path / "a" / "runs" / "flow" / "x").glob("*.csv"))
    assert a
    for f in a:
        assert f.read_bytes() == (tmp_path / "b" / "runs" / "flow" / "x" / f.name).read_bytes()


def test_failed_run_exits_1(tmp_path, monkeypatch, capsys):
    import disentangle.experiments as ex

    def boom(cfg, seed):
        raise RuntimeError("boom")

    monkeypatch.setitem(ex._CELLS, "flow", boom)
    assert main(FLOW + ["--out", str(tmp_path)]) == 1
    report = json.loads((tmp_path / "runs" / "flow" / "x" / "report.json").read_text())
    assert report["failed"] and "boom" in report["results"][0]["error"]


def test_plot_subcommand(tmp_path, capsys):
    csv = tmp_path / "curve.csv"
    csv.write_text("epoch,loss,val_acc\n1,2.0,0.1\n2,1.0,0.5\n")
    assert main(["plot", str(csv)]) == 0
    assert (tmp_path / "curve.svg").exists()
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["plot", str(empty)]) == 2
