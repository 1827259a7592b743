import json

from click.testing import CliRunner

from planocomp.cli import main
from planocomp.power import battery_life, NodeEnergyConfig


def test_synth_then_run(tmp_path):
    runner = CliRunner()
    spec = tmp_path / "spec.yaml"
    spec.write_text("count: 4\nperturbations: [none, foreign]\nclutter: 100\n")
    r = runner.invoke(main, ["eval", "synth", "--seed", "1", "--spec", str(spec), "--out", str(tmp_path / "ds")])
    assert r.exit_code == 0, r.output
    assert len(list((tmp_path / "ds" / "images").iterdir())) == 4
    r = runner.invoke(main, ["eval", "run", "--dataset", str(tmp_path / "ds"), "--out", str(tmp_path / "rep")])
    assert r.exit_code == 0, r.output
    assert "Table 1" in r.output
    summary = json.loads((tmp_path / "rep" / "summary.json").read_text())
    assert summary["racks"] == 4 and summary["reproduced"] == 4
    assert summary["detection"]["f1"] == 1.0


def test_synth_rejects_unknown_perturbation(tmp_path):
    r = CliRunner().invoke(main, ["eval", "synth", "--seed", "1", "--out", str(tmp_path), "--perturbations", "melt"])
    assert r.exit_code != 0 and "melt" in r.output


def test_power_ledger(tmp_path):
    cfg = tmp_path / "node.yaml"
    cfg.write_text("node: {battery_capacity: 1500}\nsimulation: {days: 4, change_probability: 1.0}\n")
    r = CliRunner().invoke(main, ["eval", "power", "--config", str(cfg)])
    assert r.exit_code == 0, r.output
    recs = [json.loads(x) for x in r.output.splitlines()]
    days = [x for x in recs if x["type"] == "day"]
    assert [d["day"] for d in days] == [0, 1, 2, 3]
    assert all({"consumption", "harvest", "charge"} <= set(d) for d in days)
    summary = recs[-1]
    assert summary["type"] == "summary"
    assert summary["battery_life_months"] == battery_life(NodeEnergyConfig())


def test_power_unbounded_with_rich_harvest(tmp_path):
    cfg = tmp_path / "node.yaml"
    cfg.write_text("harvest: [{kind: solar, lux: 1000}]\nsimulation: {days: 2}\n")
    r = CliRunner().invoke(main, ["eval", "power", "--config", str(cfg)])
    summary = json.loads(r.output.splitlines()[-1])
    assert summary["unbounded"] is True and summary["battery_life_months"] is None


def test_bad_config_is_reported(tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("node: {volts: 3}\n")
    r = CliRunner().invoke(main, ["eval", "power", "--config", str(cfg)])
    assert r.exit_code != 0 and "volts" in r.output


def test_serve_help_lists_flags():
    r = CliRunner().invoke(main, ["serve", "--help"])
    assert r.exit_code == 0
    for flag in ("--port", "--storage-root", "--store-config"):
        assert flag in r.output
