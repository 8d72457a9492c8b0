import json

from click.testing import CliRunner

from isorank.cli import main


def test_gen_and_verify(tmp_path):
    runner = CliRunner()
    inst = tmp_path / "inst.json"
    res = runner.invoke(main, ["gen", "--generator", "random", "--param", "n=6", "--param", "d=16",
                               "--seed", "3", "--out", str(inst)])
    assert res.exit_code == 0, res.output
    assert json.loads(inst.read_text())["n"] == 6
    res = runner.invoke(main, ["verify", "--instance", str(inst)])
    assert res.exit_code == 0
    assert "energy_capture: pass" in res.output


def test_gen_bad_param():
    res = CliRunner().invoke(main, ["gen", "--generator", "random", "--param", "n"])
    assert res.exit_code != 0


def test_run_writes_csv_summary_and_figure(tmp_path):
    cfg = {"instance": {"generator": "separated", "n": 6, "d": 16, "gap": 0.9, "zeta": 0.0},
           "estimators": ["WM", "borda"], "noise": "none", "seeds": 2, "timing": False}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "report.csv"
    res = CliRunner().invoke(main, ["run", "--config", str(path), "--out", str(out), "--seed-base", "42"])
    assert res.exit_code == 0, res.output
    assert len(out.read_text().splitlines()) == 1 + 2 * 2
    assert (tmp_path / "report.summary.csv").exists()
    assert (tmp_path / "report.png").stat().st_size > 0


def test_rank_external_log(tmp_path):
    obs = tmp_path / "obs.csv"
    lines = ["i,k,y"]
    for i, base in ((0, 0.9), (1, 0.1)):
        for k in range(8):
            lines += [f"{i},{k},{base}"] * 3
    obs.write_text("\n".join(lines) + "\n")
    res = CliRunner().invoke(main, ["rank", "--obs", str(obs), "--n", "2", "--d", "8", "--lambda", "3",
                                    "--estimator", "borda"])
    assert res.exit_code == 0, res.output
    assert "0,1" in res.output and "1,0" in res.output
    res = CliRunner().invoke(main, ["rank", "--obs", str(obs), "--n", "2", "--d", "8", "--lambda", "3"])
    assert res.exit_code == 0, res.output
    bad = CliRunner().invoke(main, ["rank", "--obs", str(obs), "--n", "1", "--d", "8", "--lambda", "3"])
    assert bad.exit_code != 0
