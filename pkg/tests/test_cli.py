import os

from aqmsim.cli import main


def test_run_subcommand_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    rc = main(["run", "--seed", "1", "--out", str(out), "--duration-s", "3",
               "--set", "pairs=2"])
    assert rc == 0
    assert os.path.exists(out / "epochs.csv")
    assert os.path.exists(out / "summary.csv")
    assert "mean mRTT" in capsys.readouterr().out


def test_run_with_config_file(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("pairs = 2\ndisc = taildrop\nduration_s = 2\n")
    out = tmp_path / "o"
    rc = main(["run", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    summary = (out / "summary.csv").read_text()
    assert "taildrop" in summary


def test_invalid_config_exits_nonzero(tmp_path, capsys):
    rc = main(["run", "--set", "disc=red", "--out", str(tmp_path)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_unknown_key_exits_nonzero(tmp_path, capsys):
    rc = main(["run", "--set", "bogus=1", "--out", str(tmp_path)])
    assert rc == 2
    assert "bogus" in capsys.readouterr().err


def test_sweep_subcommand(tmp_path):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--out", str(out), "--targets-ms", "1,4",
               "--seeds", "1", "--sweep-duration-s", "2", "--jobs", "1",
               "--set", "pairs=2"])
    assert rc == 0
    assert os.path.exists(out / "sweep.csv")


def test_compare_subcommand_with_checkpoint(tmp_path, capsys):
    from aqmsim.harness import pretrain_predictor

    ckpt = tmp_path / "tiny.json"
    pretrain_predictor(ckpt, synth_seed=3, length=150, epochs=1, layers=1, hidden=4)
    out = tmp_path / "cmp"
    rc = main(["compare", "--out", str(out), "--seeds", "1", "--duration-s", "4",
               "--jobs", "1", "--disciplines", "codel",
               "--set", "pairs=2", "--set", f"checkpoint={ckpt}",
               "--set", "retrain_at_s=0"])
    assert rc == 0
    lines = (out / "compare.csv").read_text().splitlines()
    assert lines[0].startswith("disc,arm,seed,final_cumulative_power")
    assert any(",mean," in ln for ln in lines)
    assert "wrote" in capsys.readouterr().out


def test_pretrain_and_retrain_demo(tmp_path, capsys):
    out = tmp_path / "pre"
    rc = main(["pretrain", "--out", str(out), "--length", "200",
               "--epochs", "2", "--synth-seed", "9"])
    assert rc == 0
    ckpt = out / "pretrained.json"
    assert os.path.exists(ckpt)
    assert os.path.exists(out / "fit_report.csv")

    demo_out = tmp_path / "demo"
    rc = main(["retrain-demo", "--checkpoint", str(ckpt), "--out", str(demo_out),
               "--seed", "2", "--duration-s", "7", "--set", "pairs=2"])
    assert rc == 0
    assert os.path.exists(demo_out / "retrained.json")
    assert "one-epoch retrain" in capsys.readouterr().out


def test_missing_checkpoint_error(tmp_path, capsys):
    rc = main(["retrain-demo", "--checkpoint", str(tmp_path / "nope.json"),
               "--out", str(tmp_path), "--set", "pairs=2", "--duration-s", "7"])
    assert rc == 2
