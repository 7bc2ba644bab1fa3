import csv
import json

import numpy as np
import pytest

from coldse.cli import OUTPUT_ROOT_ENV, main, parse_grid
from coldse.data import Signal, read_wav, write_wav


def run(args):
    try:
        return main(args)
    except SystemExit as exc:
        return exc.code


@pytest.fixture(autouse=True)
def no_output_root(monkeypatch):
    monkeypatch.delenv(OUTPUT_ROOT_ENV, raising=False)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["synth", "--out", str(out), "--seed", "1", "--n-train", "4", "--n-valid", "2", "--n-test", "2", "--duration", "0.05"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    args = ["train", "--data", str(corpus / "manifest.csv"), "--out", str(out), "--mode", "unfolded", "--iters", "4",
            "--batch-size", "2", "--crop", "0.02", "--frame-len", "16", "--hidden", "8", "--depth", "1", "--emb-dim", "4",
            "--T", "5", "--valid-every", "2", "--lr", "0.05"]
    assert main(args) == 0
    return out


def test_synth(corpus):
    assert (corpus / "manifest.csv").is_file()
    rows = list(csv.DictReader(open(corpus / "manifest.csv")))
    assert len(rows) == 8
    cfg = json.loads((corpus / "config.json").read_text())
    assert cfg["command"] == "synth" and cfg["seed"] == 1


def test_synth_rerun_identical(tmp_path):
    args = ["--seed", "2", "--n-train", "2", "--n-valid", "0", "--n-test", "1", "--duration", "0.05"]
    assert main(["synth", "--out", str(tmp_path / "a"), *args]) == 0
    assert main(["synth", "--out", str(tmp_path / "b"), *args]) == 0
    for f in (tmp_path / "a").rglob("*.wav"):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_synth_requires_out(capsys):
    assert run(["synth", "--seed", "1"]) == 1
    assert "--out" in capsys.readouterr().err


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    assert main(["synth", "--n-train", "1", "--n-valid", "0", "--n-test", "0", "--duration", "0.02"]) == 0
    assert (tmp_path / "synth" / "manifest.csv").is_file()


def test_train_outputs(trained):
    lines = (trained / "losses.csv").read_text().splitlines()
    assert lines[0] == "iter,loss1,loss2,total"
    assert len(lines) == 5
    assert all(row.split(",")[2] for row in lines[1:])
    assert (trained / "best.npz").is_file()
    hist = json.loads((trained / "validation.json").read_text())
    assert [h["iter"] for h in hist["history"]] == [0, 2, 4]


def test_train_cd_rows(corpus, tmp_path):
    args = ["train", "--data", str(corpus / "manifest.csv"), "--out", str(tmp_path), "--mode", "cd", "--iters", "10",
            "--batch-size", "1", "--crop", "0.01", "--frame-len", "8", "--hidden", "4", "--depth", "1", "--emb-dim", "2",
            "--T", "5", "--valid-every", "0"]
    assert main(args) == 0
    rows = list(csv.DictReader(open(tmp_path / "losses.csv")))
    assert len(rows) == 10
    assert all(r["loss2"] == "" for r in rows)


def test_train_rerun_from_echoed_config(trained, tmp_path):
    cfg = json.loads((trained / "config.json").read_text())
    cfg["out"] = str(tmp_path)
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(tmp_path / "cfg.json")]) == 0
    assert (tmp_path / "losses.csv").read_bytes() == (trained / "losses.csv").read_bytes()
    assert (tmp_path / "best.npz").read_bytes() == (trained / "best.npz").read_bytes()


def test_train_invalid_mode(corpus, tmp_path):
    assert run(["train", "--data", str(corpus / "manifest.csv"), "--out", str(tmp_path), "--mode", "bogus"]) == 1


def test_train_missing_manifest(tmp_path):
    assert main(["train", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path)]) == 1


def test_enhance_direct_single_call(trained, corpus, tmp_path, capsys):
    noisy = corpus / "noisy" / "test_0000.wav"
    rc = main(["enhance", str(noisy), "--checkpoint", str(trained / "best.npz"), "--out", str(tmp_path), "--steps", "1", "--verbose"])
    assert rc == 0
    assert "1 restorer calls" in capsys.readouterr().out
    out = read_wav(tmp_path / "test_0000_enhanced.wav")
    assert len(out) == len(read_wav(noisy))


def test_enhance_full_fixed_xt_with_trajectory(trained, corpus, tmp_path, capsys):
    noisy = corpus / "noisy" / "test_0001.wav"
    clean = corpus / "clean" / "test_0001.wav"
    rc = main(["enhance", str(noisy), "--checkpoint", str(trained / "best.npz"), "--out", str(tmp_path), "--steps", "5",
               "--variant", "fixed-xt", "--verbose", "--trajectory", "--reference", str(clean)])
    assert rc == 0
    assert "5 restorer calls" in capsys.readouterr().out
    traj = tmp_path / "test_0001_trajectory"
    assert len(list(traj.glob("step_*.wav"))) == 6
    assert len((traj / "l1.csv").read_text().splitlines()) == 7


def test_enhance_rate_mismatch(trained, tmp_path, capsys):
    write_wav(tmp_path / "x.wav", Signal(np.zeros(100), 16000))
    rc = main(["enhance", str(tmp_path / "x.wav"), "--checkpoint", str(trained / "best.npz"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "rate mismatch" in capsys.readouterr().err


def test_enhance_bad_steps(trained, corpus, tmp_path):
    noisy = corpus / "noisy" / "test_0000.wav"
    assert main(["enhance", str(noisy), "--checkpoint", str(trained / "best.npz"), "--out", str(tmp_path), "--steps", "3"]) == 1


def test_eval_grid(trained, corpus, tmp_path):
    rc = main(["eval", "--data", str(corpus / "manifest.csv"), "--checkpoint", str(trained / "best.npz"), "--out", str(tmp_path),
               "--grid", "direct-1,improved-5"])
    assert rc == 0
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert len(rows) == 4
    assert sorted({(r["method"], r["steps"]) for r in rows}) == [("direct", "1"), ("improved-reanchored", "5")]
    assert (tmp_path / "report.json").is_file()


def test_eval_oracle(corpus, tmp_path):
    rc = main(["eval", "--data", str(corpus / "manifest.csv"), "--oracle", "--T", "5", "--out", str(tmp_path),
               "--grid", "direct-1,improved-5,naive-5-fixed-xt", "--jobs", "2"])
    assert rc == 0
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert len(rows) == 6
    assert all(float(r["si_sdr_out"]) == 100.0 for r in rows)


def test_eval_missing_checkpoint(corpus, tmp_path):
    assert main(["eval", "--data", str(corpus / "manifest.csv"), "--checkpoint", str(tmp_path / "nope.npz"), "--out", str(tmp_path)]) == 1
    assert main(["eval", "--data", str(corpus / "manifest.csv"), "--out", str(tmp_path)]) == 1


def test_parse_grid():
    cfgs = parse_grid("direct-1,improved-50,improved-50-fixed-xt,naive-50", 50)
    assert [c.label for c in cfgs] == ["direct", "improved-reanchored", "improved-fixed_xT", "naive-reanchored"]
    for bad in ("direct-5", "improved-7", "foo", "improved-x"):
        with pytest.raises(Exception):
            parse_grid(bad, 50)


def test_demo_walkthrough(capsys):
    assert main(["demo", "--T", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[1].split()[:3] == ["2", "0.000000", "0.0000000"]
    assert lines[2].split()[:3] == ["1", "0.500000", "0.7071068"]
    assert lines[3].split()[:3] == ["0", "1.000000", "1.0000000"]


def test_demo_csv_out(tmp_path, capsys):
    assert main(["demo", "--T", "2", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(open(tmp_path / "trajectory.csv")))
    assert float(rows[-1]["x_t"]) == 1.0
    assert (tmp_path / "config.json").is_file()


def test_demo_schedule_dump(capsys):
    assert main(["demo", "--schedule-dump"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "t,alpha" and len(lines) == 52
    assert lines[-1] == "50,0.0"


def test_demo_rejects_zero_steps(capsys):
    assert main(["demo", "--T", "0"]) == 1


def test_unknown_subcommand():
    assert run(["bogus"]) == 1
