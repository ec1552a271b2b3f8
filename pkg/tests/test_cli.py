import json

import numpy as np
import pytest

from gaitscore import cli
from gaitscore.cli import RunConfig, cmd_synth, cmd_train, main, resolve_config
from gaitscore.fileio import read_pose
from gaitscore.nn import loads_checkpoint

TINY = ["--epochs", "2", "--filters", "2", "--window", "20", "--min-tail", "10", "--batch", "8"]


def stationary_detections(n=12):
    return "".join(f"{t},100,100,150,220,0.9\n" for t in range(n))


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--n-per-class", "2", "--frames", "40", "--seed", "5", "--out", str(d)]) == 0
    return d


# --- config precedence --------------------------------------------------------------

def test_defaults():
    cfg = resolve_config({})
    assert (cfg.window, cfg.epochs, cfg.batch, cfg.filters, cfg.loss) == (200, 600, 64, 32, "focal+ordinal")
    assert cfg.seed is None


def test_flags_override_config_override_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"epochs": 7, "lambda": 0.5, "window": 50}))
    cfg = resolve_config({"epochs": 3, "window": None}, path)
    assert cfg.epochs == 3      # flag wins
    assert cfg.lam == 0.5       # config wins over default
    assert cfg.window == 50     # unset flag does not clobber config
    assert cfg.filters == 32    # default


def test_unknown_config_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"epoch": 3}')
    with pytest.raises(cli.CliError, match="unknown key"):
        resolve_config({}, path)


def test_missing_config_file(tmp_path, capsys):
    assert main(["synth", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert "does not exist" in capsys.readouterr().err


def test_bad_loss_choice_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["gradcheck", "--loss", "mse"])
    assert exc.value.code == 2


# --- track ----------------------------------------------------------------------------

def test_track_single_person(tmp_path, capsys):
    det = tmp_path / "d.csv"
    det.write_text(stationary_detections())
    out = tmp_path / "tracks.csv"
    assert main(["track", str(det), "--out", str(out)]) == 0
    assert capsys.readouterr().out.startswith("participant 1 ")
    rows = out.read_text().splitlines()
    assert len(rows) == 12 and all(r.endswith(",1") for r in rows)


def test_track_empty_file(tmp_path, capsys):
    det = tmp_path / "d.csv"
    det.write_text("")
    assert main(["track", str(det)]) == 1
    assert "no detections" in capsys.readouterr().err


def test_track_malformed_line(tmp_path, capsys):
    det = tmp_path / "d.csv"
    det.write_text(stationary_detections(3) + "3,1,2,oops,4,0.5\n")
    assert main(["track", str(det)]) == 1
    assert "line 4" in capsys.readouterr().err


def test_track_missing_file(tmp_path, capsys):
    assert main(["track", str(tmp_path / "none.csv")]) == 1
    assert "does not exist" in capsys.readouterr().err


# --- synth ------------------------------------------------------------------------------

def test_synth_counts_and_labels(synth_dir):
    files = sorted(synth_dir.glob("*.pose"))
    assert len(files) == 8
    labels = [read_pose(f).label for f in files]
    assert labels == [0, 0, 1, 1, 2, 2, 3, 3]


def test_synth_deterministic(synth_dir, tmp_path):
    cmd_synth(RunConfig(out=str(tmp_path), seed=5, n_per_class=2, frames=40))
    for f in synth_dir.glob("*.pose"):
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


# --- train / score ------------------------------------------------------------------------

def test_train_writes_checkpoint_and_logs_history(synth_dir, tmp_path, caplog, monkeypatch):
    out = tmp_path / "m.ckpt"
    with caplog.at_level("INFO", logger="gaitscore"):
        assert main(["train", str(synth_dir), "--seed", "1", "--out", str(out)] + TINY) == 0
    model, adam, extra = loads_checkpoint(out.read_bytes())
    assert model.spec.window == 20 and model.spec.filters == 2
    assert len(extra["loss_history"]) == 2
    assert "epoch 1 loss" in caplog.text


def test_train_is_byte_deterministic(synth_dir, tmp_path):
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    for p in (a, b):
        assert main(["train", str(synth_dir), "--seed", "9", "--out", str(p)] + TINY) == 0
    assert a.read_bytes() == b.read_bytes()


def test_train_requires_seed(synth_dir, capsys):
    assert main(["train", str(synth_dir)] + TINY) == 1
    assert "seed" in capsys.readouterr().err


def test_train_missing_label(synth_dir, tmp_path, capsys):
    src = next(synth_dir.glob("*.pose")).read_text()
    bad = tmp_path / "x.pose"
    bad.write_text("\n".join(l for l in src.splitlines() if not l.startswith("label:")) + "\n")
    assert main(["train", str(bad), "--seed", "1"] + TINY) == 1
    assert "missing label" in capsys.readouterr().err


@pytest.fixture(scope="module")
def checkpoint(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("ckpt") / "m.ckpt"
    cmd_train(RunConfig(inputs=[str(synth_dir)], out=str(out), seed=2, epochs=2, filters=2,
                        window=20, min_tail=10, batch=8))
    return out


def test_score_outputs_label_and_distribution(synth_dir, checkpoint, tmp_path):
    out = tmp_path / "score.json"
    exam = next(synth_dir.glob("*.pose"))
    assert main(["score", str(exam), "--checkpoint", str(checkpoint), "--out", str(out)]) == 0
    res = json.loads(out.read_text())
    assert res["label"] in range(4)
    assert len(res["probabilities"]) == 4
    assert sum(res["probabilities"]) == pytest.approx(1.0, abs=1e-12)
    assert res["n_clips"] == 2


def test_score_spec_mismatch(synth_dir, checkpoint, capsys):
    exam = next(synth_dir.glob("*.pose"))
    assert main(["score", str(exam), "--checkpoint", str(checkpoint), "--window", "30"]) == 1
    assert "spec hash" in capsys.readouterr().err


def test_score_exam_too_short(synth_dir, checkpoint, tmp_path, capsys):
    seq = read_pose(next(synth_dir.glob("*.pose")))
    from gaitscore.fileio import write_pose
    from gaitscore.pose import PoseSequence

    short = tmp_path / "short.pose"
    write_pose(short, PoseSequence(seq.frames[:5], seq.fps, "short", None, seq.layout))
    assert main(["score", str(short), "--checkpoint", str(checkpoint)]) == 1
    assert "error" in capsys.readouterr().err


def test_score_rejects_garbage_checkpoint(synth_dir, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    exam = next(synth_dir.glob("*.pose"))
    assert main(["score", str(exam), "--checkpoint", str(bad)]) == 1
    assert "not a gaitscore checkpoint" in capsys.readouterr().err


# --- evaluate / gradcheck -------------------------------------------------------------------

def test_evaluate_writes_reports(synth_dir, tmp_path):
    out = tmp_path / "eval"
    assert main(["evaluate", str(synth_dir), "--seed", "0", "--out", str(out),
                 "--compare", "ce"] + TINY) == 0
    names = {p.name for p in out.iterdir()}
    assert names == {"report.txt", "report.json", "confusion.csv", "folds.json", "wilcoxon.json"}
    report = json.loads((out / "report.json").read_text())
    assert np.array(report["confusion"]).sum() == 8
    assert len(json.loads((out / "folds.json").read_text())) == 8
    assert json.loads((out / "wilcoxon.json").read_text())["n"] == 8


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    assert "gradcheck PASS" in capsys.readouterr().out


def test_log_level_from_environment(monkeypatch):
    import logging

    monkeypatch.setenv("GAITSCORE_LOG", "DEBUG")
    root = logging.getLogger()
    saved = root.handlers[:], root.level
    root.handlers = []
    try:
        cli._setup_logging()
        assert root.level == logging.DEBUG
    finally:
        root.handlers, root.level = saved[0], saved[1]
