import csv

import numpy as np
import pytest

from pqvit import trainer, vit
from pqvit.cli import main
from pqvit.signals import TimeGrid, generate_signal

TINY = ["--height", "12", "--width", "12", "--patch", "4", "--dim", "8", "--depth", "1", "--heads", "2"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "d"
    assert main(["gen", "--per-class", "2", "--seed", "7", "--out", str(root)]) == 0
    return root


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_counts_and_determinism(data, tmp_path, capsys):
    lines = (data / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 34
    code, out, _ = _run(capsys, "gen", "--per-class", 2, "--seed", 7, "--out", tmp_path / "again")
    assert code == 0 and "wrote 34 samples" in out and "train" in out
    for name in ("manifest.jsonl", "signals.f32"):
        assert (tmp_path / "again" / name).read_bytes() == (data / name).read_bytes()


def test_gen_rejects_bad_flags(tmp_path, capsys):
    code, out, err = _run(capsys, "gen", "--per-class", 1, "--classes", "0,99", "--out", tmp_path)
    assert code == 1 and out == "" and "99" in err


def test_render_writes_pgms(data, tmp_path, capsys):
    code, _, _ = _run(capsys, "render", "--data", data, "--out", tmp_path / "a")
    assert code == 0
    files = sorted((tmp_path / "a").iterdir())
    assert len(files) == 34
    for f in files:
        raw = f.read_bytes()
        assert raw.startswith(b"P5 224 224 255\n") and len(raw) == 15 + 224 * 224
    _run(capsys, "render", "--data", data, "--out", tmp_path / "b")
    for f in files:
        assert (tmp_path / "b" / f.name).read_bytes() == f.read_bytes()
    assert files[0].name.startswith("000000_c")


def test_render_missing_signals(tmp_path, capsys):
    code, _, err = _run(capsys, "render", "--data", tmp_path, "--out", tmp_path / "x")
    assert code == 1 and "manifest" in err


def test_train_zero_epochs_is_initialization(data, tmp_path, capsys):
    code, out, _ = _run(capsys, "train", "--data", data, "--out", tmp_path, "--epochs", 0, *TINY)
    assert code == 0
    params, cfg, header, _ = trainer.read_checkpoint(tmp_path / "final.pqvt")
    init = vit.init_model(cfg)
    for name in init:
        assert np.array_equal(params[name].data, init[name].data.astype(np.float32))
    assert header["history"] == []
    assert (tmp_path / "history.csv").read_text().splitlines() == ["epoch,train_loss,train_acc,eval_acc,seconds"]
    assert header["train"]["lr"] == 1e-4 and header["train"]["weight_decay"] == 0.02
    assert header["train"]["batch_size"] == 32 and header["train"]["epochs"] == 0
    assert cfg.n_classes == 17


def test_train_default_flags_recorded(data, tmp_path, capsys):
    code, out, _ = _run(capsys, "train", "--data", data, "--out", tmp_path, "--epochs", 1, *TINY)
    assert code == 0 and "final eval accuracy" in out
    _, _, header, _ = trainer.read_checkpoint(tmp_path / "final.pqvt")
    t = header["train"]
    assert (t["lr"], t["weight_decay"], t["batch_size"], t["eval_batch_size"]) == (1e-4, 0.02, 32, 8)
    assert len(header["history"]) == 1


@pytest.fixture(scope="module")
def checkpoint(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("ck")
    assert main(["train", "--data", str(data), "--out", str(out), "--epochs", "2", "--batch-size", "8", *TINY]) == 0
    return out / "final.pqvt"


def test_eval_writes_identical_csvs(data, checkpoint, tmp_path, capsys):
    code, out, _ = _run(capsys, "eval", "--data", data, "--checkpoint", checkpoint, "--out", tmp_path / "a",
                        "--split", "train")
    assert code == 0 and out.startswith("accuracy ")
    _run(capsys, "eval", "--data", data, "--checkpoint", checkpoint, "--out", tmp_path / "b", "--split", "train")
    for name in ("confusion_counts.csv", "confusion_percent.csv", "per_class.csv", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.reader(open(tmp_path / "a" / "confusion_percent.csv")))[1:]
    for row in rows:
        total = sum(float(v) for v in row[1:])
        assert total == 0 or abs(total - 100) < 0.1
    assert next(csv.reader(open(tmp_path / "a" / "summary.csv"))) == ["accuracy", "precision", "recall", "f1"]


def test_eval_empty_split(data, checkpoint, tmp_path, capsys):
    # 2 per class at a 0.2 test fraction leaves no test samples
    code, _, err = _run(capsys, "eval", "--data", data, "--checkpoint", checkpoint, "--out", tmp_path)
    assert code == 1 and "empty" in err


def test_eval_geometry_mismatch(data, checkpoint, tmp_path, capsys):
    code, out, err = _run(capsys, "eval", "--data", data, "--checkpoint", checkpoint, "--out", tmp_path,
                          "--height", 224)
    assert code == 1 and "ConfigError" in err and out == ""


def _zero_head_checkpoint(path):
    cfg = vit.ViTConfig(height=12, width=12, patch=4, dim=8, depth=1, heads=2, n_classes=17)
    params = vit.init_model(cfg)
    params["head.weight"].data[:] = 0
    spec = trainer.image_spec_for(cfg)
    grid = {"fs": 3200.0, "f0": 50.0, "n_samples": 650}
    trainer.write_checkpoint(path, params, cfg, trainer.TrainConfig(epochs=0), spec, grid,
                             trainer.TrainHistory(), 0, trainer.AdamState())


def _probs(out):
    return np.array([float(line.split()[1]) for line in out.splitlines()[1:]])


def test_infer_zero_head_is_uniform(tmp_path, capsys):
    _zero_head_checkpoint(tmp_path / "z.pqvt")
    np.save(tmp_path / "s.npy", generate_signal(3, 1).samples)
    code, out, _ = _run(capsys, "infer", "--checkpoint", tmp_path / "z.pqvt", tmp_path / "s.npy")
    assert code == 0 and out.startswith("class ")
    p = _probs(out)
    assert p.size == 17
    np.testing.assert_allclose(p, 1 / 17, atol=1e-6)
    assert abs(p.sum() - 1) < 1e-5


def test_infer_wrong_length(tmp_path, capsys):
    _zero_head_checkpoint(tmp_path / "z.pqvt")
    (tmp_path / "s.txt").write_text(" ".join(["0.5"] * 100))
    code, _, err = _run(capsys, "infer", "--checkpoint", tmp_path / "z.pqvt", tmp_path / "s.txt")
    assert code == 1 and "expected 650" in err


def test_infer_overfit_single_sample(tmp_path, capsys):
    d = tmp_path / "one"
    assert main(["gen", "--per-class", "1", "--classes", "2", "--test-fraction", "0", "--seed", "4",
                 "--out", str(d)]) == 0
    assert main(["train", "--data", str(d), "--out", str(tmp_path / "m"), "--classes", "0,1,2",
                 "--epochs", "60", "--batch-size", "1", "--lr", "0.01", "--dtype", "float64", *TINY]) == 0
    capsys.readouterr()
    rec_samples = np.fromfile(d / "signals.f32", dtype="<f4")
    (tmp_path / "s.txt").write_text("\n".join(repr(float(v)) for v in rec_samples))
    code, out, _ = _run(capsys, "infer", "--checkpoint", tmp_path / "m" / "final.pqvt", tmp_path / "s.txt")
    assert code == 0
    assert out.splitlines()[0] == "class 2 Swell"
    assert _probs(out)[2] > 0.99
    assert TimeGrid().n_samples == rec_samples.size
