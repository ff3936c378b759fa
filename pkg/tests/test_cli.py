import shutil

import pytest

from edr_nmt import checkpoint
from edr_nmt.cli import EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA, EXIT_USAGE, run


def small_config(d, regime="baseline", **extra):
    settings = {"embed_dim": 8, "hidden_dim": 8, "epochs": 2, "finetune_epochs": 1,
                "batch_size": 16, "regime": regime, "bootstrap_samples": 20, **extra}
    text = (d / "config.txt").read_text() + "".join(f"{k} = {v}\n" for k, v in settings.items())
    path = d / f"{regime}.txt"
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run(["make-data", "--out", str(d), "--train-size", "60", "--dev-size", "10",
                "--test-size", "10", "--symbols", "6", "--max-len", "5", "--seed", "1"]) == 0
    return d


@pytest.fixture(scope="module")
def trained(data_dir):
    cfg = small_config(data_dir)
    assert run(["train", "--config", str(cfg)]) == 0
    return cfg


def test_make_data_outputs(data_dir):
    for name in ("train.src", "train.tgt", "dev.src", "test.tgt", "src.vocab", "tgt.vocab", "config.txt"):
        assert (data_dir / name).is_file()
    assert len((data_dir / "train.src").read_text().splitlines()) == 60
    assert (data_dir / "src.vocab").read_text().splitlines()[:4] == ["<pad>", "<s>", "</s>", "<unk>"]


def test_make_data_from_existing_corpus(tmp_path, data_dir):
    rc = run(["make-data", "--out", str(tmp_path), "--src", str(data_dir / "train.src"),
              "--ref", str(data_dir / "train.tgt"), "--vocab-cap", "6"])
    assert rc == 0
    assert len((tmp_path / "src.vocab").read_text().splitlines()) == 6


def test_train_writes_checkpoints(trained, data_dir):
    run_dir = data_dir / "run"
    assert (run_dir / "baseline.best.ckpt").is_file()
    assert (run_dir / "baseline.log.tsv").read_text().startswith("epoch\t")
    assert all(k.startswith("theta.") for k in checkpoint.load(run_dir / "baseline.best.ckpt"))


def test_finetune_from_checkpoint(trained, data_dir, tmp_path):
    cfg = small_config(data_dir, "finetune")
    rc = run(["train", "--config", str(cfg), "--out", str(tmp_path),
              "--checkpoint", str(data_dir / "run" / "baseline.best.ckpt")])
    assert rc == 0
    names = set(checkpoint.load(tmp_path / "finetune.best.ckpt"))
    assert any(k.startswith("gamma.") for k in names)


def test_translate_is_byte_identical(trained, data_dir, tmp_path, capsys):
    args = ["translate", "--config", str(trained), "--src", str(data_dir / "test.src")]
    assert run(args + ["--out", str(tmp_path / "a")]) == 0
    assert run(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "hyp.txt").read_bytes()
    assert a == (tmp_path / "b" / "hyp.txt").read_bytes()
    assert len(a.decode().splitlines()) == 10
    assert run(args) == 0
    assert capsys.readouterr().out.encode() == a


def test_dump_attention(trained, data_dir, tmp_path):
    rc = run(["dump-attention", "--config", str(trained), "--src", str(data_dir / "dev.src"),
              "--out", str(tmp_path)])
    assert rc == 0
    files = sorted(tmp_path.glob("*.tsv"))
    assert [f.name for f in files][:2] == ["01.tsv", "02.tsv"] and len(files) == 10
    header = files[0].read_text().splitlines()[0].split("\t")
    assert header[0] == "" and header[1:] == (data_dir / "dev.src").read_text().splitlines()[0].split()


def test_evaluate_identical(tmp_path, capsys):
    (tmp_path / "h.txt").write_text("a b c d e\nf g h i\n")
    assert run(["evaluate", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "h.txt")]) == 0
    row = capsys.readouterr().out.splitlines()[1].split("\t")
    assert row[1:6] == ["1.0000", "-", "0", "0", "0"]


def test_evaluate_with_comparison(tmp_path, capsys):
    (tmp_path / "ref").write_text("a b c d e\nf g h i j\n")
    (tmp_path / "a").write_text("a b c d e\nf g h i j\n")
    (tmp_path / "b").write_text("a b x d e\nf g h i i\n")
    rc = run(["evaluate", "--hyp", str(tmp_path / "a"), "--hyp-b", str(tmp_path / "b"),
              "--ref", str(tmp_path / "ref"), "--samples", "50", "--out", str(tmp_path / "o")])
    assert rc == 0
    lines = (tmp_path / "o" / "report.tsv").read_text().splitlines()
    assert lines[1].split("\t")[0] == "b" and lines[2].split("\t")[2] == "0.000"
    assert capsys.readouterr().out.splitlines() == lines


def test_gradcheck_passes(capsys):
    assert run(["gradcheck", "--coords", "3"]) == 0
    assert "max relative error" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["frobnicate"], ["evaluate", "--hyp", "x"], ["gradcheck", "--bogus"], []])
def test_usage_errors(argv):
    with pytest.raises(SystemExit) as exc:
        run(argv)
    assert exc.value.code == EXIT_USAGE


def test_config_errors(tmp_path, data_dir):
    (tmp_path / "bad.txt").write_text("nonsense = 1\n")
    assert run(["train", "--config", str(tmp_path / "bad.txt")]) == EXIT_CONFIG
    assert run(["train", "--config", str(tmp_path / "missing.txt")]) == EXIT_CONFIG


def test_data_errors(tmp_path, trained):
    assert run(["evaluate", "--hyp", str(tmp_path / "nope"), "--ref", str(tmp_path / "nope")]) == EXIT_DATA
    (tmp_path / "a").write_text("x\n")
    (tmp_path / "b").write_text("x\ny\n")
    assert run(["evaluate", "--hyp", str(tmp_path / "a"), "--ref", str(tmp_path / "b")]) == EXIT_USAGE
    assert run(["translate", "--config", str(trained), "--src", str(tmp_path / "nope")]) == EXIT_DATA


def test_checkpoint_errors(tmp_path, trained, data_dir):
    (tmp_path / "bad.ckpt").write_bytes(b"garbage")
    args = ["translate", "--config", str(trained), "--src", str(data_dir / "dev.src")]
    assert run(args + ["--checkpoint", str(tmp_path / "bad.ckpt")]) == EXIT_CHECKPOINT
    shutil.copy(data_dir / "run" / "baseline.best.ckpt", tmp_path / "ok.ckpt")
    cfg = small_config(data_dir, "finetune", hidden_dim=12)
    rc = run(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--checkpoint", str(tmp_path / "ok.ckpt")])
    assert rc == EXIT_CHECKPOINT


def test_inputs_unchanged(trained, data_dir, tmp_path):
    before = {p.name: p.read_bytes() for p in data_dir.glob("*.src")}
    run(["translate", "--config", str(trained), "--src", str(data_dir / "dev.src"), "--out", str(tmp_path)])
    assert before == {p.name: p.read_bytes() for p in data_dir.glob("*.src")}
