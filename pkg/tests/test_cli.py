import io

import numpy as np
import pytest
from PIL import Image

from gatedhtr import cli, toy
from gatedhtr.config import KEYS, RunConfig
from gatedhtr.metrics import read_report
from gatedhtr.pipeline import read_bundle

from conftest import micro_config


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.main([str(a) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    toy.make_corpus(root / "corpus", 10, seed=2)
    cfg = micro_config(charset="data", max_epochs=2, splits={"train": 0.6, "valid": 0.2, "test": 0.2})
    (root / "micro.cfg").write_text(cfg.dumps(), encoding="utf-8")
    return root


@pytest.fixture(scope="module")
def trained(workspace):
    code, out, err = run("preprocess", "--config", workspace / "micro.cfg", workspace / "corpus", workspace / "b")
    assert code == 0, err
    code, out, err = run("train", "--config", workspace / "micro.cfg", workspace / "b", "--out", workspace / "run")
    assert code == 0, err
    return workspace, out


def test_preprocess_counts(trained):
    root, _ = trained
    code, out, _ = run("preprocess", "--config", root / "micro.cfg", root / "corpus", root / "b2")
    assert code == 0
    counts = {line.split("\t")[0]: int(line.split("\t")[1]) for line in out.splitlines()[1:]}
    assert counts["train"] + counts["valid"] + counts["test"] == 10 == counts["total"]
    assert out.startswith("charset: ")


def test_preprocess_is_byte_identical(trained):
    root, _ = trained
    assert run("preprocess", "--config", root / "micro.cfg", root / "corpus", root / "b3")[0] == 0
    for split in ("train", "valid", "test"):
        assert (root / "b" / f"{split}.htrb").read_bytes() == (root / "b3" / f"{split}.htrb").read_bytes()


def test_preprocess_unknown_symbol(workspace, tmp_path):
    code, _, err = run("preprocess", workspace / "corpus", tmp_path / "b")
    assert code == 2
    assert "'+'" in err or "'='" in err


def test_preprocess_missing_corpus(tmp_path):
    code, _, err = run("preprocess", tmp_path / "nope", tmp_path / "b")
    assert code == 2 and err.startswith("error:")


def test_train_banner_and_log(trained):
    root, out = trained
    banner = out.splitlines()[0]
    assert "lr 0.001" in banner and "batch 32" in banner and "patience 20" in banner
    assert (root / "run" / "best.htrf").exists()
    rows = [ln for ln in (root / "run" / "train_log.tsv").read_text().splitlines() if ln[:1].isdigit()]
    assert [r.split("\t")[0] for r in rows] == ["1", "2"]
    assert "epoch cap" in out.splitlines()[-1]


def test_train_resume_continues(trained, tmp_path):
    root, _ = trained
    import shutil
    shutil.copytree(root / "run", tmp_path / "run")
    cfg = RunConfig.load(root / "micro.cfg").replace(max_epochs=4)
    (tmp_path / "more.cfg").write_text(cfg.dumps(), encoding="utf-8")
    code, out, err = run("train", "--config", tmp_path / "more.cfg", root / "b", "--out", tmp_path / "run",
                         "--resume", tmp_path / "run" / "last.htrf")
    assert code == 0, err
    epochs = [ln.split("\t")[0] for ln in out.splitlines() if ln.startswith("epoch ") and "\t" in ln]
    assert epochs == ["epoch 3", "epoch 4"]
    rows = [ln for ln in (tmp_path / "run" / "train_log.tsv").read_text().splitlines() if ln[:1].isdigit()]
    assert [r.split("\t")[0] for r in rows] == ["1", "2", "3", "4"]


def test_train_divergence_exit_code(trained, monkeypatch, tmp_path):
    root, _ = trained
    from gatedhtr import training

    def bad(model, images, labels, rng=None, mode="train"):
        return float("nan"), {}, None

    monkeypatch.setattr(training, "batch_loss_and_grads", bad)
    code, _, err = run("train", "--config", root / "micro.cfg", root / "b", "--out", tmp_path / "r")
    assert code == 3 and "non-finite" in err


def test_transcribe_modes(trained, tmp_path):
    root, _ = trained
    ckpt = root / "run" / "best.htrf"
    img = root / "corpus" / "toy00000.png"
    for flags in ([], ["--greedy"], ["--beam", "4"]):
        code, out, err = run("transcribe", ckpt, img, *flags)
        assert code == 0, err
        text = out.rstrip("\n")
        assert set(text) <= set(toy.ALPHABET)
    code, out, _ = run("transcribe", ckpt, img, "--topk", "2")
    lines = out.splitlines()
    assert len(lines) == 1 + 16 and lines[1].startswith("t=000")


def test_transcribe_bad_inputs(trained, tmp_path):
    root, _ = trained
    (tmp_path / "junk.htrf").write_bytes(b"HTRF\x01\x00")
    assert run("transcribe", tmp_path / "junk.htrf", root / "corpus" / "toy00000.png")[0] == 2
    assert run("transcribe", root / "run" / "best.htrf", tmp_path / "missing.png")[0] == 2
    assert run("transcribe", root / "run" / "best.htrf", "--beam", "0", root / "corpus" / "toy00000.png")[0] == 2


def test_evaluate_oracle(trained, tmp_path):
    root, _ = trained
    code, out, err = run("evaluate", "-", root / "b" / "test.htrb", "--oracle", "--report", tmp_path / "r.tsv")
    assert code == 0, err
    assert out.splitlines()[1].split("\t")[1:4] == ["0.000", "0.000", "0.000"]


def test_evaluate_footer_matches_rows(trained, tmp_path):
    root, _ = trained
    code, out, err = run("evaluate", root / "run" / "best.htrf", root / "b" / "train.htrb",
                         "--report", tmp_path / "r.tsv")
    assert code == 0, err
    rows, footer = read_report(tmp_path / "r.tsv")
    assert len(rows) == len(read_bundle(root / "b" / "train.htrb"))
    wrong = sum(r["ref"] != r["hyp"] for r in rows)
    assert footer["ser"] == pytest.approx(wrong / len(rows))
    assert out.splitlines()[1].split("\t")[3] == f"{footer['ser']:.3f}"


def test_evaluate_charset_mismatch(trained, tmp_path):
    root, _ = trained
    cfg = RunConfig.load(root / "micro.cfg")
    from gatedhtr.model import HTRModel
    from gatedhtr.pipeline import Charset
    HTRModel(cfg, Charset("0123456789")).save(tmp_path / "other.htrf")
    code, _, err = run("evaluate", tmp_path / "other.htrf", root / "b" / "test.htrb")
    assert code == 4 and "mismatch" in err


def test_help_lists_every_key():
    code, out, _ = run("--help")
    assert code == 0
    for key in KEYS:
        assert key in out
    assert "exit codes" in out


def test_usage_errors():
    assert run()[0] == 2
    assert run("frobnicate")[0] == 2
    assert run("transcribe", "x.htrf", "a.png", "--beam", "3", "--greedy")[0] == 2


def test_dump_config_round_trip(tmp_path):
    code, out, _ = run("--dump-config", "--seed", "5")
    assert code == 0
    (tmp_path / "c.cfg").write_text(out, encoding="utf-8")
    cfg = RunConfig.load(tmp_path / "c.cfg")
    assert cfg == RunConfig().replace(seed=5)
    code, again, _ = run("--config", tmp_path / "c.cfg", "--dump-config")
    assert again == out
    assert cfg.clip_norm == 0


def test_bad_config_key(tmp_path):
    (tmp_path / "c.cfg").write_text("learning_rat = 0.1\n", encoding="utf-8")
    code, _, err = run("--config", tmp_path / "c.cfg", "--dump-config")
    assert code == 2 and "learning_rat" in err


def test_blank_image_on_untrained_model_is_valid(trained, tmp_path):
    root, _ = trained
    Image.fromarray(np.full((40, 120), 255, np.uint8)).save(tmp_path / "white.png")
    code, out, _ = run("transcribe", root / "run" / "best.htrf", tmp_path / "white.png")
    assert code == 0 and set(out.strip()) <= set(toy.ALPHABET)
