import os

import numpy as np
import pytest

from treeae.cli import main
from treeae.corpus import Vocabulary, build_vocabulary, parse_tree_line, read_corpus
from treeae.trainer import TrainConfig


@pytest.fixture
def workspace(tmp_path):
    corpus = tmp_path / "corpus.txt"
    lines = [
        "the cat sees the dog",
        "a dog chases a cat",
        "the bird sings",
        "a cat sleeps",
        "the dog finds a bird",
        "a bird sees the cat",
    ]
    corpus.write_text("\n".join(lines) + "\n", encoding="utf-8")
    vocab_path = tmp_path / "vocab.tsv"
    build_vocabulary(str(corpus), 0).save(str(vocab_path))
    config = TrainConfig(
        n=3,
        batch_size=6,
        epochs=2,
        seed=3,
        vocab=str(vocab_path),
        corpus=str(corpus),
        checkpoint_dir=str(tmp_path / "ckpt"),
    )
    config_path = tmp_path / "train.cfg"
    config_path.write_text(config.to_text(), encoding="utf-8")
    return tmp_path, config_path, config


def test_unknown_command_usage_nonzero(capsys):
    assert main(["no-such-command"]) != 0


def test_unknown_flag_nonzero():
    assert main(["build-vocab", "--bogus"]) != 0


def test_build_vocab(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("a a b\n", encoding="utf-8")
    out = tmp_path / "v.tsv"
    code = main(["build-vocab", "--corpus", str(corpus), "--out", str(out),
                 "--min-freq", "1"])
    assert code == 0
    vocab = Vocabulary.load(str(out))
    assert vocab.tokens == ["<unk>", "a"]


def test_build_vocab_missing_file_nonzero(tmp_path, capsys):
    code = main(["build-vocab", "--corpus", str(tmp_path / "nope"), "--out",
                 str(tmp_path / "v.tsv")])
    assert code == 2


def test_train_and_artifacts(workspace, capsys):
    tmp_path, config_path, config = workspace
    assert main(["train", "--config", str(config_path)]) == 0
    assert os.path.exists(os.path.join(config.checkpoint_dir, "final.manifest"))
    assert os.path.exists(os.path.join(config.checkpoint_dir, "metrics.tsv"))


def test_train_right_branching_smoke(workspace, capsys):
    tmp_path, _, config = workspace
    config.structure_source = "right_branching"
    config.checkpoint_dir = str(tmp_path / "rb")
    path = tmp_path / "rb.cfg"
    path.write_text(config.to_text(), encoding="utf-8")
    assert main(["train", "--config", str(path)]) == 0
    metrics = open(os.path.join(config.checkpoint_dir, "metrics.tsv")).read()
    assert metrics.count("\tdev\t") == config.epochs


def _train(workspace):
    tmp_path, config_path, config = workspace
    main(["train", "--config", str(config_path)])
    return os.path.join(config.checkpoint_dir, "final")


def test_gradcheck_exit_codes(capsys):
    code = main(["gradcheck", "--model", "strae", "--objective", "contrastive",
                 "--n", "3", "--v", "20"])
    out = capsys.readouterr().out
    assert code == 0
    assert "max relative error" in out
    # An absurd tolerance forces the failure branch.
    code = main(["gradcheck", "--model", "iornn", "--objective", "cross_entropy",
                 "--tol", "1e-18"])
    assert code == 1


def test_induce_writes_parseable_aligned_trees(workspace, capsys):
    tmp_path, config_path, config = workspace
    final = _train(workspace)
    out = tmp_path / "induced.trees"
    code = main(["induce", "--checkpoint", final, "--corpus", config.corpus,
                 "--out", str(out)])
    assert code == 0
    sentences = read_corpus(config.corpus)
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == len(sentences)
    for line, tokens in zip(lines, sentences):
        tree, leaves = parse_tree_line(line)
        assert leaves == tokens
        tree.validate()


def test_eval_sim_and_export_round_trip(workspace, tmp_path, capsys):
    _, config_path, config = workspace
    final = _train(workspace)
    task = tmp_path / "task.tsv"
    task.write_text(
        "cat\tdog\t0.8\nbird\tdog\t0.2\ncat\tbird\t0.5\n", encoding="utf-8"
    )
    rows = tmp_path / "rows.tsv"
    code = main(["eval-sim", "--task", str(task), "--kind", "word",
                 "--checkpoint", final, "--out", str(rows)])
    assert code == 0
    rho_direct = float(capsys.readouterr().out.split("\t")[-1])

    emb_path = tmp_path / "emb.txt"
    assert main(["export-embeddings", "--checkpoint", final,
                 "--out", str(emb_path)]) == 0
    capsys.readouterr()
    code = main(["eval-sim", "--task", str(task), "--kind", "word",
                 "--embeddings", str(emb_path)])
    assert code == 0
    rho_reimported = float(capsys.readouterr().out.split("\t")[-1])
    assert abs(rho_direct - rho_reimported) < 1e-12


def test_export_embeddings_format(workspace, tmp_path):
    _, _, config = workspace
    final = _train(workspace)
    emb_path = tmp_path / "emb.txt"
    main(["export-embeddings", "--checkpoint", final, "--out", str(emb_path)])
    lines = emb_path.read_text(encoding="utf-8").splitlines()
    count, dim = (int(x) for x in lines[0].split())
    assert count == len(lines) - 1
    vocab = Vocabulary.load(config.vocab)
    assert count == vocab.size and dim == config.n * config.n
    first = lines[1].split(" ")
    assert first[0] == vocab.tokens[0]
    assert len(first) == dim + 1


def test_eval_sim_sentence_kind(workspace, tmp_path, capsys):
    _, _, config = workspace
    final = _train(workspace)
    task = tmp_path / "stask.tsv"
    task.write_text(
        "the cat sleeps\ta dog sleeps\t0.9\n"
        "the bird sings\tthe cat sees the dog\t0.1\n"
        "a cat sleeps\ta dog chases a cat\t0.4\n",
        encoding="utf-8",
    )
    code = main(["eval-sim", "--task", str(task), "--kind", "sentence",
                 "--checkpoint", final, "--structure", "balanced"])
    assert code == 0
    rho = float(capsys.readouterr().out.split("\t")[-1])
    assert -1.0 <= rho <= 1.0


def test_eval_probe_and_report(workspace, tmp_path, capsys):
    _, _, config = workspace
    final = _train(workspace)
    stem = tmp_path / "probe"
    rng = np.random.default_rng(0)
    words = ["cat", "dog", "bird", "sees", "sleeps", "the", "a"]
    for split, count in (("train", 40), ("dev", 20), ("test", 20)):
        rows = []
        for _ in range(count):
            text = " ".join(rng.choice(words, size=3))
            rows.append("%s\t%d" % (text, int("cat" in text)))
        (tmp_path / ("probe.%s" % split)).write_text(
            "\n".join(rows) + "\n", encoding="utf-8"
        )
    rows_path = tmp_path / "rows.tsv"
    code = main(["eval-probe", "--task", str(stem), "--kind", "single_sentence",
                 "--checkpoint", final, "--seeds", "0", "1",
                 "--out", str(rows_path)])
    assert code == 0
    capsys.readouterr()

    task = tmp_path / "task.tsv"
    task.write_text("cat\tdog\t0.8\nbird\tdog\t0.2\n", encoding="utf-8")
    main(["eval-sim", "--task", str(task), "--kind", "word",
          "--checkpoint", final, "--out", str(rows_path)])
    capsys.readouterr()

    json_path = tmp_path / "report.json"
    code = main(["report", "--rows", str(rows_path), "--json", str(json_path)])
    out = capsys.readouterr().out
    assert code == 0
    assert "Score" in out and "best checkpoint" in out
    assert json_path.exists()


def test_train_resume_flag(workspace, tmp_path):
    tmp_path_, config_path, config = workspace
    assert main(["train", "--config", str(config_path)]) == 0
    resumed_cfg = TrainConfig(**{**config.__dict__, "epochs": 3})
    path = tmp_path_ / "resume.cfg"
    path.write_text(resumed_cfg.to_text(), encoding="utf-8")
    stem = os.path.join(config.checkpoint_dir, "epoch001")
    assert main(["train", "--config", str(path), "--resume", stem]) == 0
    assert os.path.exists(os.path.join(config.checkpoint_dir, "epoch002.manifest"))
