"""Command-line interface tying the modules into reproducible experiments."""

import argparse
import json
import logging
import sys

import numpy as np

from . import kernels
from .autodiff import check_gradients
from .corpus import (
    CorpusError,
    Vocabulary,
    build_vocabulary,
    read_corpus,
)
from .evaluate import (
    DEFAULT_PROBE_SEEDS,
    EmbeddingModel,
    ReportRow,
    build_report,
    eval_similarity,
    format_report,
    load_probe_task,
    load_similarity_task,
    read_report_rows,
    spearman_rho,
    train_probe,
    word_embedding,
    write_report_rows,
)
from .model import autoencode, induce_structure
from .objectives import (
    build_batch_nodes,
    contrastive_loss,
    cross_entropy_loss,
    degenerate_similarity_loss,
)
from .trainer import (
    Checkpoint,
    TrainConfig,
    TrainingAborted,
    init_params,
    train,
)

log = logging.getLogger(__name__)

GRADCHECK_TOL = 1e-4


def _cmd_build_vocab(args):
    vocab = build_vocabulary(args.corpus, args.min_freq, lowercase=not args.no_lowercase)
    vocab.save(args.out)
    print("wrote %s (V=%d, min_freq=%d)" % (args.out, vocab.size, args.min_freq))
    return 0


def _cmd_train(args):
    config = TrainConfig.from_file(args.config)
    if args.deterministic:
        config.deterministic = True
    if args.threads is not None and kernels.USE_NUMBA:
        import numba

        numba.set_num_threads(max(1, args.threads))
    try:
        result = train(config, resume=args.resume)
    except TrainingAborted as exc:
        print("training aborted: %s" % exc, file=sys.stderr)
        if exc.last_checkpoint:
            print("last good checkpoint: %s" % exc.last_checkpoint, file=sys.stderr)
        return 1
    print("final checkpoint: %s (best epoch %d)" % (result.final_checkpoint, result.best_epoch))
    print("metrics: %s" % result.metrics_path)
    return 0


def _cmd_induce(args):
    ckpt = Checkpoint.load(args.checkpoint)
    vocab = Vocabulary.load(args.vocab or ckpt.config.vocab)
    sentences = read_corpus(args.corpus, ckpt.config.lowercase)
    with open(args.out + ".tmp", "w", encoding="utf-8") as fh:
        for tokens in sentences:
            ids = vocab.encode(tokens)
            tree = induce_structure(ids, ckpt.params)
            fh.write(tree.to_bracketed(tokens) + "\n")
    import os

    os.replace(args.out + ".tmp", args.out)
    print("wrote %d induced trees to %s" % (len(sentences), args.out))
    return 0


def _load_text_embeddings(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        count, dim = int(header[0]), int(header[1])
        table = {}
        for line in fh:
            parts = line.rstrip("\n").split(" ")
            table[parts[0]] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
    if len(table) != count or any(v.size != dim for v in table.values()):
        raise ValueError("%s: embedding table does not match its header" % path)
    return table


def _cmd_eval_sim(args):
    task = load_similarity_task(args.task, args.kind, name=args.name)
    if not args.embeddings and not args.checkpoint:
        raise ValueError("eval-sim needs --checkpoint or --embeddings")
    if args.embeddings:
        if args.kind != "word":
            raise ValueError("--embeddings supports word tasks only")
        table = _load_text_embeddings(args.embeddings)
        unk = table.get("<unk>")
        scores, gold = [], []
        for w1, w2, g in task.pairs:
            e1 = table.get(w1, unk)
            e2 = table.get(w2, unk)
            if e1 is None or e2 is None:
                raise ValueError("token missing from embedding table and no <unk> row")
            scores.append(float(e1 @ e2 / (np.linalg.norm(e1) * np.linalg.norm(e2) + 1e-8)))
            gold.append(g)
        rho = spearman_rho(scores, gold)
        source_name = args.embeddings
    else:
        model = EmbeddingModel.from_checkpoint(args.checkpoint, vocab_path=args.vocab)
        rho = eval_similarity(model, task, structure_source=args.structure)
        source_name = args.checkpoint
    print("%s\t%s\trho\t%r" % (source_name, task.name, rho))
    if args.out:
        write_report_rows(args.out, [ReportRow(source_name, task.name, "rho", rho)])
    return 0


def _cmd_eval_probe(args):
    model = EmbeddingModel.from_checkpoint(args.checkpoint, vocab_path=args.vocab)
    task = load_probe_task(args.task, args.kind, name=args.name)
    mean_acc, std_acc, per_seed = train_probe(model, task, seeds=args.seeds)
    print(
        "%s\t%s\taccuracy\t%r\t%r\t(seeds: %s)"
        % (args.checkpoint, task.name, mean_acc, std_acc,
           " ".join("%.4f" % a for a in per_seed))
    )
    if args.out:
        write_report_rows(
            args.out,
            [ReportRow(args.checkpoint, task.name, "accuracy", mean_acc, std_acc)],
        )
    return 0


def _cmd_export_embeddings(args):
    ckpt = Checkpoint.load(args.checkpoint)
    vocab = Vocabulary.load(args.vocab or ckpt.config.vocab)
    table = ckpt.params.embedding.data
    if len(vocab.tokens) != table.shape[0]:
        raise ValueError("vocabulary size does not match embedding rows")
    import os

    with open(args.out + ".tmp", "w", encoding="utf-8") as fh:
        fh.write("%d %d\n" % table.shape)
        for token, row in zip(vocab.tokens, table):
            fh.write("%s %s\n" % (token, " ".join(repr(float(x)) for x in row)))
    os.replace(args.out + ".tmp", args.out)
    print("wrote %d x %d embeddings to %s" % (table.shape[0], table.shape[1], args.out))
    return 0


def _gradcheck_loss(params, ids, objective, tau):
    structure = "balanced"
    tree, emb = autoencode(ids, structure, params)
    if objective == "cross_entropy":
        recons = [emb.recon[leaf.node_id] for leaf in tree.leaves()]
        return cross_entropy_loss(ids, recons)
    nodes = build_batch_nodes([(tree, emb)])
    if objective == "contrastive":
        return contrastive_loss(nodes, tau)
    return degenerate_similarity_loss(nodes)


def _cmd_gradcheck(args):
    config = TrainConfig(
        objective=args.objective,
        model=args.model,
        structure_source="balanced",
        n=args.n,
        tau=args.tau,
        r=args.r,
        seed=args.seed,
    )
    rng = np.random.default_rng(args.seed)
    params = init_params(config, vocab_size=args.v, rng=rng)
    ids = list(rng.integers(0, args.v, size=args.tokens))
    worst = check_gradients(
        lambda: _gradcheck_loss(params, ids, args.objective, args.tau),
        list(params.tensors().values()),
        h=args.h,
        rng=np.random.default_rng(args.seed + 1),
    )
    status = "ok" if worst < args.tol else "FAIL"
    print(
        "gradcheck model=%s objective=%s n=%d v=%d: max relative error %.3e [%s]"
        % (args.model, args.objective, args.n, args.v, worst, status)
    )
    return 0 if worst < args.tol else 1


def _cmd_report(args):
    rows = read_report_rows(args.rows)
    report = build_report(rows)
    text = format_report(report)
    print(text, end="")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
        print("wrote %s" % args.json)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="treeae",
        description="Tree autoencoder toolkit: train, induce structure, evaluate embeddings.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-freq", type=int, default=2,
                   help="keep tokens with frequency strictly greater than this")
    p.add_argument("--no-lowercase", action="store_true")
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("train", help="train from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint stem to resume from")
    p.add_argument("--deterministic", action="store_true",
                   help="force determinism mode (single fixed reduction order)")
    p.add_argument("--threads", type=int, default=None,
                   help="numba thread cap for kernel execution")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("induce", help="write induced trees for a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", default=None)
    p.set_defaults(func=_cmd_induce)

    p = sub.add_parser("eval-sim", help="similarity task -> Spearman rho")
    p.add_argument("--task", required=True)
    p.add_argument("--kind", choices=("word", "sentence"), required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--embeddings", help="exported text embeddings instead of a checkpoint")
    p.add_argument("--vocab", default=None)
    p.add_argument("--structure", default=None,
                   choices=("balanced", "right_branching", "induced"))
    p.add_argument("--name", default=None)
    p.add_argument("--out", default=None, help="append a report row here")
    p.set_defaults(func=_cmd_eval_sim)

    p = sub.add_parser("eval-probe", help="frozen-embedding classification probe")
    p.add_argument("--task", required=True, help="file stem with .train/.dev/.test")
    p.add_argument("--kind", choices=("single_sentence", "sentence_pair"), required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--seeds", type=int, nargs="+", default=list(DEFAULT_PROBE_SEEDS))
    p.add_argument("--name", default=None)
    p.add_argument("--out", default=None, help="append a report row here")
    p.set_defaults(func=_cmd_eval_probe)

    p = sub.add_parser("export-embeddings", help="write token embeddings as text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab", default=None)
    p.set_defaults(func=_cmd_export_embeddings)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    p.add_argument("--model", choices=("strae", "iornn"), default="strae")
    p.add_argument("--objective",
                   choices=("cross_entropy", "contrastive", "degenerate"),
                   default="cross_entropy")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--v", type=int, default=20)
    p.add_argument("--tokens", type=int, default=5)
    p.add_argument("--tau", type=float, default=0.2)
    p.add_argument("--r", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("report", help="aggregate report rows into a table")
    p.add_argument("--rows", nargs="+", required=True)
    p.add_argument("--json", default=None)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except (CorpusError, ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
