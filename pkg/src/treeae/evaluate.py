"""Embedding evaluation: similarity tasks, frozen-probe tasks, scores.

Task files are plain TSV so any dataset in the right shape can be
supplied:

* word similarity:      ``word1<TAB>word2<TAB>score``
* sentence similarity:  ``sent1<TAB>sent2<TAB>score``
* probe (single):       ``text<TAB>label``      (label 0/1)
* probe (pair):         ``text1<TAB>text2<TAB>label``

Probe tasks live in three files sharing a stem with ``.train``/``.dev``/
``.test`` suffixes. Embeddings stay frozen throughout; only the probe's
own weights train.
"""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tape,
    Tensor,
    add_bias,
    matmul,
    no_tape,
    softmax_cross_entropy,
    tanh,
)
from .corpus import Vocabulary, tokenize
from .model import encode, resolve_tree
from .trainer import AdamState, Checkpoint, adam_step, glorot_limit

log = logging.getLogger(__name__)

PROBE_HIDDEN = 512
PROBE_LR = 1e-3
PROBE_MAX_EPOCHS = 100
PROBE_PATIENCE = 10
PROBE_BATCH = 32
DEFAULT_PROBE_SEEDS = (0, 1, 2, 3, 4)


@dataclass
class SimilarityTask:
    kind: str  # "word" | "sentence"
    name: str
    pairs: list  # (item1, item2, gold score)

    def __post_init__(self):
        if self.kind not in ("word", "sentence"):
            raise ValueError("kind must be word or sentence")
        if len(self.pairs) < 2:
            raise ValueError("similarity tasks need at least 2 pairs")
        if not all(np.isfinite(gold) for _, _, gold in self.pairs):
            raise ValueError("gold scores must be finite")


@dataclass
class ProbeTask:
    kind: str  # "single_sentence" | "sentence_pair"
    name: str
    splits: dict  # split -> (texts1, texts2 or None, labels)

    def __post_init__(self):
        if self.kind not in ("single_sentence", "sentence_pair"):
            raise ValueError("kind must be single_sentence or sentence_pair")
        for split in ("train", "dev", "test"):
            if split not in self.splits or len(self.splits[split][2]) == 0:
                raise ValueError("probe task needs a non-empty %r split" % split)
            if any(label not in (0, 1) for label in self.splits[split][2]):
                raise ValueError("labels must be 0 or 1")


@dataclass
class TaskResult:
    name: str
    kind: str  # "rho" | "accuracy"
    value: float
    std: float = None


def load_similarity_task(path, kind, name=None):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError("%s:%d: expected 3 tab-separated fields" % (path, lineno))
            pairs.append((parts[0], parts[1], float(parts[2])))
    return SimilarityTask(kind=kind, name=name or path, pairs=pairs)


def load_probe_task(stem, kind, name=None):
    splits = {}
    for split in ("train", "dev", "test"):
        texts1, texts2, labels = [], [], []
        path = "%s.%s" % (stem, split)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if kind == "single_sentence":
                    if len(parts) != 2:
                        raise ValueError("%s:%d: expected text<TAB>label" % (path, lineno))
                    texts1.append(parts[0])
                    labels.append(int(parts[1]))
                else:
                    if len(parts) != 3:
                        raise ValueError(
                            "%s:%d: expected text1<TAB>text2<TAB>label" % (path, lineno)
                        )
                    texts1.append(parts[0])
                    texts2.append(parts[1])
                    labels.append(int(parts[2]))
        splits[split] = (texts1, texts2 if kind == "sentence_pair" else None, labels)
    return ProbeTask(kind=kind, name=name or stem, splits=splits)


# ---------------------------------------------------------------------------
# Embedding access.

@dataclass
class EmbeddingModel:
    """Frozen trained parameters plus the pieces needed to embed text."""

    params: object
    vocab: Vocabulary
    lowercase: bool = True
    structure_source: str = "balanced"

    @classmethod
    def from_checkpoint(cls, stem, vocab_path=None):
        ckpt = Checkpoint.load(stem)
        vocab = Vocabulary.load(vocab_path or ckpt.config.vocab)
        source = ckpt.config.structure_source
        if source == "tree_file":
            # Ad-hoc evaluation sentences carry no oracle parses; fall
            # back to balanced structure unless the caller overrides.
            source = "balanced"
        return cls(
            params=ckpt.params,
            vocab=vocab,
            lowercase=ckpt.config.lowercase,
            structure_source=source,
        )

    @property
    def dim(self):
        return self.params.dim


def word_embedding(model, token):
    """Type-level embedding: the token's row of the embedding matrix."""
    if model.lowercase:
        token = token.lower()
    token_id = model.vocab.id_of.get(token)
    if token_id is None:
        warnings.warn("token %r not in vocabulary; using UNK embedding" % token)
        token_id = model.vocab.unk_id
    return model.params.embedding.data[token_id].copy()


def sentence_embedding(model, sentence, structure_source=None):
    """Flattened root embedding of an encode pass over the sentence."""
    tokens = sentence if isinstance(sentence, list) else tokenize(sentence, model.lowercase)
    if not tokens:
        raise ValueError("cannot embed an empty sentence")
    ids = model.vocab.encode(tokens)
    source = structure_source or model.structure_source
    with no_tape():
        tree = resolve_tree(ids, source, model.params)
        emb = encode(tree, ids, model.params)
    return emb.up[tree.root_id].data.reshape(-1).copy()


# ---------------------------------------------------------------------------
# Spearman rank correlation.

def _fractional_ranks(values):
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_rho(xs, ys):
    """Pearson correlation of fractional ranks; ties get average ranks."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("spearman_rho expects two equal-length vectors (>= 2)")
    rx = _fractional_ranks(xs)
    ry = _fractional_ranks(ys)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = np.sqrt((dx * dx).sum() * (dy * dy).sum())
    if denom == 0.0:
        raise ValueError("rank correlation undefined: zero rank variance")
    return float((dx * dy).sum() / denom)


def _cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-8))


def eval_similarity(model, task, structure_source=None):
    """Spearman rho between model cosine similarities and gold scores."""
    scores, gold = [], []
    for item1, item2, g in task.pairs:
        if task.kind == "word":
            e1, e2 = word_embedding(model, item1), word_embedding(model, item2)
        else:
            e1 = sentence_embedding(model, item1, structure_source)
            e2 = sentence_embedding(model, item2, structure_source)
        scores.append(_cosine(e1, e2))
        gold.append(g)
    return spearman_rho(scores, gold)


# ---------------------------------------------------------------------------
# Frozen-embedding classification probes.

def _probe_features(model, task, split):
    texts1, texts2, labels = task.splits[split]
    if task.kind == "single_sentence":
        x = np.stack([sentence_embedding(model, t) for t in texts1])
    else:
        x = np.stack(
            [
                np.concatenate(
                    [sentence_embedding(model, t1), sentence_embedding(model, t2)]
                )
                for t1, t2 in zip(texts1, texts2)
            ]
        )
    return x, np.asarray(labels, dtype=np.int64)


def _probe_init(kind, width, rng):
    # width is the full feature width (2*d for pair tasks).
    if kind == "single_sentence":
        lim1 = glorot_limit(width, PROBE_HIDDEN)
        lim2 = glorot_limit(PROBE_HIDDEN, 2)
        return {
            "w1": Tensor(rng.uniform(-lim1, lim1, (width, PROBE_HIDDEN)), requires_grad=True),
            "b1": Tensor(np.zeros(PROBE_HIDDEN), requires_grad=True),
            "w2": Tensor(rng.uniform(-lim2, lim2, (PROBE_HIDDEN, 2)), requires_grad=True),
            "b2": Tensor(np.zeros(2), requires_grad=True),
        }
    lim = glorot_limit(width, 2)
    return {
        "w": Tensor(rng.uniform(-lim, lim, (width, 2)), requires_grad=True),
        "b": Tensor(np.zeros(2), requires_grad=True),
    }


def _probe_logits_np(weights, x):
    if "w1" in weights:
        hidden = np.tanh(x @ weights["w1"].data + weights["b1"].data)
        return hidden @ weights["w2"].data + weights["b2"].data
    return x @ weights["w"].data + weights["b"].data


def _probe_accuracy(weights, x, y):
    return float((np.argmax(_probe_logits_np(weights, x), axis=1) == y).mean())


def _fit_probe(kind, width, data, seed):
    rng = np.random.default_rng(seed)
    weights = _probe_init(kind, width, rng)
    adam = AdamState.for_params(weights)
    (xtr, ytr), (xdv, ydv), (xte, yte) = data
    best_dev = -1.0
    best_weights = None
    stale = 0
    for _ in range(PROBE_MAX_EPOCHS):
        perm = rng.permutation(len(ytr))
        for start in range(0, len(perm), PROBE_BATCH):
            rows = perm[start : start + PROBE_BATCH]
            xb = Tensor(xtr[rows])
            with Tape() as tape:
                if kind == "single_sentence":
                    hidden = tanh(add_bias(matmul(xb, weights["w1"]), weights["b1"]))
                    logits = add_bias(matmul(hidden, weights["w2"]), weights["b2"])
                else:
                    logits = add_bias(matmul(xb, weights["w"]), weights["b"])
                loss = softmax_cross_entropy(logits, ytr[rows])
            tape.backward(loss)
            adam_step(weights, adam, PROBE_LR)
            for t in weights.values():
                t.zero_grad()
        dev_acc = _probe_accuracy(weights, xdv, ydv)
        if dev_acc > best_dev:
            best_dev = dev_acc
            best_weights = {k: t.data.copy() for k, t in weights.items()}
            stale = 0
        else:
            stale += 1
            if stale >= PROBE_PATIENCE:
                break
    for k, t in weights.items():
        t.data = best_weights[k]
    return _probe_accuracy(weights, xte, yte)


def train_probe(model, task, seeds=DEFAULT_PROBE_SEEDS):
    """Train the task classifier on frozen embeddings, one run per seed.

    Single-sentence tasks use a 512-unit tanh hidden layer; pair tasks a
    single linear layer over the concatenated sentence embeddings.
    Returns (mean accuracy, stddev, per-seed accuracies).
    """
    data = [
        _probe_features(model, task, split) for split in ("train", "dev", "test")
    ]
    width = data[0][0].shape[1]
    accs = [_fit_probe(task.kind, width, data, seed) for seed in seeds]
    return float(np.mean(accs)), float(np.std(accs)), accs


# ---------------------------------------------------------------------------
# Aggregate score and report tables.

def aggregate_score(results):
    """Mean over tasks with rho values and accuracy fractions scaled to 0-100."""
    results = list(results)
    if not results:
        raise ValueError("aggregate_score needs at least one result")
    values = []
    for res in results:
        if res.kind not in ("rho", "accuracy"):
            raise ValueError("unknown result kind %r" % res.kind)
        values.append(res.value * 100.0)
    return float(np.mean(values))


@dataclass
class ReportRow:
    checkpoint: str
    task: str
    kind: str
    value: float
    std: float = None


def write_report_rows(path, rows):
    with open(path, "a", encoding="utf-8") as fh:
        for row in rows:
            fh.write(
                "%s\t%s\t%s\t%r\t%s\n"
                % (row.checkpoint, row.task, row.kind, row.value,
                   "" if row.std is None else repr(row.std))
            )


def read_report_rows(paths):
    rows = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                ckpt, task, kind, value, std = line.split("\t")
                rows.append(
                    ReportRow(ckpt, task, kind, float(value), float(std) if std else None)
                )
    return rows


def build_report(rows):
    """Group report rows into per-checkpoint results plus summary stats.

    Returns a dict with one entry per checkpoint (task values + Score),
    the best checkpoint by Score, and mean/std per task across
    checkpoints.
    """
    tasks = []
    for row in rows:
        if row.task not in tasks:
            tasks.append(row.task)
    per_ckpt = {}
    for row in rows:
        per_ckpt.setdefault(row.checkpoint, {})[row.task] = row
    table = {}
    for ckpt, by_task in per_ckpt.items():
        results = [
            TaskResult(name=t, kind=by_task[t].kind, value=by_task[t].value)
            for t in tasks
            if t in by_task
        ]
        table[ckpt] = {
            "tasks": {t: by_task[t].value for t in tasks if t in by_task},
            "score": aggregate_score(results),
        }
    best = max(table, key=lambda c: table[c]["score"])
    summary = {}
    for t in tasks:
        vals = [table[c]["tasks"][t] for c in table if t in table[c]["tasks"]]
        summary[t] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
    scores = [table[c]["score"] for c in table]
    summary["Score"] = {"mean": float(np.mean(scores)), "std": float(np.std(scores))}
    return {"tasks": tasks, "checkpoints": table, "best": best, "summary": summary}


def format_report(report):
    """Plain-text table: one row per checkpoint, then best / mean +- std."""
    tasks = report["tasks"]
    headers = ["checkpoint"] + tasks + ["Score"]
    lines = []

    def fmt_row(cells):
        return "  ".join(str(c).ljust(18 if i == 0 else 12) for i, c in enumerate(cells))

    lines.append(fmt_row(headers))
    for ckpt, entry in report["checkpoints"].items():
        cells = [ckpt]
        for t in tasks:
            value = entry["tasks"].get(t)
            cells.append("-" if value is None else "%.4f" % value)
        cells.append("%.2f" % entry["score"])
        lines.append(fmt_row(cells))
    lines.append("")
    lines.append("best checkpoint by Score: %s" % report["best"])
    summary_cells = ["mean +- std"]
    for t in tasks:
        s = report["summary"][t]
        summary_cells.append("%.3f+-%.3f" % (s["mean"], s["std"]))
    s = report["summary"]["Score"]
    summary_cells.append("%.2f+-%.2f" % (s["mean"], s["std"]))
    lines.append(fmt_row(summary_cells))
    return "\n".join(lines) + "\n"
