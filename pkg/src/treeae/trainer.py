"""Experiment configuration, initialization, Adam, and the training loop.

Config files are flat ``key = value`` text whose keys match the
``TrainConfig`` fields. Checkpoints are a plain-text manifest (config,
tensor names, shapes, byte offsets, optimizer scalars, RNG state) next
to a raw little-endian float64 blob; saving then loading reproduces
parameters and optimizer state bit for bit. All files are written to a
temporary name and atomically renamed into place.
"""

import json
import logging
import os
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import kernels
from .autodiff import NonFiniteError, Tape, Tensor, mean_of, no_tape
from .corpus import MAX_SENTENCE_LEN, CorpusError, Vocabulary, read_corpus, read_tree_file
from .model import (
    STRUCTURE_SOURCES,
    IornnParams,
    StraeParams,
    autoencode,
)
from .objectives import (
    build_batch_nodes,
    contrastive_loss,
    cross_entropy_loss,
    degenerate_similarity_loss,
)

log = logging.getLogger(__name__)

OBJECTIVES = ("cross_entropy", "contrastive", "degenerate")
MODELS = ("strae", "iornn", "self_strae")

DEFAULT_LR = {"cross_entropy": 1e-3, "contrastive": 1e-4, "degenerate": 1e-3}


class TrainingAborted(RuntimeError):
    """Training halted on a non-finite loss; earlier checkpoints survive."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainConfig:
    """Full experiment description; all keys of the config file format."""

    objective: str = "cross_entropy"
    model: str = "strae"
    structure_source: str = "balanced"
    n: int = 10
    lr: float = -1.0  # negative means "objective default"; 0 is honored as frozen
    batch_size: int = 128
    epochs: int = 15
    tau: float = 0.2
    r: float = 0.1
    seed: int = 0
    vocab: str = ""
    corpus: str = ""
    dev_corpus: str = ""
    tree_file: str = ""
    checkpoint_dir: str = "checkpoints"
    deterministic: bool = True
    lowercase: bool = True
    intra_view_negatives: bool = False

    def resolved_lr(self):
        return self.lr if self.lr >= 0.0 else DEFAULT_LR[self.objective]

    def validate(self):
        if self.objective not in OBJECTIVES:
            raise ValueError("objective must be one of %s" % (OBJECTIVES,))
        if self.model not in MODELS:
            raise ValueError("model must be one of %s" % (MODELS,))
        if self.structure_source not in STRUCTURE_SOURCES:
            raise ValueError("structure_source must be one of %s" % (STRUCTURE_SOURCES,))
        if (self.model == "self_strae") != (self.structure_source == "induced"):
            raise ValueError("model=self_strae exactly when structure_source=induced")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.tau <= 0.0:
            raise ValueError("tau must be > 0")
        if self.r <= 0.0:
            raise ValueError("r must be > 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.structure_source == "tree_file" and not self.tree_file:
            raise ValueError("structure_source=tree_file needs a tree_file path")
        return self

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append("%s = %s" % (f.name, value))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kwargs = {}
        types = {f.name: f.type for f in fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError("config line %d: expected key = value" % lineno)
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError("config line %d: unknown key %r" % (lineno, key))
            kwargs[key] = _coerce(types[key], value)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _coerce(ftype, value):
    if ftype in ("bool", bool):
        lowered = value.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError("expected a boolean, got %r" % value)
    if ftype in ("int", int):
        return int(value)
    if ftype in ("float", float):
        return float(value)
    return value


# ---------------------------------------------------------------------------
# Parameter initialization.

def glorot_limit(fan_in, fan_out):
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(config, vocab_size=None, rng=None):
    """Draw fresh parameters: embeddings uniform in (-r, r), weight
    matrices uniform with the fan-based limit sqrt(6 / 3n)."""
    if config.r <= 0.0:
        raise ValueError("r must be > 0")
    if vocab_size is None:
        vocab_size = Vocabulary.load(config.vocab).size
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n = config.n
    s = glorot_limit(2 * n, n)

    def uniform(limit, shape):
        return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)

    embedding = uniform(config.r, (vocab_size, n * n))
    compose_w = uniform(s, (2 * n, n))
    decompose_w = uniform(s, (n, 2 * n))
    common = dict(
        embedding=embedding,
        compose_w=compose_w,
        decompose_w=decompose_w,
        n=n,
        tau=config.tau,
        r=config.r,
    )
    if config.model == "iornn":
        return IornnParams(
            decompose_left=uniform(s, (2 * n, n)),
            decompose_right=uniform(s, (2 * n, n)),
            global_root=uniform(s, (n, n)),
            **common,
        )
    return StraeParams(**common)


# ---------------------------------------------------------------------------
# Adam.

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, named_tensors):
        return cls(
            m={name: np.zeros_like(t.data) for name, t in named_tensors.items()},
            v={name: np.zeros_like(t.data) for name, t in named_tensors.items()},
        )


def adam_step(named_tensors, state, lr):
    """One Adam update with bias correction over named parameter tensors.

    Tensors whose gradient is unset are skipped (their moments stay
    zero). Non-finite gradients abort with a diagnostic.
    """
    state.t += 1
    for name, tensor in named_tensors.items():
        if tensor.grad is None:
            continue
        if not np.all(np.isfinite(tensor.grad)):
            raise NonFiniteError("non-finite gradient in %r" % name)
        kernels.adam_update(
            tensor.data.reshape(-1),
            np.ascontiguousarray(tensor.grad.reshape(-1)),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            lr,
            state.beta1,
            state.beta2,
            state.eps,
            state.t,
        )


# ---------------------------------------------------------------------------
# Checkpoints.

@dataclass
class Checkpoint:
    config: TrainConfig
    params: StraeParams
    adam: AdamState
    epoch: int
    dev_losses: list
    rng_state: dict

    def save(self, stem):
        """Write ``<stem>.manifest`` + ``<stem>.blob`` atomically."""
        named = dict(self.params.tensors())
        for name, arr in self.adam.m.items():
            named["adam_m." + name] = arr
        for name, arr in self.adam.v.items():
            named["adam_v." + name] = arr
        blob_path = stem + ".blob"
        manifest_path = stem + ".manifest"
        offset = 0
        rows = []
        with open(blob_path + ".tmp", "wb") as fh:
            for name, value in named.items():
                arr = value.data if isinstance(value, Tensor) else value
                raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
                fh.write(raw)
                rows.append(
                    "%s\t%s\t%d\t%d"
                    % (name, ",".join(str(d) for d in arr.shape), offset, arr.size)
                )
                offset += len(raw)
        lines = ["#treeae checkpoint 1", "@config"]
        for raw in self.config.to_text().strip().splitlines():
            lines.append(raw.replace(" = ", "\t", 1))
        lines.append("@state")
        lines.append("epoch\t%d" % self.epoch)
        lines.append("adam_t\t%d" % self.adam.t)
        lines.append("dev_losses\t%s" % ",".join(repr(x) for x in self.dev_losses))
        lines.append("rng\t%s" % json.dumps(self.rng_state))
        lines.append("@tensors")
        lines.extend(rows)
        with open(manifest_path + ".tmp", "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(blob_path + ".tmp", blob_path)
        os.replace(manifest_path + ".tmp", manifest_path)
        return manifest_path

    @classmethod
    def load(cls, stem):
        manifest_path = stem + ".manifest"
        blob_path = stem + ".blob"
        with open(manifest_path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or not lines[0].startswith("#treeae checkpoint"):
            raise ValueError("%s: not a checkpoint manifest" % manifest_path)
        section = None
        config_lines = []
        state = {}
        tensor_rows = []
        for line in lines[1:]:
            if line.startswith("@"):
                section = line[1:]
                continue
            if section == "config":
                key, value = line.split("\t", 1)
                config_lines.append("%s = %s" % (key, value))
            elif section == "state":
                key, value = line.split("\t", 1)
                state[key] = value
            elif section == "tensors":
                name, shape, offset, count = line.split("\t")
                shape = tuple(int(d) for d in shape.split(",")) if shape else ()
                tensor_rows.append((name, shape, int(offset), int(count)))
        config = TrainConfig.from_text("\n".join(config_lines))
        raw = np.fromfile(blob_path, dtype="<f8")
        arrays = {}
        for name, shape, offset, count in tensor_rows:
            start = offset // 8
            arrays[name] = raw[start : start + count].reshape(shape).copy()

        n = config.n
        def tensor(name):
            return Tensor(arrays[name], requires_grad=True)

        common = dict(
            embedding=tensor("embedding"),
            compose_w=tensor("compose_w"),
            decompose_w=tensor("decompose_w"),
            n=n,
            tau=config.tau,
            r=config.r,
        )
        if config.model == "iornn":
            params = IornnParams(
                decompose_left=tensor("decompose_left"),
                decompose_right=tensor("decompose_right"),
                global_root=tensor("global_root"),
                **common,
            )
        else:
            params = StraeParams(**common)
        adam = AdamState(
            m={k: arrays["adam_m." + k] for k in params.tensors()},
            v={k: arrays["adam_v." + k] for k in params.tensors()},
            t=int(state["adam_t"]),
        )
        dev_losses = [float(x) for x in state["dev_losses"].split(",") if x]
        return cls(
            config=config,
            params=params,
            adam=adam,
            epoch=int(state["epoch"]),
            dev_losses=dev_losses,
            rng_state=json.loads(state["rng"]),
        )


# ---------------------------------------------------------------------------
# Training.

@dataclass
class TrainResult:
    final_checkpoint: str
    metrics_path: str
    best_epoch: int
    dev_losses: list
    train_losses: list = field(default_factory=list)


def _load_sentences(config, vocab, path, trees_required):
    sentences = read_corpus(path, config.lowercase)
    trees = None
    if trees_required:
        trees, tree_tokens = read_tree_file(config.tree_file)
        if len(trees) != len(sentences):
            raise CorpusError(
                "corpus has %d sentences but tree file has %d"
                % (len(sentences), len(trees))
            )
        for i, (tokens, tree) in enumerate(zip(sentences, trees)):
            if tree.leaf_count != len(tokens):
                raise CorpusError(
                    "line %d: sentence has %d tokens but tree has %d leaves"
                    % (i + 1, len(tokens), tree.leaf_count)
                )
    ids, kept_trees = [], []
    for i, tokens in enumerate(sentences):
        if len(tokens) > MAX_SENTENCE_LEN:
            if trees is not None:
                warnings.warn(
                    "skipping sentence %d: %d tokens exceed the %d cap and its "
                    "tree cannot be truncated" % (i + 1, len(tokens), MAX_SENTENCE_LEN)
                )
                continue
            warnings.warn(
                "truncating sentence %d to %d tokens" % (i + 1, MAX_SENTENCE_LEN)
            )
            tokens = tokens[:MAX_SENTENCE_LEN]
        ids.append(vocab.encode(tokens))
        if trees is not None:
            kept_trees.append(trees[i])
    return ids, (kept_trees if trees is not None else None)


def batch_loss(batch_ids, batch_trees, params, config):
    """Objective value for one batch of sentences (differentiable)."""
    results = []
    for j, ids in enumerate(batch_ids):
        structure = batch_trees[j] if batch_trees is not None else config.structure_source
        results.append(autoencode(ids, structure, params))
    if config.objective == "cross_entropy":
        per_sentence = []
        for (tree, emb), ids in zip(results, batch_ids):
            recons = [emb.recon[leaf.node_id] for leaf in tree.leaves()]
            per_sentence.append(cross_entropy_loss(ids, recons))
        return mean_of(per_sentence)
    nodes = build_batch_nodes(results)
    if config.objective == "contrastive":
        return contrastive_loss(nodes, config.tau, config.intra_view_negatives)
    return degenerate_similarity_loss(nodes)


def _eval_loss(ids, trees, params, config):
    total, count = 0.0, 0
    with no_tape():
        for start in range(0, len(ids), config.batch_size):
            chunk_ids = ids[start : start + config.batch_size]
            chunk_trees = trees[start : start + config.batch_size] if trees else None
            loss = batch_loss(chunk_ids, chunk_trees, params, config)
            total += float(loss.data) * len(chunk_ids)
            count += len(chunk_ids)
    return total / count


def train(config, resume=None):
    """Run the training loop; returns paths and loss history.

    Shuffles sentences each epoch with a seeded generator, steps Adam
    per batch, logs ``epoch<TAB>batch<TAB>split<TAB>loss`` lines, writes
    one checkpoint per epoch, and finally copies the epoch with the best
    dev loss to ``final``. A non-finite loss or gradient aborts with
    :class:`TrainingAborted`; checkpoints written so far are retained.
    """
    config.validate()
    vocab = Vocabulary.load(config.vocab)
    use_trees = config.structure_source == "tree_file"
    train_ids, train_trees = _load_sentences(config, vocab, config.corpus, use_trees)
    if config.dev_corpus:
        dev_ids = [
            vocab.encode(tokens[:MAX_SENTENCE_LEN])
            for tokens in read_corpus(config.dev_corpus, config.lowercase)
        ]
        dev_trees = None
        if use_trees:
            # Dev trees are not part of the config surface; fall back to
            # balanced structure for dev-loss tracking.
            dev_config = replace(config, structure_source="balanced")
        else:
            dev_config = config
    else:
        dev_ids, dev_trees, dev_config = train_ids, train_trees, config

    os.makedirs(config.checkpoint_dir, exist_ok=True)
    metrics_path = os.path.join(config.checkpoint_dir, "metrics.tsv")

    if resume is not None:
        ckpt = Checkpoint.load(resume)
        params, adam = ckpt.params, ckpt.adam
        rng = np.random.default_rng(config.seed)
        rng.bit_generator.state = ckpt.rng_state
        start_epoch = ckpt.epoch + 1
        dev_losses = list(ckpt.dev_losses)
        metrics = open(metrics_path, "a", encoding="utf-8")
    else:
        rng = np.random.default_rng(config.seed)
        params = init_params(config, vocab_size=vocab.size, rng=rng)
        adam = AdamState.for_params(params.tensors())
        start_epoch = 0
        dev_losses = []
        metrics = open(metrics_path, "w", encoding="utf-8")

    lr = config.resolved_lr()
    train_losses = []
    last_saved = None
    order = np.arange(len(train_ids))
    try:
        for epoch in range(start_epoch, config.epochs):
            perm = rng.permutation(order)
            for bidx, start in enumerate(range(0, len(perm), config.batch_size)):
                chosen = perm[start : start + config.batch_size]
                batch_ids = [train_ids[i] for i in chosen]
                batch_trees = [train_trees[i] for i in chosen] if use_trees else None
                try:
                    with Tape() as tape:
                        loss = batch_loss(batch_ids, batch_trees, params, config)
                    value = float(loss.data)
                    tape.backward(loss)
                    adam_step(params.tensors(), adam, lr)
                except NonFiniteError as exc:
                    metrics.close()
                    raise TrainingAborted(
                        "epoch %d batch %d: %s" % (epoch, bidx, exc),
                        last_checkpoint=last_saved,
                    ) from exc
                params.zero_grad()
                train_losses.append(value)
                metrics.write("%d\t%d\ttrain\t%r\n" % (epoch, bidx, value))
            try:
                dev_value = _eval_loss(dev_ids, dev_trees, params, dev_config)
            except NonFiniteError as exc:
                metrics.close()
                raise TrainingAborted(
                    "epoch %d dev evaluation: %s" % (epoch, exc),
                    last_checkpoint=last_saved,
                ) from exc
            dev_losses.append(dev_value)
            metrics.write("%d\t%d\tdev\t%r\n" % (epoch, -1, dev_value))
            metrics.flush()
            stem = os.path.join(config.checkpoint_dir, "epoch%03d" % epoch)
            Checkpoint(
                config=config,
                params=params,
                adam=adam,
                epoch=epoch,
                dev_losses=dev_losses,
                rng_state=rng.bit_generator.state,
            ).save(stem)
            last_saved = stem
            log.info("epoch %d: dev loss %.6f", epoch, dev_value)
    finally:
        if not metrics.closed:
            metrics.close()

    best_epoch = int(np.argmin(dev_losses))
    final = os.path.join(config.checkpoint_dir, "final")
    best = Checkpoint.load(os.path.join(config.checkpoint_dir, "epoch%03d" % best_epoch))
    best.save(final)
    return TrainResult(
        final_checkpoint=final,
        metrics_path=metrics_path,
        best_epoch=best_epoch,
        dev_losses=dev_losses,
        train_losses=train_losses,
    )
