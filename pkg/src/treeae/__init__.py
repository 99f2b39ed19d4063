"""Tree-structured autoencoder toolkit.

Learns word, phrase, and sentence embeddings that are completely
faithful to a given (or self-induced) binary sentence structure, and
evaluates them on similarity and frozen-probe tasks.
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, check_gradients, no_tape
from .corpus import (
    Tree,
    Vocabulary,
    balanced_tree,
    binarize,
    build_vocabulary,
    encode_sentence,
    parse_bracketed,
    right_branching_tree,
)
from .model import (
    IornnParams,
    NodeEmbeddings,
    StraeParams,
    autoencode,
    compose,
    decode,
    decompose,
    embed_leaf,
    encode,
    index_leaf,
    induce_structure,
    iornn_decode,
)
from .objectives import (
    BatchNodes,
    build_batch_nodes,
    contrastive_loss,
    cross_entropy_loss,
    degenerate_similarity_loss,
)
from .trainer import AdamState, Checkpoint, TrainConfig, adam_step, init_params, train
from .evaluate import (
    EmbeddingModel,
    aggregate_score,
    eval_similarity,
    sentence_embedding,
    spearman_rho,
    train_probe,
    word_embedding,
)

__all__ = [
    "Tape",
    "Tensor",
    "check_gradients",
    "no_tape",
    "Tree",
    "Vocabulary",
    "balanced_tree",
    "binarize",
    "build_vocabulary",
    "encode_sentence",
    "parse_bracketed",
    "right_branching_tree",
    "IornnParams",
    "NodeEmbeddings",
    "StraeParams",
    "autoencode",
    "compose",
    "decode",
    "decompose",
    "embed_leaf",
    "encode",
    "index_leaf",
    "induce_structure",
    "iornn_decode",
    "BatchNodes",
    "build_batch_nodes",
    "contrastive_loss",
    "cross_entropy_loss",
    "degenerate_similarity_loss",
    "AdamState",
    "Checkpoint",
    "TrainConfig",
    "adam_step",
    "init_params",
    "train",
    "EmbeddingModel",
    "aggregate_score",
    "eval_similarity",
    "sentence_embedding",
    "spearman_rho",
    "train_probe",
    "word_embedding",
]
