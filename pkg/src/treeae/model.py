"""Tree autoencoder components and traversals.

Embeddings are square n-by-n matrices (d = n*n when flattened). A
sentence is encoded bottom-up: leaves look up rows of the shared
embedding matrix, internal nodes fuse their two children through the
composition weights. Decoding runs top-down from a single root vector,
splitting each parent into two children and finally scoring every leaf
against the shared embedding matrix (transposed) to reconstruct tokens.

Two decoders exist:

* the bottleneck decoder starts from the *same* tensor that the encoder
  produced at the root, so all information passes through one vector;
* the skip decoder (``IornnParams``) starts from a learned global root
  and additionally feeds each node's sibling upward embedding into the
  child computation, bypassing the bottleneck.

``induce_structure`` grows a tree for a raw sentence by greedily
merging the most cosine-similar adjacent pair of frontier nodes.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import (
    COSINE_EPS,
    Tensor,
    flatten,
    gather_row,
    hcat,
    hsplit,
    matvec,
    square,
    tanh_matmul,
    tempered_softmax,
)
from .corpus import Tree, balanced_tree, right_branching_tree

STRUCTURE_SOURCES = ("tree_file", "balanced", "right_branching", "induced")


@dataclass
class StraeParams:
    """Learnable weights of the bottleneck autoencoder.

    embedding    (V, n*n)  shared between leaf lookup and reconstruction
    compose_w    (2n, n)   child-pair fusion
    decompose_w  (n, 2n)   parent-to-children split
    """

    embedding: Tensor
    compose_w: Tensor
    decompose_w: Tensor
    n: int
    tau: float
    r: float

    @property
    def vocab_size(self):
        return self.embedding.shape[0]

    @property
    def dim(self):
        return self.n * self.n

    def tensors(self):
        """Named parameter tensors in a fixed order."""
        return {
            "embedding": self.embedding,
            "compose_w": self.compose_w,
            "decompose_w": self.decompose_w,
        }

    def zero_grad(self):
        for t in self.tensors().values():
            t.zero_grad()


@dataclass
class IornnParams(StraeParams):
    """Skip-decoder weights: per-child decomposition plus a global root.

    decompose_left / decompose_right  (2n, n)
    global_root                       (n, n)
    """

    decompose_left: Tensor = None
    decompose_right: Tensor = None
    global_root: Tensor = None

    def tensors(self):
        named = super().tensors()
        named.update(
            {
                "decompose_left": self.decompose_left,
                "decompose_right": self.decompose_right,
                "global_root": self.global_root,
            }
        )
        return named


@dataclass
class NodeEmbeddings:
    """Per-node upward/downward embeddings and per-leaf reconstructions."""

    up: list
    down: list
    recon: dict

    @classmethod
    def empty(cls, node_count):
        return cls(up=[None] * node_count, down=[None] * node_count, recon={})


def embed_leaf(token_id, params):
    """Row ``token_id`` of the embedding matrix, reshaped to n-by-n."""
    token_id = int(token_id)
    if not 0 <= token_id < params.vocab_size:
        raise ValueError(
            "token id %d out of range [0, %d)" % (token_id, params.vocab_size)
        )
    return square(gather_row(params.embedding, token_id))


def compose(left, right, params):
    """Fuse two child embeddings: tanh(hcat(left, right) @ compose_w)."""
    return tanh_matmul(hcat(left, right), params.compose_w)


def decompose(parent, params):
    """Split a parent embedding: hsplit(tanh(parent @ decompose_w))."""
    return hsplit(tanh_matmul(parent, params.decompose_w))


def index_leaf(down, params):
    """Score a leaf's downward embedding against every vocabulary row.

    Returns a probability vector over the vocabulary; its argmax is the
    reconstructed token.
    """
    return tempered_softmax(matvec(params.embedding, flatten(down)), 1.0)


def encode(tree, ids, params):
    """Bottom-up pass filling the upward half of the node embeddings."""
    if len(ids) != tree.leaf_count:
        raise ValueError(
            "sentence has %d tokens but tree expects %d" % (len(ids), tree.leaf_count)
        )
    emb = NodeEmbeddings.empty(len(tree.nodes))
    for nid in tree.bottom_up():
        node = tree.nodes[nid]
        if node.is_leaf:
            emb.up[nid] = embed_leaf(ids[node.span[0]], params)
        else:
            emb.up[nid] = compose(emb.up[node.left], emb.up[node.right], params)
    return emb


def decode(tree, root_up, params, out=None):
    """Top-down pass reading nothing but the root embedding.

    The root's downward embedding is the identical tensor ``root_up``;
    every other embedding follows by decomposition, and leaves finish
    with a reconstruction distribution.
    """
    emb = out if out is not None else NodeEmbeddings.empty(len(tree.nodes))
    emb.down[tree.root_id] = root_up
    for nid in tree.top_down():
        node = tree.nodes[nid]
        if node.is_leaf:
            emb.recon[nid] = index_leaf(emb.down[nid], params)
        else:
            left, right = decompose(emb.down[nid], params)
            emb.down[node.left] = left
            emb.down[node.right] = right
    return emb


def iornn_decode(tree, ups, params, out=None):
    """Top-down pass with sibling skip connections and a learned global root.

    Each child reads its sibling's *upward* embedding next to the
    parent's downward embedding, so information can bypass the root.
    """
    if not isinstance(params, IornnParams):
        raise TypeError("iornn_decode requires IornnParams")
    emb = out if out is not None else NodeEmbeddings.empty(len(tree.nodes))
    emb.down[tree.root_id] = params.global_root
    for nid in tree.top_down():
        node = tree.nodes[nid]
        if node.is_leaf:
            emb.recon[nid] = index_leaf(emb.down[nid], params)
        else:
            parent_down = emb.down[nid]
            emb.down[node.left] = tanh_matmul(
                hcat(ups[node.right], parent_down), params.decompose_left
            )
            emb.down[node.right] = tanh_matmul(
                hcat(ups[node.left], parent_down), params.decompose_right
            )
    return emb


def _flat_cosine(a, b):
    dot = float(a @ b)
    return dot / (np.linalg.norm(a) * np.linalg.norm(b) + COSINE_EPS)


def induce_structure(ids, params):
    """Greedy agglomerative structure induction for one sentence.

    Maintains an ordered frontier initialised with the leaf embeddings
    and repeatedly merges the adjacent pair with the highest cosine
    similarity (leftmost pair on ties), composing the pair into a new
    frontier node. The recorded merge trace is the returned tree.

    Runs as a pure forward computation: the discrete merge choices carry
    no gradient, and callers re-encode along the returned tree.
    """
    if len(ids) < 1:
        raise ValueError("need at least one token")
    n = params.n
    emb = params.embedding.data
    comp = params.compose_w.data
    frontier = [np.ascontiguousarray(emb[int(w)], dtype=np.float64) for w in ids]
    node_ids = list(range(len(ids)))
    merges = []
    next_id = len(ids)
    while len(frontier) > 1:
        best_k = 0
        best_sim = -np.inf
        for k in range(len(frontier) - 1):
            sim = _flat_cosine(frontier[k], frontier[k + 1])
            if sim > best_sim:
                best_sim = sim
                best_k = k
        left = frontier[best_k].reshape(n, n)
        right = frontier[best_k + 1].reshape(n, n)
        merged = kernels.tanh_matmul_fw(
            np.concatenate([left, right], axis=1), comp
        ).reshape(-1)
        merges.append((node_ids[best_k], node_ids[best_k + 1]))
        frontier[best_k : best_k + 2] = [merged]
        node_ids[best_k : best_k + 2] = [next_id]
        next_id += 1
    return Tree.from_merges(len(ids), merges)


def resolve_tree(ids, structure, params):
    """Turn a structure request (Tree or source name) into a Tree."""
    if isinstance(structure, Tree):
        if structure.leaf_count != len(ids):
            raise ValueError(
                "tree has %d leaves but sentence has %d tokens"
                % (structure.leaf_count, len(ids))
            )
        return structure
    if structure == "balanced":
        return balanced_tree(len(ids))
    if structure == "right_branching":
        return right_branching_tree(len(ids))
    if structure == "induced":
        return induce_structure(ids, params)
    raise ValueError("unknown structure source %r" % (structure,))


def autoencode(ids, structure, params):
    """Full encode/decode round trip; returns (tree, embeddings).

    ``structure`` is either a Tree or one of ``balanced``,
    ``right_branching``, ``induced``. The decoder variant follows the
    parameter type.
    """
    tree = resolve_tree(ids, structure, params)
    emb = encode(tree, ids, params)
    if isinstance(params, IornnParams):
        iornn_decode(tree, emb.up, params, out=emb)
    else:
        decode(tree, emb.up[tree.root_id], params, out=emb)
    return tree, emb
