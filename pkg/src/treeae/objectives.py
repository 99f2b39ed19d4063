"""Training objectives: cross entropy, structural contrastive, degenerate.

The contrastive loss aligns each node's upward/downward embedding pair
against every other pair in the batch: a pairwise cosine similarity
matrix A is built between all M flattened upward embeddings and all M
flattened downward embeddings (row i and column i belong to the same
structural node), and the diagonal is the positive of a tempered
softmax over each row and each column. Log-softmax terms are computed
in log space with max subtraction.

The degenerate loss simply maximises per-pair cosine; it is kept as a
reproducible failure case (it collapses all embeddings onto one ray).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import (
    Tensor,
    accum_grad,
    clamp_min,
    cosine_similarity_matrix,
    flatten,
    log,
    mean,
    mean_of,
    neg,
    op_output,
    pick,
    record_backward,
    rowwise_cosine,
    stack_rows,
)

LOG_FLOOR = 1e-12


@dataclass
class BatchNodes:
    """Row-aligned flattened embeddings for every node in a batch.

    Row i of ``ups`` and row i of ``downs`` refer to the same structural
    node; M is the total node count (internal + leaves) over all
    sentences in the batch.
    """

    ups: Tensor
    downs: Tensor

    @property
    def m(self):
        return self.ups.shape[0]


def build_batch_nodes(items):
    """Collect (tree, embeddings) pairs into aligned up/down row stacks."""
    rows_up, rows_down = [], []
    for tree, emb in items:
        for nid in range(len(tree.nodes)):
            rows_up.append(flatten(emb.up[nid]))
            rows_down.append(flatten(emb.down[nid]))
    return BatchNodes(ups=stack_rows(rows_up), downs=stack_rows(rows_down))


def cross_entropy_loss(targets, recons):
    """Mean over leaves of -log(recon[target]), log floored at 1e-12."""
    if len(targets) != len(recons):
        raise ValueError(
            "%d targets but %d reconstructions" % (len(targets), len(recons))
        )
    terms = [
        log(clamp_min(pick(recon, target), LOG_FLOOR))
        for target, recon in zip(targets, recons)
    ]
    return neg(mean_of(terms))


def _paired_infonce(a, tau):
    """Symmetric diagonal-positive InfoNCE over a similarity matrix."""
    loss, row_soft, col_soft = kernels.contrastive_fw(a.data, tau)
    out = op_output(loss, a)

    def backward():
        if out.grad is None or not a.requires_grad:
            return
        da = kernels.contrastive_bw(row_soft, col_soft, tau)
        accum_grad(a, da * float(out.grad))

    record_backward(out, backward)
    return out


def _drop_diag(x):
    m = x.shape[0]
    return x[~np.eye(m, dtype=bool)].reshape(m, m - 1)


def _scatter_offdiag(x):
    m = x.shape[0]
    out = np.zeros((m, m))
    out[~np.eye(m, dtype=bool)] = x.reshape(-1)
    return out


def _paired_infonce_intra(a, up_sim, down_sim, tau):
    """InfoNCE variant whose denominators also contain same-view negatives.

    Row i (an upward anchor) competes against all M downward embeddings
    plus the other M-1 upward embeddings; columns symmetrically add the
    other downward embeddings. Off by default; the cross-view matrix
    alone cannot express same-view repulsion.
    """
    m = a.shape[0]
    row_logits = np.concatenate([a.data, _drop_diag(up_sim.data)], axis=1) / tau
    col_logits = np.concatenate([a.data.T, _drop_diag(down_sim.data)], axis=1) / tau
    idx = np.arange(m)

    def log_softmax(z):
        zmax = z.max(axis=1, keepdims=True)
        return z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))

    row_ls = log_softmax(row_logits)
    col_ls = log_softmax(col_logits)
    loss = -(row_ls[idx, idx].sum() + col_ls[idx, idx].sum()) / (2.0 * m)
    out = op_output(loss, a, up_sim, down_sim)

    def backward():
        if out.grad is None:
            return
        coef = float(out.grad) / (2.0 * m * tau)
        row_soft = np.exp(row_ls)
        col_soft = np.exp(col_ls)
        row_soft[idx, idx] -= 1.0
        col_soft[idx, idx] -= 1.0
        if a.requires_grad:
            accum_grad(a, (row_soft[:, :m] + col_soft[:, :m].T) * coef)
        if up_sim.requires_grad:
            accum_grad(up_sim, _scatter_offdiag(row_soft[:, m:]) * coef)
        if down_sim.requires_grad:
            accum_grad(down_sim, _scatter_offdiag(col_soft[:, m:]) * coef)

    record_backward(out, backward)
    return out


def contrastive_loss(batch, tau, intra_view_negatives=False):
    """Structural contrastive objective over a batch of node pairs."""
    if batch.m < 1:
        raise ValueError("empty batch")
    if tau <= 0.0:
        raise ValueError("temperature must be > 0, got %r" % (tau,))
    a = cosine_similarity_matrix(batch.ups, batch.downs)
    if not intra_view_negatives:
        return _paired_infonce(a, float(tau))
    up_sim = cosine_similarity_matrix(batch.ups, batch.ups)
    down_sim = cosine_similarity_matrix(batch.downs, batch.downs)
    return _paired_infonce_intra(a, up_sim, down_sim, float(tau))


def degenerate_similarity_loss(batch):
    """Negated mean cosine between corresponding up/down pairs.

    Its minimum is reached by making every embedding identical, which is
    exactly the collapse it exists to demonstrate.
    """
    if batch.m < 1:
        raise ValueError("empty batch")
    return neg(mean(rowwise_cosine(batch.ups, batch.downs)))
