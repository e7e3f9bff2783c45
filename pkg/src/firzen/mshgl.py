"""Modality-specific homogeneous graph learning over the frozen item-item and
user-user graphs, plus multi-head fusion across modalities."""

import math

import numpy as np
import scipy.sparse as sp
import torch

from .sahgl import to_torch_sparse


def item_item_propagate(norm_graph, item_emb, n_layers):
    """``L_ii`` hops over a normalised item graph; returns the last layer only."""
    h = item_emb
    for _ in range(n_layers):
        h = torch.sparse.mm(norm_graph, h)
    return h


def user_user_weights(counts):
    """Row-softmax over the nonzero co-occurrence counts.

    Users without neighbours get a self-loop of weight 1 so propagation
    leaves them unchanged.
    """
    counts = sp.csr_matrix(counts, dtype=np.float64)
    data = counts.data.copy()
    for u in range(counts.shape[0]):
        lo, hi = counts.indptr[u], counts.indptr[u + 1]
        if hi > lo:
            row = data[lo:hi]
            ex = np.exp(row - row.max())
            data[lo:hi] = ex / ex.sum()
    weights = sp.csr_matrix((data, counts.indices, counts.indptr), shape=counts.shape)
    empty = np.diff(counts.indptr) == 0
    return (weights + sp.diags(empty.astype(np.float64))).tocsr()


def user_user_operator(counts, dtype=torch.float32):
    return to_torch_sparse(user_user_weights(counts), dtype)


def user_user_propagate(operator, user_emb, n_layers):
    z = user_emb
    for _ in range(n_layers):
        z = torch.sparse.mm(operator, z)
    return z


def modality_self_attention(reps, w_query, w_key):
    """Fuse per-modality item representations with multi-head self-attention.

    ``reps``: list of ``(n, d)`` tensors, one per modality. ``w_query`` and
    ``w_key``: ``(H, d, d/H)``. Head ``h`` attends with its own query/key
    projection and weights the ``h``-th ``d/H`` slice of each modality's
    representation (no value projection); heads are concatenated back to
    ``d`` and the per-modality outputs are averaged.
    """
    n_heads, d, dh = w_query.shape
    if n_heads * dh != d:
        raise ValueError("number of heads must divide the embedding size")
    e = torch.stack(reps, dim=1)  # (n, M, d)
    q = torch.einsum("nmd,hdk->nhmk", e, w_query)
    k = torch.einsum("nmd,hdk->nhmk", e, w_key)
    att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), dim=-1)  # (n, H, M, M)
    v = e.view(e.shape[0], e.shape[1], n_heads, dh).transpose(1, 2)  # (n, H, M, dh)
    out = (att @ v).transpose(1, 2).reshape(e.shape)  # (n, M, d)
    return out.mean(dim=1)
