"""Side information-aware heterogeneous graph learning.

Behaviour-aware and modality-aware convolution over the user-item graph,
knowledge-aware attention over the collaborative KG, and the weighted fusion
of the three branches.
"""

import logging
import math

import numpy as np
import scipy.sparse as sp
import torch
import torch.nn.functional as F

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01


def to_torch_sparse(mat, dtype=torch.float32):
    coo = sp.coo_matrix(mat)
    idx = torch.from_numpy(np.vstack([coo.row, coo.col]).astype(np.int64))
    val = torch.from_numpy(coo.data).to(dtype)
    return torch.sparse_coo_tensor(idx, val, coo.shape, check_invariants=False).coalesce()


def propagation_operators(interaction, norm="one_sided", dtype=torch.float32):
    """Sparse ``(user<-item, item<-user)`` operators for one propagation hop.

    ``one_sided`` scales a user's sum by ``1/sqrt(|N_u|)`` and an item's by
    ``1/sqrt(|N_i|)``; ``symmetric`` uses ``1/sqrt(|N_u||N_i|)`` on both.
    """
    a = sp.csr_matrix(interaction, dtype=np.float64)
    du = np.asarray(a.sum(axis=1)).ravel()
    di = np.asarray(a.sum(axis=0)).ravel()
    ru = np.where(du > 0, 1.0 / np.sqrt(np.maximum(du, 1)), 0.0)
    ri = np.where(di > 0, 1.0 / np.sqrt(np.maximum(di, 1)), 0.0)
    if norm == "one_sided":
        ui = sp.diags(ru) @ a
        iu = sp.diags(ri) @ a.T
    elif norm == "symmetric":
        ui = sp.diags(ru) @ a @ sp.diags(ri)
        iu = ui.T
    else:
        raise ValueError(f"unknown normalisation {norm!r}")
    return to_torch_sparse(ui, dtype), to_torch_sparse(iu, dtype)


def behavior_conv(user_from_items, item_from_users, user_emb, item_emb, n_layers, pool="sum_div_l",
                  user_keep=None, item_keep=None):
    """Layer-pooled LightGCN-style propagation over the interaction graph.

    ``pool="sum_div_l"`` sums layers ``0..L`` and divides by ``L``;
    ``pool="mean"`` divides by ``L + 1``. ``user_keep``/``item_keep`` are
    0/1 column vectors that drop the layer-0 term of nodes without edges, so
    strict cold items come out as exact zero vectors.
    """
    if n_layers < 1:
        raise ValueError("need at least one layer")
    eu, ei = user_emb, item_emb
    sum_u = eu if user_keep is None else eu * user_keep
    sum_i = ei if item_keep is None else ei * item_keep
    for _ in range(n_layers):
        eu, ei = torch.sparse.mm(user_from_items, ei), torch.sparse.mm(item_from_users, eu)
        sum_u = sum_u + eu
        sum_i = sum_i + ei
    denom = n_layers if pool == "sum_div_l" else n_layers + 1
    return sum_u / denom, sum_i / denom


def modality_conv(user_from_items, item_from_users, projected):
    """Aggregate projected item features to users, then back to items.

    ``projected`` is ``Linear(f_i)`` for every item (dropout already applied).
    Items without training users come out as exact zero vectors.
    """
    xu = torch.sparse.mm(user_from_items, projected)
    xi = torch.sparse.mm(item_from_users, xu)
    return xu, xi


def segment_softmax(logits, segments, n_segments):
    # max shift is detached: softmax is shift-invariant so gradients are unchanged
    shift = torch.full((n_segments,), -math.inf, dtype=logits.dtype)
    shift = shift.scatter_reduce(0, segments, logits.detach(), reduce="amax", include_self=True)
    ex = torch.exp(logits - shift[segments])
    denom = torch.zeros(n_segments, dtype=logits.dtype).index_add(0, segments, ex)
    return ex / denom[segments]


def attention_logits(node_emb, rel_emb, rel_transforms, triples, slices=None):
    """``pi(h,r,t) = (W_r x_t)^T tanh(W_r x_h + x_r)`` for every triple.

    ``triples`` must be sorted by relation when ``slices`` is given (as
    ``(relation, start, stop)`` runs); otherwise it is grouped here.
    """
    heads, rels, tails = triples[:, 0], triples[:, 1], triples[:, 2]
    if slices is None:
        order = torch.argsort(rels, stable=True)
        inv = torch.empty_like(order)
        inv[order] = torch.arange(len(order))
        sorted_rels = rels[order]
        uniq, counts = torch.unique_consecutive(sorted_rels, return_counts=True)
        starts = torch.cumsum(counts, 0) - counts
        slices = [(int(r), int(s), int(s + c)) for r, s, c in zip(uniq, starts, counts)]
        heads, rels, tails = heads[order], sorted_rels, tails[order]
    else:
        inv = None
    parts = []
    for r, lo, hi in slices:
        w = rel_transforms[r]
        wt = node_emb[tails[lo:hi]] @ w.T
        wh = node_emb[heads[lo:hi]] @ w.T
        parts.append((wt * torch.tanh(wh + rel_emb[r])).sum(dim=1))
    logits = torch.cat(parts) if parts else node_emb.new_zeros(0)
    return logits if inv is None else logits[inv]


def knowledge_attention(node_emb, rel_emb, rel_transforms, triples, slices=None):
    """Attention-weighted ego-network sum per head node.

    Returns ``(x_N, alpha)``; nodes with an empty ego-network get zero rows.
    """
    n_nodes = node_emb.shape[0]
    logits = attention_logits(node_emb, rel_emb, rel_transforms, triples, slices)
    heads, tails = triples[:, 0], triples[:, 2]
    alpha = segment_softmax(logits, heads, n_nodes)
    x_n = torch.zeros_like(node_emb).index_add(0, heads, alpha[:, None] * node_emb[tails])
    return x_n, alpha


def bi_interaction(x, x_n, w1, w2, slope=LEAKY_SLOPE):
    """``LeakyReLU(W1 (x + x_N)) + LeakyReLU(W2 (x * x_N))`` with ``W`` as (out, in)."""
    return F.leaky_relu((x + x_n) @ w1.T, slope) + F.leaky_relu((x * x_n) @ w2.T, slope)


def fuse_representations(behavior, knowledge, text, image, lambda_k, lambda_m, beta):
    """``e = e~ + lambda_k x_know + lambda_m (beta_t x_text + beta_i x_image)``.

    Any branch may be ``None`` (ablated). ``beta`` is ``(beta_t, beta_i)``.
    """
    out = None

    def add(acc, term):
        return term if acc is None else acc + term

    if behavior is not None:
        out = add(out, behavior)
    if knowledge is not None:
        out = add(out, lambda_k * knowledge)
    modal = None
    if text is not None:
        modal = add(modal, beta[0] * text)
    if image is not None:
        modal = add(modal, beta[1] * image)
    if modal is not None:
        out = add(out, lambda_m * modal)
    if out is None:
        raise ValueError("every branch is disabled")
    return out


def update_modality_importance(beta, d_text, d_image, eta):
    """Momentum update of ``(beta_t, beta_i)`` toward softmax of discriminator means."""
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must be in [0, 1]")
    if not (math.isfinite(d_text) and math.isfinite(d_image)):
        logger.warning("non-finite discriminator output; modality importance unchanged")
        return tuple(beta)
    top = max(d_text, d_image)
    et, ei = math.exp(d_text - top), math.exp(d_image - top)
    target_t = et / (et + ei)
    bt = eta * beta[0] + (1.0 - eta) * target_t
    # derive beta_i from beta_t so the pair sums to one without drift
    bt = min(max(bt, 0.0), 1.0)
    return bt, 1.0 - bt
