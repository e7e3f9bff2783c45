"""Frozen graphs built once before training.

* collaborative knowledge graph: KG triples plus ``(user, Interact, item)``
* per-modality item-item kNN graphs over feature cosine similarity
* user-user co-occurrence graph with top-K common-item counts
* the inference-time mask that stops cold items feeding warm ones
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .container import read_container, write_container
from .errors import AlignmentError

logger = logging.getLogger(__name__)

INTERACT = "interact"


@dataclass
class CollaborativeKG:
    """Triples over one node space: ``[users | items | other entities]``.

    Relation ``n_relations - 1`` is Interact. Triples are sorted by
    ``(relation, head, tail)`` so each relation occupies one contiguous slice.
    """

    n_users: int
    n_items: int
    n_nodes: int
    relation_names: list
    triples: np.ndarray
    node_types: list
    entity_to_node: np.ndarray

    @property
    def n_relations(self):
        return len(self.relation_names)

    @property
    def interact(self):
        return self.n_relations - 1

    @property
    def n_other(self):
        return self.n_nodes - self.n_users - self.n_items

    def relation_slices(self):
        bounds = np.searchsorted(self.triples[:, 1], np.arange(self.n_relations + 1))
        return [(r, int(bounds[r]), int(bounds[r + 1])) for r in range(self.n_relations)
                if bounds[r + 1] > bounds[r]]

    def kg_triples(self):
        return self.triples[self.triples[:, 1] != self.interact]

    def with_interactions(self, pairs):
        """Copy with extra Interact triples (normal cold-start known edges)."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        extra = np.stack([pairs[:, 0], np.full(len(pairs), self.interact), self.n_users + pairs[:, 1]], 1)
        triples = _sort_triples(np.concatenate([self.triples, extra]))
        return CollaborativeKG(self.n_users, self.n_items, self.n_nodes, self.relation_names,
                               triples, self.node_types, self.entity_to_node)


def _sort_triples(triples):
    return triples[np.lexsort((triples[:, 2], triples[:, 0], triples[:, 1]))]


def build_ckg(train_pairs, n_users, kg):
    """Merge training interactions into the knowledge graph.

    Item entities are moved to node ``n_users + item``; users take nodes
    ``0..n_users-1``; remaining entities follow in vocabulary order.
    """
    n_items = len(kg.item_alignment)
    if (kg.item_alignment < 0).any():
        missing = int(np.flatnonzero(kg.item_alignment < 0)[0])
        raise AlignmentError(f"item {missing} is not aligned to a knowledge-graph entity")
    entity_to_node = np.full(kg.n_entities, -1, dtype=np.int64)
    entity_to_node[kg.item_alignment] = n_users + np.arange(n_items)
    others = np.flatnonzero(entity_to_node < 0)
    entity_to_node[others] = n_users + n_items + np.arange(len(others))
    n_nodes = n_users + n_items + len(others)
    node_types = ["user"] * n_users + ["item"] * n_items + [kg.entity_types[e] for e in others]

    train_pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    kg_part = np.stack([entity_to_node[kg.triples[:, 0]], kg.triples[:, 1],
                        entity_to_node[kg.triples[:, 2]]], 1) if len(kg.triples) else np.zeros((0, 3), np.int64)
    interact = kg.n_relations
    inter_part = np.stack([train_pairs[:, 0], np.full(len(train_pairs), interact),
                           n_users + train_pairs[:, 1]], 1)
    triples = _sort_triples(np.concatenate([kg_part, inter_part]).astype(np.int64))
    return CollaborativeKG(n_users, n_items, n_nodes, list(kg.relation_names) + [INTERACT],
                           triples, node_types, entity_to_node)


def modality_similarity(features):
    """Dense cosine similarity; rows with zero norm get similarity 0."""
    f = np.asarray(getattr(features, "values", features), dtype=np.float64)
    norms = np.sqrt((f * f).sum(axis=1))
    zero = norms == 0
    if zero.any():
        logger.warning("%d items have zero-norm features; their similarities are 0", int(zero.sum()))
    sim = (f @ f.T) / np.outer(norms, norms).clip(min=np.finfo(float).tiny)
    sim[zero, :] = 0.0
    sim[:, zero] = 0.0
    return sim


def _topk_rows(sim, k, allowed=None, rows=None):
    """Column indices of the top-``k`` entries per row, self excluded.

    Ties go to the smaller column index. ``allowed`` is an optional boolean
    mask (rows x cols) of admissible columns; ``rows`` lists which global
    row each line of ``sim`` is.
    """
    n_rows, n_cols = sim.shape
    if rows is None:
        rows = np.arange(n_rows)
    scores = np.array(sim, dtype=np.float64, copy=True)
    ok = np.ones_like(scores, dtype=bool) if allowed is None else allowed.copy()
    ok[np.arange(n_rows), rows] = False
    scores[~ok] = -np.inf
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    counts = np.minimum(ok.sum(axis=1), k)
    keep = np.arange(order.shape[1])[None, :] < counts[:, None]
    r = np.repeat(rows, keep.sum(axis=1))
    c = order[keep]
    return r, c


def knn_sparsify(sim, k):
    """Row-wise top-``k`` binarisation (self excluded); result is not symmetrised."""
    if k < 1:
        raise ValueError("K must be >= 1")
    n = sim.shape[0]
    r, c = _topk_rows(sim, k)
    return sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))


def sym_normalize(adj):
    """``D^-1/2 A D^-1/2`` with ``D`` from row sums; zero-degree rows stay zero."""
    adj = sp.csr_matrix(adj, dtype=np.float64)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    coo = adj.tocoo()
    data = coo.data * inv[coo.row] * inv[coo.col]
    out = sp.csr_matrix((data, (coo.row, coo.col)), shape=adj.shape)
    out.eliminate_zeros()
    return out


def item_item_knn(features, k, cold_mask=None, setting="inference", chunk=2048):
    """Binary kNN item graph computed in row chunks.

    ``setting="train"``: only warm items, warm neighbours (cold rows empty).
    ``setting="inference"``: warm rows pick among warm items, cold rows
    among all items. Applying the warm->cold mask to the candidate set
    before top-K keeps every warm row identical to its training version.
    Without a ``cold_mask`` both settings reduce to plain kNN over all items.
    """
    f = np.asarray(getattr(features, "values", features), dtype=np.float64)
    n = len(f)
    cold = np.zeros(n, dtype=bool) if cold_mask is None else np.asarray(cold_mask, dtype=bool)
    norms = np.sqrt((f * f).sum(axis=1))
    zero = norms == 0
    rows_all, cols_all = [], []
    row_ids = np.flatnonzero(~cold) if setting == "train" else np.arange(n)
    for lo in range(0, len(row_ids), chunk):
        rows = row_ids[lo:lo + chunk]
        sim = (f[rows] @ f.T) / np.outer(norms[rows], norms).clip(min=np.finfo(float).tiny)
        sim[zero[rows], :] = 0.0
        sim[:, zero] = 0.0
        allowed = np.ones((len(rows), n), dtype=bool)
        allowed[np.ix_(~cold[rows], cold)] = False
        if setting == "train":
            allowed[:, cold] = False
        r, c = _topk_rows(sim, k, allowed, rows)
        rows_all.append(r)
        cols_all.append(c)
    r = np.concatenate(rows_all) if rows_all else np.zeros(0, np.int64)
    c = np.concatenate(cols_all) if cols_all else np.zeros(0, np.int64)
    return sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))


def build_user_user_graph(train_pairs, n_users, n_items, k):
    """Top-``k`` co-occurrence counts per user (self excluded, ties to smaller index)."""
    if k < 1:
        raise ValueError("K must be >= 1")
    pairs = np.asarray(train_pairs, dtype=np.int64).reshape(-1, 2)
    a = sp.csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n_users, n_items))
    co = (a @ a.T).tocsr()
    co.setdiag(0)
    co.eliminate_zeros()
    rows, cols, vals = [], [], []
    for u in range(n_users):
        lo, hi = co.indptr[u], co.indptr[u + 1]
        idx, cnt = co.indices[lo:hi], co.data[lo:hi]
        order = np.lexsort((idx, -cnt))[:k]
        rows.extend([u] * len(order))
        cols.extend(idx[order].tolist())
        vals.extend(cnt[order].tolist())
    return sp.csr_matrix((np.array(vals, dtype=np.float64), (rows, cols)), shape=(n_users, n_users))


def build_inference_mask(warm_items, cold_items, n_items=None):
    """Sparse 0/1 matrix with zeros exactly at (warm row, cold column)."""
    warm = np.asarray(warm_items, dtype=np.int64)
    cold = np.asarray(cold_items, dtype=np.int64)
    if np.intersect1d(warm, cold).size:
        raise ValueError("warm and cold item sets overlap")
    n = n_items if n_items is not None else len(warm) + len(cold)
    if len(np.union1d(warm, cold)) != n:
        raise ValueError("warm and cold item sets must cover all items")
    dense = np.ones((n, n))
    dense[np.ix_(warm, cold)] = 0.0
    return sp.csr_matrix(dense)


def rectify(binary_graph, mask):
    """Element-wise product of a binary graph and the inference mask."""
    out = sp.csr_matrix(binary_graph).multiply(mask).tocsr()
    out.eliminate_zeros()
    return out


def rectify_by_cold(binary_graph, cold_mask):
    """Same as :func:`rectify` without materialising the dense mask."""
    coo = sp.coo_matrix(binary_graph)
    cold = np.asarray(cold_mask, dtype=bool)
    keep = ~(~cold[coo.row] & cold[coo.col])
    return sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=coo.shape)


def interaction_matrix(pairs, n_users, n_items):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return sp.csr_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n_users, n_items))


@dataclass
class FrozenGraphBundle:
    n_users: int
    n_items: int
    k_item: int
    k_user: int
    modalities: tuple
    interaction: sp.csr_matrix
    ckg: CollaborativeKG
    cold_mask: np.ndarray
    item_item_binary: dict
    item_item_normalized: dict
    inference_binary: dict
    inference_normalized: dict
    user_user: sp.csr_matrix
    meta: dict = field(default_factory=dict)

    def inference_mask(self):
        return build_inference_mask(np.flatnonzero(~self.cold_mask), np.flatnonzero(self.cold_mask),
                                    self.n_items)


def build_frozen_graphs(split, kg, features, k_item=10, k_user=10):
    """All graphs for one split. ``features`` maps modality name to FeatureMatrix."""
    train = split.train
    cold = split.cold_mask()
    ckg = build_ckg(train, split.user_count, kg)
    binary, normalized, inf_binary, inf_normalized = {}, {}, {}, {}
    modalities = tuple(features)
    for m in modalities:
        fm = features[m]
        if len(fm.values) != split.item_count:
            raise AlignmentError(f"{m} features have {len(fm.values)} rows for {split.item_count} items")
        binary[m] = item_item_knn(fm, k_item, cold, setting="train")
        normalized[m] = sym_normalize(binary[m])
        expanded = item_item_knn(fm, k_item, cold, setting="inference")
        inf_binary[m] = rectify_by_cold(expanded, cold)
        inf_normalized[m] = sym_normalize(inf_binary[m])
    return FrozenGraphBundle(
        n_users=split.user_count, n_items=split.item_count, k_item=k_item, k_user=k_user,
        modalities=modalities,
        interaction=interaction_matrix(train, split.user_count, split.item_count),
        ckg=ckg, cold_mask=cold,
        item_item_binary=binary, item_item_normalized=normalized,
        inference_binary=inf_binary, inference_normalized=inf_normalized,
        user_user=build_user_user_graph(train, split.user_count, split.item_count, k_user))


BUNDLE_KIND = "graphs"
BUNDLE_VERSION = 1


def _csr_blocks(prefix, mat):
    mat = sp.csr_matrix(mat)
    mat.sort_indices()
    return {f"{prefix}/indptr": mat.indptr.astype(np.int64),
            f"{prefix}/indices": mat.indices.astype(np.int64),
            f"{prefix}/data": mat.data.astype(np.float64)}


def _csr_from(blocks, prefix, shape):
    return sp.csr_matrix((blocks[f"{prefix}/data"], blocks[f"{prefix}/indices"],
                          blocks[f"{prefix}/indptr"]), shape=shape)


def save_bundle(bundle, path):
    meta = {"n_users": bundle.n_users, "n_items": bundle.n_items, "k_item": bundle.k_item,
            "k_user": bundle.k_user, "modalities": list(bundle.modalities),
            "ckg_nodes": bundle.ckg.n_nodes, "relations": bundle.ckg.relation_names,
            "node_types": bundle.ckg.node_types, **bundle.meta}
    blocks = {"cold_mask": bundle.cold_mask.astype(np.uint8),
              "ckg/triples": bundle.ckg.triples,
              "ckg/entity_to_node": bundle.ckg.entity_to_node}
    blocks.update(_csr_blocks("interaction", bundle.interaction))
    blocks.update(_csr_blocks("user_user", bundle.user_user))
    for m in bundle.modalities:
        blocks.update(_csr_blocks(f"ii_binary/{m}", bundle.item_item_binary[m]))
        blocks.update(_csr_blocks(f"ii_inference/{m}", bundle.inference_binary[m]))
    write_container(path, BUNDLE_KIND, BUNDLE_VERSION, meta, blocks)


def load_bundle(path):
    _, meta, blocks = read_container(path, BUNDLE_KIND)
    nu, ni = meta["n_users"], meta["n_items"]
    ckg = CollaborativeKG(nu, ni, meta["ckg_nodes"], meta["relations"], blocks["ckg/triples"],
                          meta["node_types"], blocks["ckg/entity_to_node"])
    binary, inf_binary = {}, {}
    for m in meta["modalities"]:
        binary[m] = _csr_from(blocks, f"ii_binary/{m}", (ni, ni))
        inf_binary[m] = _csr_from(blocks, f"ii_inference/{m}", (ni, ni))
    extra = {k: v for k, v in meta.items() if k not in {
        "n_users", "n_items", "k_item", "k_user", "modalities", "ckg_nodes", "relations", "node_types"}}
    return FrozenGraphBundle(
        n_users=nu, n_items=ni, k_item=meta["k_item"], k_user=meta["k_user"],
        modalities=tuple(meta["modalities"]),
        interaction=_csr_from(blocks, "interaction", (nu, ni)), ckg=ckg,
        cold_mask=blocks["cold_mask"].astype(bool),
        item_item_binary=binary, item_item_normalized={m: sym_normalize(g) for m, g in binary.items()},
        inference_binary=inf_binary,
        inference_normalized={m: sym_normalize(g) for m, g in inf_binary.items()},
        user_user=_csr_from(blocks, "user_user", (nu, nu)), meta=extra)
