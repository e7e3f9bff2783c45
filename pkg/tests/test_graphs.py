import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import dense
from firzen.data import FeatureMatrix
from firzen.errors import AlignmentError
from firzen.graphs import (build_ckg, build_frozen_graphs, build_inference_mask, build_user_user_graph,
                           item_item_knn, knn_sparsify, load_bundle, modality_similarity, rectify,
                           rectify_by_cold, save_bundle, sym_normalize)
from firzen.kg import KnowledgeGraph


def random_instance(seed):
    """Integer-valued features keep every dot product exact, so float results are reproducible."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 13))
    d = int(rng.integers(2, 6))
    feats = rng.integers(-3, 4, size=(n, d)).astype(np.float64)
    feats[rng.random(n) < 0.1] = 0.0
    k = int(rng.integers(1, n + 1))
    cold = rng.random(n) < 0.3
    n_users = int(rng.integers(2, 8))
    pairs = sorted({(int(rng.integers(n_users)), int(rng.integers(n))) for _ in range(3 * n_users)})
    return feats, k, cold, n_users, pairs


def check_instance(seed):
    feats, k, cold, n_users, pairs = random_instance(seed)
    rows = feats.tolist()
    n = len(rows)
    sim = oracles.similarity_matrix(rows)
    assert np.array_equal(modality_similarity(feats), np.array(sim))

    binary = oracles.topk_binary(sim, k)
    assert np.array_equal(dense(knn_sparsify(np.array(sim), k)), np.array(binary))
    assert np.array_equal(dense(sym_normalize(knn_sparsify(np.array(sim), k))),
                          np.array(oracles.sym_normalize(binary)))

    train = oracles.train_graph(sim, k, cold)
    assert np.array_equal(dense(item_item_knn(feats, k, cold, "train")), np.array(train))
    inference = oracles.inference_graph(sim, k, cold)
    expanded = item_item_knn(feats, k, cold, "inference")
    assert np.array_equal(dense(rectify_by_cold(expanded, cold)), np.array(inference))
    mask = build_inference_mask(np.flatnonzero(~cold), np.flatnonzero(cold), n)
    assert np.array_equal(dense(rectify(expanded, mask)), np.array(inference))
    assert np.array_equal(dense(sym_normalize(rectify(expanded, mask))),
                          np.array(oracles.sym_normalize(inference)))

    user_items = {u: set() for u in range(n_users)}
    for u, i in pairs:
        user_items[u].add(i)
    counts = oracles.user_user_counts(user_items, k)
    assert np.array_equal(dense(build_user_user_graph(pairs, n_users, n, k)), np.array(counts))


def test_graph_oracle_suite_hundred_seeds():
    for seed in range(100):
        check_instance(seed)


# cosine similarity

def test_cosine_examples():
    sim = modality_similarity(np.array([[1.0, 0.0], [0.0, 1.0], [3.0, 4.0], [3.0, 4.0], [1.0, 1.0]]))
    assert sim[0, 1] == 0.0
    assert sim[2, 3] == pytest.approx(1.0, abs=1e-15)
    assert sim[4, 0] == pytest.approx(2 ** -0.5, abs=1e-15)
    assert np.allclose(sim, sim.T)


def test_zero_norm_row_similarity_zero(caplog):
    sim = modality_similarity(np.array([[0.0, 0.0], [1.0, 2.0]]))
    assert (sim[0] == 0).all() and (sim[:, 0] == 0).all()
    assert "zero-norm" in caplog.text


# kNN

def test_knn_argmax_row():
    sim = np.array([[1.0, 0.9, 0.2], [0.9, 1.0, 0.3], [0.2, 0.3, 1.0]])
    assert dense(knn_sparsify(sim, 1))[0].tolist() == [0, 1, 0]


def test_knn_ties_pick_smallest_index():
    g = dense(knn_sparsify(np.ones((4, 4)), 1))
    assert [int(np.flatnonzero(r)[0]) for r in g] == [1, 0, 0, 0]


def test_knn_full_k_all_off_diagonal():
    g = dense(knn_sparsify(np.random.default_rng(0).random((5, 5)), 4))
    assert np.array_equal(g, 1 - np.eye(5))
    assert np.array_equal(dense(knn_sparsify(np.random.default_rng(0).random((5, 5)), 99)), 1 - np.eye(5))


def test_knn_rejects_zero_k():
    with pytest.raises(ValueError):
        knn_sparsify(np.eye(3), 0)


# normalisation

def test_normalize_two_cycle_unchanged():
    adj = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.array_equal(dense(sym_normalize(adj)), adj)


def test_normalize_star():
    adj = np.zeros((4, 4))
    adj[0, 1:] = adj[1:, 0] = 1
    out = dense(sym_normalize(adj))
    assert np.allclose(out[0, 1:], 1 / math.sqrt(3), rtol=0, atol=1e-15)
    assert np.allclose(out[1:, 0], 1 / math.sqrt(3), rtol=0, atol=1e-15)


def test_normalize_isolated_row():
    adj = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert (dense(sym_normalize(adj))[2] == 0).all()


@given(st.integers(2, 9), st.integers(0, 10_000))
def test_normalize_preserves_symmetry_and_finiteness(n, seed):
    rng = np.random.default_rng(seed)
    a = (rng.random((n, n)) < 0.4).astype(float)
    a = np.triu(a, 1)
    a = a + a.T
    out = dense(sym_normalize(a))
    assert np.isfinite(out).all()
    assert np.array_equal(out, out.T)


# user-user graph

def test_user_user_counts():
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (1, 4), (2, 9)]
    g = dense(build_user_user_graph(pairs, 3, 10, 5))
    assert g[0, 1] == 2 and g[0, 2] == 0 and g[2].sum() == 0


def test_user_user_k1_keeps_largest():
    pairs = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0)]
    g = dense(build_user_user_graph(pairs, 3, 3, 1))
    assert g[0].tolist() == [0, 3, 0]


@given(st.integers(0, 10_000))
def test_user_user_rows_bounded_and_integral(seed):
    rng = np.random.default_rng(seed)
    pairs = {(int(rng.integers(8)), int(rng.integers(6))) for _ in range(30)}
    k = int(rng.integers(1, 5))
    g = dense(build_user_user_graph(sorted(pairs), 8, 6, k))
    assert ((g > 0).sum(axis=1) <= k).all()
    assert np.array_equal(g, np.round(g)) and (g >= 0).all()
    assert (np.diag(g) == 0).all()


# mask

def test_mask_all_warm_identity():
    rng = np.random.default_rng(0)
    f = rng.integers(-2, 3, size=(6, 3)).astype(float)
    g = item_item_knn(f, 2)
    mask = build_inference_mask(np.arange(6), np.array([], dtype=int), 6)
    assert np.array_equal(dense(mask), np.ones((6, 6)))
    assert np.array_equal(dense(rectify(g, mask)), dense(g))


def test_mask_blocks_warm_to_cold():
    cold = np.array([False, True, False, True])
    mask = dense(build_inference_mask([0, 2], [1, 3], 4))
    g = np.ones((4, 4)) - np.eye(4)
    rect = dense(rectify(g, mask))
    for a in (0, 2):
        for b in (1, 3):
            assert rect[a, b] == 0
    assert np.array_equal(rect, g * mask)
    assert np.array_equal(rect[[1, 3]], g[[1, 3]])
    assert np.array_equal(dense(rectify_by_cold(g, cold)), rect)


def test_mask_rejects_overlap_and_gaps():
    with pytest.raises(ValueError):
        build_inference_mask([0, 1], [1, 2], 3)
    with pytest.raises(ValueError):
        build_inference_mask([0], [2], 3)


def test_warm_block_of_inference_graph_equals_training_graph(tiny_world):
    b = tiny_world["bundle"]
    warm = ~b.cold_mask
    for m in b.modalities:
        train_norm = dense(b.item_item_normalized[m])
        inf_norm = dense(b.inference_normalized[m])
        assert np.array_equal(inf_norm[np.ix_(warm, warm)], train_norm[np.ix_(warm, warm)])
        assert (inf_norm[np.ix_(warm, ~warm)] == 0).all()
        assert (dense(b.item_item_binary[m]).sum(axis=1) <= b.k_item).all()


# collaborative KG

def _kg(triples, n_items=2):
    names = [f"i{i}" for i in range(n_items)] + ["brand", "cat"]
    types = ["item"] * n_items + ["brand", "category"]
    return KnowledgeGraph(names, types, ["produced_by", "belongs_to"], triples, np.arange(n_items))


def test_ckg_empty_kg():
    ckg = build_ckg([(0, 0), (1, 1), (1, 0)], 2, _kg([]))
    assert len(ckg.triples) == 3
    assert (ckg.triples[:, 1] == ckg.interact).all()


def test_ckg_hand_checked_toy():
    kg = _kg([(0, 0, 2), (1, 1, 3)])
    ckg = build_ckg([(0, 1), (1, 0)], 2, kg)
    # nodes: users 0,1 | items 2,3 | brand 4, cat 5
    expected = {(2, 0, 4), (3, 1, 5), (0, 2, 3), (1, 2, 2)}
    assert set(map(tuple, ckg.triples.tolist())) == expected
    assert ckg.relation_names == ["produced_by", "belongs_to", "interact"]
    assert ckg.node_types == ["user", "user", "item", "item", "brand", "category"]


def test_ckg_seven_relations_for_six_kg_relations():
    from firzen.kg import RELATIONS
    kg = KnowledgeGraph(["i0"], ["item"], list(RELATIONS), np.zeros((0, 3)), np.arange(1))
    assert build_ckg([(0, 0)], 1, kg).n_relations == 7


def test_ckg_unaligned_item():
    kg = _kg([])
    kg.item_alignment = np.array([0, -1])
    with pytest.raises(AlignmentError):
        build_ckg([(0, 0)], 1, kg)


def test_ckg_triple_count_law(tiny_world):
    b, kg, split = tiny_world["bundle"], tiny_world["kg"], tiny_world["split"]
    assert len(b.ckg.triples) == len(kg.triples) + len(split.train)


# bundle

def test_bundle_round_trip_is_exact(tmp_path, tiny_world):
    b = tiny_world["bundle"]
    save_bundle(b, tmp_path / "g.bin")
    back = load_bundle(tmp_path / "g.bin")
    for m in b.modalities:
        assert np.array_equal(dense(back.item_item_normalized[m]), dense(b.item_item_normalized[m]))
        assert np.array_equal(dense(back.inference_normalized[m]), dense(b.inference_normalized[m]))
    assert np.array_equal(dense(back.user_user), dense(b.user_user))
    assert np.array_equal(back.ckg.triples, b.ckg.triples)
    save_bundle(back, tmp_path / "h.bin")
    assert (tmp_path / "g.bin").read_bytes() == (tmp_path / "h.bin").read_bytes()


def test_frozen_graphs_reject_misaligned_features(tiny_world):
    feats = dict(tiny_world["features"])
    feats["text"] = FeatureMatrix("text", feats["text"].values[:-1])
    with pytest.raises(AlignmentError):
        build_frozen_graphs(tiny_world["split"], tiny_world["kg"], feats)
