"""Deterministic clustered datasets for desk-scale experiments.

Items belong to latent clusters. Each user prefers one or two clusters and
draws most interactions from them; features sit near per-cluster centroids
(text cleaner than image) and the knowledge graph links items to per-cluster
category and brand entities. Content and KG therefore carry real signal
about held-out cold items.
"""

from dataclasses import dataclass

import numpy as np

from .data import FeatureMatrix, InteractionDataset
from .errors import DataError
from .kg import KnowledgeGraph, RELATIONS


@dataclass
class SyntheticSpec:
    n_users: int = 100
    n_items: int = 50
    n_clusters: int = 5
    min_interactions: int = 8
    max_interactions: int = 16
    in_cluster_prob: float = 0.9
    second_cluster_prob: float = 0.3
    text_dim: int = 16
    image_dim: int = 24
    text_noise: float = 0.6
    image_noise: float = 1.0
    brands_per_cluster: int = 2
    k_core: int = 5
    seed: int = 0
    max_retries: int = 10


def _attempt(spec, rng):
    clusters = np.arange(spec.n_items) % spec.n_clusters
    clusters = clusters[rng.permutation(spec.n_items)]
    members = [np.flatnonzero(clusters == c) for c in range(spec.n_clusters)]

    pairs = []
    for u in range(spec.n_users):
        liked = [int(rng.integers(spec.n_clusters))]
        if spec.n_clusters > 1 and rng.random() < spec.second_cluster_prob:
            other = int(rng.integers(spec.n_clusters - 1))
            liked.append(other + (other >= liked[0]))
        pool_in = np.concatenate([members[c] for c in liked])
        pool_out = np.setdiff1d(np.arange(spec.n_items), pool_in)
        n = int(rng.integers(spec.min_interactions, spec.max_interactions + 1))
        n_in = min(len(pool_in), int(rng.binomial(n, spec.in_cluster_prob)))
        n_out = min(len(pool_out), n - n_in)
        chosen = list(rng.choice(pool_in, size=n_in, replace=False))
        if n_out:
            chosen += list(rng.choice(pool_out, size=n_out, replace=False))
        pairs.extend((u, int(i)) for i in sorted(chosen))
    return clusters, np.array(pairs, dtype=np.int64)


def _features(spec, clusters, rng, dim, noise, modality):
    centroids = rng.normal(size=(spec.n_clusters, dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    values = centroids[clusters] + noise * rng.normal(size=(spec.n_items, dim)) / np.sqrt(dim)
    return FeatureMatrix(modality, values.astype(np.float32))


def generate_synthetic(spec):
    """Return ``(dataset, knowledge_graph, {"text": ..., "image": ...}, clusters)``."""
    if spec.min_interactions > spec.max_interactions:
        raise ValueError("min_interactions exceeds max_interactions")
    rng = np.random.default_rng(spec.seed)
    for _ in range(spec.max_retries):
        clusters, pairs = _attempt(spec, rng)
        deg_u = np.bincount(pairs[:, 0], minlength=spec.n_users)
        deg_i = np.bincount(pairs[:, 1], minlength=spec.n_items)
        if deg_u.min() >= spec.k_core and deg_i.min() >= 1:
            break
    else:
        raise DataError(f"could not generate a {spec.k_core}-core dataset in {spec.max_retries} tries")

    ds = InteractionDataset(spec.n_users, spec.n_items, pairs,
                            [f"u{u}" for u in range(spec.n_users)],
                            [f"i{i}" for i in range(spec.n_items)])

    names = [f"i{i}" for i in range(spec.n_items)]
    types = ["item"] * spec.n_items
    category = []
    for c in range(spec.n_clusters):
        names.append(f"cat{c}")
        types.append("category")
        category.append(len(names) - 1)
    brand = []
    for c in range(spec.n_clusters):
        row = []
        for k in range(spec.brands_per_cluster):
            names.append(f"brand{c}_{k}")
            types.append("brand")
            row.append(len(names) - 1)
        brand.append(row)
    rel = {r: j for j, r in enumerate(RELATIONS)}
    triples = []
    for i, c in enumerate(clusters):
        triples.append((i, rel["belongs_to"], category[c]))
        triples.append((i, rel["produced_by"], brand[c][int(rng.integers(spec.brands_per_cluster))]))
    kg = KnowledgeGraph(names, types, list(RELATIONS), np.array(triples), np.arange(spec.n_items))

    features = {
        "text": _features(spec, clusters, rng, spec.text_dim, spec.text_noise, "text"),
        "image": _features(spec, clusters, rng, spec.image_dim, spec.image_noise, "image"),
    }
    return ds, kg, features, clusters
