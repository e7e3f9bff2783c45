"""Build the frozen graphs for a small synthetic catalogue and look inside them.

Run: python demos/01_frozen_graphs.py
"""
import numpy as np

from firzen.data import build_strict_cold_splits
from firzen.graphs import build_frozen_graphs
from firzen.synthetic import SyntheticSpec, generate_synthetic

# 120 users, 80 items in 4 latent clusters; features and KG both encode the clusters
ds, kg, features, clusters = generate_synthetic(SyntheticSpec(n_users=120, n_items=80, n_clusters=4, seed=0))
split = build_strict_cold_splits(ds, cold_fraction=0.2, seed=0)
bundle = build_frozen_graphs(split, kg, features, k_item=5, k_user=5)

cold = bundle.cold_mask
warm = ~cold
print(f"{ds.user_count} users, {ds.item_count} items ({cold.sum()} strict cold), "
      f"{len(ds.interactions)} interactions, sparsity {100 * ds.sparsity():.2f}%")
print(f"collaborative KG: {bundle.ckg.n_nodes} nodes, {bundle.ckg.n_relations} relations, "
      f"{len(bundle.ckg.triples)} triples")

for m in bundle.modalities:
    train = bundle.item_item_binary[m].toarray()
    inference = bundle.inference_normalized[m].toarray()
    # training graph: cold rows and columns are empty
    assert train[cold].sum() == 0 and train[:, cold].sum() == 0
    # inference graph: cold items gain warm and cold neighbours, warm rows never point at cold items
    assert (inference[np.ix_(warm, cold)] == 0).all()
    neighbours = np.flatnonzero(inference[np.flatnonzero(cold)[0]])
    same = np.mean(clusters[neighbours] == clusters[np.flatnonzero(cold)[0]])
    print(f"[{m}] train edges {int(train.sum())}, inference edges {int((inference > 0).sum())}; "
          f"first cold item's neighbours share its cluster {same:.0%} of the time")

uu = bundle.user_user.toarray()
print(f"user-user graph: {int((uu > 0).sum())} edges, max co-interaction count {int(uu.max())}")
