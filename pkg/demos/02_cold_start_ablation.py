"""Train full Firzen and a behaviour-only ablation; compare cold and warm R@20.

At 600 users / 600 items with half the items cold, the cold test pool has
150 items, so a random ranking scores about 0.13. Takes about a minute on
one core.

Run: python demos/02_cold_start_ablation.py
"""
import time

import torch

from firzen.data import build_strict_cold_splits
from firzen.evaluation import evaluate_embeddings, harmonic_mean
from firzen.graphs import build_frozen_graphs
from firzen.model import Ablation
from firzen.synthetic import SyntheticSpec, generate_synthetic
from firzen.trainer import Trainer, TrainingConfig

torch.set_num_threads(1)
ds, kg, features, _ = generate_synthetic(SyntheticSpec(n_users=600, n_items=600, n_clusters=6, seed=0))
split = build_strict_cold_splits(ds, cold_fraction=0.5, seed=0)
cfg = TrainingConfig()
bundle = build_frozen_graphs(split, kg, features, cfg.K_item, cfg.K_user)

variants = {
    "full": Ablation(),
    "BA only": Ablation(ka=False, ma_text=False, ma_image=False, ms=False),
    "KA only": Ablation(ba=False, ma_text=False, ma_image=False, ms=False),
    "w/o MS": Ablation(ms=False),
}
print(f"{'variant':10s} {'cold R@20':>10s} {'warm R@20':>10s} {'HM':>8s} {'epochs':>7s} {'sec':>6s}")
for name, ablation in variants.items():
    start = time.perf_counter()
    trainer = Trainer(bundle, split, features, cfg, ablation)
    trainer.fit()
    users, items = trainer.embeddings()
    cold = evaluate_embeddings(users, items, split, "cold", 20)
    warm = evaluate_embeddings(users, items, split, "warm", 20)
    hm = harmonic_mean(cold, warm)
    print(f"{name:10s} {cold.recall:10.4f} {warm.recall:10.4f} {hm.recall:8.4f} {trainer.epoch:7d} "
          f"{time.perf_counter() - start:6.1f}")
