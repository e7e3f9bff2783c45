"""All-ranking evaluation: candidate pools, top-K metrics and harmonic means."""

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

METRICS = ("recall", "mrr", "ndcg", "hit", "precision")
SHORT = {"recall": "R", "mrr": "M", "ndcg": "N", "hit": "H", "precision": "P"}
SETTINGS = ("cold", "warm", "hm", "normal_cold")


@dataclass
class MetricsReport:
    setting: str
    k: int
    recall: float
    mrr: float
    ndcg: float
    hit: float
    precision: float
    n_users: int = 0
    n_excluded: int = 0
    per_user: dict = field(default=None, repr=False)

    def as_dict(self):
        return {m: getattr(self, m) for m in METRICS}

    def lines(self, percent=True):
        scale = 100.0 if percent else 1.0
        return [f"{self.setting}\t{SHORT[m]}@{self.k}\t{self.k}\t{getattr(self, m) * scale:.4f}"
                for m in METRICS]


def rank_candidates(user_vecs, item_vecs, candidates, k, exclude=None):
    """Top-``k`` candidate items per user by inner product.

    ``candidates`` is a sorted array of item indices shared by all users;
    ``exclude[j]`` optionally lists items to drop for user row ``j``. Ties
    go to the smaller item index. Returns a list of item-index arrays.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    order_ok = np.all(np.diff(candidates) > 0)
    if not order_ok:
        candidates = np.unique(candidates)
    scores = np.asarray(user_vecs, dtype=np.float64) @ np.asarray(item_vecs, dtype=np.float64)[candidates].T
    scores = np.atleast_2d(scores)
    pos = {int(c): j for j, c in enumerate(candidates)}
    valid = np.ones(scores.shape, dtype=bool)
    if exclude is not None:
        for row, items in enumerate(exclude):
            cols = [pos[i] for i in items if i in pos]
            valid[row, cols] = False
    scores = np.where(valid, scores, -np.inf)
    order = np.argsort(-scores, axis=1, kind="stable")
    out = []
    for row in range(scores.shape[0]):
        n_valid = int(valid[row].sum())
        out.append(candidates[order[row, :min(k, n_valid)]])
    return out


def user_metrics(ranked, relevant, k):
    """Recall, MRR, NDCG, hit and precision for one ranked list (binary gains)."""
    top = list(ranked[:k])
    hits = [1 if item in relevant else 0 for item in top]
    n_hit = sum(hits)
    first = next((r for r, h in enumerate(hits, 1) if h), None)
    dcg = sum(h / math.log2(r + 1) for r, h in enumerate(hits, 1))
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(len(relevant), k) + 1))
    return {
        "recall": n_hit / len(relevant),
        "mrr": 1.0 / first if first else 0.0,
        "ndcg": dcg / idcg if idcg else 0.0,
        "hit": 1.0 if n_hit else 0.0,
        "precision": n_hit / k,
    }


def metrics_at_k(rankings, ground_truth, k, setting="warm", keep_per_user=False):
    """Mean per-user metrics. Users with empty ground truth are skipped and counted."""
    totals = defaultdict(float)
    per_user = {} if keep_per_user else None
    n, excluded = 0, 0
    users = rankings.keys() if isinstance(rankings, dict) else range(len(rankings))
    for u in users:
        rel = ground_truth[u]
        if not rel:
            excluded += 1
            continue
        m = user_metrics(rankings[u], set(rel), k)
        for name, v in m.items():
            totals[name] += v
        if per_user is not None:
            per_user[u] = m
        n += 1
    means = {name: (totals[name] / n if n else 0.0) for name in METRICS}
    return MetricsReport(setting, k, n_users=n, n_excluded=excluded, per_user=per_user, **means)


def _hm(c, w):
    return 0.0 if c <= 0 or w <= 0 else 2.0 * c * w / (c + w)


def harmonic_mean(cold, warm):
    if cold.k != warm.k:
        raise ValueError("harmonic mean needs reports at the same K")
    return MetricsReport("hm", cold.k, **{m: _hm(getattr(cold, m), getattr(warm, m)) for m in METRICS})


def _group(pairs):
    out = defaultdict(set)
    for u, i in np.asarray(pairs, dtype=np.int64).reshape(-1, 2):
        out[int(u)].add(int(i))
    return out


def evaluation_pool(split, setting, stage="test"):
    """``(candidates, ground_truth, exclude)`` for one setting.

    warm: warm items minus the user's training items; targets from the warm
    val/test partition. cold: the cold items of the stage's half; targets
    are their interactions. normal_cold: same pool, minus the user's known
    interactions; targets are the unknown half.
    """
    train = _group(split.train)
    if setting == "warm":
        targets = _group(split.warm_val if stage == "val" else split.warm_test)
        candidates = split.warm_items
        exclude = train
    elif setting in ("cold", "normal_cold"):
        candidates = split.cold_val_items if stage == "val" else split.cold_test_items
        cold_pairs = split.cold_val if stage == "val" else split.cold_test
        exclude = {}
        if setting == "normal_cold":
            if split.unknown_cold is None:
                raise ValueError("split has no known/unknown cold partition")
            in_pool = np.isin(split.unknown_cold[:, 1], candidates)
            cold_pairs = split.unknown_cold[in_pool]
            exclude = _group(split.known_cold)
        targets = _group(cold_pairs)
    else:
        raise ValueError(f"unknown setting {setting!r}")
    return np.asarray(candidates, dtype=np.int64), targets, exclude


def evaluate_embeddings(user_final, item_final, split, setting, k=20, stage="test", keep_per_user=False,
                        chunk=1024):
    candidates, targets, exclude = evaluation_pool(split, setting, stage)
    users = sorted(u for u, rel in targets.items() if rel)
    if not users:
        return MetricsReport(setting, k, 0.0, 0.0, 0.0, 0.0, 0.0)
    user_final = np.asarray(user_final)
    rankings = {}
    for lo in range(0, len(users), chunk):
        part = users[lo:lo + chunk]
        ranked = rank_candidates(user_final[part], item_final, candidates, k,
                                 [exclude.get(u, ()) for u in part])
        rankings.update(zip(part, ranked))
    return metrics_at_k(rankings, {u: targets[u] for u in users}, k, setting, keep_per_user)


def format_reports(reports, percent=True):
    lines = []
    for rep in reports:
        lines.extend(rep.lines(percent))
    return "\n".join(lines)


def write_report_table(reports, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("setting\tk\t" + "\t".join(METRICS) + "\tn_users\n")
        for rep in reports:
            fh.write(f"{rep.setting}\t{rep.k}\t" + "\t".join(f"{getattr(rep, m):.10f}" for m in METRICS)
                     + f"\t{rep.n_users}\n")
