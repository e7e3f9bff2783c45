"""Interaction data, feature matrices and the strict cold-start split protocol."""

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AlignmentError, DataError, EmptyDatasetError, ParseError

logger = logging.getLogger(__name__)

MODALITIES = ("text", "image")


@dataclass
class InteractionDataset:
    """Implicit-feedback interactions with dense user/item indices.

    ``user_vocab[i]`` is the raw id of user ``i`` (likewise for items);
    ``user_index`` / ``item_index`` give the reverse direction.
    """

    user_count: int
    item_count: int
    interactions: np.ndarray
    user_vocab: list
    item_vocab: list

    def __post_init__(self):
        self.interactions = np.asarray(self.interactions, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def user_index(self):
        return {raw: i for i, raw in enumerate(self.user_vocab)}

    @cached_property
    def item_index(self):
        return {raw: i for i, raw in enumerate(self.item_vocab)}

    def __len__(self):
        return len(self.interactions)

    def user_degrees(self):
        return np.bincount(self.interactions[:, 0], minlength=self.user_count)

    def item_degrees(self):
        return np.bincount(self.interactions[:, 1], minlength=self.item_count)

    def sparsity(self):
        cells = self.user_count * self.item_count
        return 1.0 - len(self.interactions) / cells if cells else 1.0


def dataset_from_pairs(raw_pairs):
    """Build a dataset from ``(raw_user, raw_item)`` pairs, dropping duplicates.

    Indices follow order of first appearance.
    """
    users, items = {}, {}
    seen = set()
    rows = []
    for raw_user, raw_item in raw_pairs:
        u = users.setdefault(raw_user, len(users))
        i = items.setdefault(raw_item, len(items))
        if (u, i) in seen:
            continue
        seen.add((u, i))
        rows.append((u, i))
    if not rows:
        raise EmptyDatasetError("dataset has no interactions")
    return InteractionDataset(len(users), len(items), np.array(rows, dtype=np.int64),
                              list(users), list(items))


def load_interactions(path, format="tsv"):
    """Read ``user<sep>item[<sep>timestamp]`` records.

    ``format`` is ``"tsv"`` or ``"csv"``. Blank lines and lines starting
    with ``#`` are skipped.
    """
    sep = {"tsv": "\t", "csv": ","}.get(format)
    if sep is None:
        raise ValueError(f"unknown interaction format {format!r}")
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split(sep)
            if len(parts) not in (2, 3) or not parts[0] or not parts[1]:
                raise ParseError(f"expected user{sep!r}item[{sep!r}timestamp], got {line!r}",
                                 line=lineno, path=path)
            if len(parts) == 3:
                try:
                    float(parts[2])
                except ValueError:
                    raise ParseError(f"bad timestamp {parts[2]!r}", line=lineno, path=path) from None
            pairs.append((parts[0], parts[1]))
    if not pairs:
        raise EmptyDatasetError(f"{path}: no interaction records")
    return dataset_from_pairs(pairs)


def write_interactions(ds, path):
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in ds.interactions:
            fh.write(f"{ds.user_vocab[u]}\t{ds.item_vocab[i]}\n")


def subset_dataset(ds, keep_rows):
    """Keep the given interaction rows and re-densify both index spaces."""
    kept = ds.interactions[keep_rows]
    if len(kept) == 0:
        raise EmptyDatasetError("no interactions left after filtering")
    users, u_new = np.unique(kept[:, 0], return_inverse=True)
    items, i_new = np.unique(kept[:, 1], return_inverse=True)
    return InteractionDataset(
        len(users), len(items), np.stack([u_new, i_new], axis=1),
        [ds.user_vocab[u] for u in users], [ds.item_vocab[i] for i in items])


def k_core_filter(ds, k=5):
    """Iteratively drop users with fewer than ``k`` interactions.

    Only users are filtered; items lose interactions as a side effect
    and vanish when none are left.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    keep = np.ones(len(ds.interactions), dtype=bool)
    while True:
        deg = np.bincount(ds.interactions[keep, 0], minlength=ds.user_count)
        weak = deg[ds.interactions[:, 0]] < k
        drop = keep & weak
        if not drop.any():
            break
        keep &= ~weak
    return subset_dataset(ds, keep)


@dataclass
class SplitSpec:
    """Item-level strict cold-start split plus per-user warm partitions.

    Interaction partitions are ``(n, 2)`` arrays of ``(user, item)``.
    """

    user_count: int
    item_count: int
    warm_items: np.ndarray
    cold_items: np.ndarray
    train: np.ndarray
    warm_val: np.ndarray
    warm_test: np.ndarray
    cold_val_items: np.ndarray
    cold_test_items: np.ndarray
    cold_val: np.ndarray
    cold_test: np.ndarray
    seed: int
    known_cold: np.ndarray = None
    unknown_cold: np.ndarray = None
    orphan_users: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def cold_mask(self):
        mask = np.zeros(self.item_count, dtype=bool)
        mask[self.cold_items] = True
        return mask

    def equals(self, other):
        names = ("warm_items", "cold_items", "train", "warm_val", "warm_test",
                 "cold_val_items", "cold_test_items", "cold_val", "cold_test",
                 "known_cold", "unknown_cold", "orphan_users")
        if (self.user_count, self.item_count, self.seed) != (other.user_count, other.item_count, other.seed):
            return False
        for name in names:
            a, b = getattr(self, name), getattr(other, name)
            if (a is None) != (b is None):
                return False
            if a is not None and not np.array_equal(a, b):
                return False
        return True


def cold_item_count(item_count, cold_fraction):
    # Table I of the source benchmark reports 2,421 cold of 12,101 items: a ceiling.
    return int(math.ceil(cold_fraction * item_count - 1e-9))


def _pairs(rows):
    if not rows:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.array(rows, dtype=np.int64).reshape(-1, 2)
    return arr[np.lexsort((arr[:, 1], arr[:, 0]))]


def build_strict_cold_splits(ds, cold_fraction=0.2, warm_ratios=(0.8, 0.1, 0.1), seed=0):
    if not 0.0 < cold_fraction < 1.0:
        raise ValueError("cold_fraction must be in (0, 1)")
    ratios = np.asarray(warm_ratios, dtype=float)
    if ratios.shape != (3,) or (ratios <= 0).any() or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError("warm_ratios must be three positive reals summing to 1")

    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.item_count)
    n_cold = cold_item_count(ds.item_count, cold_fraction)
    cold_perm = perm[:n_cold]
    n_cold_val = n_cold // 2
    cold_val_items = np.sort(cold_perm[:n_cold_val])
    cold_test_items = np.sort(cold_perm[n_cold_val:])
    cold_items = np.sort(cold_perm)
    warm_items = np.sort(perm[n_cold:])

    is_cold = np.zeros(ds.item_count, dtype=bool)
    is_cold[cold_items] = True
    is_cold_val = np.zeros(ds.item_count, dtype=bool)
    is_cold_val[cold_val_items] = True

    inter = ds.interactions[np.lexsort((ds.interactions[:, 1], ds.interactions[:, 0]))]
    touching_cold = is_cold[inter[:, 1]]
    cold_inter = inter[touching_cold]
    cold_val = _pairs(cold_inter[is_cold_val[cold_inter[:, 1]]].tolist())
    cold_test = _pairs(cold_inter[~is_cold_val[cold_inter[:, 1]]].tolist())

    warm_inter = inter[~touching_cold]
    train, val, test = [], [], []
    orphans = []
    starts = np.searchsorted(warm_inter[:, 0], np.arange(ds.user_count + 1))
    for u in range(ds.user_count):
        rows = warm_inter[starts[u]:starts[u + 1]]
        n = len(rows)
        if n == 0:
            orphans.append(u)
            continue
        rows = rows[rng.permutation(n)]
        if n < 3:
            train.extend(rows.tolist())
            continue
        n_val = max(1, int(math.floor(n * ratios[1] + 0.5)))
        n_test = max(1, int(math.floor(n * ratios[2] + 0.5)))
        n_train = n - n_val - n_test
        if n_train < 1:
            n_train, n_val, n_test = n - 2, 1, 1
        train.extend(rows[:n_train].tolist())
        val.extend(rows[n_train:n_train + n_val].tolist())
        test.extend(rows[n_train + n_val:].tolist())
    if orphans:
        logger.warning("%d users have no warm interactions after cold removal; kept with empty train",
                       len(orphans))
    return SplitSpec(
        user_count=ds.user_count, item_count=ds.item_count,
        warm_items=warm_items, cold_items=cold_items,
        train=_pairs(train), warm_val=_pairs(val), warm_test=_pairs(test),
        cold_val_items=cold_val_items, cold_test_items=cold_test_items,
        cold_val=cold_val, cold_test=cold_test, seed=seed,
        orphan_users=np.array(orphans, dtype=np.int64))


def build_normal_cold_splits(split, seed=0):
    """Split each cold item's interactions 1:1 into known and unknown halves.

    With an odd count the extra interaction goes to ``unknown`` so every
    cold item keeps at least one evaluation target.
    """
    if split.cold_val is None or split.cold_test is None:
        raise ValueError("split has no cold evaluation interactions")
    rng = np.random.default_rng(seed)
    known, unknown = [], []
    for part in (split.cold_val, split.cold_test):
        by_item = part[np.lexsort((part[:, 0], part[:, 1]))]
        items, starts = np.unique(by_item[:, 1], return_index=True)
        bounds = list(starts) + [len(by_item)]
        for j in range(len(items)):
            rows = by_item[bounds[j]:bounds[j + 1]]
            rows = rows[rng.permutation(len(rows))]
            n_known = len(rows) // 2
            known.extend(rows[:n_known].tolist())
            unknown.extend(rows[n_known:].tolist())
    out = SplitSpec(**{k: getattr(split, k) for k in split.__dataclass_fields__})
    out.known_cold = _pairs(known)
    out.unknown_cold = _pairs(unknown)
    return out


MANIFEST_HEADER = "# firzen split manifest v1"
_MANIFEST_SETS = ("warm_items", "cold_items", "cold_val_items", "cold_test_items", "orphan_users")
_MANIFEST_PAIRS = ("train", "warm_val", "warm_test", "cold_val", "cold_test", "known_cold", "unknown_cold")


def write_split_manifest(split, path, user_vocab=None, item_vocab=None):
    """Text manifest: a header, scalar lines, then ``[name] count`` sections.

    Pair sections hold one ``user<TAB>item`` (dense indices) per line.
    """
    lines = [MANIFEST_HEADER,
             f"seed\t{split.seed}",
             f"user_count\t{split.user_count}",
             f"item_count\t{split.item_count}"]
    for name in _MANIFEST_SETS:
        values = getattr(split, name)
        lines.append(f"[{name}]\t{len(values)}")
        lines.extend(str(int(v)) for v in values)
    for name in _MANIFEST_PAIRS:
        values = getattr(split, name)
        if values is None:
            continue
        lines.append(f"[{name}]\t{len(values)}")
        lines.extend(f"{int(u)}\t{int(i)}" for u, i in values)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_split_manifest(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MANIFEST_HEADER:
        raise ParseError("not a v1 split manifest", line=1, path=path)
    scalars = {}
    pos = 1
    while pos < len(lines) and not lines[pos].startswith("["):
        key, value = lines[pos].split("\t")
        scalars[key] = int(value)
        pos += 1
    sections = {}
    while pos < len(lines):
        head = lines[pos]
        try:
            name, count = head[1:].split("]\t")
            count = int(count)
        except ValueError:
            raise ParseError(f"bad section header {head!r}", line=pos + 1, path=path) from None
        body = lines[pos + 1:pos + 1 + count]
        if len(body) != count:
            raise ParseError(f"section {name} truncated", line=pos + 1, path=path)
        if name in _MANIFEST_SETS:
            sections[name] = np.array([int(x) for x in body], dtype=np.int64)
        else:
            sections[name] = np.array([[int(v) for v in x.split("\t")] for x in body],
                                      dtype=np.int64).reshape(-1, 2)
        pos += 1 + count
    return SplitSpec(user_count=scalars["user_count"], item_count=scalars["item_count"],
                     seed=scalars["seed"], **sections)


@dataclass
class FeatureMatrix:
    modality: str
    values: np.ndarray

    @property
    def dim(self):
        return self.values.shape[1]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise DataError("feature matrix must be 2-D")
        bad = ~np.isfinite(self.values).all(axis=1)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise DataError(f"{self.modality} features: non-finite value in row {row}", row=row)


def save_features(fm, path):
    values = np.ascontiguousarray(fm.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(f"{values.shape[0]} {values.shape[1]}\n".encode("ascii"))
        fh.write(values.tobytes())


def load_features(path, modality, expected_items=None):
    """Read a ``"rows cols\\n"`` header followed by row-major little-endian float32."""
    with open(path, "rb") as fh:
        header = fh.readline()
        body = fh.read()
    try:
        rows, cols = (int(x) for x in header.decode("ascii").split())
    except ValueError:
        raise ParseError(f"bad feature header {header[:40]!r}", line=1, path=path) from None
    if expected_items is not None and rows != expected_items:
        raise AlignmentError(f"{path}: {rows} feature rows but {expected_items} items")
    if len(body) != rows * cols * 4:
        raise ParseError(f"expected {rows * cols * 4} bytes of float32 data, found {len(body)}",
                         path=path)
    values = np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float32)
    return FeatureMatrix(modality, values)


def align_features(fm, item_vocab, source_vocab):
    """Reorder rows so row ``i`` belongs to ``item_vocab[i]``."""
    pos = {raw: j for j, raw in enumerate(source_vocab)}
    missing = [raw for raw in item_vocab if raw not in pos]
    if missing:
        raise AlignmentError(f"{len(missing)} items lack {fm.modality} features, e.g. {missing[0]!r}")
    return FeatureMatrix(fm.modality, fm.values[[pos[raw] for raw in item_vocab]])
