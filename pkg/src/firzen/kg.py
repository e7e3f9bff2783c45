"""Item knowledge graphs: construction from metadata, TSV I/O and noise injection."""

import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AlignmentError, ParseError

logger = logging.getLogger(__name__)

ENTITY_TYPES = ("item", "brand", "category", "word", "external")
RELATIONS = ("described_by", "belongs_to", "produced_by", "also_bought", "also_viewed",
             "bought_together")
ITEM_ITEM_RELATIONS = ("also_bought", "also_viewed", "bought_together")


@dataclass
class KnowledgeGraph:
    """Typed entities, relations and ``(head, relation, tail)`` index triples.

    ``item_alignment[i]`` is the entity index of dataset item ``i``.
    """

    entity_names: list
    entity_types: list
    relation_names: list
    triples: np.ndarray
    item_alignment: np.ndarray
    _lookup: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.item_alignment = np.asarray(self.item_alignment, dtype=np.int64)

    @property
    def n_entities(self):
        return len(self.entity_names)

    @property
    def n_relations(self):
        return len(self.relation_names)

    @cached_property
    def entity_index(self):
        return {(t, n): i for i, (t, n) in enumerate(zip(self.entity_types, self.entity_names))}

    def entities_of_type(self, etype):
        return np.array([i for i, t in enumerate(self.entity_types) if t == etype], dtype=np.int64)

    def validate(self):
        if len(self.triples):
            if self.triples[:, [0, 2]].min() < 0 or self.triples[:, [0, 2]].max() >= self.n_entities:
                raise AlignmentError("triple references an entity outside the vocabulary")
            if self.triples[:, 1].min() < 0 or self.triples[:, 1].max() >= self.n_relations:
                raise AlignmentError("triple references an unknown relation")
        aligned = self.item_alignment[self.item_alignment >= 0]
        if len(np.unique(aligned)) != len(aligned):
            raise AlignmentError("two items aligned to the same entity")


class _Builder:
    def __init__(self, relations=RELATIONS):
        self.names, self.types = [], []
        self.index = {}
        self.relations = list(relations)
        self.rel_index = {r: j for j, r in enumerate(self.relations)}
        self.triples = []
        self.seen = set()

    def entity(self, etype, name):
        key = (etype, name)
        idx = self.index.get(key)
        if idx is None:
            idx = self.index[key] = len(self.names)
            self.names.append(name)
            self.types.append(etype)
        return idx

    def add(self, h, rel, t):
        if rel not in self.rel_index:
            self.rel_index[rel] = len(self.relations)
            self.relations.append(rel)
        triple = (h, self.rel_index[rel], t)
        if triple not in self.seen:
            self.seen.add(triple)
            self.triples.append(triple)

    def build(self, alignment):
        return KnowledgeGraph(self.names, self.types, self.relations,
                              np.array(self.triples, dtype=np.int64).reshape(-1, 3),
                              np.asarray(alignment, dtype=np.int64))


_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text):
    return _TOKEN.findall(text.lower())


def select_words(documents, freq_bounds=(10, 1000), tfidf_threshold=0.1):
    """Words whose corpus frequency lies in ``freq_bounds`` (inclusive) and whose
    mean tf*idf over the documents containing them exceeds the threshold.

    tf is the raw count in a document, idf is ``log(N / df)``.
    """
    lo, hi = freq_bounds
    tokenized = [Counter(tokenize(doc)) for doc in documents if doc]
    n_docs = len(tokenized)
    corpus = Counter()
    df = Counter()
    for counts in tokenized:
        corpus.update(counts)
        df.update(counts.keys())
    score_sum = defaultdict(float)
    for counts in tokenized:
        for word, tf in counts.items():
            score_sum[word] += tf * math.log(n_docs / df[word])
    keep = set()
    for word, freq in corpus.items():
        if lo <= freq <= hi and score_sum[word] / df[word] > tfidf_threshold:
            keep.add(word)
    return keep


def _as_list(value):
    if value is None:
        return []
    if isinstance(value, str):
        return [value] if value else []
    out = []
    for v in value:
        out.extend(_as_list(v))
    return out


def construct_kg_from_metadata(item_ids, metadata, word_freq_bounds=(10, 1000), tfidf_threshold=0.1):
    """Knowledge graph over items with brand/category/word/item-item relations.

    ``item_ids`` lists raw item ids in dataset index order. ``metadata`` maps
    raw id to a record with any of ``brand``, ``categories``, ``description``,
    ``also_bought``, ``also_viewed``, ``bought_together``. Item-item links
    to ids outside ``item_ids`` are dropped.
    """
    b = _Builder()
    alignment = [b.entity("item", raw) for raw in item_ids]
    known = set(item_ids)
    descriptions = [(metadata.get(raw) or {}).get("description") or "" for raw in item_ids]
    words = select_words(descriptions, word_freq_bounds, tfidf_threshold)

    for idx, raw in enumerate(item_ids):
        rec = metadata.get(raw)
        h = alignment[idx]
        if not rec:
            logger.warning("item %r has no metadata; aligned entity has no triples", raw)
            continue
        for brand in _as_list(rec.get("brand")):
            b.add(h, "produced_by", b.entity("brand", brand))
        for cat in _as_list(rec.get("categories")):
            b.add(h, "belongs_to", b.entity("category", cat))
        for word in sorted(set(tokenize(rec.get("description") or ""))):
            if word in words:
                b.add(h, "described_by", b.entity("word", word))
        for rel in ITEM_ITEM_RELATIONS:
            for other in _as_list(rec.get(rel)):
                if other in known and other != raw:
                    b.add(h, rel, b.entity("item", other))
    return b.build(alignment)


def write_kg_tsv(kg, path):
    """``type:name<TAB>relation<TAB>type:name`` per triple."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in kg.triples:
            fh.write(f"{kg.entity_types[h]}:{kg.entity_names[h]}\t{kg.relation_names[r]}\t"
                     f"{kg.entity_types[t]}:{kg.entity_names[t]}\n")


def _split_entity(token, lineno, path):
    etype, sep, name = token.partition(":")
    if not sep or not name:
        raise ParseError(f"entity {token!r} is not of the form type:name", line=lineno, path=path)
    return etype, name


def read_kg_tsv(path, item_vocab):
    """Read triples; items are aligned through entities named ``item:<raw id>``.

    Duplicate lines are preserved (noise-injected graphs rely on this).
    """
    b = _Builder(relations=())
    alignment = [b.entity("item", raw) for raw in item_vocab]
    triples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected head<TAB>relation<TAB>tail", line=lineno, path=path)
            h = b.entity(*_split_entity(parts[0], lineno, path))
            t = b.entity(*_split_entity(parts[2], lineno, path))
            if parts[1] not in b.rel_index:
                b.rel_index[parts[1]] = len(b.relations)
                b.relations.append(parts[1])
            triples.append((h, b.rel_index[parts[1]], t))
    return KnowledgeGraph(b.names, b.types, b.relations,
                          np.array(triples, dtype=np.int64).reshape(-1, 3), np.array(alignment))


def restrict_kg_to_items(kg, item_vocab):
    """Re-align a graph after the item set changed (e.g. after k-core)."""
    alignment = []
    for raw in item_vocab:
        idx = kg.entity_index.get(("item", raw))
        if idx is None:
            raise AlignmentError(f"item {raw!r} has no entity in the knowledge graph")
        alignment.append(idx)
    return KnowledgeGraph(list(kg.entity_names), list(kg.entity_types), list(kg.relation_names),
                          kg.triples.copy(), np.array(alignment, dtype=np.int64))


NOISE_MODES = ("outlier", "duplicate", "discrepancy")


def inject_kg_noise(kg, mode, fraction=0.2, seed=0):
    """Append ``round(fraction * |triples|)`` noisy triples.

    outlier:      copy of a sampled triple whose tail is a brand-new entity of
                  the same type as the original tail.
    duplicate:    exact copy of a sampled triple.
    discrepancy:  sampled triple with its tail swapped for a different existing
                  entity of the same type. Triples whose tail type has a single
                  entity are skipped and another triple is drawn instead.
    """
    if mode not in NOISE_MODES:
        raise ValueError(f"noise mode must be one of {NOISE_MODES}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    n_in = len(kg.triples)
    n_new = int(round(fraction * n_in))
    names, types = list(kg.entity_names), list(kg.entity_types)
    new = []

    if mode == "discrepancy":
        by_type = defaultdict(list)
        for idx, t in enumerate(types):
            by_type[t].append(idx)
        eligible = np.array([j for j, t in enumerate(kg.triples[:, 2]) if len(by_type[types[t]]) > 1],
                            dtype=np.int64)
        skipped = n_in - len(eligible)
        if skipped:
            logger.info("discrepancy noise: %d triples have a single-entity tail type; skipped",
                        skipped)
        if n_new and not len(eligible):
            raise ValueError("no triple has a tail type with more than one entity")
        picks = eligible[rng.choice(len(eligible), size=n_new, replace=n_new > len(eligible))] if n_new else []
        for j in picks:
            h, r, t = kg.triples[j]
            pool = by_type[types[t]]
            k = int(rng.integers(len(pool) - 1))
            if k >= pool.index(t):
                k += 1
            new.append((h, r, pool[k]))
    else:
        picks = rng.choice(n_in, size=n_new, replace=n_new > n_in) if n_new else []
        for k, j in enumerate(picks):
            h, r, t = kg.triples[j]
            if mode == "duplicate":
                new.append((h, r, t))
            else:
                names.append(f"noise-{k}")
                types.append(types[t])
                new.append((h, r, len(names) - 1))

    triples = np.concatenate([kg.triples, np.array(new, dtype=np.int64).reshape(-1, 3)])
    return KnowledgeGraph(names, types, list(kg.relation_names), triples, kg.item_alignment.copy())
