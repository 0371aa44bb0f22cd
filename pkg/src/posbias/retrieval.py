"""In-memory BM25 first-stage retrieval."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .corpus import Collection

K1 = 0.9
B = 0.4


@dataclass
class InvertedIndex:
    postings: Dict[str, List[Tuple[int, int]]]  # term -> [(ordinal, tf)] sorted by ordinal
    doc_lengths: np.ndarray
    avg_length: float
    ids: List[str]
    k1: float = K1
    b: float = B

    @property
    def n_docs(self) -> int:
        return len(self.ids)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def cf(self, term: str) -> int:
        return sum(tf for _, tf in self.postings.get(term, ()))

    def idf(self, term: str) -> float:
        df = self.df(term)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_index(collection: Collection, k1: float = K1, b: float = B) -> InvertedIndex:
    if len(collection) == 0:
        raise ValueError("cannot index an empty collection")
    postings: Dict[str, List[Tuple[int, int]]] = {}
    lengths = np.empty(len(collection), dtype=np.int64)
    for k, p in enumerate(collection):
        lengths[k] = p.n
        tf: Dict[str, int] = {}
        for t in p.tokens:
            tf[t] = tf.get(t, 0) + 1
        for t, c in tf.items():
            postings.setdefault(t, []).append((k, c))
    return InvertedIndex(postings, lengths, float(lengths.mean()), collection.ids, k1, b)


def bm25_search(index: InvertedIndex, query_tokens: Sequence[str], k: int) -> List[Tuple[str, float]]:
    """Top-k (pid, score) by BM25; ties go to the smaller passage id.

    Repeated query terms contribute once per occurrence.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    scores = np.zeros(index.n_docs)
    touched = np.zeros(index.n_docs, dtype=bool)
    norm = index.k1 * (1.0 - index.b + index.b * index.doc_lengths / index.avg_length)
    for t in query_tokens:
        plist = index.postings.get(t)
        if not plist:
            continue
        ords = np.fromiter((o for o, _ in plist), dtype=np.int64, count=len(plist))
        tfs = np.fromiter((c for _, c in plist), dtype=np.float64, count=len(plist))
        scores[ords] += index.idf(t) * tfs * (index.k1 + 1.0) / (tfs + norm[ords])
        touched[ords] = True
    hits = np.flatnonzero(touched)
    ranked = sorted(hits.tolist(), key=lambda o: (-scores[o], index.ids[o]))
    return [(index.ids[o], float(scores[o])) for o in ranked[:k]]
