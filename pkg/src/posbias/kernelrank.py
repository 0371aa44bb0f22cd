"""Kernel-pooled scoring over a query x passage cosine match matrix.

Each cosine is soft-binned by K Gaussian kernels; kernel activations are
summed over passage terms, log-activated, summed over query terms and the
resulting K features are combined linearly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .evalmetrics import RunEntry
from .tkmodel import contextualize

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class KernelConfig:
    mus: Tuple[float, ...] = field(default_factory=lambda: tuple(np.linspace(-1.0, 1.0, 11).tolist()))
    sigma: float = 0.1

    def __post_init__(self):
        mus = tuple(float(m) for m in self.mus)
        object.__setattr__(self, "mus", mus)
        if not mus:
            raise ValueError("need at least one kernel")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if any(b <= a for a, b in zip(mus, mus[1:])):
            raise ValueError("kernel centers must be strictly increasing")

    @classmethod
    def evenly_spaced(cls, k: int = 11, sigma: float = 0.1) -> "KernelConfig":
        return cls(tuple(np.linspace(-1.0, 1.0, k).tolist()), sigma)

    @property
    def k(self) -> int:
        return len(self.mus)


@dataclass(frozen=True)
class ScoreWeights:
    w: Tuple[float, ...]
    bias: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "w", tuple(float(x) for x in self.w))
        if not np.all(np.isfinite(self.w)) or not np.isfinite(self.bias):
            raise ValueError("score weights must be finite")

    @classmethod
    def uniform(cls, k: int) -> "ScoreWeights":
        return cls((1.0 / k,) * k)


def cosine_matrix(qvecs, pvecs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cosine of every (query, passage) vector pair plus zero-vector masks.

    Rows or columns belonging to zero vectors get cosine 0.
    """
    q = np.atleast_2d(np.asarray(qvecs, dtype=np.float64))
    p = np.atleast_2d(np.asarray(pvecs, dtype=np.float64))
    if q.shape[0] == 0 or p.shape[0] == 0 or q.size == 0 or p.size == 0:
        raise ValueError("query and passage vector sequences must be non-empty")
    if q.shape[1] != p.shape[1]:
        raise ValueError(f"vector widths differ: {q.shape[1]} vs {p.shape[1]}")
    qn = np.linalg.norm(q, axis=1)
    pn = np.linalg.norm(p, axis=1)
    qz, pz = qn == 0, pn == 0
    qn[qz] = 1.0
    pn[pz] = 1.0
    cos = (q / qn[:, None]) @ (p / pn[:, None]).T
    cos[qz, :] = 0.0
    cos[:, pz] = 0.0
    return np.clip(cos, -1.0, 1.0), qz, pz


def activations_from_cosine(cos: np.ndarray, config: KernelConfig) -> np.ndarray:
    mus = np.asarray(config.mus)[:, None, None]
    return np.exp(-((cos[None, :, :] - mus) ** 2) / (2.0 * config.sigma**2))


def kernel_activations(qvecs, pvecs, config: KernelConfig) -> np.ndarray:
    """Array of shape (K, |q|, |p|) with entries in (0, 1]."""
    cos, _, _ = cosine_matrix(qvecs, pvecs)
    return activations_from_cosine(cos, config)


def kernel_features(qvecs, pvecs, config: KernelConfig) -> np.ndarray:
    """Per kernel: sum over query terms of log(max(sum over passage terms, 1e-10))."""
    act = kernel_activations(qvecs, pvecs, config)
    return np.log(np.maximum(act.sum(axis=2), LOG_FLOOR)).sum(axis=1)


def score(qvecs, pvecs, config: KernelConfig, weights: Optional[ScoreWeights] = None) -> float:
    if weights is None:
        weights = ScoreWeights.uniform(config.k)
    if len(weights.w) != config.k:
        raise ValueError(f"{len(weights.w)} weights for {config.k} kernels")
    feats = kernel_features(qvecs, pvecs, config)
    return float(feats @ np.asarray(weights.w) + weights.bias)


def rerank(
    qid: str,
    candidates: Sequence[Tuple[str, float]],
    scorer: Callable[[str], float],
    depth: int,
    tag: str = "tk",
) -> List[RunEntry]:
    """Re-score the top ``depth`` candidates and sort them by descending score.

    ``candidates`` are (pid, first-stage score) in first-stage order;
    ``scorer`` maps a pid to its new score. Ties keep first-stage order.
    Candidates below the depth follow in their original order with scores
    stepped down from the lowest re-ranked score so the run stays descending.
    """
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    if not candidates:
        return []
    head = list(candidates[:depth])
    scored = [(scorer(pid), prior, pid) for prior, (pid, _) in enumerate(head)]
    scored.sort(key=lambda t: (-t[0], t[1]))
    out = [(pid, s) for s, _, pid in scored]
    floor = scored[-1][0]
    out += [(pid, floor - k) for k, (pid, _) in enumerate(candidates[depth:], start=1)]
    return [RunEntry(qid, pid, rank, float(s), tag) for rank, (pid, s) in enumerate(out, start=1)]


class TKScorer:
    """Encode query and passages with one encoder and score them by kernel pooling."""

    def __init__(self, table, params, config: Optional[KernelConfig] = None, weights: Optional[ScoreWeights] = None):
        self.table = table
        self.params = params
        self.config = config or KernelConfig()
        self.weights = weights or ScoreWeights.uniform(self.config.k)

    def encode(self, tokens, role):
        return contextualize(tokens, role, self.table, self.params).vectors

    def for_query(self, query_tokens, collection) -> Callable[[str], float]:
        qvecs = self.encode(query_tokens, "query")

        def _score(pid: str) -> float:
            pvecs = self.encode(collection.lookup(pid).tokens, "passage")
            return score(qvecs, pvecs, self.config, self.weights)

        return _score


def rerank_query(query, candidates, collection, tk: TKScorer, depth: int, tag: str = "tk") -> List[RunEntry]:
    return rerank(query.id, candidates, tk.for_query(query.tokens, collection), depth, tag)
