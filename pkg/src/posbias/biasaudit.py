"""Locate answer spans inside relevant passages and histogram their relative start."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .corpus import AnswerSet, Collection, Qrels, tokenize, validate_qrels

DEFAULT_BINS = 20


@dataclass(frozen=True, order=True)
class AnswerMatch:
    query_id: str
    passage_id: str
    start: int  # 1-based token index
    length: int
    relative_position: float


@dataclass(frozen=True)
class PositionHistogram:
    bin_count: int
    counts: Tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.counts)

    @property
    def normalized(self) -> List[float]:
        total = self.total
        if total == 0:
            return [0.0] * self.bin_count
        return [c / total for c in self.counts]

    def edges(self) -> List[Tuple[float, float]]:
        return [(k / self.bin_count, (k + 1) / self.bin_count) for k in range(self.bin_count)]


def match_answer(passage_tokens: Sequence[str], answer_tokens: Sequence[str]) -> List[int]:
    """Return every 1-based start index where ``answer_tokens`` occurs contiguously.

    Overlapping occurrences are all reported.
    """
    m = len(answer_tokens)
    if m == 0:
        raise ValueError("answer token list is empty")
    p = list(passage_tokens)
    a = list(answer_tokens)
    first = a[0]
    return [i + 1 for i in range(len(p) - m + 1) if p[i] == first and p[i : i + m] == a]


def audit(
    collection: Collection, qrels: Qrels, answers: AnswerSet
) -> Tuple[List[AnswerMatch], int]:
    """Match every answer of every query against each of its relevant passages.

    Returns the matches sorted by (query, passage, start) and the number of
    queries with answers for which nothing matched.
    """
    validate_qrels(collection, qrels)
    matches: List[AnswerMatch] = []
    omitted = 0
    for qid in sorted(answers):
        relevant = [pid for pid, g in qrels.get(qid, {}).items() if g > 0]
        found = False
        for text in answers[qid]:
            atoks = tokenize(text)
            if not atoks:
                continue
            for pid in relevant:
                p = collection.lookup(pid)
                for s in match_answer(p.tokens, atoks):
                    matches.append(AnswerMatch(qid, pid, s, len(atoks), (s - 1) / p.n))
                    found = True
        if not found:
            omitted += 1
    matches.sort(key=lambda m: (m.query_id, m.passage_id, m.start, m.length))
    return matches, omitted


def histogram(positions, bin_count: int = DEFAULT_BINS) -> PositionHistogram:
    """Bin relative positions in [0, 1). Accepts AnswerMatch rows or bare floats."""
    if bin_count < 1:
        raise ValueError(f"bin_count must be >= 1, got {bin_count}")
    counts = [0] * bin_count
    for x in positions:
        rel = x.relative_position if isinstance(x, AnswerMatch) else float(x)
        k = min(int(math.floor(rel * bin_count)), bin_count - 1)
        counts[max(k, 0)] += 1
    return PositionHistogram(bin_count, tuple(counts))


def tv_from_uniform(hist: PositionHistogram) -> float:
    """Total-variation distance between the normalized histogram and the uniform one."""
    u = 1.0 / hist.bin_count
    return 0.5 * math.fsum(abs(f - u) for f in hist.normalized)


def write_matches_csv(matches: Sequence[AnswerMatch], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["qid", "pid", "start", "len", "relpos"])
        for m in matches:
            w.writerow([m.query_id, m.passage_id, m.start, m.length, repr(m.relative_position)])


def write_histogram_csv(hist: PositionHistogram, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bin_low", "bin_high", "count", "fraction"])
        for (lo, hi), c, frac in zip(hist.edges(), hist.counts, hist.normalized):
            w.writerow([repr(lo), repr(hi), c, repr(frac)])


def read_histogram_csv(path) -> PositionHistogram:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    return PositionHistogram(len(rows), tuple(int(r["count"]) for r in rows))
