"""Run-file evaluation: MRR/nDCG/Recall at a cutoff, run comparison, Wilcoxon test."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .corpus import Qrels
from .errors import ParseError

METRICS = ("mrr", "ndcg", "recall")


class RunEntry(NamedTuple):
    qid: str
    pid: str
    rank: int
    score: float
    tag: str


Run = Dict[str, List[RunEntry]]


def ranked_entries(qid: str, scored: Iterable[Tuple[str, float]], tag: str) -> List[RunEntry]:
    """Number already-ordered (pid, score) pairs 1..n."""
    return [RunEntry(qid, pid, k, float(s), tag) for k, (pid, s) in enumerate(scored, start=1)]


def read_run(path) -> Run:
    """Read a 6-column TREC run; entries per query come back sorted by rank."""
    run: Run = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            cols = line.split()
            if not cols:
                continue
            if len(cols) != 6:
                raise ParseError(f"expected 6 columns, got {len(cols)}", path, lineno)
            qid, _, pid, rank_s, score_s, tag = cols
            try:
                entry = RunEntry(qid, pid, int(rank_s), float(score_s), tag)
            except ValueError:
                raise ParseError("rank must be an integer and score a number", path, lineno) from None
            run.setdefault(qid, []).append(entry)
    for qid, entries in run.items():
        entries.sort(key=lambda e: e.rank)
        if len({e.rank for e in entries}) != len(entries):
            raise ParseError(f"duplicate ranks for query {qid!r}", path)
    return run


def write_run(run: Mapping[str, Sequence[RunEntry]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for entries in run.values():
            for e in entries:
                f.write(f"{e.qid} Q0 {e.pid} {e.rank} {e.score!r} {e.tag}\n")


@dataclass
class MetricSlice:
    name: str
    k: int
    per_query: Dict[str, float]
    excluded: List[str] = field(default_factory=list)  # run queries without relevant judgments

    @property
    def mean(self) -> float:
        if not self.per_query:
            return 0.0
        return math.fsum(self.per_query.values()) / len(self.per_query)


@dataclass
class MetricReport:
    k: int
    slices: Dict[str, MetricSlice]

    def __getitem__(self, name: str) -> MetricSlice:
        return self.slices[name]

    @property
    def means(self) -> Dict[str, float]:
        return {name: s.mean for name, s in self.slices.items()}

    @property
    def queries(self) -> List[str]:
        return sorted(next(iter(self.slices.values())).per_query)


def _top_k_pids(entries: Sequence[RunEntry], k: int) -> List[str]:
    seen, out = set(), []
    for e in entries:
        if e.pid in seen:
            continue
        seen.add(e.pid)
        out.append(e.pid)
        if len(out) == k:
            break
    return out


def _per_query(name, run, qrels, k, fn) -> MetricSlice:
    if k < 1:
        raise ValueError(f"cutoff k must be >= 1, got {k}")
    values, excluded = {}, []
    for qid, entries in run.items():
        judged = qrels.get(qid, {})
        relevant = {pid: g for pid, g in judged.items() if g > 0}
        if not relevant:
            excluded.append(qid)
            continue
        values[qid] = fn(_top_k_pids(entries, k), relevant, k)
    return MetricSlice(name, k, values, excluded)


def _rr(top, relevant, k):
    for i, pid in enumerate(top, start=1):
        if pid in relevant:
            return 1.0 / i
    return 0.0


def _ndcg(top, relevant, k):
    dcg = math.fsum(relevant.get(pid, 0) / math.log2(i + 1) for i, pid in enumerate(top, start=1))
    ideal = sorted(relevant.values(), reverse=True)[:k]
    idcg = math.fsum(g / math.log2(i + 1) for i, g in enumerate(ideal, start=1))
    return dcg / idcg


def _recall(top, relevant, k):
    return sum(1 for pid in top if pid in relevant) / len(relevant)


def mrr_at(run: Run, qrels: Qrels, k: int = 10) -> MetricSlice:
    return _per_query("mrr", run, qrels, k, _rr)


def ndcg_at(run: Run, qrels: Qrels, k: int = 10) -> MetricSlice:
    return _per_query("ndcg", run, qrels, k, _ndcg)


def recall_at(run: Run, qrels: Qrels, k: int = 10) -> MetricSlice:
    return _per_query("recall", run, qrels, k, _recall)


def evaluate(run: Run, qrels: Qrels, k: int = 10) -> MetricReport:
    return MetricReport(
        k, {"mrr": mrr_at(run, qrels, k), "ndcg": ndcg_at(run, qrels, k), "recall": recall_at(run, qrels, k)}
    )


class WilcoxonResult(NamedTuple):
    statistic: float  # W+ - W-, sign flips when the samples are swapped
    w_plus: float
    w_minus: float
    p_value: Optional[float]  # None when no non-zero difference remains
    n_effective: int


EXACT_MAX_N = 25


def _average_ranks(values: Sequence[float]) -> List[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (i + j) / 2 + 1
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def _exact_two_sided(ranks: Sequence[float], w_plus: float) -> float:
    # Ranks are multiples of 1/2, so doubled ranks are integers; count sign
    # assignments by doubled W+ with a subset-sum table.
    doubled = [int(round(2 * r)) for r in ranks]
    total = sum(doubled)
    counts = [0] * (total + 1)
    counts[0] = 1
    for r in doubled:
        for s in range(total, r - 1, -1):
            counts[s] += counts[s - r]
    w = int(round(2 * w_plus))
    n_assign = 2 ** len(doubled)
    lower = sum(counts[: w + 1]) / n_assign
    upper = sum(counts[w:]) / n_assign
    return min(1.0, 2.0 * min(lower, upper))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], zero_method: str = "wilcox") -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test on ``a - b``.

    ``zero_method="wilcox"`` drops zero differences before ranking;
    ``"pratt"`` ranks them and then drops them. Uses the exact null
    distribution for up to 25 non-zero differences and a continuity-corrected
    normal approximation beyond that.
    """
    if len(a) != len(b):
        raise ValueError("paired samples must have equal length")
    if zero_method not in ("wilcox", "pratt"):
        raise ValueError(f"unknown zero_method {zero_method!r}")
    diffs = [float(x) - float(y) for x, y in zip(a, b)]
    if zero_method == "wilcox":
        diffs = [d for d in diffs if d != 0.0]
    ranks = _average_ranks([abs(d) for d in diffs])
    kept = [(d, r) for d, r in zip(diffs, ranks) if d != 0.0]
    n = len(kept)
    if n == 0:
        return WilcoxonResult(0.0, 0.0, 0.0, None, 0)
    w_plus = math.fsum(r for d, r in kept if d > 0)
    w_minus = math.fsum(r for d, r in kept if d < 0)
    nz_ranks = [r for _, r in kept]
    if n <= EXACT_MAX_N:
        p = _exact_two_sided(nz_ranks, w_plus)
    else:
        mean = math.fsum(nz_ranks) / 2.0
        sd = math.sqrt(math.fsum(r * r for r in nz_ranks) / 4.0)
        z = max(abs(w_plus - mean) - 0.5, 0.0) / sd
        p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return WilcoxonResult(w_plus - w_minus, w_plus, w_minus, p, n)


@dataclass
class ComparisonRow:
    metric: str
    mean_a: float
    mean_b: float
    delta_pct: Optional[float]  # None when mean_a == 0
    wilcoxon: WilcoxonResult

    @property
    def significant(self) -> bool:
        p = self.wilcoxon.p_value
        return p is not None and p < 0.05


def relative_delta(mean_a: float, mean_b: float) -> Optional[float]:
    if mean_a == 0:
        return None
    return (mean_b - mean_a) / mean_a * 100.0


def compare_runs(run_a: Run, run_b: Run, qrels: Qrels, k: int = 10, zero_method: str = "wilcox") -> List[ComparisonRow]:
    """Per-metric means of both runs over their shared evaluable queries, with relative delta and Wilcoxon p."""
    rep_a, rep_b = evaluate(run_a, qrels, k), evaluate(run_b, qrels, k)
    shared = sorted(set(rep_a.queries) & set(rep_b.queries))
    if not shared:
        raise ValueError("runs share no evaluable queries")
    rows = []
    for name in METRICS:
        va = [rep_a[name].per_query[q] for q in shared]
        vb = [rep_b[name].per_query[q] for q in shared]
        mean_a = math.fsum(va) / len(va)
        mean_b = math.fsum(vb) / len(vb)
        rows.append(
            ComparisonRow(name, mean_a, mean_b, relative_delta(mean_a, mean_b), wilcoxon_signed_rank(va, vb, zero_method))
        )
    return rows


def _fmt(x: Optional[float]) -> str:
    return "NA" if x is None else repr(x)


def write_per_query_csv(report: MetricReport, path, label: str = "run") -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["run", "qid"] + [f"{m}@{report.k}" for m in METRICS])
        for qid in report.queries:
            w.writerow([label, qid] + [repr(report[m].per_query[qid]) for m in METRICS])


def write_summary_csv(report: MetricReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "value", "queries", "excluded"])
        for m in METRICS:
            s = report[m]
            w.writerow([f"{m}@{report.k}", repr(s.mean), len(s.per_query), len(s.excluded)])


def write_comparison_csv(rows: Sequence[ComparisonRow], k: int, path) -> None:
    """Table layout ``metric,orig,deb,delta_pct`` plus p-value and a ``*`` mark for p < 0.05."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["metric", "orig", "deb", "delta_pct", "p_value", "sig"])
        for r in rows:
            w.writerow(
                [f"{r.metric}@{k}", repr(r.mean_a), repr(r.mean_b), _fmt(r.delta_pct), _fmt(r.wilcoxon.p_value), "*" if r.significant else ""]
            )
