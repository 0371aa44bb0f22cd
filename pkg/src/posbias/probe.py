"""Average term similarity (ATS) by position gap, and its mean drop (MATS).

For every term, occurrences in *different* passages are paired up and grouped
by the gap between their absolute positions. ATS at a gap is the mean over
terms of each term's mean pairwise cosine. MATS summarises how far ATS falls
below its gap-0 value::

    MATS = 1/(max_gap - 1) * sum_{i=1..max_gap} (ATS(0) - ATS(i))

A representation that carries no absolute-position information yields a flat
curve and MATS = 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ParseError, ValidationError

DEFAULT_CAP = 10_000
MIN_STABLE_COUPLES = 1000
BINARY_FORMAT = "posbias-dump/1"
_ROW_BLOCK = 1024


class VectorDumpRecord(NamedTuple):
    term: str
    passage_id: str
    position: int
    vector: np.ndarray


@dataclass
class VectorDump:
    """Column-oriented store of dump records."""

    terms: List[str]
    passage_ids: List[str]
    positions: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        n = len(self.terms)
        if not (len(self.passage_ids) == n == len(self.positions) == self.vectors.shape[0]):
            raise ValidationError("dump columns have different lengths")
        if self.vectors.ndim != 2:
            raise ValidationError("vectors must form a 2-d array")
        if n and self.positions.min() < 1:
            raise ValidationError("positions are 1-based")

    def __len__(self) -> int:
        return len(self.terms)

    def __iter__(self) -> Iterator[VectorDumpRecord]:
        for k in range(len(self)):
            yield VectorDumpRecord(self.terms[k], self.passage_ids[k], int(self.positions[k]), self.vectors[k])

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def from_records(cls, records: Iterable[VectorDumpRecord]) -> "VectorDump":
        terms, pids, pos, vecs = [], [], [], []
        d = None
        for k, r in enumerate(records):
            v = np.asarray(r.vector, dtype=np.float64)
            if d is None:
                d = v.shape[0]
            elif v.shape[0] != d:
                raise ValidationError(f"record {k}: vector length {v.shape[0]} != {d}")
            terms.append(r.term)
            pids.append(r.passage_id)
            pos.append(r.position)
            vecs.append(v)
        vectors = np.vstack(vecs) if vecs else np.zeros((0, 0))
        return cls(terms, pids, np.array(pos, dtype=np.int64), vectors)

    @classmethod
    def from_sequences(cls, sequences) -> "VectorDump":
        """Build from (passage id, ContextualizedSequence) pairs."""
        terms, pids, pos, blocks = [], [], [], []
        for pid, seq in sequences:
            terms.extend(seq.tokens)
            pids.extend([pid] * len(seq.tokens))
            pos.extend(seq.positions)
            blocks.append(seq.vectors)
        widths = {b.shape[1] for b in blocks}
        if len(widths) > 1:
            raise ValidationError(f"sequences have different vector widths: {sorted(widths)}")
        vectors = np.vstack(blocks) if blocks else np.zeros((0, 0))
        return cls(terms, pids, np.array(pos, dtype=np.int64), vectors)


def write_dump(dump: VectorDump, path, binary: bool = False) -> None:
    """Text: ``term<TAB>pid<TAB>pos<TAB>v1,...,vd`` per line. Binary: a directory
    with ``manifest.json``, ``index.tsv`` and flat little-endian float32 ``vectors.f32``."""
    if binary:
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "index.tsv", "w", encoding="utf-8", newline="\n") as f:
            for t, p, a in zip(dump.terms, dump.passage_ids, dump.positions.tolist()):
                f.write(f"{t}\t{p}\t{a}\n")
        np.ascontiguousarray(dump.vectors, dtype="<f4").tofile(out / "vectors.f32")
        manifest = {"format": BINARY_FORMAT, "d": dump.d, "count": len(dump)}
        (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True) + "\n")
        return
    vec32 = dump.vectors.astype(np.float32)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for k in range(len(dump)):
            vals = ",".join(repr(float(x)) for x in vec32[k])
            f.write(f"{dump.terms[k]}\t{dump.passage_ids[k]}\t{int(dump.positions[k])}\t{vals}\n")


def _read_binary(path: Path) -> VectorDump:
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"unreadable dump manifest: {e}", path) from None
    if manifest.get("format") != BINARY_FORMAT:
        raise ParseError(f"unsupported dump format {manifest.get('format')!r}", path)
    d, count = int(manifest["d"]), int(manifest["count"])
    terms, pids, pos = [], [], []
    with open(path / "index.tsv", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            cols = line.rstrip("\n").split("\t")
            if len(cols) != 3:
                raise ParseError(f"expected 3 columns, got {len(cols)}", path / "index.tsv", lineno)
            terms.append(cols[0])
            pids.append(cols[1])
            try:
                pos.append(int(cols[2]))
            except ValueError:
                raise ParseError("non-integer position", path / "index.tsv", lineno) from None
    flat = np.fromfile(path / "vectors.f32", dtype="<f4")
    if len(terms) != count or flat.size != count * d:
        raise ParseError("dump index and vector file disagree with the manifest", path)
    return VectorDump(terms, pids, np.array(pos, dtype=np.int64), flat.reshape(count, d).astype(np.float64))


def read_dump(path) -> VectorDump:
    path = Path(path)
    if path.is_dir():
        return _read_binary(path)
    terms, pids, pos, vecs = [], [], [], []
    d = None
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(f"expected 4 tab-separated columns, got {len(cols)}", path, lineno)
            try:
                a = int(cols[2])
                v = np.array(cols[3].split(","), dtype=np.float64)
            except ValueError:
                raise ParseError("non-numeric position or vector entry", path, lineno) from None
            if a < 1:
                raise ParseError(f"position {a} is not 1-based", path, lineno)
            if not np.all(np.isfinite(v)):
                raise ParseError("non-finite vector entry", path, lineno)
            if d is None:
                d = v.shape[0]
            elif v.shape[0] != d:
                raise ParseError(f"vector has {v.shape[0]} values, expected {d}", path, lineno)
            terms.append(cols[0])
            pids.append(cols[1])
            pos.append(a)
            vecs.append(v)
    vectors = np.vstack(vecs) if vecs else np.zeros((0, 0))
    return VectorDump(terms, pids, np.array(pos, dtype=np.int64), vectors)


@dataclass
class TermVectorIndex:
    """Per-term occurrences and, per (term, gap), the cosines of their couples."""

    d: int
    occurrences: Dict[str, List[Tuple[str, int, np.ndarray]]] = field(repr=False)
    couples: Dict[str, Dict[int, np.ndarray]] = field(repr=False)
    cap: int
    seed: int
    total_couples: Dict[int, int] = field(default_factory=dict)  # before capping

    def deltas(self) -> List[int]:
        return sorted({g for groups in self.couples.values() for g in groups})

    def couple_count(self, delta: int) -> int:
        return sum(len(groups[delta]) for groups in self.couples.values() if delta in groups)


def _term_couples(pids: np.ndarray, pos: np.ndarray, unit: np.ndarray) -> Dict[int, List[np.ndarray]]:
    n = len(pos)
    groups: Dict[int, List[np.ndarray]] = {}
    for s in range(0, n - 1, _ROW_BLOCK):
        e = min(s + _ROW_BLOCK, n - 1)
        gram = unit[s:e] @ unit.T
        rows = np.arange(s, e)[:, None]
        cols = np.arange(n)[None, :]
        mask = (cols > rows) & (pids[s:e, None] != pids[None, :])
        if not mask.any():
            continue
        gaps = np.abs(pos[s:e, None] - pos[None, :])[mask]
        cosv = np.clip(gram[mask], -1.0, 1.0)
        order = np.argsort(gaps, kind="stable")
        gaps, cosv = gaps[order], cosv[order]
        bounds = np.flatnonzero(np.diff(gaps)) + 1
        for g_arr, c_arr in zip(np.split(gaps, bounds), np.split(cosv, bounds)):
            groups.setdefault(int(g_arr[0]), []).append(c_arr)
    return groups


def build_term_index(
    dump: VectorDump, min_occurrences: int = 2, cap: int = DEFAULT_CAP, seed: int = 0
) -> TermVectorIndex:
    """Pair same-term occurrences from different passages, grouped by position gap.

    A (term, gap) group larger than ``cap`` is replaced by a seeded uniform
    sample of ``cap`` couples. Zero vectors have cosine 0 with everything.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    if len(dump) == 0:
        return TermVectorIndex(0, {}, {}, cap, seed)
    vectors = dump.vectors
    norms = np.linalg.norm(vectors, axis=1)
    unit = np.divide(vectors, norms[:, None], out=np.zeros_like(vectors), where=norms[:, None] > 0)

    by_term: Dict[str, List[int]] = {}
    for k, t in enumerate(dump.terms):
        by_term.setdefault(t, []).append(k)

    # Integer ids keep the passage comparison vectorised.
    pid_codes: Dict[str, int] = {}
    pid_arr = np.array([pid_codes.setdefault(p, len(pid_codes)) for p in dump.passage_ids], dtype=np.int64)

    rng = np.random.Generator(np.random.PCG64(seed))
    occurrences, couples, totals = {}, {}, {}
    for term in sorted(by_term):
        idx = by_term[term]
        if len(idx) < min_occurrences:
            continue
        idx.sort(key=lambda k: (dump.passage_ids[k], dump.positions[k]))
        idx = np.array(idx, dtype=np.int64)
        occurrences[term] = [(dump.passage_ids[k], int(dump.positions[k]), vectors[k]) for k in idx]
        groups = _term_couples(pid_arr[idx], dump.positions[idx], unit[idx])
        if not groups:
            continue
        kept = {}
        for gap in sorted(groups):
            cos = np.concatenate(groups[gap])
            totals[gap] = totals.get(gap, 0) + len(cos)
            if len(cos) > cap:
                cos = cos[np.sort(rng.choice(len(cos), size=cap, replace=False))]
            kept[gap] = cos
        couples[term] = kept
    return TermVectorIndex(dump.d, occurrences, couples, cap, seed, totals)


class AtsRow(NamedTuple):
    delta: int
    mean: float
    stddev: float
    count: int


def ats(index: TermVectorIndex, delta: int) -> Optional[AtsRow]:
    """Two-level mean cosine at one gap, or None when no term has couples there.

    ``stddev`` is the population deviation over all individual couple cosines.
    """
    term_means = []
    pooled = []
    for groups in index.couples.values():
        cos = groups.get(delta)
        if cos is None or len(cos) == 0:
            continue
        term_means.append(math.fsum(cos.tolist()) / len(cos))
        pooled.append(cos)
    if not term_means:
        return None
    allc = np.concatenate(pooled)
    mu = math.fsum(allc.tolist()) / len(allc)
    sd = math.sqrt(math.fsum(((allc - mu) ** 2).tolist()) / len(allc))
    return AtsRow(delta, math.fsum(term_means) / len(term_means), sd, len(allc))


def default_max_delta(index: TermVectorIndex, min_couples: int = MIN_STABLE_COUPLES) -> int:
    """Largest gap with at least ``min_couples`` couples, else the largest gap present."""
    deltas = index.deltas()
    if not deltas:
        raise ValueError("index has no couples")
    stable = [g for g in deltas if index.couple_count(g) >= min_couples]
    return max(stable) if stable else max(deltas)


@dataclass
class AtsReport:
    rows: List[AtsRow]
    max_delta: int
    mats: float
    mats_stddev: float
    missing: List[int]
    normalize_by_count: bool = False

    def row(self, delta: int) -> Optional[AtsRow]:
        for r in self.rows:
            if r.delta == delta:
                return r
        return None


def mats(index: TermVectorIndex, max_delta: Optional[int] = None, normalize_by_count: bool = False) -> AtsReport:
    """MATS over gaps 1..max_delta.

    The sum runs over gaps that have couples (absent gaps are listed in
    ``missing``) and is divided by ``max_delta - 1``; ``normalize_by_count``
    divides by the number of summed gaps instead. ``mats_stddev`` is the
    population deviation of the individual differences ATS(0) - ATS(i).
    """
    if max_delta is None:
        max_delta = default_max_delta(index)
    if max_delta < 2:
        raise ValueError(f"max_delta must be >= 2, got {max_delta}")
    base = ats(index, 0)
    if base is None:
        raise ValueError("no Δa=0 couples; MATS undefined")
    rows = [base]
    diffs, missing = [], []
    for gap in range(1, max_delta + 1):
        r = ats(index, gap)
        if r is None:
            missing.append(gap)
            continue
        rows.append(r)
        diffs.append(base.mean - r.mean)
    if not diffs:
        raise ValueError(f"no couples at any gap in 1..{max_delta}; MATS undefined")
    denom = len(diffs) if normalize_by_count else max_delta - 1
    value = math.fsum(diffs) / denom
    mu = math.fsum(diffs) / len(diffs)
    sd = math.sqrt(math.fsum((x - mu) ** 2 for x in diffs) / len(diffs))
    return AtsReport(rows, max_delta, value, sd, missing, normalize_by_count)


def write_ats_csv(report: AtsReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["delta", "mean", "stddev", "count"])
        for r in report.rows:
            w.writerow([r.delta, repr(r.mean), repr(r.stddev), r.count])


def read_ats_csv(path) -> List[AtsRow]:
    with open(path, encoding="utf-8", newline="") as f:
        return [
            AtsRow(int(r["delta"]), float(r["mean"]), float(r["stddev"]), int(r["count"]))
            for r in csv.DictReader(f)
        ]


def write_mats_json(report: AtsReport, path, extra: Optional[dict] = None) -> None:
    data = {
        "mats": report.mats,
        "mats_stddev": report.mats_stddev,
        "max_delta": report.max_delta,
        "missing_deltas": report.missing,
        "normalize_by_count": report.normalize_by_count,
    }
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
