"""Canonical in-memory data model for passage collections, queries, qrels and answers.

Readers cover MS MARCO-style TSV files, TREC-style qrels and the SQuAD 2.0 JSON
release. Every reader funnels text through :func:`tokenize`, so token sequences
are reproducible bit-for-bit across runs and machines.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Tuple

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

# Letters and digits only: \w minus underscore.
_TOKEN_RE = re.compile(r"[^\W_]+")
# Characters that would break the one-record-per-line TSV layout.
_TSV_UNSAFE = re.compile(r"[\t\r\n\x0b\x0c\x1c-\x1e\x85  ]")

Qrels = Dict[str, Dict[str, int]]
AnswerSet = Dict[str, List[str]]


def tokenize(text: str) -> List[str]:
    """Split text into lowercased maximal runs of Unicode letters/digits.

    >>> tokenize("B-52's 2x")
    ['b', '52', 's', '2x']
    """
    # Lowercase first: a few characters expand into letter + combining mark
    # when lowercased, and the split must see the final form to stay idempotent.
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Passage:
    id: str
    text: str
    tokens: Tuple[str, ...]

    @classmethod
    def from_text(cls, pid: str, text: str) -> "Passage":
        return cls(pid, text, tuple(tokenize(text)))

    @property
    def n(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    tokens: Tuple[str, ...]

    @classmethod
    def from_text(cls, qid: str, text: str) -> "Query":
        return cls(qid, text, tuple(tokenize(text)))


QuerySet = Dict[str, Query]


@dataclass(frozen=True)
class Collection:
    """Ordered passages with an id -> ordinal index.

    ``skipped`` counts input rows rejected because they produced no tokens.
    """

    passages: Tuple[Passage, ...]
    skipped: int = 0
    _index: Dict[str, int] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for k, p in enumerate(self.passages):
            if p.n < 1:
                raise ValidationError(f"passage {p.id!r} has no tokens")
            if p.id in index:
                raise ValidationError(f"duplicate passage id {p.id!r}")
            index[p.id] = k
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self.passages)

    def __getitem__(self, ordinal: int) -> Passage:
        return self.passages[ordinal]

    def __contains__(self, pid: str) -> bool:
        return pid in self._index

    def ordinal(self, pid: str) -> int:
        return self._index[pid]

    def lookup(self, pid: str) -> Passage:
        return self.passages[self._index[pid]]

    @property
    def ids(self) -> List[str]:
        return [p.id for p in self.passages]


def _read_lines(path) -> Iterator[Tuple[int, str]]:
    with open(path, encoding="utf-8", newline="") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            yield lineno, line


def _split_tsv(path, lineno: int, line: str) -> Tuple[str, str]:
    cols = line.split("\t")
    if len(cols) != 2:
        raise ParseError(f"expected 2 tab-separated columns, got {len(cols)}", path, lineno)
    key = cols[0].strip()
    if not key:
        raise ParseError("empty id", path, lineno)
    return key, cols[1]


def load_msmarco_collection(path) -> Collection:
    """Read ``id<TAB>text`` lines. Rows whose text has no tokens are skipped and counted."""
    passages = []
    seen = set()
    skipped = 0
    for lineno, line in _read_lines(path):
        pid, text = _split_tsv(path, lineno, line)
        if pid in seen:
            raise ParseError(f"duplicate passage id {pid!r}", path, lineno)
        seen.add(pid)
        p = Passage.from_text(pid, text)
        if p.n == 0:
            skipped += 1
            continue
        passages.append(p)
    if skipped:
        log.warning("%s: skipped %d passages without tokens", path, skipped)
    return Collection(tuple(passages), skipped=skipped)


def load_msmarco_queries(path) -> QuerySet:
    queries: QuerySet = {}
    skipped = 0
    for lineno, line in _read_lines(path):
        qid, text = _split_tsv(path, lineno, line)
        if qid in queries:
            raise ParseError(f"duplicate query id {qid!r}", path, lineno)
        q = Query.from_text(qid, text)
        if not q.tokens:
            skipped += 1
            continue
        queries[qid] = q
    if skipped:
        log.warning("%s: skipped %d queries without tokens", path, skipped)
    return queries


def load_msmarco_answers(path) -> AnswerSet:
    """Read ``qid<TAB>answer`` lines; a query may repeat over several lines."""
    answers: AnswerSet = {}
    for lineno, line in _read_lines(path):
        qid, text = _split_tsv(path, lineno, line)
        text = text.strip()
        if text:
            answers.setdefault(qid, []).append(text)
    return answers


def load_qrels(path) -> Qrels:
    """Read ``qid 0 pid grade`` lines. Duplicate (qid, pid) pairs keep the max grade."""
    qrels: Qrels = {}
    for lineno, line in _read_lines(path):
        cols = line.split()
        if len(cols) != 4:
            raise ParseError(f"expected 4 columns, got {len(cols)}", path, lineno)
        qid, _, pid, grade_s = cols
        try:
            grade = int(grade_s)
        except ValueError:
            raise ParseError(f"non-integer grade {grade_s!r}", path, lineno) from None
        if grade < 0:
            raise ParseError(f"negative grade {grade}", path, lineno)
        judged = qrels.setdefault(qid, {})
        judged[pid] = max(grade, judged.get(pid, grade))
    return qrels


def _require(obj, key, where, path):
    if not isinstance(obj, dict) or key not in obj:
        raise ParseError(f"missing field {where}.{key}", path)
    return obj[key]


def load_squad(path) -> Tuple[Collection, QuerySet, Qrels, AnswerSet]:
    """Convert a SQuAD 2.0 JSON file into passages, queries, qrels and answers.

    Identical context strings collapse into one passage ``squad-p<k>``, numbered
    by first occurrence. Unanswerable questions are dropped.
    """
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e}", path) from None

    context_ids: Dict[str, str] = {}
    empty_pids = set()
    passages: List[Passage] = []
    queries: QuerySet = {}
    qrels: Qrels = {}
    answers: AnswerSet = {}
    dropped = 0

    articles = _require(doc, "data", "$", path)
    for ai, article in enumerate(articles):
        for pi, para in enumerate(_require(article, "paragraphs", f"data[{ai}]", path)):
            where = f"data[{ai}].paragraphs[{pi}]"
            context = _require(para, "context", where, path)
            pid = context_ids.get(context)
            if pid is None:
                p = Passage.from_text(f"squad-p{len(context_ids)}", context)
                context_ids[context] = p.id
                if p.n == 0:
                    empty_pids.add(p.id)
                else:
                    passages.append(p)
                pid = p.id
            for qi, qa in enumerate(_require(para, "qas", where, path)):
                qwhere = f"{where}.qas[{qi}]"
                qid = str(_require(qa, "id", qwhere, path))
                question = _require(qa, "question", qwhere, path)
                if qa.get("is_impossible", False):
                    dropped += 1
                    continue
                texts = [
                    str(_require(a, "text", f"{qwhere}.answers[{k}]", path)).strip()
                    for k, a in enumerate(_require(qa, "answers", qwhere, path))
                ]
                q = Query.from_text(qid, question)
                if not q.tokens or pid in empty_pids:
                    # A context without tokens cannot be relevant to anything.
                    dropped += 1
                    continue
                if qid in queries:
                    raise ParseError(f"duplicate question id {qid!r} at {qwhere}", path)
                queries[qid] = q
                qrels.setdefault(qid, {})[pid] = 1
                kept = [t for t in texts if t]
                if kept:
                    answers[qid] = kept

    if dropped:
        log.info("%s: dropped %d unanswerable or empty questions", path, dropped)
    collection = Collection(tuple(passages), skipped=len(empty_pids))
    return collection, queries, qrels, answers


def validate_qrels(collection: Collection, qrels: Qrels) -> None:
    """Raise :class:`ValidationError` naming every qrels passage id missing from the collection."""
    dangling = sorted(
        {(qid, pid) for qid, rel in qrels.items() for pid in rel if pid not in collection}
    )
    if dangling:
        shown = ", ".join(f"{q}->{p}" for q, p in dangling[:10])
        more = f" (+{len(dangling) - 10} more)" if len(dangling) > 10 else ""
        raise ValidationError(f"{len(dangling)} qrels entries reference unknown passages: {shown}{more}")


def _tsv_safe(text: str) -> str:
    return _TSV_UNSAFE.sub(" ", text)


def write_collection(collection: Iterable[Passage], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in collection:
            f.write(f"{p.id}\t{_tsv_safe(p.text)}\n")


def write_queries(queries: QuerySet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for q in queries.values():
            f.write(f"{q.id}\t{_tsv_safe(q.text)}\n")


def write_answers(answers: AnswerSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid, texts in answers.items():
            for t in texts:
                f.write(f"{qid}\t{_tsv_safe(t)}\n")


def write_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for qid, rel in qrels.items():
            for pid, grade in rel.items():
                f.write(f"{qid} 0 {pid} {grade}\n")


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
