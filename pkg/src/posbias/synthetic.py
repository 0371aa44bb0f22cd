"""Synthetic QA-retrieval collections with answers planted at chosen positions.

Each query owns one relevant passage holding the query terms as a contiguous
answer span, plus optional distractor passages that contain the same terms
scattered at random positions. Filler tokens come from a shared vocabulary so
every filler term recurs across many passages.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from .corpus import AnswerSet, Collection, Passage, Qrels, Query, QuerySet


@dataclass
class SyntheticCorpus:
    collection: Collection
    queries: QuerySet
    qrels: Qrels
    answers: AnswerSet
    planted: Dict[str, int]  # relevant pid -> 1-based answer start


def generate(
    n_queries: int,
    passages_per_query: int = 1,
    length: int = 100,
    answer_position: Optional[float] = 0.0,
    query_length: int = 1,
    filler_vocab: int = 500,
    seed: int = 0,
) -> SyntheticCorpus:
    """Build a collection of ``n_queries * passages_per_query`` passages.

    ``answer_position`` is the relative start in [0, 1] of the answer span in
    each relevant passage (0 puts it at token 1); ``None`` draws it uniformly.
    """
    if n_queries < 1 or passages_per_query < 1:
        raise ValueError("need at least one query and one passage per query")
    if not 1 <= query_length <= length:
        raise ValueError("query_length must lie in [1, length]")
    if answer_position is not None and not 0.0 <= answer_position <= 1.0:
        raise ValueError("answer_position must lie in [0, 1]")
    rng = np.random.Generator(np.random.PCG64(seed))
    filler = np.array([f"w{k}" for k in range(filler_vocab)])
    width = len(str(n_queries * passages_per_query - 1))

    raw = []  # (query index, is relevant, tokens, answer start)
    queries: QuerySet = {}
    for qi in range(n_queries):
        qtoks = [f"q{qi}t{j}" for j in range(query_length)]
        queries[f"q{qi}"] = Query(f"q{qi}", " ".join(qtoks), tuple(qtoks))
        slack = length - query_length
        if answer_position is None:
            start0 = int(rng.integers(0, slack + 1))
        else:
            start0 = int(round(answer_position * slack))
        toks = list(filler[rng.integers(0, filler_vocab, length)])
        toks[start0 : start0 + query_length] = qtoks
        raw.append((qi, True, toks, start0 + 1))
        for _ in range(passages_per_query - 1):
            toks = list(filler[rng.integers(0, filler_vocab, length)])
            slots = rng.choice(length, size=query_length, replace=False)
            for t, slot in zip(qtoks, slots):
                toks[slot] = t
            raw.append((qi, False, toks, None))

    order = rng.permutation(len(raw))
    passages, qrels, answers, planted = [], {}, {}, {}
    for k, src in enumerate(order.tolist()):
        qi, relevant, toks, start = raw[src]
        pid = f"p{k:0{width}d}"
        passages.append(Passage(pid, " ".join(toks), tuple(toks)))
        if relevant:
            qrels[f"q{qi}"] = {pid: 1}
            answers[f"q{qi}"] = [queries[f"q{qi}"].text]
            planted[pid] = start
    qrels = {qid: qrels[qid] for qid in queries}
    answers = {qid: answers[qid] for qid in queries}
    return SyntheticCorpus(Collection(tuple(passages)), queries, qrels, answers, planted)
