"""Acceptance criteria AC1..AC9, one test (or parametrized group) per criterion."""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from posbias import biasaudit, corpus, debias, evalmetrics, kernelrank, probe, retrieval, synthetic, tkmodel

from test_evalmetrics import FIXTURE_QRELS, FIXTURE_RUN, HAND, _brute_exact_p
from test_kernelrank import _oracle_score
from test_probe import _dump, _oracle, _random_rows
from test_retrieval import TOY

AC1 = "AC1 rotation correctness, exhaustive n<=8"
AC2 = "AC2 debias uniformity, TV < 0.03 in < 10 s"
AC3 = "AC3 MATS null (alpha=1) and positive (alpha=0) cases"
AC4 = "AC4 probe equals all-pairs brute force to 1e-9"
AC5 = "AC5 kernel scoring oracle and invariances to 1e-6"
AC6 = "AC6 metrics oracle, zero delta, Wilcoxon exact case"
AC7 = "AC7 BM25 hand oracle and rotation invariance"
AC8 = "AC8 directional end-to-end MRR drop after debiasing"
AC9 = "AC9 ingestion sanity on real data"


@pytest.mark.acceptance(AC1)
def test_ac1_rotation_laws():
    failures = 0
    for n in range(1, 9):
        seq = list(range(1, n + 1))
        for r in range(1, n + 1):
            rot = debias.rotate(seq, r)
            failures += sorted(rot) != seq
            failures += debias.rotate(rot, ((n - r + 1) % n) + 1) != seq
            for s in seq:
                failures += rot[debias.map_position(s, r, n) - 1] != s
            for r2 in range(1, n + 1):
                composed = ((r - 1 + r2 - 1) % n) + 1
                failures += debias.rotate(rot, r2) != debias.rotate(seq, composed)
    assert failures == 0


@pytest.mark.acceptance(AC2)
def test_ac2_debias_uniformity():
    sc = synthetic.generate(10_000, 1, length=100, answer_position=0.0, query_length=1, filler_vocab=500, seed=0)
    before, _ = biasaudit.audit(sc.collection, sc.qrels, sc.answers)
    assert biasaudit.histogram(before).counts[0] == 10_000
    t0 = time.perf_counter()
    rotated, _ = debias.debias_collection(sc.collection, seed=1)
    matches, omitted = biasaudit.audit(rotated, sc.qrels, sc.answers)
    tv = biasaudit.tv_from_uniform(biasaudit.histogram(matches, 20))
    elapsed = time.perf_counter() - t0
    print(f"TV={tv:.4f} elapsed={elapsed:.2f}s")
    assert omitted == 0 and len(matches) == 10_000
    assert tv < 0.03
    assert elapsed < 10.0


def _toy_encoder(alpha, **kw):
    return tkmodel.EncoderConfig(d=32, n_layers=2, n_heads=4, head_size=8, ff_dim=64, alpha=alpha, **kw)


def _dump_for(collection, alpha, seed=0):
    params = tkmodel.init_params(_toy_encoder(alpha), seed + 7)
    table = tkmodel.random_table({t for p in collection for t in p.tokens}, 32, seed + 3)
    return probe.VectorDump.from_sequences(tkmodel.encode_passages(collection, table, params))


@pytest.mark.acceptance(AC3)
def test_ac3_mats_cases():
    t0 = time.perf_counter()
    sc = synthetic.generate(500, 1, length=60, filler_vocab=200, seed=0)
    null = probe.mats(probe.build_term_index(_dump_for(sc.collection, 1.0)))
    pos_index = probe.build_term_index(_dump_for(sc.collection, 0.0))
    pos = probe.mats(pos_index)
    ats0 = probe.ats(pos_index, 0).mean
    rest = float(np.mean([probe.ats(pos_index, d).mean for d in range(1, 21)]))
    elapsed = time.perf_counter() - t0
    print(f"MATS null={null.mats:.3g} positive={pos.mats:.4f} ats0={ats0:.4f} mean ats1..20={rest:.4f} elapsed={elapsed:.1f}s")
    assert abs(null.mats) <= 1e-9
    assert pos.mats > 0.01
    assert rest < ats0
    assert elapsed < 60.0


@pytest.mark.acceptance(AC4)
@pytest.mark.parametrize("seed", range(10))
def test_ac4_probe_oracle(seed):
    rows = _random_rows(100 + seed, 50)
    index = probe.build_term_index(_dump(rows), cap=10**6)
    sim, mats_oracle = _oracle(rows, 4)
    for delta, value in sim.items():
        assert abs(probe.ats(index, delta).mean - value) <= 1e-9
    if 0 in sim:
        assert abs(probe.mats(index, 4).mats - mats_oracle) <= 1e-9


@pytest.mark.acceptance(AC5)
def test_ac5_kernel_scoring():
    cfg = kernelrank.KernelConfig()
    q = [[1.0, 0.0], [0.0, 1.0]]
    p = [[1.0, 0.0], [0.5, math.sqrt(3) / 2]]
    cos = [[1.0, 0.5], [0.0, math.sqrt(3) / 2]]
    w = [1 / 11] * 11
    assert abs(kernelrank.score(q, p, cfg) - _oracle_score(cos, cfg.mus, cfg.sigma, w)) <= 1e-6

    rng = np.random.default_rng(2024)
    params = tkmodel.init_params(_toy_encoder(1.0), 0)
    vocab = [f"t{k}" for k in range(40)]
    table = tkmodel.random_table(vocab, 32, 1)
    tk = kernelrank.TKScorer(table, params)
    for _ in range(100):
        weights = kernelrank.ScoreWeights(rng.normal(size=11), float(rng.normal()))
        qv, pv = rng.normal(size=(3, 8)), rng.normal(size=(9, 8))
        base = kernelrank.score(qv, pv, cfg, weights)
        assert abs(kernelrank.score(qv, pv[rng.permutation(9)], cfg, weights) - base) <= 1e-6

        qt = [vocab[i] for i in rng.integers(0, 40, 3)]
        pt = [vocab[i] for i in rng.integers(0, 40, 12)]
        r = int(rng.integers(1, 13))
        a = kernelrank.score(tk.encode(qt, "query"), tk.encode(pt, "passage"), cfg, weights)
        b = kernelrank.score(tk.encode(qt, "query"), tk.encode(debias.rotate(pt, r), "passage"), cfg, weights)
        assert abs(a - b) <= 1e-6


@pytest.mark.acceptance(AC6)
def test_ac6_metrics():
    rep = evalmetrics.evaluate(FIXTURE_RUN, FIXTURE_QRELS, 10)
    for k, name in enumerate(evalmetrics.METRICS):
        for qid, vals in HAND.items():
            assert abs(rep[name].per_query[qid] - vals[k]) <= 1e-9
    rows = evalmetrics.compare_runs(FIXTURE_RUN, FIXTURE_RUN, FIXTURE_QRELS, 10)
    assert all(r.delta_pct == 0.0 for r in rows)
    res = evalmetrics.wilcoxon_signed_rank([18, 17, 16, 15, 14, 13, 10, 10], [10, 10, 10, 10, 10, 10, 12, 11])
    assert min(res.w_plus, res.w_minus) == 3.0
    assert abs(res.p_value - 10 / 256) <= 1e-12
    assert abs(res.p_value - _brute_exact_p(list(range(1, 9)), res.w_plus)) <= 1e-12


@pytest.mark.acceptance(AC7)
def test_ac7_bm25():
    hits = dict(retrieval.bm25_search(retrieval.build_index(TOY), ["a", "b"], 3))
    expected = {"d1": 0.9400072584914713, "d2": 0.5913952950774156, "d3": 0.5016892671724144}
    for pid, value in expected.items():
        assert abs(hits[pid] - value) <= 1e-6
    sc = synthetic.generate(30, 5, length=25, query_length=2, filler_vocab=50, seed=4)
    rotated, _ = debias.debias_collection(sc.collection, seed=9)
    a, b = retrieval.build_index(sc.collection), retrieval.build_index(rotated)
    for q in sc.queries.values():
        assert retrieval.bm25_search(a, q.tokens, 50) == retrieval.bm25_search(b, q.tokens, 50)


def _tk_mrr(collection, sc, tk):
    index = retrieval.build_index(collection)
    run = {}
    for q in sc.queries.values():
        cands = retrieval.bm25_search(index, q.tokens, 10)
        run[q.id] = kernelrank.rerank_query(q, cands, collection, tk, depth=10)
    return evalmetrics.mrr_at(run, sc.qrels, 10).mean


@pytest.mark.acceptance(AC8)
@pytest.mark.parametrize("seed", range(3))
def test_ac8_directional(seed):
    sc = synthetic.generate(50, 10, length=30, answer_position=0.0, query_length=3, filler_vocab=200, seed=seed)
    rotated, _ = debias.debias_collection(sc.collection, seed=seed + 100)
    vocab = {t for p in sc.collection for t in p.tokens}
    table = tkmodel.random_table(vocab, 32, 3 + seed)
    params = tkmodel.init_params(_toy_encoder(0.0, passage_offset=0), 7 + seed)
    tk = kernelrank.TKScorer(table, params, weights=kernelrank.ScoreWeights((0.0,) * 9 + (1.0, 1.0)))
    orig, deb = _tk_mrr(sc.collection, sc, tk), _tk_mrr(rotated, sc, tk)
    print(f"MRR@10 orig={orig:.4f} deb={deb:.4f} delta={evalmetrics.relative_delta(orig, deb):+.1f}%")
    assert deb < orig


@pytest.mark.acceptance(AC9)
@pytest.mark.network
def test_ac9_ingestion_sanity():
    coll_path = os.environ.get("POSBIAS_MSMARCO_COLLECTION")
    squad_path = os.environ.get("POSBIAS_SQUAD_TRAIN")
    if not coll_path and not squad_path:
        pytest.skip("set POSBIAS_MSMARCO_COLLECTION and/or POSBIAS_SQUAD_TRAIN to run")
    if coll_path:
        assert len(corpus.load_msmarco_collection(Path(coll_path))) == 8_841_823
    if squad_path:
        collection, _, _, _ = corpus.load_squad(Path(squad_path))
        assert 18_000 <= len(collection) <= 22_000
