import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from posbias import evalmetrics as em
from posbias.errors import ParseError


def _run(rankings):
    return {qid: em.ranked_entries(qid, [(p, -float(k)) for k, p in enumerate(pids)], "t") for qid, pids in rankings.items()}


INV_LOG3 = 1 / math.log2(3)
FIXTURE_RUN = _run(
    {
        "q1": ["A", "B", "C"],
        "q2": ["X", "Y", "C"],
        "q3": ["A", "B", "C"],
        "q4": [f"n{k}" for k in range(10)] + ["Z"],
        "q5": ["x1", "P"] + [f"x{k}" for k in range(2, 10)] + ["Q"],
        "q6": ["A"],
    }
)
FIXTURE_QRELS = {
    "q1": {"A": 1, "B": 0},
    "q2": {"C": 1},
    "q3": {"A": 1, "C": 1},
    "q4": {"Z": 1},
    "q5": {"P": 1, "Q": 1},
    "q6": {"A": 0},
}
# Hand table: per-query (MRR@10, nDCG@10, Recall@10).
HAND = {
    "q1": (1.0, 1.0, 1.0),
    "q2": (1 / 3, 1 / math.log2(4), 1.0),
    "q3": (1.0, 1.5 / (1 + INV_LOG3), 1.0),
    "q4": (0.0, 0.0, 0.0),
    "q5": (0.5, INV_LOG3 / (1 + INV_LOG3), 0.5),
}


def test_five_query_hand_table():
    rep = em.evaluate(FIXTURE_RUN, FIXTURE_QRELS, 10)
    for k, name in enumerate(em.METRICS):
        assert rep[name].excluded == ["q6"]
        for qid, vals in HAND.items():
            assert rep[name].per_query[qid] == pytest.approx(vals[k], abs=1e-9)
        assert rep[name].mean == pytest.approx(sum(v[k] for v in HAND.values()) / 5, abs=1e-9)


def test_single_examples():
    qrels = {"q": {"r": 1}}
    assert em.mrr_at(_run({"q": ["r"]}), qrels).per_query["q"] == 1.0
    assert em.mrr_at(_run({"q": ["a", "b", "r"]}), qrels).per_query["q"] == pytest.approx(1 / 3)
    assert em.mrr_at(_run({"q": [f"x{k}" for k in range(10)] + ["r"]}), qrels).per_query["q"] == 0.0
    assert em.ndcg_at(_run({"q": ["a", "r"]}), qrels).per_query["q"] == pytest.approx(0.6309, abs=1e-4)
    two = {"q": {"r": 1, "s": 1}}
    assert em.ndcg_at(_run({"q": ["r", "x", "s"]}), two).per_query["q"] == pytest.approx(0.9197, abs=1e-4)
    assert em.recall_at(_run({"q": ["r", "x"]}), two).per_query["q"] == 0.5
    with pytest.raises(ValueError):
        em.mrr_at(_run({"q": ["r"]}), qrels, k=0)


def test_run_file_roundtrip(tmp_path):
    em.write_run(FIXTURE_RUN, tmp_path / "r.txt")
    assert em.read_run(tmp_path / "r.txt") == FIXTURE_RUN
    first = (tmp_path / "r.txt").read_text().splitlines()[0].split()
    assert first[:4] == ["q1", "Q0", "A", "1"] and first[5] == "t"


def test_read_run_sorts_by_rank_and_rejects_bad_rows(tmp_path):
    (tmp_path / "r.txt").write_text("q Q0 b 2 1.0 t\nq Q0 a 1 2.0 t\n")
    assert [e.pid for e in em.read_run(tmp_path / "r.txt")["q"]] == ["a", "b"]
    (tmp_path / "bad.txt").write_text("q Q0 b 2 1.0\n")
    with pytest.raises(ParseError):
        em.read_run(tmp_path / "bad.txt")
    (tmp_path / "dup.txt").write_text("q Q0 a 1 1.0 t\nq Q0 b 1 1.0 t\n")
    with pytest.raises(ParseError):
        em.read_run(tmp_path / "dup.txt")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=1, max_size=25, unique=True), st.sets(st.integers(0, 30), min_size=1), st.integers(1, 12))
def test_metric_ranges(ranking, relevant, k):
    run = _run({"q": [f"d{x}" for x in ranking]})
    qrels = {"q": {f"d{x}": 1 for x in relevant}}
    rep = em.evaluate(run, qrels, k)
    for name in em.METRICS:
        assert 0.0 <= rep[name].per_query["q"] <= 1.0
    if all(f"d{x}" in [f"d{y}" for y in ranking[:k]] for x in relevant):
        assert rep["recall"].per_query["q"] == 1.0


def test_affine_rescaling_invariance():
    scaled = {qid: [e._replace(score=3.0 * e.score - 7.0) for e in entries] for qid, entries in FIXTURE_RUN.items()}
    assert em.evaluate(scaled, FIXTURE_QRELS).means == em.evaluate(FIXTURE_RUN, FIXTURE_QRELS).means


def test_compare_identical_runs():
    rows = em.compare_runs(FIXTURE_RUN, FIXTURE_RUN, FIXTURE_QRELS, 10)
    assert [r.delta_pct for r in rows] == [0.0, 0.0, 0.0]
    assert all(r.wilcoxon.p_value is None for r in rows)


def test_relative_delta():
    d = em.relative_delta(0.432, 0.395)
    assert d < 0 and -9.5 <= d <= -8.5
    assert em.relative_delta(0.0, 0.3) is None


def test_compare_uses_shared_queries_and_rejects_disjoint():
    a = _run({"q1": ["A"], "q2": ["X", "C"]})
    b = _run({"q2": ["C"], "q3": ["A"]})
    qrels = {"q1": {"A": 1}, "q2": {"C": 1}, "q3": {"A": 1}}
    rows = em.compare_runs(a, b, qrels)
    mrr = rows[0]
    assert mrr.mean_a == 0.5 and mrr.mean_b == 1.0 and mrr.delta_pct == pytest.approx(100.0)
    with pytest.raises(ValueError):
        em.compare_runs(_run({"q1": ["A"]}), _run({"q3": ["A"]}), qrels)


def _brute_exact_p(ranks, w_plus):
    sums = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product((0, 1), repeat=len(ranks))]
    lo = sum(1 for s in sums if s <= w_plus + 1e-9) / len(sums)
    hi = sum(1 for s in sums if s >= w_plus - 1e-9) / len(sums)
    return min(1.0, 2 * min(lo, hi))


def test_wilcoxon_textbook_n8():
    # |d| ranks 1..8 with the two smallest negative: T = W- = 3, the n=8
    # two-sided 0.05 critical value; exact p = 2 * 5/256.
    a = [18, 17, 16, 15, 14, 13, 10, 10]
    b = [10, 10, 10, 10, 10, 10, 12, 11]
    res = em.wilcoxon_signed_rank(a, b)
    assert (res.w_plus, res.w_minus, res.n_effective) == (33.0, 3.0, 8)
    assert res.p_value == pytest.approx(10 / 256, abs=1e-12)
    assert res.p_value == pytest.approx(_brute_exact_p(list(range(1, 9)), 33.0), abs=1e-12)
    assert res.p_value < 0.05
    # T = 4 is no longer significant at 0.05.
    res4 = em.wilcoxon_signed_rank([18, 17, 16, 15, 14, 10, 12, 10], [10, 10, 10, 10, 10, 10, 10, 11])
    assert res4.w_minus == 1.0
    assert em.wilcoxon_signed_rank([1, 2, 3, 4, 5, 6, 7, 8], [0, 0, 0, 0, 0, 0, 0, 8]).n_effective == 7


def test_wilcoxon_identical_is_undefined():
    res = em.wilcoxon_signed_rank([0.1, 0.5], [0.1, 0.5])
    assert res.n_effective == 0 and res.p_value is None


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=12))
def test_wilcoxon_exact_matches_enumeration_with_ties(pairs):
    a, b = [x for x, _ in pairs], [y for _, y in pairs]
    res = em.wilcoxon_signed_rank(a, b)
    nz = [x - y for x, y in pairs if x != y]
    if not nz:
        assert res.p_value is None
        return
    ranks = stats.rankdata([abs(d) for d in nz])
    w_plus = sum(r for r, d in zip(ranks, nz) if d > 0)
    assert res.w_plus == pytest.approx(w_plus)
    assert res.p_value == pytest.approx(_brute_exact_p(list(ranks), w_plus), abs=1e-12)
    swapped = em.wilcoxon_signed_rank(b, a)
    assert swapped.statistic == -res.statistic and swapped.p_value == res.p_value


@pytest.mark.parametrize("seed", range(5))
def test_wilcoxon_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    for n in (10, 25, 40, 200):
        a, b = rng.random(n), rng.random(n) + 0.05
        ours = em.wilcoxon_signed_rank(a, b)
        method = "exact" if n <= 25 else "approx"
        ref = stats.wilcoxon(a, b, method=method, correction=True)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-12)
        assert min(ours.w_plus, ours.w_minus) == pytest.approx(ref.statistic)


def test_wilcoxon_pratt_keeps_zero_ranks():
    a, b = [1, 2, 3, 4, 5, 0], [0, 0, 0, 0, 0, 0]
    wil = em.wilcoxon_signed_rank(a, b, "wilcox")
    pratt = em.wilcoxon_signed_rank(a, b, "pratt")
    assert wil.w_plus == 15.0 and pratt.w_plus == 20.0
    assert pratt.n_effective == 5
    with pytest.raises(ValueError):
        em.wilcoxon_signed_rank([1], [1, 2])


def test_comparison_csv(tmp_path):
    worse = _run({"q1": ["B", "A"], "q2": ["C"], "q3": ["B", "C", "A"], "q4": ["Z"], "q5": ["P"]})
    rows = em.compare_runs(FIXTURE_RUN, worse, FIXTURE_QRELS)
    em.write_comparison_csv(rows, 10, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "metric,orig,deb,delta_pct,p_value,sig"
    assert lines[1].startswith("mrr@10,")
