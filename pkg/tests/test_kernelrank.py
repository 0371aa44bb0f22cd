import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from posbias import kernelrank as kr

MUS = [-1 + 0.2 * k for k in range(11)]


def test_default_config():
    cfg = kr.KernelConfig()
    assert cfg.k == 11 and cfg.sigma == 0.1
    assert cfg.mus[0] == -1.0 and cfg.mus[-1] == 1.0
    np.testing.assert_allclose(cfg.mus, MUS, atol=1e-12)
    with pytest.raises(ValueError):
        kr.KernelConfig((0.0, 0.0))
    with pytest.raises(ValueError):
        kr.KernelConfig((0.0,), sigma=0)


def test_activation_is_one_at_center():
    cfg = kr.KernelConfig((0.0, 0.5, 1.0), 0.1)
    act = kr.kernel_activations([[1.0, 0.0]], [[1.0, 0.0]], cfg)
    assert act[2, 0, 0] == 1.0
    assert act[0, 0, 0] < 1.0


def test_activation_hand_value():
    cfg = kr.KernelConfig((0.8,), 0.1)
    act = kr.kernel_activations([[1.0, 0.0]], [[2.0, 0.0]], cfg)
    assert act[0, 0, 0] == pytest.approx(math.exp(-2.0), abs=1e-12)
    assert act[0, 0, 0] == pytest.approx(0.13534, abs=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_activation_range(seed):
    rng = np.random.default_rng(seed)
    act = kr.kernel_activations(rng.normal(size=(3, 5)), rng.normal(size=(7, 5)), kr.KernelConfig())
    assert act.shape == (11, 3, 7)
    assert (act <= 1.0).all() and (act > 0.0).all()


def test_empty_sequences_rejected():
    with pytest.raises(ValueError):
        kr.kernel_activations(np.zeros((0, 3)), np.ones((2, 3)), kr.KernelConfig())


def test_zero_vectors_get_cosine_zero():
    cos, qz, pz = kr.cosine_matrix([[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]])
    assert cos.tolist() == [[0.0, 0.0], [1.0, 0.0]]
    assert qz.tolist() == [True, False] and pz.tolist() == [False, True]


def _oracle_score(cos_rows, mus, sigma, w, bias=0.0):
    total = bias
    for mu, wk in zip(mus, w):
        feat = 0.0
        for row in cos_rows:
            s = sum(math.exp(-((c - mu) ** 2) / (2 * sigma * sigma)) for c in row)
            feat += math.log(max(s, 1e-10))
        total += feat * wk
    return total


def test_two_by_two_hand_oracle():
    q = [[1.0, 0.0], [0.0, 1.0]]
    p = [[1.0, 0.0], [0.5, math.sqrt(3) / 2]]
    cos = [[1.0, 0.5], [0.0, math.sqrt(3) / 2]]
    w = [0.3, -0.1, 0.0, 0.2, 0.5, 1.0, -0.4, 0.7, 0.05, 0.9, 0.25]
    got = kr.score(q, p, kr.KernelConfig(), kr.ScoreWeights(w, 0.5))
    assert got == pytest.approx(_oracle_score(cos, MUS, 0.1, w, 0.5), abs=1e-6)
    assert kr.score(q, p, kr.KernelConfig()) == pytest.approx(-20.336333513481986, abs=1e-6)


def test_single_pair_log_of_unit_sum():
    cfg = kr.KernelConfig((0.0, 1.0), 0.01)
    feats = kr.kernel_features([[1.0, 0.0]], [[3.0, 0.0]], cfg)
    assert feats[1] == 0.0
    assert feats[0] == pytest.approx(math.log(1e-10))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_passage_permutation_and_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    q, p = rng.normal(size=(4, 8)), rng.normal(size=(9, 8))
    cfg = kr.KernelConfig()
    s = kr.score(q, p, cfg)
    assert kr.score(q, p[rng.permutation(9)], cfg) == pytest.approx(s, abs=1e-6)
    assert kr.score(q * 7.3, p * 7.3, cfg) == pytest.approx(s, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_adding_exact_match_never_lowers_top_kernel(seed):
    rng = np.random.default_rng(seed)
    q, p = rng.normal(size=(3, 6)), rng.normal(size=(5, 6))
    cfg = kr.KernelConfig()
    before = kr.kernel_features(q, p, cfg)[-1]
    after = kr.kernel_features(q, np.vstack([p, q[rng.integers(3)] * 2.0]), cfg)[-1]
    assert after >= before


def test_rerank_depth_one_keeps_order():
    cands = [("a", 3.0), ("b", 2.0), ("c", 1.0)]
    out = kr.rerank("q", cands, {"a": 0.0, "b": 9.0, "c": 5.0}.get, depth=1)
    assert [e.pid for e in out] == ["a", "b", "c"]
    assert [e.rank for e in out] == [1, 2, 3]
    assert all(x.score > y.score for x, y in zip(out, out[1:]))


def test_rerank_sorts_head_and_keeps_tail():
    cands = [(p, 0.0) for p in "abcde"]
    scores = {"a": 1.0, "b": 3.0, "c": 2.0, "d": 100.0, "e": 50.0}
    out = kr.rerank("q", cands, scores.get, depth=3)
    assert [e.pid for e in out] == ["b", "c", "a", "d", "e"]
    assert all(x.score > y.score for x, y in zip(out, out[1:]))


def test_rerank_ties_keep_prior_order():
    out = kr.rerank("q", [("x", 2.0), ("y", 1.0), ("z", 0.5)], lambda pid: 1.0, depth=3)
    assert [e.pid for e in out] == ["x", "y", "z"]


def test_rerank_empty_and_bad_depth():
    assert kr.rerank("q", [], lambda p: 0.0, 5) == []
    with pytest.raises(ValueError):
        kr.rerank("q", [("a", 1.0)], lambda p: 0.0, 0)
