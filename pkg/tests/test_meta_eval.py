import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy import stats

from poe.meta_eval import (bootstrap_compare, evaluate_metric, hits_at_1, rank_average, spearman,
                           spearman_pvalue)
from poe.records import ContextResponsePair, EvaluationRecord, SelectionTask


def brute_ranks(x):
    """Average 1-based ranks by direct counting."""
    return np.array([sum(y < v for y in x) + (sum(y == v for y in x) + 1) / 2 for v in x])


def brute_spearman(s, q):
    return float(np.corrcoef(brute_ranks(s), brute_ranks(q))[0, 1])


def closed_form(s, q):
    k = rank_average(s) - rank_average(q)
    n = len(s)
    return 1 - 6 * float(k @ k) / (n * (n * n - 1))


def test_worked_example():
    s, q = [0.2, 0.9, 0.5, 0.1], [2, 3, 5, 1]
    assert abs(spearman(s, q) - 0.8) < 1e-12
    assert abs(brute_spearman(s, q) - 0.8) < 1e-12
    assert abs(closed_form(s, q) - 0.8) < 1e-12


def test_perfect_and_reversed():
    q = [1.0, 2.5, 3.0, 7.0, 9.0]
    assert spearman(q, q) == 1.0
    assert spearman(q[::-1], q) == -1.0


def test_ties_share_average_rank():
    assert rank_average([3, 1, 3, 2]).tolist() == [3.5, 1.0, 3.5, 2.0]


def test_constant_vector_is_nan():
    assert math.isnan(spearman([1, 1, 1, 1], [1, 2, 3, 4]))


def test_input_validation():
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2])
    with pytest.raises(ValueError):
        spearman([1, 2, 3], [1, 2, 3, 4])


def test_pvalue_matches_scipy():
    rng = np.random.default_rng(0)
    s, q = rng.normal(size=40), rng.normal(size=40)
    rho = spearman(s, q)
    assert abs(spearman_pvalue(rho, 40) - stats.spearmanr(s, q).pvalue) < 1e-10


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=3, max_size=25).flatmap(
    lambda a: st.tuples(st.just(a), st.lists(st.integers(0, 6), min_size=len(a), max_size=len(a)))))
def test_matches_brute_force_with_ties(pair):
    s, q = pair
    rho = spearman(s, q)
    if math.isnan(rho):
        assert len(set(s)) == 1 or len(set(q)) == 1
    else:
        assert abs(rho - brute_spearman(s, q)) < 1e-12
        assert abs(rho - spearman(q, s)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=30, unique=True), st.randoms(use_true_random=False))
def test_invariant_under_increasing_transform(xs, rnd):
    q = [rnd.random() for _ in xs]
    s = np.array(xs)
    t = np.exp(s / 50) * 3 + 1
    assume(len(set(t)) == len(xs) and len(set(q)) > 1)
    assert spearman(s, q) == spearman(t, q)


def _records(scores, domain="d"):
    return [EvaluationRecord(ContextResponsePair(["c"], f"r{i}", domain), float(v)) for i, v in enumerate(scores)]


def test_evaluate_metric_oracle_and_anti_oracle():
    rng = np.random.default_rng(1)
    data = {"x": _records(rng.normal(size=30)), "y": _records(rng.normal(size=20)), "z": _records(rng.normal(size=12))}
    lookup = {id(r.pair): r.human_score for rs in data.values() for r in rs}
    oracle = lambda pairs, hint: np.array([lookup[id(p)] for p in pairs])
    anti = lambda pairs, hint: -oracle(pairs, hint)
    rep = evaluate_metric(oracle, data, {"x": "chat", "y": "chat"}, ["chat"])
    assert all(d.rho == 1.0 for d in rep.datasets) and rep.overall == 1.0
    assert rep.domain_means == {"chat": 1.0, "Other": 1.0}
    assert all(d.rho == -1.0 for d in evaluate_metric(anti, data, {}).datasets)


def test_evaluate_metric_hints_and_unweighted_mean():
    rng = np.random.default_rng(2)
    data = {"a": _records(rng.normal(size=50)), "b": _records(rng.normal(size=10)), "c": _records(rng.normal(size=8))}
    seen = []

    def scorer(pairs, hint):
        seen.append(hint)
        return rng.normal(size=len(pairs))

    rep = evaluate_metric(scorer, data, {"a": "chat", "b": "kg", "c": "Other"}, ["chat"])
    assert seen == ["chat", None, None]
    rhos = [d.rho for d in rep.datasets]
    assert abs(rep.overall - sum(rhos) / 3) < 1e-12
    assert abs(evaluate_metric(lambda p, h: np.arange(len(p)), {"a": data["a"]}, {}).overall
               - spearman(np.arange(50), [r.human_score for r in data["a"]])) < 1e-12
    table = rep.table()
    assert "Average (all)" in table and "Average (chat)" in table


def _tasks(n, rng):
    return [SelectionTask(["ctx"], [f"c{j}" for j in range(20)], int(rng.integers(20))) for _ in range(n)]


def test_hits_oracle_constant_random():
    rng = np.random.default_rng(3)
    tasks = _tasks(10000, rng)
    truth = {id(t.candidates): t.positive_index for t in tasks}

    def oracle(ctx, cands):
        s = np.zeros(20)
        s[truth[id(cands)]] = 1.0
        return s

    assert hits_at_1(oracle, tasks) == 1.0
    assert hits_at_1(lambda c, k: np.ones(20), tasks) == 0.0
    assert abs(hits_at_1(lambda c, k: rng.random(20), tasks) - 0.05) < 0.01


def test_hits_invariant_under_increasing_transform():
    rng = np.random.default_rng(4)
    tasks = _tasks(300, rng)
    table = {id(t.candidates): rng.normal(size=20) for t in tasks}
    base = hits_at_1(lambda c, k: table[id(k)], tasks)
    assert base == hits_at_1(lambda c, k: np.tanh(table[id(k)]) * 5 + 2, tasks)


def test_bootstrap_identical_metrics():
    rng = np.random.default_rng(5)
    q, a = rng.normal(size=50), rng.normal(size=50)
    assert abs(bootstrap_compare(a, a, q, 2000) - 0.5) <= 0.05


def test_bootstrap_oracle_beats_anti_oracle():
    q = np.random.default_rng(6).normal(size=100)
    assert bootstrap_compare(q, -q, q, 1000) < 0.01
    assert bootstrap_compare(-q, q, q, 1000) > 0.99


def test_bootstrap_seed_stability():
    rng = np.random.default_rng(7)
    q = rng.normal(size=100)
    a, b = q + rng.normal(scale=1.0, size=100), q + rng.normal(scale=1.3, size=100)
    p1, p2 = bootstrap_compare(a, b, q, 10000, seed=1), bootstrap_compare(a, b, q, 10000, seed=2)
    assert 0.0 < p1 < 1.0 and abs(p1 - p2) <= 0.02


def test_bootstrap_validation():
    q = np.arange(20.0)
    with pytest.raises(ValueError):
        bootstrap_compare(q[:5], q[:5], q[:5])
    with pytest.raises(ValueError):
        bootstrap_compare(q, q, q, resamples=10)
    with pytest.raises(ValueError):
        bootstrap_compare(np.ones(20), q, q, 1000)
