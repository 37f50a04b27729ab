import numpy as np
import pytest

from poe.fusion import (FusionMode, PanelScorer, count_passes, pool_experts, pooled_panel, resolve_hint, score,
                        score_batch)
from poe.panel import expert_keys, new_panel
from poe.records import ContextResponsePair

from conftest import TINY

PAIRS = [ContextResponsePair(["the cat sat"], "on a mat", "a"),
         ContextResponsePair(["hello there", "how are you"], "fine thanks", "a"),
         ContextResponsePair(["a mat"], "the the the", "a")]


def test_late_fusion_is_mean_of_components(tiny_panel):
    for t in score_batch(tiny_panel, PAIRS):
        assert len(t.components) == 3 and t.passes == 3
        assert abs(t.score - sum(t.components) / 3) < 1e-12
        assert len(set(t.components)) == 3


def test_hint_selects_one_expert(tiny_panel):
    late = score(tiny_panel, PAIRS[0])
    by_index = score(tiny_panel, PAIRS[0], 1)
    by_name = score(tiny_panel, PAIRS[0], "b")
    assert by_index.score == late.components[1] == by_name.score
    assert count_passes(by_index) == 1 and count_passes(late) == 3


def test_unknown_domain_name_falls_back(tiny_panel):
    assert resolve_hint(tiny_panel, "unseen") is None
    assert score(tiny_panel, PAIRS[0], "unseen").passes == 3
    with pytest.raises(IndexError):
        resolve_hint(tiny_panel, 3)


def test_single_expert_hinted_equals_unhinted(vocab):
    panel = new_panel(vocab, ["only"], 0, init_range=0.3, **TINY)
    for p in PAIRS:
        assert score(panel, p).score == score(panel, p, 0).score


def test_elementwise_pooling(vocab):
    panel = new_panel(vocab, ["a", "b"], 0, **TINY)
    panel.params["exp0.head.w"][3, 0] = 1.0
    panel.params["exp1.head.w"][3, 0] = 3.0
    assert pool_experts(panel, "avg")["exp0.head.w"][3, 0] == 2.0
    assert pool_experts(panel, "max")["exp0.head.w"][3, 0] == 3.0
    assert pool_experts(panel, "min")["exp0.head.w"][3, 0] == 1.0


@pytest.mark.parametrize("mode", list(FusionMode))
def test_pooling_identical_experts_is_identity(tiny_panel, mode):
    for n in (1, 2):
        for k in expert_keys(tiny_panel.params, 0):
            tiny_panel.params[f"exp{n}." + k.split(".", 1)[1]] = tiny_panel.params[k].copy()
    pooled = pooled_panel(tiny_panel, mode)
    assert pooled.n_experts == 1 and pooled.domains == [f"pooled-{mode.value}"]
    np.testing.assert_allclose(pooled.predict(PAIRS, 0), tiny_panel.predict(PAIRS, 0), rtol=0, atol=1e-12)


def test_pooled_scores_deterministic_and_bounded(tiny_panel):
    a = pooled_panel(tiny_panel, "avg").predict(PAIRS, 0)
    b = pooled_panel(tiny_panel, "avg").predict(PAIRS, 0)
    assert np.array_equal(a, b) and ((a > 0) & (a < 1)).all()


def test_pooling_leaves_source_panel_alone(tiny_panel):
    before = {k: v.copy() for k, v in tiny_panel.params.items()}
    pooled = pooled_panel(tiny_panel, "max")
    pooled.params["enc.emb_ln.g"] += 1.0
    assert all(np.array_equal(before[k], tiny_panel.params[k]) for k in before)


def test_pass_counts(vocab):
    panel = new_panel(vocab, [f"d{i}" for i in range(5)], 0, **TINY)
    assert all(t.passes == 5 for t in score_batch(panel, PAIRS))
    assert all(t.passes == 1 for t in score_batch(panel, PAIRS, "d4"))
    assert all(t.passes == 1 for t in score_batch(pooled_panel(panel), PAIRS))


def test_scorer_counts_passes_and_routes(tiny_panel):
    late = PanelScorer(tiny_panel)
    late(PAIRS, None)
    assert late.passes == 3 * len(PAIRS)
    pooled = PanelScorer(tiny_panel, "min")
    s = pooled(PAIRS, None)
    assert pooled.passes == len(PAIRS)
    np.testing.assert_array_equal(s, pooled_panel(tiny_panel, "min").predict(PAIRS, 0))
    hinted = pooled(PAIRS, "c")
    np.testing.assert_array_equal(hinted, tiny_panel.predict(PAIRS, 2))
    assert pooled.passes == 2 * len(PAIRS)
