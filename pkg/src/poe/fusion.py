"""Combining experts at inference time: hinted selection, late fusion, parameter pooling."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .panel import Panel, PanelConfig, encoder_keys, expert_keys, expert_suffix, predict_ids
from .records import ContextResponsePair

log = logging.getLogger(__name__)


class FusionMode(str, Enum):
    AVG = "avg"
    MAX = "max"
    MIN = "min"


@dataclass
class ScoreTrace:
    components: list[float]
    score: float
    passes: int


def resolve_hint(panel: Panel, hint: int | str | None) -> int | None:
    """Map a domain name or expert index to an expert index.

    Unknown domain names fall back to the out-of-domain path.
    """
    if hint is None:
        return None
    if isinstance(hint, str):
        if hint in panel.domains:
            return panel.domains.index(hint)
        log.info("domain %r has no expert; scoring out-of-domain", hint)
        return None
    if not 0 <= hint < panel.n_experts:
        raise IndexError(f"domain hint {hint} out of range for {panel.n_experts} experts")
    return int(hint)


def score_batch(panel: Panel, pairs: Sequence[ContextResponsePair],
                domain_hint: int | str | None = None) -> list[ScoreTrace]:
    """Score pairs with one expert when the domain is known, else average all experts."""
    n = resolve_hint(panel, domain_hint)
    ids = panel.encode(pairs)
    if n is not None:
        s = predict_ids(panel.params, ids, panel.config, n)
        return [ScoreTrace([float(v)], float(v), 1) for v in s]
    comps = np.stack([predict_ids(panel.params, ids, panel.config, k)
                      for k in range(panel.n_experts)], axis=1)
    traces = []
    for row in comps:
        total = 0.0
        for v in row:
            total += float(v)
        traces.append(ScoreTrace([float(v) for v in row], total / len(row), panel.n_experts))
    return traces


def score(panel: Panel, pair: ContextResponsePair, domain_hint: int | str | None = None) -> ScoreTrace:
    return score_batch(panel, [pair], domain_hint)[0]


def count_passes(trace: ScoreTrace) -> int:
    return trace.passes


_REDUCERS = {FusionMode.AVG: lambda a: a.mean(axis=0),
             FusionMode.MAX: lambda a: a.max(axis=0),
             FusionMode.MIN: lambda a: a.min(axis=0)}


def pool_experts(panel: Panel, mode: FusionMode | str = FusionMode.AVG) -> dict[str, np.ndarray]:
    """Elementwise avg/max/min across all experts' adapter and head tensors.

    Returns the pooled tensors under expert index 0 names (``exp0.*``).
    """
    mode = FusionMode(mode)
    suffixes = [expert_suffix(k) for k in expert_keys(panel.params, 0)]
    pooled = {}
    for suf in suffixes:
        stack = [panel.params[f"exp{n}.{suf}"] for n in range(panel.n_experts)]
        if len({a.shape for a in stack}) != 1:
            raise ValueError(f"experts disagree on the shape of {suf}")
        pooled[f"exp0.{suf}"] = _REDUCERS[mode](np.stack(stack))
    return pooled


def pooled_panel(panel: Panel, mode: FusionMode | str = FusionMode.AVG) -> Panel:
    """A single-expert panel sharing the encoder and carrying the pooled expert."""
    mode = FusionMode(mode)
    params = {k: panel.params[k].copy() for k in encoder_keys(panel.params)}
    params.update(pool_experts(panel, mode))
    cfg = PanelConfig(**{**panel.config.to_dict(), "n_experts": 1})
    return Panel(cfg, panel.vocab, params, [f"pooled-{mode.value}"])


class PanelScorer:
    """Callable scorer with an encoder-pass counter.

    With a known domain hint the matching expert scores alone. Without one,
    ``fusion="late"`` averages every expert, and a pooling mode scores with the
    pooled single-expert panel instead.
    """

    def __init__(self, panel: Panel, fusion: str = "late"):
        self.panel = panel
        self.fusion = fusion
        self.pooled = None if fusion == "late" else pooled_panel(panel, fusion)
        self.passes = 0

    def __call__(self, pairs: Sequence[ContextResponsePair], hint: int | str | None = None) -> np.ndarray:
        n = resolve_hint(self.panel, hint)
        if n is None and self.pooled is not None:
            traces = score_batch(self.pooled, pairs, 0)
        else:
            traces = score_batch(self.panel, pairs, n)
        self.passes += sum(t.passes for t in traces)
        return np.array([t.score for t in traces])

    def select(self, context: Sequence[str], candidates: Sequence[str], hint: int | str | None = None) -> np.ndarray:
        return self(_candidate_pairs(context, candidates), hint)


def _candidate_pairs(context, candidates):
    return [ContextResponsePair(list(context), c, "selection") for c in candidates]
