"""Panel-of-experts scorer for open-domain dialogue responses."""

from .panel import Panel, PanelConfig, Vocab, new_panel, panel_forward
from .fusion import FusionMode, PanelScorer, pooled_panel, score, score_batch
from .meta_eval import evaluate_metric, hits_at_1, spearman

__all__ = ["Panel", "PanelConfig", "Vocab", "new_panel", "panel_forward", "FusionMode", "PanelScorer",
           "pooled_panel", "score", "score_batch", "evaluate_metric", "hits_at_1", "spearman"]
