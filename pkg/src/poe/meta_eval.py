"""Correlation with human judgement, per-domain aggregation, and response selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .records import ContextResponsePair, EvaluationRecord, SelectionTask

log = logging.getLogger(__name__)

OTHER = "Other"

# scores a list of pairs, optionally with a known training-domain name
Scorer = Callable[[Sequence[ContextResponsePair], "str | None"], np.ndarray]


def rank_average(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    a = np.asarray(x, dtype=np.float64)
    order = np.argsort(a, kind="mergesort")
    sorted_a = a[order]
    starts = np.flatnonzero(np.r_[True, sorted_a[1:] != sorted_a[:-1]])
    ends = np.r_[starts[1:], a.size]
    avg = (starts + ends + 1) / 2.0  # mean of 1-based ranks start+1 .. end
    ranks = np.empty(a.size)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def spearman(s: Sequence[float], q: Sequence[float]) -> float:
    """Spearman's rho as the Pearson correlation of average ranks.

    Returns NaN when either vector is constant (rho undefined).
    """
    s, q = np.asarray(s, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if s.shape != q.shape or s.ndim != 1:
        raise ValueError(f"score vectors must be 1-D and equal length, got {s.shape} and {q.shape}")
    if s.size < 3:
        raise ValueError("need at least 3 observations")
    rs, rq = rank_average(s), rank_average(q)
    rs -= rs.mean()
    rq -= rq.mean()
    denom = math.sqrt(float(rs @ rs) * float(rq @ rq))
    if denom == 0.0:
        return float("nan")
    return float(np.clip((rs @ rq) / denom, -1.0, 1.0))


def spearman_pvalue(rho: float, n: int) -> float:
    """Two-sided p-value from the t approximation."""
    if math.isnan(rho):
        return float("nan")
    if abs(rho) >= 1.0:
        return 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


@dataclass
class DatasetScore:
    name: str
    domain: str
    rho: float
    n: int
    p_value: float


@dataclass
class ScoreReport:
    datasets: list[DatasetScore] = field(default_factory=list)
    domain_means: dict[str, float] = field(default_factory=dict)
    overall: float = float("nan")
    passes: int = 0

    def to_json(self) -> dict:
        return {"datasets": [vars(d) for d in self.datasets], "domain_means": self.domain_means,
                "overall": self.overall, "encoder_passes": self.passes}

    def table(self) -> str:
        rows = [("dataset", "domain", "n", "rho", "p")]
        rows += [(d.name, d.domain, str(d.n), f"{d.rho:.4f}", f"{d.p_value:.3g}") for d in self.datasets]
        rows += [(f"Average ({dom})", dom, "", f"{v:.4f}", "") for dom, v in self.domain_means.items()]
        rows.append(("Average (all)", "", "", f"{self.overall:.4f}", ""))
        widths = [max(len(r[i]) for r in rows) for i in range(5)]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def evaluate_metric(scorer: Scorer, datasets: Mapping[str, Sequence[EvaluationRecord]],
                    domain_map: Mapping[str, str], training_domains: Sequence[str] = ()) -> ScoreReport:
    """Spearman rho per evaluation dataset plus unweighted domain and overall means.

    ``domain_map`` tags each dataset with a training-domain name or ``"Other"``.
    In-domain datasets are scored with that domain passed to the scorer; the
    rest get ``None`` and the scorer falls back to its out-of-domain path.
    """
    report = ScoreReport()
    passes_before = getattr(scorer, "passes", 0)
    by_domain: dict[str, list[float]] = {}
    for name, records in datasets.items():
        if not records:
            raise ValueError(f"evaluation dataset {name!r} is empty")
        domain = domain_map.get(name, OTHER)
        hint = domain if domain != OTHER and (not training_domains or domain in training_domains) else None
        s = np.asarray(scorer([r.pair for r in records], hint), dtype=np.float64)
        q = np.array([r.human_score for r in records])
        rho = spearman(s, q)
        report.datasets.append(DatasetScore(name, domain, rho, len(records), spearman_pvalue(rho, len(records))))
        by_domain.setdefault(domain, []).append(rho)
    report.passes = getattr(scorer, "passes", 0) - passes_before
    report.domain_means = {d: float(np.mean(v)) for d, v in by_domain.items()}
    total = 0.0
    for d in report.datasets:
        total += d.rho
    report.overall = total / len(report.datasets)
    return report


def hits_at_1(scorer: Callable[[Sequence[str], Sequence[str]], np.ndarray],
              tasks: Sequence[SelectionTask]) -> float:
    """Fraction of tasks whose positive strictly outscores every distractor."""
    if not tasks:
        raise ValueError("no selection tasks")
    hits = 0
    for task in tasks:
        s = np.asarray(scorer(task.context, task.candidates), dtype=np.float64)
        pos = s[task.positive_index]
        others = np.delete(s, task.positive_index)
        hits += bool(np.all(pos > others))
    return hits / len(tasks)


def bootstrap_compare(scores_a: Sequence[float], scores_b: Sequence[float], q: Sequence[float],
                      resamples: int = 10000, seed: int = 0) -> float:
    """One-sided paired bootstrap p-value that metric A does not beat metric B.

    Resamples record indices with replacement and returns the fraction of
    resamples with rho(B*) >= rho(A*), ties counting one half. Resamples in
    which any vector is constant are redrawn.
    """
    a, b, q = (np.asarray(v, dtype=np.float64) for v in (scores_a, scores_b, q))
    n = len(q)
    if not len(a) == len(b) == n:
        raise ValueError("score vectors must have equal length")
    if n < 10:
        raise ValueError("need at least 10 records")
    if resamples < 1000:
        raise ValueError("need at least 1000 resamples")
    if any(math.isnan(spearman(v, q)) for v in (a, b)):
        raise ValueError("constant score vector; rho undefined")
    rng = np.random.default_rng(seed)
    wins = 0.0
    redrawn = 0
    done = 0
    while done < resamples:
        idx = rng.integers(0, n, size=n)
        ra, rb = spearman(a[idx], q[idx]), spearman(b[idx], q[idx])
        if math.isnan(ra) or math.isnan(rb):
            redrawn += 1
            continue
        wins += 1.0 if rb > ra else 0.5 if rb == ra else 0.0
        done += 1
    if redrawn:
        log.info("bootstrap redrew %d degenerate resamples", redrawn)
    return wins / resamples
