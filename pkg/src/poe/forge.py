"""Building labeled multi-domain training data from raw dialogues.

Positives are context/next-utterance pairs. Negatives come from syntactic
perturbation, random utterances of other dialogues, mask-and-fill with tokens
from an unrelated context, and perturbed copies of a context utterance. Every
candidate is scored by a teacher; only confident ones are kept, and the
majority class is downsampled so each domain ends up balanced.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .panel import SPECIALS, tokenize
from .records import ContextResponsePair, Dialogue, DomainDataset

log = logging.getLogger(__name__)

MAX_CONTEXT = 4

STOPWORDS = frozenset("""
a an the and or but if of to in on at by for with from as is are was were be been
i you he she it we they me him her us them my your his its our their this that what
not no do so can will
""".split())

SYNTACTIC_MODES = ("drop", "shuffle", "repeat")
NEGATIVE_KINDS = ("word_drop", "word_shuffle", "word_repeat", "random_utterance",
                  "mask_and_fill", "adversarial_context")


class InapplicableError(ValueError):
    """An augmenter cannot transform this input."""


def extract_pairs(dialogue: Dialogue) -> list[ContextResponsePair]:
    """Each utterance after the first becomes a positive response to up to 4 preceding ones."""
    out = []
    utts = dialogue.utterances
    for t in range(1, len(utts)):
        out.append(ContextResponsePair(context=list(utts[max(0, t - MAX_CONTEXT):t]), response=utts[t],
                                       domain=dialogue.domain, provenance="original",
                                       dialogue_id=dialogue.id or None))
    return out


def perturb_syntactic(response: str, mode: str, rng: np.random.Generator) -> str:
    """Word drop (up to half the tokens), non-identity shuffle, or in-place repetition."""
    toks = tokenize(response)
    if len(toks) < 2:
        raise InapplicableError("syntactic perturbation needs at least 2 tokens")
    if mode == "drop":
        k = int(rng.integers(1, len(toks) // 2 + 1))
        gone = set(rng.choice(len(toks), size=k, replace=False).tolist())
        return " ".join(t for i, t in enumerate(toks) if i not in gone)
    if mode == "shuffle":
        if len(set(toks)) == 1:
            raise InapplicableError("all tokens identical; no shuffle changes the text")
        while True:
            out = [toks[i] for i in rng.permutation(len(toks))]
            if out != toks:
                return " ".join(out)
    if mode == "repeat":
        k = int(rng.integers(1, len(toks) // 2 + 1))
        dup = set(rng.choice(len(toks), size=k, replace=False).tolist())
        out = []
        for i, t in enumerate(toks):
            out.append(t)
            if i in dup:
                out.append(t)
        return " ".join(out)
    raise ValueError(f"unknown perturbation mode {mode!r}")


def sample_random_negative(corpus: Sequence[Dialogue], source: int,
                           rng: np.random.Generator) -> tuple[str, int]:
    """A verbatim utterance from some dialogue other than ``corpus[source]``.

    Returns the utterance and the index of the dialogue it came from.
    """
    if len(corpus) < 2:
        raise InapplicableError("random negatives need at least 2 dialogues")
    other = int(rng.integers(len(corpus) - 1))
    if other >= source:
        other += 1
    utts = corpus[other].utterances
    return utts[int(rng.integers(len(utts)))], other


def content_tokens(utterances: Sequence[str]) -> list[str]:
    return [t for u in utterances for t in tokenize(u) if t not in STOPWORDS and t not in SPECIALS]


def mask_and_fill(response: str, donor_context: Sequence[str], rng: np.random.Generator) -> str:
    """Replace up to 15% of tokens (at least one) with content tokens of an unrelated context."""
    toks = tokenize(response)
    if len(toks) < 2:
        raise InapplicableError("mask-and-fill needs at least 2 tokens")
    donors = content_tokens(donor_context)
    if not donors:
        raise InapplicableError("donor context has no content tokens")
    k = int(rng.integers(1, max(1, int(0.15 * len(toks))) + 1))
    for i in rng.choice(len(toks), size=k, replace=False):
        choices = [d for d in donors if d != toks[i]] or donors
        toks[i] = choices[int(rng.integers(len(choices)))]
    return " ".join(toks)


def adversarial_from_context(context: Sequence[str], rng: np.random.Generator, max_tries: int = 20) -> str:
    """A syntactically perturbed copy of one of the context's own utterances."""
    usable = [u for u in context if len(tokenize(u)) >= 2]
    if not usable:
        raise InapplicableError("no context utterance has 2 or more tokens")
    verbatim = {" ".join(tokenize(u)) for u in context}
    for _ in range(max_tries):
        seed = usable[int(rng.integers(len(usable)))]
        modes = [m for m in SYNTACTIC_MODES if m != "shuffle" or len(set(tokenize(seed))) > 1]
        out = perturb_syntactic(seed, modes[int(rng.integers(len(modes)))], rng)
        if out not in verbatim:
            return out
    raise InapplicableError("could not produce a response distinct from the context")


# ---------------------------------------------------------------- teachers and providers

class TeacherScorer(Protocol):
    def __call__(self, pair: ContextResponsePair) -> float: ...


class PositiveResponseProvider(Protocol):
    def __call__(self, pair: ContextResponsePair, rng: np.random.Generator) -> list[str]: ...


def echo_provider(pair: ContextResponsePair, rng: np.random.Generator) -> list[str]:
    """Stand-in for paraphrase or generation models: returns the response unchanged."""
    return [pair.response]


def _unit_hash(*parts: str) -> float:
    h = hashlib.sha256("\x1f".join(parts).encode()).digest()
    return int.from_bytes(h[:8], "little") / 2.0 ** 64


@dataclass
class ProvenanceTeacher:
    """Rule-based teacher whose ground truth is the augmentation that made the pair.

    Positives score in [1 - spread, 1], negatives in [0, spread], with a
    per-pair offset derived from a hash of the pair and the seed.
    """

    seed: int = 0
    spread: float = 0.2

    def __call__(self, pair: ContextResponsePair) -> float:
        u = _unit_hash(str(self.seed), pair.domain, *pair.context, pair.response, pair.provenance)
        if pair.provenance in ("original", "provider"):
            return 1.0 - self.spread * u
        return self.spread * u


class GateError(ValueError):
    """Gating left one class empty."""


def pseudo_label_gate(candidates: Sequence[ContextResponsePair], teacher: TeacherScorer,
                      threshold: float = 0.9, rng: np.random.Generator | None = None,
                      valid_fraction: float = 0.0) -> DomainDataset:
    """Keep confidently-scored candidates, label them, and balance the classes.

    A candidate survives when the teacher's confidence in either class is at
    least ``threshold``. The majority class is downsampled uniformly to the
    minority count. ``valid_fraction`` of each class goes to the validation
    split, so both splits stay balanced.
    """
    if not 0.5 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0.5, 1]")
    domains = {c.domain for c in candidates}
    if len(domains) != 1:
        raise ValueError(f"candidates must come from one domain, got {sorted(domains)}")
    rng = rng if rng is not None else np.random.default_rng(0)
    pos, neg = [], []
    for c in candidates:
        conf = float(teacher(c))
        if not 0.0 <= conf <= 1.0:
            raise ValueError(f"teacher confidence {conf} outside [0, 1]")
        if max(conf, 1.0 - conf) < threshold:
            continue
        label = int(conf >= 0.5)
        (pos if label else neg).append(replace(c, confidence=conf, label=label))
    if not pos or not neg:
        raise GateError(f"gate kept {len(pos)} positives and {len(neg)} negatives")
    m = min(len(pos), len(neg))
    pos = [pos[i] for i in sorted(rng.choice(len(pos), size=m, replace=False))]
    neg = [neg[i] for i in sorted(rng.choice(len(neg), size=m, replace=False))]
    n_valid = int(round(m * valid_fraction))
    ds = DomainDataset(next(iter(domains)))
    for cls in (pos, neg):
        order = rng.permutation(m)
        ds.valid.extend(cls[i] for i in order[:n_valid])
        ds.train.extend(cls[i] for i in order[n_valid:])
    ds.train = [ds.train[i] for i in rng.permutation(len(ds.train))]
    ds.valid = [ds.valid[i] for i in rng.permutation(len(ds.valid))]
    return ds


# ---------------------------------------------------------------- end-to-end builder

@dataclass
class ForgeConfig:
    threshold: float = 0.9
    negatives_per_pair: int = 2
    valid_fraction: float = 0.1
    negative_weights: Mapping[str, float] = field(default_factory=lambda: {k: 1.0 for k in NEGATIVE_KINDS})
    seed: int = 0


def _negative(kind: str, pair: ContextResponsePair, corpus: Sequence[Dialogue], source: int,
              rng: np.random.Generator) -> str:
    if kind.startswith("word_"):
        return perturb_syntactic(pair.response, kind[5:], rng)
    if kind == "random_utterance":
        return sample_random_negative(corpus, source, rng)[0]
    if kind == "mask_and_fill":
        donor = corpus[sample_random_negative(corpus, source, rng)[1]]
        return mask_and_fill(pair.response, donor.utterances[:MAX_CONTEXT], rng)
    if kind == "adversarial_context":
        return adversarial_from_context(pair.context, rng)
    raise ValueError(f"unknown negative kind {kind!r}")


def candidate_pairs(corpus: Sequence[Dialogue], cfg: ForgeConfig, rng: np.random.Generator,
                    provider: PositiveResponseProvider = echo_provider) -> list[ContextResponsePair]:
    """Unlabeled positives and negatives for one domain's dialogues, exact duplicates removed."""
    kinds = [k for k in NEGATIVE_KINDS if cfg.negative_weights.get(k, 0) > 0]
    weights = np.array([cfg.negative_weights[k] for k in kinds], dtype=np.float64)
    weights /= weights.sum()
    out, seen = [], set()

    def emit(pair):
        key = (tuple(pair.context), " ".join(tokenize(pair.response)))
        if key not in seen:
            seen.add(key)
            out.append(pair)

    for source, dialogue in enumerate(corpus):
        for pair in extract_pairs(dialogue):
            emit(pair)
            for text in provider(pair, rng):
                emit(replace(pair, response=text, provenance="provider"))
            for _ in range(cfg.negatives_per_pair):
                for kind in rng.choice(len(kinds), size=len(kinds), replace=False, p=weights):
                    try:
                        text = _negative(kinds[kind], pair, corpus, source, rng)
                    except InapplicableError:
                        continue
                    emit(replace(pair, response=text, provenance=kinds[kind]))
                    break
    return out


def forge(dialogues: Sequence[Dialogue], teacher: TeacherScorer, cfg: ForgeConfig,
          provider: PositiveResponseProvider = echo_provider) -> list[DomainDataset]:
    """Labeled, gated, balanced datasets, one per domain in sorted name order."""
    by_domain: dict[str, list[Dialogue]] = {}
    for d in dialogues:
        by_domain.setdefault(d.domain, []).append(d)
    rng = np.random.default_rng(cfg.seed)
    out = []
    for domain in sorted(by_domain):
        cands = candidate_pairs(by_domain[domain], cfg, rng, provider)
        ds = pseudo_label_gate(cands, teacher, cfg.threshold, rng, cfg.valid_fraction)
        log.info("domain %s: %d candidates -> %d train / %d valid", domain, len(cands),
                 len(ds.train), len(ds.valid))
        out.append(ds)
    return out
