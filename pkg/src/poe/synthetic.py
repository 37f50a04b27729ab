"""Toy dialogue corpora with known ground truth, for demos and experiments.

Each domain owns a lexicon of pseudo-words split into a few topic clusters.
A dialogue fixes a small topic drawn from one cluster, and every utterance alternates function words
with topic words. Genuine next utterances therefore overlap lexically with
their context, utterances from other dialogues mostly do not, and word-order
perturbations break the alternation. A shared set of
marker words and a quality lexicon are sprinkled through all domains so
they reach any vocabulary built from the corpus.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .forge import content_tokens
from .panel import tokenize
from .records import ContextResponsePair, Dialogue, DomainDataset, EvaluationRecord, SelectionTask

FUNCTION_WORDS = ("the", "a", "and", "i", "you", "is", "it", "to", "of", "we", "that", "so")
_ONSETS = "b d f g k l m n p r s t v z".split()
_VOWELS = "a e i o u".split()


def _pseudo_words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < count:
        n_syll = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(n_syll))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass
class SyntheticWorld:
    domains: list[str]
    lexicons: dict[str, list[str]]
    markers: list[str]
    quality: list[str]
    sprinkle: float = 0.15
    topic_size: int = 4
    clusters: int = 3

    def utterance(self, domain: str, topic: Sequence[str], rng: np.random.Generator) -> str:
        """Strictly alternating function word / topic word, 2-4 of each."""
        toks = []
        for _ in range(int(rng.integers(2, 5))):
            toks.append(FUNCTION_WORDS[int(rng.integers(len(FUNCTION_WORDS)))])
            toks.append(topic[int(rng.integers(len(topic)))])
        if rng.random() < self.sprinkle:
            extra = self.markers + self.quality
            toks[2 * int(rng.integers(len(toks) // 2)) + 1] = extra[int(rng.integers(len(extra)))]
        return " ".join(toks)

    def dialogue(self, domain: str, rng: np.random.Generator, ident: str = "") -> Dialogue:
        lex = self.lexicons[domain]
        size = len(lex) // self.clusters
        c = int(rng.integers(self.clusters))
        cluster = lex[c * size:(c + 1) * size]
        topic = [cluster[i] for i in rng.choice(len(cluster), size=self.topic_size, replace=False)]
        n = int(rng.integers(3, 8))
        return Dialogue(domain, [self.utterance(domain, topic, rng) for _ in range(n)], ident)

    def dialogues(self, per_domain: int, rng: np.random.Generator) -> list[Dialogue]:
        return [self.dialogue(d, rng, f"{d}-{i}") for d in self.domains for i in range(per_domain)]


def make_world(domains: Sequence[str] = ("chitchat", "empathy", "knowledge"), words_per_domain: int = 30,
               n_markers: int = 4, n_quality: int = 8, seed: int = 0) -> SyntheticWorld:
    rng = np.random.default_rng(seed)
    taken: set[str] = set(FUNCTION_WORDS)
    lexicons = {d: _pseudo_words(rng, words_per_domain, taken) for d in domains}
    markers = _pseudo_words(rng, n_markers, taken)
    quality = _pseudo_words(rng, n_quality, taken)
    return SyntheticWorld(list(domains), lexicons, markers, quality)


def overlap_feature(pair: ContextResponsePair) -> float:
    """Share of the response's content tokens that also occur in the context."""
    resp = content_tokens([pair.response])
    if not resp:
        return 0.0
    ctx = set(content_tokens(pair.context))
    return sum(t in ctx for t in resp) / len(resp)


def _likert_mean(feature: np.ndarray, rng: np.random.Generator, noise: float, judges: int) -> np.ndarray:
    """Mean of several 1-5 ratings of a [0, 1] feature; produces realistic ties."""
    raw = feature[:, None] + rng.normal(0.0, noise, size=(len(feature), judges))
    return (1 + np.rint(4 * np.clip(raw, 0.0, 1.0))).mean(axis=1)


def make_eval_set(world: SyntheticWorld, domain: str, n: int, rng: np.random.Generator,
                  noise: float = 0.15, judges: int = 3) -> list[EvaluationRecord]:
    """Rated pairs whose human score tracks context/response lexical overlap."""
    pairs = []
    while len(pairs) < n:
        d = world.dialogue(domain, rng)
        t = int(rng.integers(1, len(d.utterances)))
        ctx = d.utterances[max(0, t - 4):t]
        kind = rng.random()
        if kind < 0.4:
            resp = d.utterances[t]
        elif kind < 0.7:
            resp = world.dialogue(domain, rng).utterances[0]
        else:
            own = tokenize(d.utterances[t])
            other = tokenize(world.dialogue(domain, rng).utterances[0])
            cut = int(rng.integers(1, len(own)))
            resp = " ".join(own[:cut] + other[cut:]) if len(other) > cut else " ".join(own[:cut] + other)
        pairs.append(ContextResponsePair(list(ctx), resp, domain))
    q = _likert_mean(np.array([overlap_feature(p) for p in pairs]), rng, noise, judges)
    return [EvaluationRecord(p, float(s)) for p, s in zip(pairs, q)]


def quality_feature(world: SyntheticWorld, pair: ContextResponsePair) -> float:
    toks = tokenize(pair.response)
    return sum(t in world.quality for t in toks) / len(toks)


def make_quality_eval_set(world: SyntheticWorld, domain: str, n: int, rng: np.random.Generator,
                          noise: float = 0.1, length: int = 6) -> list[EvaluationRecord]:
    """Rated pairs whose score is the response's overlap with the quality lexicon plus noise."""
    out = []
    lex = world.lexicons[domain]
    for _ in range(n):
        d = world.dialogue(domain, rng)
        k = int(rng.integers(0, length + 1))
        toks = [world.quality[int(rng.integers(len(world.quality)))] for _ in range(k)]
        toks += [lex[int(rng.integers(len(lex)))] for _ in range(length - k)]
        pair = ContextResponsePair(d.utterances[:2], " ".join(toks[i] for i in rng.permutation(length)), domain)
        q = float(np.clip(quality_feature(world, pair) + rng.normal(0.0, noise), 0.0, 1.0))
        out.append(EvaluationRecord(pair, q))
    return out


def _marker_pair(world: SyntheticWorld, domain: str, rng: np.random.Generator) -> tuple[ContextResponsePair, bool]:
    d = world.dialogue(domain, rng)
    toks = [t for t in tokenize(d.utterances[1]) if t not in world.markers]
    has = bool(rng.random() < 0.5)
    if has:
        toks.insert(int(rng.integers(len(toks) + 1)), world.markers[int(rng.integers(len(world.markers)))])
    ctx = " ".join(t for t in tokenize(d.utterances[0]) if t not in world.markers)
    return ContextResponsePair([ctx], " ".join(toks), domain), has


def marker_dataset(world: SyntheticWorld, domain: str, n_train: int, n_valid: int,
                   rng: np.random.Generator, source_domain: str | None = None,
                   invert: bool = False) -> DomainDataset:
    """Labels follow one rule: the response contains a marker word (or, inverted, does not).

    ``source_domain`` picks the lexicon used to generate the text, so two
    datasets can share an input distribution while disagreeing on labels.
    """
    src = source_domain or domain
    ds = DomainDataset(domain)
    for split, count in ((ds.train, n_train), (ds.valid, n_valid)):
        for _ in range(count):
            pair, has = _marker_pair(world, src, rng)
            pair.domain = domain
            pair.label = int(has != invert)
            split.append(pair)
    return ds


def conflicting_domains(world: SyntheticWorld, n_train: int, n_valid: int,
                        rng: np.random.Generator) -> list[DomainDataset]:
    """Two domains over identical inputs with opposite labeling rules."""
    src = world.domains[0]
    return [marker_dataset(world, "rule", n_train, n_valid, rng, src),
            marker_dataset(world, "anti-rule", n_train, n_valid, rng, src, invert=True)]


def make_selection_tasks(world: SyntheticWorld, domain: str, n: int,
                         rng: np.random.Generator) -> list[SelectionTask]:
    """20-candidate tasks: the true next utterance plus 19 from other dialogues.

    Distractors come from a shared pool of opening utterances of fresh dialogues.
    """
    pool = [world.dialogue(domain, rng).utterances[0] for _ in range(min(19 * n, 1000))]
    tasks = []
    for _ in range(n):
        d = world.dialogue(domain, rng)
        t = int(rng.integers(1, len(d.utterances)))
        cands = [pool[i] for i in rng.choice(len(pool), size=19, replace=False)]
        pos = int(rng.integers(20))
        cands.insert(pos, d.utterances[t])
        tasks.append(SelectionTask(d.utterances[max(0, t - 4):t], cands, pos, domain))
    return tasks
