"""Record types shared across the pipeline and their JSONL encodings."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

PROVENANCES = (
    "original", "word_drop", "word_shuffle", "word_repeat", "random_utterance",
    "mask_and_fill", "adversarial_context", "provider",
)


class SchemaError(ValueError):
    """Input record does not match the documented JSONL schema."""


@dataclass
class Dialogue:
    domain: str
    utterances: list[str]
    id: str = ""

    def __post_init__(self):
        if len(self.utterances) < 2:
            raise SchemaError(f"dialogue {self.id!r} needs at least 2 utterances")
        if any(not u.strip() for u in self.utterances):
            raise SchemaError(f"dialogue {self.id!r} has an empty utterance")


@dataclass
class ContextResponsePair:
    context: list[str]
    response: str
    domain: str
    provenance: str = "original"
    confidence: float | None = None
    label: int | None = None
    dialogue_id: str | None = None

    def __post_init__(self):
        if not 1 <= len(self.context) <= 4:
            raise SchemaError(f"context must hold 1-4 utterances, got {len(self.context)}")
        if not self.response.strip():
            raise SchemaError("response is empty")
        if self.provenance not in PROVENANCES:
            raise SchemaError(f"unknown provenance {self.provenance!r}")
        if self.label not in (None, 0, 1):
            raise SchemaError(f"label must be 0 or 1, got {self.label!r}")

    def to_json(self) -> dict:
        obj = {"domain": self.domain, "context": list(self.context),
               "response": self.response, "provenance": self.provenance}
        if self.label is not None:
            obj["label"] = self.label
        if self.confidence is not None:
            obj["confidence"] = self.confidence
        if self.dialogue_id is not None:
            obj["dialogue_id"] = self.dialogue_id
        return obj


@dataclass
class EvaluationRecord:
    pair: ContextResponsePair
    human_score: float

    def __post_init__(self):
        if not math.isfinite(self.human_score):
            raise SchemaError("human_score must be finite")

    def to_json(self) -> dict:
        return {**self.pair.to_json(), "human_score": self.human_score}


@dataclass
class SelectionTask:
    context: list[str]
    candidates: list[str]
    positive_index: int
    domain: str = ""

    def __post_init__(self):
        if len(self.candidates) != 20:
            raise SchemaError(f"selection task needs 20 candidates, got {len(self.candidates)}")
        if not 0 <= self.positive_index < 20:
            raise SchemaError(f"positive_index {self.positive_index} out of range")

    def to_json(self) -> dict:
        return {"context": self.context, "candidates": self.candidates,
                "positive_index": self.positive_index}


@dataclass
class DomainDataset:
    domain: str
    train: list[ContextResponsePair] = field(default_factory=list)
    valid: list[ContextResponsePair] = field(default_factory=list)


# ---------------------------------------------------------------- parsing

_PAIR_FIELDS = {"domain", "context", "response", "label", "confidence", "provenance", "dialogue_id"}


def _check_fields(obj: dict, allowed: set[str], required: set[str], strict: bool, where: str):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected a JSON object")
    missing = required - obj.keys()
    if missing:
        raise SchemaError(f"{where}: missing fields {sorted(missing)}")
    extra = obj.keys() - allowed
    if strict and extra:
        raise SchemaError(f"{where}: unknown fields {sorted(extra)}")


def pair_from_json(obj: dict, strict: bool = True, where: str = "pair") -> ContextResponsePair:
    _check_fields(obj, _PAIR_FIELDS, {"domain", "context", "response"}, strict, where)
    if not isinstance(obj["context"], list) or not all(isinstance(u, str) for u in obj["context"]):
        raise SchemaError(f"{where}: context must be a list of strings")
    try:
        conf = obj.get("confidence")
        return ContextResponsePair(
            context=list(obj["context"]), response=str(obj["response"]), domain=str(obj["domain"]),
            provenance=obj.get("provenance", "original"),
            confidence=None if conf is None else float(conf),
            label=obj.get("label"), dialogue_id=obj.get("dialogue_id"))
    except SchemaError as exc:
        raise SchemaError(f"{where}: {exc}") from None


def eval_record_from_json(obj: dict, strict: bool = True, where: str = "record") -> EvaluationRecord:
    _check_fields(obj, _PAIR_FIELDS | {"human_score"}, {"domain", "context", "response", "human_score"},
                  strict, where)
    pair = pair_from_json({k: v for k, v in obj.items() if k != "human_score"}, strict, where)
    return EvaluationRecord(pair, float(obj["human_score"]))


def dialogue_from_json(obj: dict, strict: bool = True, where: str = "dialogue") -> Dialogue:
    _check_fields(obj, {"domain", "utterances", "id"}, {"domain", "utterances"}, strict, where)
    return Dialogue(domain=str(obj["domain"]), utterances=[str(u) for u in obj["utterances"]],
                    id=str(obj.get("id", "")))


def selection_task_from_json(obj: dict, strict: bool = True, where: str = "task") -> SelectionTask:
    _check_fields(obj, {"context", "candidates", "positive_index", "domain"},
                  {"context", "candidates", "positive_index"}, strict, where)
    return SelectionTask(context=list(obj["context"]), candidates=list(obj["candidates"]),
                         positive_index=int(obj["positive_index"]), domain=str(obj.get("domain", "")))


def read_jsonl(path: str | Path, parse=pair_from_json, strict: bool = True) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            where = f"{path}:{lineno}"
            try:
                out.append(parse(obj, strict=strict, where=where))
            except SchemaError:
                raise
            except (TypeError, ValueError, AttributeError) as exc:
                raise SchemaError(f"{where}: bad field value ({exc})") from None
    return out


def write_jsonl(path: str | Path, records: Iterable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = rec if isinstance(rec, dict) else rec.to_json()
            fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")


def iter_domains(pairs: Iterable[ContextResponsePair]) -> Iterator[str]:
    seen = []
    for p in pairs:
        if p.domain not in seen:
            seen.append(p.domain)
            yield p.domain
