"""JSONL readers and writers for every record type.

Unknown fields are kept in ``extra`` and written back unchanged, so files
produced by newer tools survive a read/write cycle.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from .alignment import Candidate, CandidateSet
from .errors import ParseError, ValidationError
from .instruction import MultiModalInstruction, TextInstruction, validate_instruction


def _extra(rec: Mapping, known: set) -> dict:
    return {k: v for k, v in rec.items() if k not in known}


def _with_extra(rec: dict, extra: Mapping) -> dict:
    for k, v in extra.items():
        rec.setdefault(k, v)
    return rec


@dataclass(frozen=True)
class CandidateRecord:
    instruction_id: str
    phrase_index: int
    candidates: tuple[Candidate, ...]
    extra: Mapping[str, Any] = field(default_factory=dict)

    KNOWN = {"instruction_id", "phrase_index", "candidates"}

    def to_set(self) -> CandidateSet:
        return CandidateSet(self.phrase_index, self.candidates)

    def to_record(self) -> dict:
        return _with_extra({
            "instruction_id": self.instruction_id,
            "phrase_index": self.phrase_index,
            "candidates": [c.to_record() for c in self.candidates],
        }, self.extra)

    @classmethod
    def from_record(cls, rec: Mapping) -> "CandidateRecord":
        return cls(
            str(rec["instruction_id"]),
            int(rec["phrase_index"]),
            tuple(Candidate.from_record(c) for c in rec["candidates"]),
            _extra(rec, cls.KNOWN),
        )


@dataclass(frozen=True)
class TrajectoryRecord:
    instruction_id: str
    nodes: tuple[str, ...]
    start: str
    goal: str
    reference: tuple[str, ...] | None = None
    extra: Mapping[str, Any] = field(default_factory=dict)

    KNOWN = {"instruction_id", "nodes", "start", "goal", "reference"}

    def to_record(self) -> dict:
        rec = {"instruction_id": self.instruction_id, "nodes": list(self.nodes),
               "start": self.start, "goal": self.goal}
        if self.reference is not None:
            rec["reference"] = list(self.reference)
        return _with_extra(rec, self.extra)

    @classmethod
    def from_record(cls, rec: Mapping) -> "TrajectoryRecord":
        ref = rec.get("reference")
        return cls(
            str(rec["instruction_id"]),
            tuple(str(n) for n in rec["nodes"]),
            str(rec["start"]),
            str(rec["goal"]),
            tuple(str(n) for n in ref) if ref is not None else None,
            _extra(rec, cls.KNOWN),
        )


@dataclass(frozen=True)
class GoldRecord:
    instruction_id: str
    phrases: tuple[str, ...]
    viewpoints: tuple[str, ...]
    extra: Mapping[str, Any] = field(default_factory=dict)

    KNOWN = {"instruction_id", "phrases", "viewpoints"}

    def to_record(self) -> dict:
        return _with_extra({"instruction_id": self.instruction_id, "phrases": list(self.phrases),
                            "viewpoints": list(self.viewpoints)}, self.extra)

    @classmethod
    def from_record(cls, rec: Mapping) -> "GoldRecord":
        return cls(
            str(rec["instruction_id"]),
            tuple(str(p) for p in rec.get("phrases", ())),
            tuple(str(v) for v in rec.get("viewpoints", ())),
            _extra(rec, cls.KNOWN),
        )


@dataclass(frozen=True)
class AugmentRecord:
    image_ref: str
    variants: tuple[str, ...]
    extra: Mapping[str, Any] = field(default_factory=dict)

    KNOWN = {"image_ref", "variants"}

    def to_record(self) -> dict:
        return _with_extra({"image_ref": self.image_ref, "variants": list(self.variants)}, self.extra)

    @classmethod
    def from_record(cls, rec: Mapping) -> "AugmentRecord":
        return cls(str(rec["image_ref"]), tuple(str(v) for v in rec["variants"]), _extra(rec, cls.KNOWN))


@dataclass(frozen=True)
class MissRecord:
    instruction_id: str
    phrase_index: int | None
    reason: str
    extra: Mapping[str, Any] = field(default_factory=dict)

    KNOWN = {"instruction_id", "phrase_index", "reason"}

    def to_record(self) -> dict:
        return _with_extra({"instruction_id": self.instruction_id, "phrase_index": self.phrase_index,
                            "reason": self.reason}, self.extra)

    @classmethod
    def from_record(cls, rec: Mapping) -> "MissRecord":
        pi = rec.get("phrase_index")
        return cls(str(rec["instruction_id"]), None if pi is None else int(pi), str(rec["reason"]),
                   _extra(rec, cls.KNOWN))


PARSERS = {
    "instruction": validate_instruction,
    "mmi": MultiModalInstruction.from_record,
    "candidates": CandidateRecord.from_record,
    "trajectory": TrajectoryRecord.from_record,
    "gold": GoldRecord.from_record,
    "augment": AugmentRecord.from_record,
    "miss": MissRecord.from_record,
}


def detect_kind(rec: Mapping) -> str:
    if "setting" in rec:
        return "mmi"
    if "candidates" in rec:
        return "candidates"
    if "variants" in rec:
        return "augment"
    if "viewpoints" in rec:
        return "gold"
    if "start" in rec and "goal" in rec:
        return "trajectory"
    if "reason" in rec:
        return "miss"
    if "tokens" in rec or "text" in rec:
        return "instruction"
    raise ValidationError(f"cannot tell the record type of keys {sorted(rec)}")


def parse_record(rec, kind: str | None = None):
    if not isinstance(rec, Mapping):
        raise ValidationError(f"expected a JSON object, got {type(rec).__name__}")
    kind = kind or detect_kind(rec)
    try:
        parser = PARSERS[kind]
    except KeyError:
        raise ValidationError(f"unknown record kind {kind!r}") from None
    try:
        return parser(rec)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed {kind} record: {exc!r}") from exc


def to_record(obj) -> dict:
    if isinstance(obj, Mapping):
        return dict(obj)
    return obj.to_record()


def dumps(rec: Mapping) -> str:
    return json.dumps(rec, ensure_ascii=False)


def read_jsonl(path) -> list[dict]:
    return [rec for _, rec in read_jsonl_numbered(path)]


def write_jsonl(path, records: Iterable) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(dumps(to_record(r)))
            f.write("\n")


def read_dataset(path, kind: str | None = None) -> list:
    """Read a JSONL file into typed records; ``kind=None`` detects per line."""
    out = []
    for n, raw in read_jsonl_numbered(path):
        try:
            out.append(parse_record(raw, kind))
        except ValidationError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(n, str(exc), os.fspath(path)) from exc
    return out


def read_jsonl_numbered(path):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, exc.msg, os.fspath(path)) from exc


def write_dataset(path, records: Iterable) -> None:
    write_jsonl(path, records)
