"""Textual and multi-modal instruction records.

Phrase spans are 1-based and inclusive over whitespace tokens, so the
phrase ``(3, 4)`` of ``walk past the sofa`` is ``the sofa``. Images are
placed directly after the last token of their phrase.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    DuplicatePhraseIndex,
    EmptyInstruction,
    EmptyPath,
    InvalidBoundingBox,
    InvalidPhraseIndex,
    OverlappingSpans,
    RepeatedPathNode,
    SettingViolation,
    SpanOutOfRange,
    UnsortedSpans,
    ValidationError,
)


class Setting(str, enum.Enum):
    ALIGNED = "aligned"
    RELATED = "related"
    TERMINAL = "terminal"
    TEXT_ONLY = "text_only"

    @classmethod
    def parse(cls, value) -> "Setting":
        if isinstance(value, Setting):
            return value
        key = str(value).strip().lower().replace("-", "_")
        if key == "textonly":
            key = "text_only"
        try:
            return cls(key)
        except ValueError:
            raise ValidationError(f"unknown setting {value!r}") from None


@dataclass(frozen=True)
class PhraseSpan:
    text: str
    start: int
    end: int

    def to_record(self) -> dict:
        return {"text": self.text, "start": self.start, "end": self.end}


@dataclass(frozen=True)
class TextInstruction:
    id: str
    tokens: tuple[str, ...]
    phrases: tuple[PhraseSpan, ...]
    path_node_ids: tuple[str, ...]
    # unknown record fields, kept for lossless round-trips
    extra: Mapping[str, Any] = field(default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.tokens)

    def phrase_tokens(self, index: int) -> tuple[str, ...]:
        span = self.phrases[index]
        return self.tokens[span.start - 1 : span.end]

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "tokens": list(self.tokens),
            "phrases": [p.to_record() for p in self.phrases],
            "path": list(self.path_node_ids),
        }
        for k, v in self.extra.items():
            rec.setdefault(k, v)
        return rec


def check_spans(phrases: Sequence[PhraseSpan], length: int) -> None:
    prev = None
    for i, p in enumerate(phrases):
        if not (1 <= p.start <= p.end <= length):
            raise SpanOutOfRange(
                f"phrase {i} {p.text!r} span ({p.start}..{p.end}) outside 1..{length}"
            )
        if prev is not None:
            if p.start < prev.start:
                raise UnsortedSpans(f"phrase {i} {p.text!r} starts before phrase {i - 1}")
            if p.start <= prev.end:
                raise OverlappingSpans(
                    f"phrase {i} {p.text!r} ({p.start}..{p.end}) overlaps "
                    f"phrase {i - 1} {prev.text!r} ({prev.start}..{prev.end})"
                )
        prev = p


def check_path(path: Sequence[str]) -> None:
    if not path:
        raise EmptyPath("path has no nodes")
    for i in range(1, len(path)):
        if path[i] == path[i - 1]:
            raise RepeatedPathNode(f"path element {i} repeats node {path[i]!r}")


def parse_phrase(raw) -> PhraseSpan:
    if isinstance(raw, PhraseSpan):
        return raw
    try:
        return PhraseSpan(str(raw.get("text", "")), int(raw["start"]), int(raw["end"]))
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ValidationError(f"malformed phrase {raw!r}") from exc


def validate_instruction(raw) -> TextInstruction:
    """Build a TextInstruction from a record (or re-check an existing one)."""
    if isinstance(raw, TextInstruction):
        raw = raw.to_record()
    if not isinstance(raw, Mapping):
        raise ValidationError(f"instruction record must be an object, got {type(raw).__name__}")
    tokens = raw.get("tokens")
    if tokens is None and "text" in raw:
        tokens = str(raw["text"]).split()
    if not isinstance(tokens, (list, tuple)) or not tokens:
        raise EmptyInstruction(f"instruction {raw.get('id')!r} has no tokens")
    phrases = tuple(parse_phrase(p) for p in raw.get("phrases") or ())
    path = raw.get("path", raw.get("path_node_ids"))
    path = tuple(str(n) for n in (path or ()))
    check_spans(phrases, len(tokens))
    check_path(path)
    known = {"id", "tokens", "phrases", "path", "path_node_ids"}
    extra = {k: v for k, v in raw.items() if k not in known}
    return TextInstruction(
        id=str(raw.get("id", "")),
        tokens=tuple(str(t) for t in tokens),
        phrases=phrases,
        path_node_ids=path,
        extra=extra,
    )


@dataclass(frozen=True)
class VisualPrompt:
    phrase_index: int
    image_ref: str
    bbox: tuple[float, float, float, float]
    image_dims: tuple[float, float]
    node_id: str | None = None

    def __post_init__(self):
        check_bbox(self.bbox, self.image_dims)

    def to_record(self) -> dict:
        rec = {
            "phrase_index": self.phrase_index,
            "image_ref": self.image_ref,
            "bbox": list(self.bbox),
            "image_width": self.image_dims[0],
            "image_height": self.image_dims[1],
        }
        if self.node_id is not None:
            rec["node_id"] = self.node_id
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "VisualPrompt":
        try:
            return cls(
                phrase_index=int(rec["phrase_index"]),
                image_ref=str(rec["image_ref"]),
                bbox=tuple(rec["bbox"]),
                image_dims=(rec["image_width"], rec["image_height"]),
                node_id=rec.get("node_id"),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed prompt {rec!r}") from exc


def check_bbox(bbox, dims) -> None:
    if len(bbox) != 4 or len(dims) != 2:
        raise InvalidBoundingBox(f"bbox {bbox!r} / dims {dims!r} have the wrong arity")
    x, y, w, h = bbox
    width, height = dims
    if not (x >= 0 and y >= 0 and w > 0 and h > 0 and x + w <= width and y + h <= height):
        raise InvalidBoundingBox(f"bbox {tuple(bbox)} does not fit in a {width}x{height} image")


@dataclass(frozen=True)
class MultiModalInstruction:
    base: TextInstruction
    prompts: tuple[VisualPrompt, ...]
    setting: Setting
    # pipeline bookkeeping (scores, misses, augmentation provenance)
    info: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for p in self.prompts:
            if not 0 <= p.phrase_index < len(self.base.phrases):
                raise InvalidPhraseIndex(
                    f"prompt {p.image_ref!r} refers to phrase {p.phrase_index}, "
                    f"instruction {self.base.id!r} has {len(self.base.phrases)}"
                )
            if p.phrase_index in seen:
                raise DuplicatePhraseIndex(f"phrase {p.phrase_index} has more than one prompt")
            seen.add(p.phrase_index)
        idx = [p.phrase_index for p in self.prompts]
        if idx != sorted(idx):
            raise ValidationError("prompts must be sorted by phrase_index")
        if self.setting is Setting.TERMINAL and len(self.prompts) > 1:
            raise SettingViolation(f"terminal instruction {self.base.id!r} has {len(self.prompts)} prompts")
        if self.setting is Setting.TEXT_ONLY and self.prompts:
            raise SettingViolation(f"text-only instruction {self.base.id!r} carries prompts")

    @property
    def id(self) -> str:
        return self.base.id

    def sequence(self) -> list:
        """Tokens with each prompt inserted after its phrase's last token."""
        after = {self.base.phrases[p.phrase_index].end: p for p in self.prompts}
        out: list = []
        for pos, tok in enumerate(self.base.tokens, start=1):
            out.append(tok)
            if pos in after:
                out.append(after[pos])
        return out

    def to_record(self) -> dict:
        rec = self.base.to_record()
        rec["setting"] = self.setting.value
        rec["prompts"] = [p.to_record() for p in self.prompts]
        if self.info:
            rec["info"] = dict(self.info)
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "MultiModalInstruction":
        rec = dict(rec)
        setting = Setting.parse(rec.pop("setting", Setting.TEXT_ONLY))
        prompts = [VisualPrompt.from_record(p) for p in rec.pop("prompts", None) or ()]
        info = rec.pop("info", None) or {}
        base = validate_instruction(rec)
        return cls(base, tuple(sorted(prompts, key=lambda p: p.phrase_index)), setting, info)


def strip_images(sequence: Iterable) -> list[str]:
    return [item for item in sequence if isinstance(item, str)]


def interleave(
    instr: TextInstruction,
    prompts: Sequence[VisualPrompt],
    setting: Setting | str = Setting.ALIGNED,
    info: Mapping[str, Any] | None = None,
) -> MultiModalInstruction:
    """Attach prompts to an instruction. An empty prompt list yields TextOnly."""
    setting = Setting.parse(setting)
    if not prompts:
        setting = Setting.TEXT_ONLY
    ordered = tuple(sorted(prompts, key=lambda p: p.phrase_index))
    return MultiModalInstruction(instr, ordered, setting, dict(info or {}))


def restrict_setting(
    mmi: MultiModalInstruction,
    target: Setting | str,
    keep: int | None = None,
    seed: int = 0,
) -> MultiModalInstruction:
    target = Setting.parse(target)
    prompts = mmi.prompts
    if target is Setting.TERMINAL:
        prompts = prompts[-1:]
    elif target is Setting.TEXT_ONLY:
        prompts = ()
    elif keep is not None:
        n = len(prompts)
        k = max(0, min(keep, n))
        # seeded per instruction so subsets differ across a dataset but are stable
        rng = random.Random(f"{seed}:{mmi.base.id}")
        picked = sorted(rng.sample(range(n), k))
        prompts = tuple(prompts[i] for i in picked)
    return replace(mmi, prompts=tuple(prompts), setting=target)


class TokenKind(str, enum.Enum):
    TEXT = "text"
    IMAGE = "image"


@dataclass(frozen=True)
class LayoutEntry:
    kind: TokenKind
    source_index: int  # token index for text, phrase index for images
    visual_position: int | None
    multimodal_position: int


@dataclass(frozen=True)
class TokenLayout:
    entries: tuple[LayoutEntry, ...]

    def text_entries(self):
        return [e for e in self.entries if e.kind is TokenKind.TEXT]

    def image_entries(self):
        return [e for e in self.entries if e.kind is TokenKind.IMAGE]


def assemble_token_layout(mmi: MultiModalInstruction) -> TokenLayout:
    """Dual position layout for a fused text/image token sequence.

    Text tokens keep their word index as the shared position. Images get a
    running index among images plus the shared position of their phrase's
    last word, which is what ties an image to its phrase.
    """
    by_end = {mmi.base.phrases[p.phrase_index].end - 1: p for p in mmi.prompts}
    entries = []
    n_img = 0
    for i in range(mmi.base.length):
        entries.append(LayoutEntry(TokenKind.TEXT, i, None, i))
        p = by_end.get(i)
        if p is not None:
            entries.append(LayoutEntry(TokenKind.IMAGE, p.phrase_index, n_img, i))
            n_img += 1
    return TokenLayout(tuple(entries))
