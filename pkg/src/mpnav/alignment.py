"""Choosing one detector candidate per landmark phrase.

The Aligned objective rewards selections whose images appear along the
path in the same order as the phrases appear in the instruction:

    s_all = s_seq + beta0 * mean(detection) + beta1 * mean(box area)

``s_seq`` is a Kendall-style score in which a phrase pair (i < j) counts as
concordant when ``key_i <= key_j``. Equal keys are concordant.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    EmptyCandidateSet,
    EmptySelection,
    InvalidPhraseIndex,
    SearchSpaceTooLarge,
    ValidationError,
)
from .instruction import VisualPrompt, check_bbox


@dataclass(frozen=True)
class Candidate:
    detection_score: float
    image_ref: str
    bbox: tuple[float, float, float, float]
    image_dims: tuple[float, float]
    order_key: tuple[int, int]  # (path position, view index)
    node_id: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.detection_score <= 1.0:
            raise ValidationError(f"detection score {self.detection_score} outside [0, 1]")
        check_bbox(self.bbox, self.image_dims)
        if self.order_key[0] < 0:
            raise ValidationError(f"negative path position in {self.order_key}")

    @property
    def path_position(self) -> int:
        return self.order_key[0]

    @property
    def view_index(self) -> int:
        return self.order_key[1]

    def sort_key(self):
        # total order used for every tie-break
        return (
            self.order_key[0],
            self.order_key[1],
            self.image_ref,
            -self.detection_score,
            tuple(self.bbox),
            tuple(self.image_dims),
            self.node_id or "",
        )

    def to_prompt(self, phrase_index: int) -> VisualPrompt:
        return VisualPrompt(phrase_index, self.image_ref, tuple(self.bbox), tuple(self.image_dims), self.node_id)

    def to_record(self) -> dict:
        rec = {
            "score": self.detection_score,
            "image_ref": self.image_ref,
            "bbox": list(self.bbox),
            "image_width": self.image_dims[0],
            "image_height": self.image_dims[1],
            "path_position": self.order_key[0],
            "view_index": self.order_key[1],
        }
        if self.node_id is not None:
            rec["node_id"] = self.node_id
        return rec

    @classmethod
    def from_record(cls, rec: Mapping) -> "Candidate":
        try:
            return cls(
                detection_score=float(rec["score"]),
                image_ref=str(rec["image_ref"]),
                bbox=tuple(rec["bbox"]),
                image_dims=(rec["image_width"], rec["image_height"]),
                order_key=(int(rec.get("path_position", 0)), int(rec.get("view_index", 0))),
                node_id=rec.get("node_id"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed candidate {rec!r}: {exc}") from exc


def _canonical(c: Candidate):
    return (-c.detection_score,) + c.sort_key()


@dataclass(frozen=True)
class CandidateSet:
    """Candidates for one phrase, sorted by descending detection score."""

    phrase_index: int
    candidates: tuple[Candidate, ...]

    def __post_init__(self):
        if not self.candidates:
            raise EmptyCandidateSet(self.phrase_index)
        object.__setattr__(self, "candidates", tuple(sorted(self.candidates, key=_canonical)))

    def __len__(self):
        return len(self.candidates)


@dataclass(frozen=True)
class AlignmentConfig:
    beta0: float = 0.5
    beta1: float = 0.1
    beam_width: int = 16
    beam_width_cap: int = 200
    oracle_bound: int = 10**6

    def __post_init__(self):
        if self.beta0 < 0 or self.beta1 < 0:
            raise ValidationError("beta weights must be non-negative")
        if self.beam_width < 1 or self.beam_width_cap < 1:
            raise ValidationError("beam widths must be positive")


@dataclass(frozen=True)
class Selection:
    chosen: tuple[Candidate, ...]
    s_seq: float
    s_det_avg: float
    s_box_avg: float
    s_all: float
    phrase_indices: tuple[int, ...] = field(default=())

    def prompts(self) -> list[VisualPrompt]:
        return [c.to_prompt(i) for i, c in zip(self.phrase_indices, self.chosen)]

    def scores(self) -> dict:
        return {"s_seq": self.s_seq, "s_det_avg": self.s_det_avg, "s_box_avg": self.s_box_avg, "s_all": self.s_all}


def _count_inversions(keys: list) -> tuple[list, int]:
    # merge sort; counts pairs i < j with keys[i] > keys[j]
    if len(keys) <= 1:
        return keys, 0
    mid = len(keys) // 2
    left, a = _count_inversions(keys[:mid])
    right, b = _count_inversions(keys[mid:])
    merged = []
    inv = a + b
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            inv += len(left) - i
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged, inv


def concordant_pairs(keys: Sequence) -> int:
    n = len(keys)
    return n * (n - 1) // 2 - _count_inversions(list(keys))[1]


def _seq_from_count(c, n):
    if n <= 1:
        return 1.0
    return 4.0 * c / (n * (n - 1)) - 1.0


def sequence_score(order_keys: Sequence) -> float:
    """4c / (n(n-1)) - 1 over concordant pairs; 1.0 when n <= 1."""
    n = len(order_keys)
    if n <= 1:
        return 1.0
    return _seq_from_count(concordant_pairs(order_keys), n)


def bbox_score(c: Candidate) -> float:
    x, y, w, h = c.bbox
    return (w * h) / (c.image_dims[0] * c.image_dims[1])


def _components(chosen: Sequence[Candidate], cfg: AlignmentConfig):
    n = len(chosen)
    s_seq = sequence_score([c.order_key for c in chosen])
    det = math.fsum(c.detection_score for c in chosen) / n
    box = math.fsum(bbox_score(c) for c in chosen) / n
    return s_seq, det, box, s_seq + cfg.beta0 * det + cfg.beta1 * box


def combined_score(
    chosen: Sequence[Candidate],
    cfg: AlignmentConfig | None = None,
    phrase_indices: Sequence[int] | None = None,
) -> Selection:
    if not chosen:
        raise EmptySelection("cannot score an empty selection")
    cfg = cfg or AlignmentConfig()
    s_seq, det, box, s_all = _components(chosen, cfg)
    if phrase_indices is None:
        phrase_indices = range(len(chosen))
    return Selection(tuple(chosen), s_seq, det, box, s_all, tuple(phrase_indices))


def _prepare(sets: Sequence[CandidateSet]) -> list[CandidateSet]:
    for s in sets:
        if not s.candidates:
            raise EmptyCandidateSet(s.phrase_index)
    ordered = sorted(sets, key=lambda s: s.phrase_index)
    idx = [s.phrase_index for s in ordered]
    if len(set(idx)) != len(idx):
        raise InvalidPhraseIndex(f"duplicate phrase indices in candidate sets: {idx}")
    return ordered


def _tiebreak(chosen: Sequence[Candidate]):
    return tuple(c.sort_key() for c in chosen)


def select_related(sets: Sequence[CandidateSet], cfg: AlignmentConfig | None = None) -> Selection:
    """Independent per-phrase argmax of detection score."""
    sets = _prepare(sets)
    if not sets:
        raise EmptySelection("no candidate sets")
    # canonical order puts the argmax first, ties by order key then image ref
    chosen = [s.candidates[0] for s in sets]
    return combined_score(chosen, cfg, [s.phrase_index for s in sets])


def search_space(sets: Sequence[CandidateSet]) -> int:
    return math.prod(len(s.candidates) for s in sets)


def select_aligned_exhaustive(sets: Sequence[CandidateSet], cfg: AlignmentConfig | None = None) -> Selection:
    """Score every combination. Used as the reference for the beam search."""
    cfg = cfg or AlignmentConfig()
    sets = _prepare(sets)
    if not sets:
        raise EmptySelection("no candidate sets")
    size = search_space(sets)
    if size > cfg.oracle_bound:
        raise SearchSpaceTooLarge(f"{size} combinations exceed the bound of {cfg.oracle_bound}")
    best = None
    best_key = None
    for combo in itertools.product(*(s.candidates for s in sets)):
        s_all = _components(combo, cfg)[3]
        if best is None or s_all > best_key[0] or (s_all == best_key[0] and _tiebreak(combo) < best_key[1]):
            best = combo
            best_key = (s_all, _tiebreak(combo))
    return combined_score(best, cfg, [s.phrase_index for s in sets])


def effective_width(sets: Sequence[CandidateSet], cfg: AlignmentConfig) -> int:
    mean = sum(len(s.candidates) for s in sets) / max(len(sets), 1)
    return min(cfg.beam_width_cap, cfg.beam_width * math.ceil(mean / 4))


class _Arrays:
    def __init__(self, sets: list[CandidateSet]):
        keys = sorted({c.order_key for s in sets for c in s.candidates})
        rank = {k: i for i, k in enumerate(keys)}
        self.rank = [np.array([rank[c.order_key] for c in s.candidates], dtype=np.int64) for s in sets]
        self.det = [np.array([c.detection_score for c in s.candidates]) for s in sets]
        self.box = [np.array([bbox_score(c) for c in s.candidates]) for s in sets]


def _seq_array(c, n):
    if n <= 1:
        return np.ones_like(c, dtype=float)
    return 4.0 * c / (n * (n - 1)) - 1.0


def _beam_pass(arr: _Arrays, order: list[int], forward: bool, width: int, cfg: AlignmentConfig):
    """One directional pass. Returns (choices in phrase order, approx s_all)."""
    n = len(order)
    total_pairs = n * (n - 1) // 2
    max_det = [float(d.max()) for d in arr.det]
    max_box = [float(b.max()) for b in arr.box]

    choice = np.zeros((1, 0), dtype=np.int64)
    keys = np.zeros((1, 0), dtype=np.int64)
    conc = np.zeros(1)
    det = np.zeros(1)
    box = np.zeros(1)
    for step, s in enumerate(order):
        r, d, b = arr.rank[s], arr.det[s], arr.box[s]
        k = r.shape[0]
        if forward:
            inc = (keys[:, :, None] <= r[None, None, :]).sum(axis=1)
        else:
            inc = (r[None, None, :] <= keys[:, :, None]).sum(axis=1)
        new_conc = (conc[:, None] + inc).ravel()
        new_det = (det[:, None] + d[None, :]).ravel()
        new_box = (box[:, None] + b[None, :]).ravel()
        parent = np.repeat(np.arange(choice.shape[0]), k)
        cand = np.tile(np.arange(k), choice.shape[0])

        last = step == n - 1
        if not last and new_conc.size > width:
            rest = order[step + 1 :]
            assigned = step + 1
            open_pairs = total_pairs - assigned * (assigned - 1) // 2
            bound = (
                _seq_array(new_conc + open_pairs, n)
                + cfg.beta0 * (new_det + sum(max_det[i] for i in rest)) / n
                + cfg.beta1 * (new_box + sum(max_box[i] for i in rest)) / n
            )
            keep = np.argsort(-bound, kind="stable")[:width]
            parent, cand = parent[keep], cand[keep]
            new_conc, new_det, new_box = new_conc[keep], new_det[keep], new_box[keep]

        choice = np.concatenate([choice[parent], cand[:, None]], axis=1)
        keys = np.concatenate([keys[parent], r[cand][:, None]], axis=1)
        conc, det, box = new_conc, new_det, new_box

    if not forward:
        choice = choice[:, ::-1]
    approx = _seq_array(conc, n) + cfg.beta0 * det / n + cfg.beta1 * box / n
    return choice, approx


def select_aligned_beam(sets: Sequence[CandidateSet], cfg: AlignmentConfig | None = None) -> Selection:
    """Adaptive bidirectional beam search over candidate combinations.

    Runs one pass over the phrases front to back and one back to front,
    ranking partial assignments by exact partial score plus the best
    possible contribution of the phrases still open. The Related choice is
    always in the final pool, so the result never scores below it. With a
    width of at least the full search space nothing is pruned and the
    result matches :func:`select_aligned_exhaustive`.
    """
    cfg = cfg or AlignmentConfig()
    sets = _prepare(sets)
    if not sets:
        raise EmptySelection("no candidate sets")
    n = len(sets)
    arr = _Arrays(sets)
    width = effective_width(sets, cfg)

    fwd, fwd_s = _beam_pass(arr, list(range(n)), True, width, cfg)
    bwd, bwd_s = _beam_pass(arr, list(range(n - 1, -1, -1)), False, width, cfg)
    choices = np.concatenate([fwd, bwd, np.zeros((1, n), dtype=np.int64)])
    approx = np.concatenate([fwd_s, bwd_s, [-np.inf]])

    # near-ties are re-scored exactly so results match the exhaustive search bit for bit
    top = approx.max()
    pool = {tuple(row) for row in choices[approx >= top - 1e-9].tolist()}
    pool.add((0,) * n)  # Related: candidate 0 of each sorted set
    best = None
    best_key = None
    for idx in sorted(pool):
        combo = [sets[i].candidates[j] for i, j in enumerate(idx)]
        s_all = _components(combo, cfg)[3]
        if best is None or s_all > best_key[0] or (s_all == best_key[0] and _tiebreak(combo) < best_key[1]):
            best = combo
            best_key = (s_all, _tiebreak(combo))
    return combined_score(best, cfg, [s.phrase_index for s in sets])


def derive_terminal(aligned: Selection, phrase_count: int | None = None) -> VisualPrompt:
    """Prompt for the last landmark of an aligned selection."""
    if not aligned.chosen:
        raise EmptySelection("aligned selection is empty")
    indices = aligned.phrase_indices or tuple(range(len(aligned.chosen)))
    pos = max(range(len(indices)), key=lambda i: indices[i])
    if phrase_count is not None and indices[pos] >= phrase_count:
        raise InvalidPhraseIndex(f"phrase {indices[pos]} out of range for {phrase_count} phrases")
    return aligned.chosen[pos].to_prompt(indices[pos])
