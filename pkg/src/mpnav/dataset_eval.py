"""Dataset quality: phrase similarity against gold phrases, viewpoint accuracy."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import ValidationError
from .metrics import NavGraph

FUZZY_THRESHOLD = 0.8
ROUGE_THRESHOLD = 0.5


@dataclass(frozen=True)
class PhraseMatchReport:
    precision: float
    recall: float
    f1: float
    hits: int = 0
    n_pred: int = 0
    n_gold: int = 0

    @classmethod
    def from_counts(cls, hits: int, n_pred: int, n_gold: int) -> "PhraseMatchReport":
        if n_pred == 0 and n_gold == 0:
            return cls(1.0, 1.0, 1.0, 0, 0, 0)
        p = hits / n_pred if n_pred else 0.0
        r = hits / n_gold if n_gold else 0.0
        return cls(p, r, _f1(p, r), hits, n_pred, n_gold)

    def to_record(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1,
                "hits": self.hits, "pred": self.n_pred, "gold": self.n_gold}


@dataclass(frozen=True)
class ViewpointReport:
    matching: float
    neighboring: float
    total: int = 0

    def to_record(self) -> dict:
        return {"matching": self.matching, "neighboring": self.neighboring, "total": self.total}


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def edit_distance(a: str, b: str) -> int:
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def fuzzy_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - edit_distance(a, b) / longest


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(pred: Sequence[str], gold: Sequence[str]) -> tuple[float, float, float]:
    """(precision, recall, f1) from the longest common subsequence."""
    if not pred and not gold:
        return 1.0, 1.0, 1.0
    if not pred or not gold:
        return 0.0, 0.0, 0.0
    lcs = lcs_length(pred, gold)
    p, r = lcs / len(pred), lcs / len(gold)
    return p, r, _f1(p, r)


def _scorer(name: str) -> Callable[[str, str], float]:
    if name == "fuzzy":
        return fuzzy_similarity
    if name in ("rouge_l", "rouge-l", "rouge"):
        return lambda a, b: rouge_l(a.split(), b.split())[2]
    raise ValidationError(f"unknown scorer {name!r}")


def default_threshold(scorer: str) -> float:
    return FUZZY_THRESHOLD if scorer == "fuzzy" else ROUGE_THRESHOLD


def match_phrases(pred: Sequence[str], gold: Sequence[str], scorer: str = "fuzzy",
                  match_threshold: float | None = None) -> list[tuple[int, int, float]]:
    """Greedy one-to-one matching, best pairs first; returns (pred, gold, sim) hits."""
    if match_threshold is None:
        match_threshold = default_threshold(scorer)
    if not 0 < match_threshold <= 1:
        raise ValidationError(f"match threshold {match_threshold} outside (0, 1]")
    sim = _scorer(scorer)
    pairs = [(sim(p, g), i, j) for i, p in enumerate(pred) for j, g in enumerate(gold)]
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_p, used_g, hits = set(), set(), []
    for s, i, j in pairs:
        if s < match_threshold:
            break
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        hits.append((i, j, s))
    return hits


def phrase_set_prf(pred: Sequence[str], gold: Sequence[str], scorer: str = "fuzzy",
                   match_threshold: float | None = None) -> PhraseMatchReport:
    hits = match_phrases(pred, gold, scorer, match_threshold)
    return PhraseMatchReport.from_counts(len(hits), len(pred), len(gold))


def corpus_phrase_prf(pairs, scorer: str = "fuzzy", match_threshold: float | None = None) -> PhraseMatchReport:
    """Pool hit counts over (pred, gold) phrase lists of many instructions."""
    hits = n_pred = n_gold = 0
    for pred, gold in pairs:
        r = phrase_set_prf(pred, gold, scorer, match_threshold)
        hits += r.hits
        n_pred += len(pred)
        n_gold += len(gold)
    return PhraseMatchReport.from_counts(hits, n_pred, n_gold)


def viewpoint_counts(selected: Sequence[str], gold: Sequence[str], graph: NavGraph) -> tuple[int, int, int]:
    if len(selected) != len(gold):
        raise ValidationError(f"{len(selected)} selected viewpoints vs {len(gold)} gold")
    exact = near = 0
    for s, g in zip(selected, gold):
        graph.check(s)
        graph.check(g)
        if s == g:
            exact += 1
            near += 1
        elif graph.adjacent(s, g):
            near += 1
    return exact, near, len(gold)


def viewpoint_accuracy(selected: Sequence[str], gold: Sequence[str], graph: NavGraph) -> ViewpointReport:
    exact, near, total = viewpoint_counts(selected, gold, graph)
    if total == 0:
        return ViewpointReport(0.0, 0.0, 0)
    return ViewpointReport(exact / total, near / total, total)
