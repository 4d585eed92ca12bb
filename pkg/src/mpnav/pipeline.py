"""Extraction -> Detection -> Alignment -> Augmentation over pluggable clients."""
from __future__ import annotations

import logging
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .alignment import (
    AlignmentConfig,
    CandidateSet,
    derive_terminal,
    search_space,
    select_aligned_beam,
    select_aligned_exhaustive,
    select_related,
)
from .clients import AugmentStore, CaptionerClient, DetectorClient, DetectRequest, ExtractorClient
from .errors import ClientError, ClientUnavailable, InvalidSpanFromClient, ValidationError
from .instruction import (
    MultiModalInstruction,
    PhraseSpan,
    Setting,
    TextInstruction,
    parse_phrase,
    check_spans,
    interleave,
)
from .io import MissRecord, write_dataset
from .metrics import NavGraph, Trajectory

log = logging.getLogger(__name__)

SETTINGS = (Setting.ALIGNED, Setting.RELATED, Setting.TERMINAL)


@dataclass(frozen=True)
class PipelineConfig:
    alignment: AlignmentConfig = field(default_factory=AlignmentConfig)
    gamma: float = 0.2
    seed: int = 0
    # exhaustive search below this many combinations, beam search above
    oracle_bound: int = 5000

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError(f"gamma {self.gamma} outside [0, 1]")


def run_extraction(instr: TextInstruction | str, client: ExtractorClient) -> tuple[PhraseSpan, ...]:
    if isinstance(instr, str):
        instr = TextInstruction("", tuple(instr.split()), (), ())
    try:
        raw = client.extract(instr)
    except ClientError:
        raise
    except OSError as exc:
        raise ClientUnavailable(f"extractor failed: {exc}") from exc
    try:
        phrases = tuple(parse_phrase(p) for p in raw)
        check_spans(phrases, instr.length)
    except ValidationError as exc:
        raise InvalidSpanFromClient(f"instruction {instr.id!r}: {exc}") from exc
    return phrases


@dataclass
class DetectionResult:
    sets: list[CandidateSet]
    misses: list[int]


def run_detection(
    phrases: Sequence[PhraseSpan],
    path_node_ids: Sequence[str],
    client: DetectorClient,
    instruction_id: str = "",
    positions: Mapping[str, int] | None = None,
) -> DetectionResult:
    """Detect each phrase on the given nodes.

    A candidate without a ``node_id`` is placed on ``path_node_ids[path_position]``.
    Candidates on nodes outside ``path_node_ids`` are dropped. With
    ``positions``, order keys are rewritten to ``(positions[node], view)``.
    """
    nodes = tuple(path_node_ids)
    allowed = set(nodes)
    sets, misses = [], []
    for i, ph in enumerate(phrases):
        req = DetectRequest(instruction_id, i, ph.text, nodes)
        try:
            found = client.detect(req)
        except ClientError:
            raise
        except OSError as exc:
            raise ClientUnavailable(f"detector failed: {exc}") from exc
        kept = []
        for c in found:
            node = c.node_id
            if node is None:
                if c.path_position >= len(nodes):
                    continue
                node = nodes[c.path_position]
            if node not in allowed:
                continue
            key = c.order_key if positions is None else (positions[node], c.view_index)
            kept.append(replace(c, node_id=node, order_key=key))
        if kept:
            sets.append(CandidateSet(i, tuple(kept)))
        else:
            misses.append(i)
    return DetectionResult(sets, misses)


def select_aligned(sets: Sequence[CandidateSet], cfg: PipelineConfig):
    if search_space(sets) <= cfg.oracle_bound:
        return select_aligned_exhaustive(sets, cfg.alignment), "exhaustive"
    return select_aligned_beam(sets, cfg.alignment), "beam"


def build_settings(
    instr: TextInstruction, sets: Sequence[CandidateSet], cfg: PipelineConfig
) -> dict[Setting, MultiModalInstruction]:
    aligned, method = select_aligned(sets, cfg)
    related = select_related(sets, cfg.alignment)
    terminal = derive_terminal(aligned, len(instr.phrases))
    return {
        Setting.ALIGNED: interleave(instr, aligned.prompts(), Setting.ALIGNED,
                                    {"scores": aligned.scores(), "search": method}),
        Setting.RELATED: interleave(instr, related.prompts(), Setting.RELATED,
                                    {"scores": related.scores()}),
        Setting.TERMINAL: interleave(instr, [terminal], Setting.TERMINAL),
    }


def sample_augmented(
    mmi: MultiModalInstruction, store: AugmentStore, gamma: float, seed: int
) -> MultiModalInstruction:
    """Swap each prompt image for a stored variant with probability gamma."""
    rng = random.Random(f"{seed}:{mmi.base.id}")
    prompts, swapped = [], []
    for p in mmi.prompts:
        u = rng.random()
        variants = store.variants(p.image_ref)
        if variants and u < gamma:
            prompts.append(replace(p, image_ref=rng.choice(variants)))
            swapped.append({"phrase_index": p.phrase_index, "original": p.image_ref})
        else:
            prompts.append(p)
    if not swapped:
        return mmi
    info = dict(mmi.info)
    info["augmented"] = swapped
    return replace(mmi, prompts=tuple(prompts), info=info)


def explore_positions(pseudo_path: Sequence[str], graph: NavGraph) -> dict[str, int]:
    """Visited nodes and their neighbours, each keyed to the first step that reaches it."""
    positions: dict[str, int] = {}
    for i, node in enumerate(pseudo_path):
        positions.setdefault(node, i)
    for i, node in enumerate(pseudo_path):
        for nb in graph.neighbors(node):
            positions.setdefault(nb, i)
    return positions


def pre_explore_build(
    instr: TextInstruction,
    pseudo_path,
    graph: NavGraph,
    detector: DetectorClient,
    cfg: PipelineConfig,
) -> MultiModalInstruction:
    traj = pseudo_path if isinstance(pseudo_path, Trajectory) else Trajectory(tuple(pseudo_path))
    traj.validate(graph)
    positions = explore_positions(traj.node_ids, graph)
    det = run_detection(instr.phrases, list(positions), detector, instr.id, positions)
    info = {"sources": sorted(positions), "misses": det.misses}
    if not det.sets:
        log.warning("pre-explore: no candidates for %s, falling back to text only", instr.id)
        return interleave(instr, [], Setting.TEXT_ONLY, info)
    aligned, method = select_aligned(det.sets, cfg)
    info.update(scores=aligned.scores(), search=method)
    return interleave(instr, aligned.prompts(), Setting.ALIGNED, info)


@dataclass
class PipelineResult:
    datasets: dict[Setting, list[MultiModalInstruction]]
    misses: list[MissRecord]
    augmented: dict[Setting, list[MultiModalInstruction]] = field(default_factory=dict)


def process_instruction(
    instr: TextInstruction,
    detector: DetectorClient,
    cfg: PipelineConfig,
    extractor: ExtractorClient | None = None,
    store: AugmentStore | None = None,
    captioner: CaptionerClient | None = None,
):
    if extractor is not None:
        instr = replace(instr, phrases=run_extraction(instr, extractor))
    misses = []
    sets = []
    if not instr.phrases:
        misses.append(MissRecord(instr.id, None, "no landmark phrases"))
    else:
        det = run_detection(instr.phrases, instr.path_node_ids, detector, instr.id)
        sets = det.sets
        misses += [MissRecord(instr.id, i, "no candidates") for i in det.misses]
        if not sets:
            misses.append(MissRecord(instr.id, None, "no landmark detected"))
    if sets:
        out = build_settings(instr, sets, cfg)
    else:
        text_only = interleave(instr, [], Setting.TEXT_ONLY)
        out = {s: text_only for s in SETTINGS}
    if captioner is not None and out[Setting.TERMINAL].prompts:
        term = out[Setting.TERMINAL]
        cap = captioner.caption(term.prompts[0].image_ref)
        out[Setting.TERMINAL] = replace(term, info={**term.info, "caption": cap})
    aug = {}
    if store is not None:
        aug = {s: sample_augmented(m, store, cfg.gamma, cfg.seed) for s, m in out.items()}
    return out, misses, aug


def run_pipeline(
    instructions: Sequence[TextInstruction],
    detector: DetectorClient,
    cfg: PipelineConfig | None = None,
    extractor: ExtractorClient | None = None,
    store: AugmentStore | None = None,
    captioner: CaptionerClient | None = None,
    jobs: int = 1,
) -> PipelineResult:
    cfg = cfg or PipelineConfig()
    ordered = sorted(instructions, key=lambda i: i.id)

    def one(instr):
        return process_instruction(instr, detector, cfg, extractor, store, captioner)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, ordered))
    else:
        results = [one(i) for i in ordered]

    result = PipelineResult({s: [] for s in SETTINGS}, [], {s: [] for s in SETTINGS} if store is not None else {})
    for out, misses, aug in results:
        for s in SETTINGS:
            result.datasets[s].append(out[s])
            if store is not None:
                result.augmented[s].append(aug[s])
        result.misses.extend(misses)
    return result


def write_outputs(result: PipelineResult, out_dir, settings: Sequence[Setting] = SETTINGS) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for s in settings:
        path = os.path.join(out_dir, f"{s.value}.jsonl")
        write_dataset(path, result.datasets[s])
        written.append(path)
        if result.augmented:
            path = os.path.join(out_dir, f"{s.value}_augmented.jsonl")
            write_dataset(path, result.augmented[s])
            written.append(path)
    path = os.path.join(out_dir, "misses.jsonl")
    write_dataset(path, result.misses)
    written.append(path)
    return written
