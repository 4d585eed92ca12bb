"""Command-line front end.

Exit codes: 0 success, 1 invalid input or usage, 2 client or I/O failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import defaultdict

from . import config as config_mod
from .alignment import AlignmentConfig
from .clients import (
    AugmentStore,
    FixtureCaptioner,
    FixtureDetector,
    FixtureExtractor,
    HttpCaptioner,
    HttpDetector,
    HttpExtractor,
    Serialized,
)
from .dataset_eval import (
    PhraseMatchReport,
    corpus_phrase_prf,
    default_threshold,
    match_phrases,
    viewpoint_counts,
)
from .errors import ClientError, ValidationError
from .instruction import MultiModalInstruction, Setting, TextInstruction
from .io import GoldRecord, TrajectoryRecord, read_dataset, write_dataset
from .metrics import NavGraph, aggregate, evaluate_episode
from .pipeline import SETTINGS, PipelineConfig, pre_explore_build, run_pipeline, write_outputs

log = logging.getLogger("mpnav")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--summary", action="store_true", help="print a JSON summary to stdout")
    p.add_argument("-v", "--verbose", action="store_true")


def _align_opts(p):
    p.add_argument("--beta0", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beam-width", dest="beam_width", type=int)
    p.add_argument("--beam-width-cap", dest="beam_width_cap", type=int)
    p.add_argument("--oracle-bound", dest="oracle_bound", type=int,
                   help="use exhaustive search up to this many combinations")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)


def _detector_opts(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--candidates", help="candidates.jsonl fixture")
    g.add_argument("--detect-url", dest="detect_url")


def build_parser() -> Parser:
    parser = Parser(prog="mpnav", description="Multi-modal navigation instruction tools")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("align", help="select prompt images from candidate files")
    p.add_argument("--instructions", required=True)
    p.add_argument("--candidates", required=True)
    p.add_argument("--setting", default="all", choices=["aligned", "related", "terminal", "all"])
    p.add_argument("--out", required=True, help="output directory")
    _align_opts(p)
    _common(p)

    p = sub.add_parser("build", help="run the full generation pipeline")
    p.add_argument("--instructions", required=True)
    _detector_opts(p)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--extractions", help="fixture of extracted phrases per instruction id")
    g.add_argument("--extract-url", dest="extract_url")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--captions", help="fixture of captions per image ref")
    g.add_argument("--caption-url", dest="caption_url")
    p.add_argument("--augment", help="augmentation store (image_ref -> variants)")
    p.add_argument("--gamma", type=float)
    p.add_argument("--timeout", type=float)
    p.add_argument("--retries", type=int)
    p.add_argument("--out", required=True)
    _align_opts(p)
    _common(p)

    p = sub.add_parser("eval-nav", help="SR / SPL / nDTW / GP over trajectories")
    p.add_argument("--graph", required=True)
    p.add_argument("--trajectories", required=True)
    p.add_argument("--references", help="instructions.jsonl whose paths are the reference paths")
    p.add_argument("--threshold", type=float, help="success radius in meters")
    p.add_argument("--out", help="per-episode results (jsonl)")
    _common(p)

    p = sub.add_parser("eval-phrases", help="phrase precision / recall / F1 against gold")
    p.add_argument("--pred", required=True, help="instructions or generated dataset")
    p.add_argument("--gold", required=True)
    p.add_argument("--scorer", default="both", choices=["fuzzy", "rouge_l", "both"])
    p.add_argument("--match-threshold", dest="match_threshold", type=float)
    p.add_argument("--out", help="write the report here (json)")
    _common(p)

    p = sub.add_parser("eval-viewpoints", help="viewpoint matching / neighboring accuracy")
    p.add_argument("--pred", required=True, help="generated dataset with node ids on prompts")
    p.add_argument("--gold", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--match-threshold", dest="match_threshold", type=float,
                   help="fuzzy threshold for pairing phrases with gold phrases")
    p.add_argument("--out")
    _common(p)

    p = sub.add_parser("pre-explore", help="prompts harvested along pseudo paths")
    p.add_argument("--instructions", required=True)
    p.add_argument("--pseudo-paths", dest="pseudo_paths", required=True, help="trajectories.jsonl")
    p.add_argument("--graph", required=True)
    _detector_opts(p)
    p.add_argument("--timeout", type=float)
    p.add_argument("--retries", type=int)
    p.add_argument("--out", required=True)
    _align_opts(p)
    _common(p)

    p = sub.add_parser("stats", help="instruction and landmark counts")
    p.add_argument("datasets", nargs="+")
    p.add_argument("--out")
    _common(p)
    return parser


def _settings(args) -> dict:
    return config_mod.resolve(vars(args), getattr(args, "config", None))


def _pipeline_config(cfg: dict) -> PipelineConfig:
    return PipelineConfig(
        alignment=AlignmentConfig(cfg["beta0"], cfg["beta1"], cfg["beam_width"], cfg["beam_width_cap"]),
        gamma=cfg["gamma"],
        seed=cfg["seed"],
        oracle_bound=cfg["oracle_bound"],
    )


def _http_kwargs(cfg):
    return {"timeout": cfg["timeout"], "retries": cfg["retries"]}


def _detector(args, cfg):
    if getattr(args, "candidates", None):
        return FixtureDetector.from_file(args.candidates)
    url = cfg.get("detect_url")
    if not url:
        raise ValidationError("no detector: pass --candidates or --detect-url")
    return Serialized(HttpDetector(url, **_http_kwargs(cfg)))


def _instructions(path) -> list[TextInstruction]:
    return read_dataset(path, "instruction")


def _emit(args, summary: dict):
    if args.summary:
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def _write_json(path, obj):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _pipeline_summary(result, written):
    return {
        "instructions": len(result.datasets[Setting.ALIGNED]),
        "misses": len(result.misses),
        "text_only": sum(m.setting is Setting.TEXT_ONLY for m in result.datasets[Setting.ALIGNED]),
        "mean_landmarks": _mean([len(m.prompts) for m in result.datasets[Setting.ALIGNED]]),
        "files": [os.path.basename(p) for p in written],
    }


def cmd_align(args):
    cfg = _settings(args)
    result = run_pipeline(_instructions(args.instructions), FixtureDetector.from_file(args.candidates),
                          _pipeline_config(cfg), jobs=cfg["jobs"])
    settings = SETTINGS if args.setting == "all" else (Setting.parse(args.setting),)
    written = write_outputs(result, args.out, settings)
    _emit(args, _pipeline_summary(result, written))


def cmd_build(args):
    cfg = _settings(args)
    detector = _detector(args, cfg)
    extractor = captioner = store = None
    if args.extractions:
        extractor = FixtureExtractor.from_file(args.extractions)
    elif cfg["extract_url"]:
        extractor = Serialized(HttpExtractor(cfg["extract_url"], **_http_kwargs(cfg)))
    if args.captions:
        captioner = FixtureCaptioner.from_file(args.captions)
    elif cfg["caption_url"]:
        captioner = Serialized(HttpCaptioner(cfg["caption_url"], **_http_kwargs(cfg)))
    if args.augment:
        store = AugmentStore.from_file(args.augment)
    result = run_pipeline(_instructions(args.instructions), detector, _pipeline_config(cfg),
                          extractor=extractor, store=store, captioner=captioner, jobs=cfg["jobs"])
    written = write_outputs(result, args.out)
    _emit(args, _pipeline_summary(result, written))


def cmd_eval_nav(args):
    cfg = _settings(args)
    graph = NavGraph.load(args.graph)
    refs = {}
    if args.references:
        refs = {i.id: i.path_node_ids for i in _instructions(args.references)}
    trajs = read_dataset(args.trajectories, "trajectory")
    results = []
    for t in sorted(trajs, key=lambda t: t.instruction_id):
        ref = t.reference or refs.get(t.instruction_id)
        results.append(evaluate_episode(graph, t.nodes, t.start, t.goal, ref, cfg["threshold"], t.instruction_id))
    if args.out:
        write_dataset(args.out, results)
    summary = aggregate(results)
    _emit(args, summary)
    if not args.summary and not args.out:
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")


def _pred_phrases(records) -> dict[str, list[str]]:
    out = {}
    for r in records:
        base = r.base if isinstance(r, MultiModalInstruction) else r
        out[base.id] = [p.text or " ".join(base.phrase_tokens(i)) for i, p in enumerate(base.phrases)]
    return out


def cmd_eval_phrases(args):
    pred = _pred_phrases(read_dataset(args.pred))
    gold = {g.instruction_id: list(g.phrases) for g in read_dataset(args.gold, "gold")}
    ids = sorted(gold)
    missing = [i for i in ids if i not in pred]
    if missing:
        log.warning("%d gold instructions have no prediction", len(missing))
    scorers = ["fuzzy", "rouge_l"] if args.scorer == "both" else [args.scorer]
    report = {"instructions": len(ids)}
    for s in scorers:
        r: PhraseMatchReport = corpus_phrase_prf(
            [(pred.get(i, []), gold[i]) for i in ids], s, args.match_threshold)
        report[s] = r.to_record()
    if args.out:
        _write_json(args.out, report)
    _emit(args, report)
    if not args.summary and not args.out:
        sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")


def cmd_eval_viewpoints(args):
    graph = NavGraph.load(args.graph)
    gold: dict[str, GoldRecord] = {g.instruction_id: g for g in read_dataset(args.gold, "gold")}
    threshold = args.match_threshold or default_threshold("fuzzy")
    exact = near = total = 0
    for rec in sorted(read_dataset(args.pred, "mmi"), key=lambda m: m.id):
        g = gold.get(rec.id)
        if g is None:
            continue
        texts = [p.text for p in rec.base.phrases]
        by_phrase = {p.phrase_index: p.node_id for p in rec.prompts}
        selected, wanted = [], []
        for i, j, _ in match_phrases(texts, list(g.phrases), "fuzzy", threshold):
            node = by_phrase.get(i)
            if node is None or j >= len(g.viewpoints):
                continue
            selected.append(node)
            wanted.append(g.viewpoints[j])
        e, n, t = viewpoint_counts(selected, wanted, graph)
        exact, near, total = exact + e, near + n, total + t
    report = {
        "pairs": total,
        "matching": exact / total if total else 0.0,
        "neighboring": near / total if total else 0.0,
    }
    if args.out:
        _write_json(args.out, report)
    _emit(args, report)
    if not args.summary and not args.out:
        sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")


def cmd_pre_explore(args):
    cfg = _settings(args)
    graph = NavGraph.load(args.graph)
    detector = _detector(args, cfg)
    pcfg = _pipeline_config(cfg)
    paths: dict[str, TrajectoryRecord] = {t.instruction_id: t for t in read_dataset(args.pseudo_paths, "trajectory")}
    out = []
    for instr in sorted(_instructions(args.instructions), key=lambda i: i.id):
        t = paths.get(instr.id)
        if t is None:
            log.warning("no pseudo path for %s, skipped", instr.id)
            continue
        out.append(pre_explore_build(instr, t.nodes, graph, detector, pcfg))
    os.makedirs(args.out, exist_ok=True)
    write_dataset(os.path.join(args.out, "pre_explore.jsonl"), out)
    _emit(args, {
        "instructions": len(out),
        "text_only": sum(m.setting is Setting.TEXT_ONLY for m in out),
        "mean_landmarks": _mean([len(m.prompts) for m in out]),
    })


def _mean(xs):
    return sum(xs) / len(xs) if xs else 0.0


def dataset_stats(records) -> dict:
    counts = []
    by_setting = defaultdict(int)
    for r in records:
        if isinstance(r, MultiModalInstruction):
            counts.append(len(r.prompts))
            by_setting[r.setting.value] += 1
        elif isinstance(r, TextInstruction):
            counts.append(len(r.phrases))
    return {
        "instructions": len(counts),
        "mean_landmarks": _mean(counts),
        "max_landmarks": max(counts, default=0),
        "settings": dict(sorted(by_setting.items())),
    }


def cmd_stats(args):
    report = {os.path.basename(p): dataset_stats(read_dataset(p)) for p in args.datasets}
    if args.out:
        _write_json(args.out, report)
    sys.stdout.write(json.dumps(report, sort_keys=True) + "\n")


COMMANDS = {
    "align": cmd_align,
    "build": cmd_build,
    "eval-nav": cmd_eval_nav,
    "eval-phrases": cmd_eval_phrases,
    "eval-viewpoints": cmd_eval_viewpoints,
    "pre-explore": cmd_pre_explore,
    "stats": cmd_stats,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ClientError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
