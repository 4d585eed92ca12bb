import random

import pytest

from mpnav.alignment import Candidate, CandidateSet
from mpnav.instruction import validate_instruction
from mpnav.metrics import NavGraph


def cand(score, pos, view=0, ref=None, box=(0, 0, 1, 1), dims=(100000, 100000), node=None):
    return Candidate(score, ref or f"img_{pos}_{view}", box, dims, (pos, view), node)


def random_sets(rng, max_phrases, max_cands, n_pos=6, n_phrases=None):
    n = n_phrases or rng.randint(1, max_phrases)
    sets = []
    for i in range(n):
        cs = []
        for _ in range(rng.randint(1, max_cands)):
            width, height = rng.choice([(640, 480), (100, 100), (1024, 768)])
            w, h = rng.randint(1, width), rng.randint(1, height)
            cs.append(Candidate(
                round(rng.random(), 2),
                f"img{rng.randint(0, 40)}",
                (0, 0, w, h),
                (width, height),
                (rng.randint(0, n_pos), rng.randint(0, 3)),
            ))
        sets.append(CandidateSet(i, tuple(cs)))
    return sets


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def line_graph():
    """A-B-C-D on the x axis, 2 m apart."""
    nodes = {"A": (0, 0, 0), "B": (2, 0, 0), "C": (4, 0, 0), "D": (6, 0, 0)}
    return NavGraph(nodes, [("A", "B"), ("B", "C"), ("C", "D")])


@pytest.fixture
def detour_graph():
    """Line graph plus E (B-E 2.5 m, E-C 1.5 m) and F, 3 m off D."""
    nodes = {
        "A": (0, 0, 0), "B": (2, 0, 0), "C": (4, 0, 0), "D": (6, 0, 0),
        "E": (4, 1.5, 0), "F": (6, 3, 0),
    }
    edges = [("A", "B"), ("B", "C"), ("C", "D"), ("B", "E"), ("E", "C"), ("D", "F")]
    return NavGraph(nodes, edges)


@pytest.fixture
def decoy_sets():
    """Phrase 0 has a strong out-of-order decoy at position 5."""
    return [
        CandidateSet(0, (cand(0.9, 5, ref="decoy"), cand(0.6, 1, ref="sofa"))),
        CandidateSet(1, (cand(0.9, 2, ref="lamp"),)),
    ]


@pytest.fixture
def instr():
    return validate_instruction({
        "id": "i1",
        "tokens": "walk past the sofa and stop by the lamp".split(),
        "phrases": [{"text": "the sofa", "start": 3, "end": 4},
                    {"text": "the lamp", "start": 8, "end": 9}],
        "path": ["A", "B", "C", "D"],
    })


WORDS = ["sofa", "lamp", "table", "stairs", "door", "plant", "bed", "sink", "rug", "mirror"]


def make_world(seed=0, n_instr=12, grid=5):
    """Grid graph, random-walk paths and detector candidates with decoys.

    Instruction ``w000`` gets no candidates at all and every fourth phrase
    of the others is a detector miss.
    """
    from mpnav.alignment import Candidate
    from mpnav.instruction import validate_instruction
    from mpnav.io import GoldRecord

    rng = random.Random(seed)
    nodes = {f"v{x}_{y}": (2.0 * x, 2.0 * y, 0.0) for x in range(grid) for y in range(grid)}
    edges = []
    for x in range(grid):
        for y in range(grid):
            if x + 1 < grid:
                edges.append((f"v{x}_{y}", f"v{x + 1}_{y}"))
            if y + 1 < grid:
                edges.append((f"v{x}_{y}", f"v{x}_{y + 1}"))
    graph = NavGraph(nodes, edges)

    instructions, candidates, golds, trajectories = [], [], [], []
    for k in range(n_instr):
        iid = f"w{k:03d}"
        path = [f"v{rng.randrange(grid)}_{rng.randrange(grid)}"]
        while len(path) < rng.randint(3, 7):
            nxt = rng.choice(graph.neighbors(path[-1]))
            if nxt not in path:
                path.append(nxt)
            elif all(n in path for n in graph.neighbors(path[-1])):
                break
        n_ph = rng.randint(1, 4)
        objs = rng.sample(WORDS, n_ph)
        tokens, phrases = ["walk"], []
        for o in objs:
            tokens += ["past", "the", o]
            phrases.append({"text": f"the {o}", "start": len(tokens) - 1, "end": len(tokens)})
        tokens += ["and", "stop"]
        instructions.append(validate_instruction({"id": iid, "tokens": tokens, "phrases": phrases, "path": path}))

        true_pos = sorted(rng.randrange(len(path)) for _ in range(n_ph))
        for i, o in enumerate(objs):
            if k == 0 or (k * 7 + i) % 4 == 3:
                continue
            cs = [Candidate(round(rng.uniform(0.4, 0.8), 3), f"{path[true_pos[i]]}/{o}_{i}.jpg",
                            (10, 10, rng.randint(20, 200), rng.randint(20, 200)), (640, 480),
                            (true_pos[i], rng.randrange(36)))]
            for d in range(rng.randint(0, 3)):
                pos = rng.randrange(len(path))
                cs.append(Candidate(round(rng.uniform(0.3, 0.95), 3), f"{path[pos]}/{o}_decoy{d}.jpg",
                                    (0, 0, rng.randint(20, 300), rng.randint(20, 300)), (640, 480),
                                    (pos, rng.randrange(36))))
            candidates.append({"instruction_id": iid, "phrase_index": i, "candidates": [c.to_record() for c in cs]})
        golds.append(GoldRecord(iid, tuple(f"the {o}" for o in objs), tuple(path[p] for p in true_pos)))
        walk = list(path[:-1]) if len(path) > 2 and k % 3 == 0 else list(path)
        trajectories.append({"instruction_id": iid, "nodes": walk, "start": path[0], "goal": path[-1]})
    return {"graph": graph, "instructions": instructions, "candidates": candidates,
            "gold": golds, "trajectories": trajectories}


def write_world(directory, seed=0, n_instr=12):
    import json

    from mpnav.io import write_dataset

    w = make_world(seed, n_instr)
    directory.mkdir(parents=True, exist_ok=True)
    files = {name: directory / f"{name}.jsonl" for name in ("instructions", "candidates", "gold", "trajectories")}
    for name, path in files.items():
        write_dataset(path, w[name])
    files["graph"] = directory / "graph.json"
    files["graph"].write_text(json.dumps(w["graph"].to_record()))
    refs = sorted({c["image_ref"] for r in w["candidates"] for c in r["candidates"]})
    files["augment"] = directory / "augment.jsonl"
    write_dataset(files["augment"], [{"image_ref": r, "variants": [f"{r}.aug{j}" for j in range(5)]} for r in refs])
    return files


@pytest.fixture
def world():
    return make_world()


@pytest.fixture
def world_files(tmp_path):
    return write_world(tmp_path / "world")


ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {key}: {text}")
