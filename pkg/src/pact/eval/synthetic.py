"""Seeded synthetic corpora standing in for internal enterprise data.

Artifact types form a chain (``code_path -> oncall_team -> product`` by
default); every artifact links to one parent of the next type. Each parent
owns a private *signature* vocabulary that only its children use, so a
child and its parent share no signature words. A child also carries the
parent's name word unless its link was drawn as non-lexical. Name overlap is
visible to a plain encoder; the signature association can only be learned
from other linked siblings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pact.artifacts import Artifact, Corpus, LinkEdge, LinkGraph, write_corpus
from pact.errors import SpecInfeasible
from pact.eval.metrics import BenchItem, KeywordBenchmark
from pact.fetcher import Node, NodeCatalog

FILLER = (
    "service", "core", "api", "data", "common", "client", "server", "util", "handler",
    "model", "worker", "pipeline", "sync", "store", "cache", "config", "job", "index",
    "schema", "event", "platform", "infra", "tools", "support", "systems", "owns",
    "maintains", "builds", "runs", "reliability", "delivery", "integration",
)
PATH_ROOTS = ("src", "lib", "services", "apps", "libs")
QUESTION_WORDS = (
    "which", "what", "who", "owns", "own", "does", "do", "that", "the", "a", "an", "is",
    "it", "and", "of", "for", "to", "support", "supports", "oncall", "team", "product",
    "code", "path", "file", "py", "src", "lib", "services", "apps", "libs",
)
COMMON_WORDS = frozenset(FILLER) | frozenset(QUESTION_WORDS)

_VOWELS = "aeiou"
# Onsets per inventory. The letter sets are disjoint, so words from different
# inventories never share a token or a character trigram.
_INVENTORIES = {
    "main": list("bdgklmnprstvz") + "br dr gr kr pr tr st sk sp sl bl gl kl pl".split(),
    "guard": list("cfhjwxy") + "ch wh fy cy xy".split(),
}


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 7
    # leaf first; each type links to the next one
    types: tuple[str, ...] = ("code_path", "oncall_team", "product")
    counts: tuple[int, ...] = (400, 80, 20)
    relations: tuple[str, ...] = ("owned_by", "supports")
    fanout: tuple[int, ...] = (1, 1)
    signature_words: int = 4
    signature_sample: int = 3
    desc_len: tuple[int, int] = (2, 4)  # filler words per description
    nonlexical_rate: float = 0.2
    inventory: str = "main"
    negatives_per_positive: int = 4
    catalog_areas: int = 35
    nodes_per_area: int = 10
    projects: int = 150
    questions: int = 20

    def __post_init__(self) -> None:
        if len(self.counts) != len(self.types) or len(self.relations) != len(self.types) - 1:
            raise SpecInfeasible("types, counts and relations do not line up")
        if len(self.fanout) != len(self.relations):
            raise SpecInfeasible("one fan-out per relation")
        if not 0.0 <= self.nonlexical_rate < 1.0:
            raise SpecInfeasible("nonlexical_rate must be in [0, 1)")
        if self.inventory not in _INVENTORIES:
            raise SpecInfeasible(f"unknown inventory {self.inventory!r}")
        for name, count in zip(self.types[1:], self.counts[1:]):
            if count < self.negatives_per_positive + 1:
                raise SpecInfeasible(f"{count} {name} artifacts cannot supply negatives")
        for f, parents in zip(self.fanout, self.counts[1:]):
            if not 1 <= f <= parents:
                raise SpecInfeasible("fan-out must be between 1 and the parent count")
        if self.signature_sample > self.signature_words:
            raise SpecInfeasible("signature_sample exceeds signature_words")
        if self.desc_len[0] > self.desc_len[1] or self.desc_len[0] < 0:
            raise SpecInfeasible("bad desc_len range")


class WordPool:
    """Unique pronounceable pseudo-words built from onset + vowel syllables."""

    def __init__(self, rng: np.random.Generator, onsets: list[str], reserved=COMMON_WORDS):
        self.rng = rng
        self.syllables = [c + v for c in onsets for v in _VOWELS]
        self.used: set[str] = set(reserved)

    def take(self, n: int = 1) -> list[str]:
        out = []
        while len(out) < n:
            size = 2 + int(self.rng.integers(2))
            word = "".join(self.syllables[int(i)] for i in self.rng.integers(len(self.syllables), size=size))
            if word not in self.used:
                self.used.add(word)
                out.append(word)
        return out


def _sample(rng: np.random.Generator, items, n: int) -> list:
    idx = rng.choice(len(items), size=n, replace=False)
    return [items[int(i)] for i in idx]


@dataclass
class SyntheticData:
    corpus: Corpus
    names: dict[str, str]  # artifact id -> name word(s)
    catalog: NodeCatalog | None = None
    projects: list[tuple[str, str]] = field(default_factory=list)
    bench: KeywordBenchmark | None = None


def generate_corpus(spec: SyntheticSpec) -> tuple[Corpus, dict[str, str]]:
    rng = np.random.default_rng(spec.seed)
    pool = WordPool(rng, _INVENTORIES[spec.inventory])
    filler = list(FILLER) if spec.inventory == "main" else pool.take(len(FILLER))
    levels = len(spec.types)

    names: list[list[str]] = []
    signatures: list[list[list[str]]] = []
    for level, count in enumerate(spec.counts):
        if level == 0:
            names.append([""] * count)
        elif level == 1:
            names.append(["-".join(pool.take(2)) for _ in range(count)])
        else:
            names.append([pool.take(1)[0] for _ in range(count)])
        signatures.append([pool.take(spec.signature_words) for _ in range(count)] if level else [])

    # parents[level][i] -> parent indices at level + 1; round-robin over a
    # shuffled order gives every parent at least one child.
    parents: list[list[list[int]]] = []
    for level in range(levels - 1):
        n_child, n_parent = spec.counts[level], spec.counts[level + 1]
        order = rng.permutation(n_parent)
        links = []
        for i in range(n_child):
            first = int(order[i % n_parent])
            extra = [int(p) for p in rng.permutation(n_parent) if int(p) != first]
            links.append([first] + extra[: spec.fanout[level] - 1])
        parents.append(links)

    all_links = [(lv, i, p) for lv in range(levels - 1) for i in range(spec.counts[lv]) for p in parents[lv][i]]
    n_nonlex = round(spec.nonlexical_rate * len(all_links))
    nonlexical = {all_links[int(j)] for j in rng.permutation(len(all_links))[:n_nonlex]}

    artifacts_by_level: list[list[Artifact]] = []
    used_ids: set[str] = set()
    for level, type_name in enumerate(spec.types):
        row = []
        for i in range(spec.counts[level]):
            sig_words, name_words = [], []
            if level < levels - 1:
                for p in parents[level][i]:
                    sig_words += _sample(rng, signatures[level + 1][p], spec.signature_sample)
                    if (level, i, p) not in nonlexical:
                        name_words.append(names[level + 1][p])
            n_fill = int(rng.integers(spec.desc_len[0], spec.desc_len[1] + 1))
            fill = _sample(rng, filler, n_fill)
            if level == 0:
                root = PATH_ROOTS[int(rng.integers(len(PATH_ROOTS)))] if spec.inventory == "main" else pool.take(1)[0]
                parts = [root, *name_words, *sig_words[:-1]]
                leaf = "_".join([sig_words[-1], *fill[:1]]) + ".py"
                path = "/".join(parts + [leaf])
                ident = f"{type_name}:{path}"
                suffix = 2
                while ident in used_ids:
                    ident = f"{type_name}:{path}~{suffix}"
                    suffix += 1
                fields = (("path", path),)
            else:
                own = names[level][i]
                words = sig_words + name_words + fill
                order = rng.permutation(len(words))
                description = " ".join(words[int(j)] for j in order)
                ident = f"{type_name}:{own}"
                fields = (("name", own), ("description", description))
            used_ids.add(ident)
            row.append(Artifact(ident, type_name, fields))
        artifacts_by_level.append(row)

    edges = []
    for level in range(levels - 1):
        for i, links in enumerate(parents[level]):
            for p in links:
                edges.append(LinkEdge(artifacts_by_level[level][i].id,
                                      artifacts_by_level[level + 1][p].id, spec.relations[level]))
    artifacts = [a for row in artifacts_by_level for a in row]
    name_of = {}
    for level, row in enumerate(artifacts_by_level):
        for i, artifact in enumerate(row):
            name_of[artifact.id] = names[level][i] or artifact.field("path")
    template = {t: (["path"] if lv == 0 else ["name", "description"]) for lv, t in enumerate(spec.types)}
    return Corpus(tuple(spec.types), artifacts, LinkGraph(edges), template), name_of


def generate_catalog(spec: SyntheticSpec) -> tuple[NodeCatalog, list[tuple[str, str]]]:
    """Product-node catalog grouped in areas plus labelled project descriptions.

    Node titles combine an area word with two node words; descriptions mix
    area theme words, node words and filler. Projects mention some words of
    their true node, theme words shared across the area, a confusable word from
    a sibling node, and filler.
    """
    rng = np.random.default_rng([spec.seed, 1])
    pool = WordPool(rng, _INVENTORIES[spec.inventory])
    filler = list(FILLER)
    nodes, node_words, area_of = [], {}, {}
    for a in range(spec.catalog_areas):
        area_name = pool.take(1)[0]
        theme = pool.take(6)
        for _ in range(spec.nodes_per_area):
            title_words = pool.take(2)
            extra = pool.take(3)
            desc = _sample(rng, theme, 3) + extra + _sample(rng, filler, 2)
            desc = [desc[int(j)] for j in rng.permutation(len(desc))]
            node = Node(f"node:{area_name}-{title_words[0]}", f"{area_name} {' '.join(title_words)}", " ".join(desc))
            nodes.append(node)
            node_words[node.id] = (title_words, extra, theme)
            area_of[node.id] = a
    by_area: dict[int, list[str]] = {}
    for node in nodes:
        by_area.setdefault(area_of[node.id], []).append(node.id)
    projects = []
    for _ in range(spec.projects):
        truth = nodes[int(rng.integers(len(nodes)))].id
        title_words, extra, theme = node_words[truth]
        siblings = [n for n in by_area[area_of[truth]] if n != truth]
        confuser = node_words[siblings[int(rng.integers(len(siblings)))]]
        words = (
            _sample(rng, title_words, 1)
            + _sample(rng, extra, 1)
            + _sample(rng, theme, 2)
            + _sample(rng, confuser[0] + confuser[1], 1)
            + _sample(rng, filler, 3)
        )
        words = [words[int(j)] for j in rng.permutation(len(words))]
        projects.append(("project to " + " ".join(words), truth))
    return NodeCatalog(nodes), projects


def generate_benchmark(spec: SyntheticSpec, corpus: Corpus, names: dict[str, str]) -> KeywordBenchmark:
    """Questions about leaf artifacts whose answers are their parent and grandparent names."""
    if len(spec.types) < 3:
        raise SpecInfeasible("benchmark needs at least three artifact types")
    rng = np.random.default_rng([spec.seed, 2])
    leaves = corpus.of_type(spec.types[0])
    picks = rng.choice(len(leaves), size=min(spec.questions, len(leaves)), replace=False)
    t1, t2 = (t.replace("_", " ") for t in spec.types[1:3])
    items = []
    for i in sorted(int(p) for p in picks):
        leaf = leaves[i]
        parent = next(e.dst for e in corpus.graph if e.src == leaf.id)
        grand = next(e.dst for e in corpus.graph if e.src == parent)
        question = f"Which {t1} owns {leaf.field('path')}, and which {t2} does that {t1} support?"
        items.append(BenchItem(question, (names[parent], names[grand])))
    return KeywordBenchmark(items)


def generate(spec: SyntheticSpec) -> SyntheticData:
    corpus, names = generate_corpus(spec)
    catalog, projects = generate_catalog(spec)
    bench = generate_benchmark(spec, corpus, names)
    return SyntheticData(corpus, names, catalog, projects, bench)


def guard_spec(spec: SyntheticSpec) -> SyntheticSpec:
    """Same shape, disjoint vocabulary: a task the adapters never saw."""
    from dataclasses import replace

    return replace(spec, seed=spec.seed + 1000, inventory="guard")


def write_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write corpus, guard corpus, catalog, projects and benchmark files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate(spec)
    guard, _ = generate_corpus(guard_spec(spec))
    paths = {
        "corpus": out / "corpus.jsonl",
        "guard": out / "guard.jsonl",
        "catalog": out / "nodes.jsonl",
        "projects": out / "projects.jsonl",
        "bench": out / "bench.jsonl",
        "vocab": out / "vocab.txt",
    }
    write_corpus(data.corpus, paths["corpus"])
    write_corpus(guard, paths["guard"])
    with open(paths["catalog"], "w", encoding="utf-8", newline="\n") as fh:
        for node in data.catalog:
            fh.write(json.dumps({"id": node.id, "title": node.title, "description": node.description}) + "\n")
    with open(paths["projects"], "w", encoding="utf-8", newline="\n") as fh:
        for description, truth in data.projects:
            fh.write(json.dumps({"description": description, "node": truth}) + "\n")
    data.bench.save(paths["bench"])
    paths["vocab"].write_text("\n".join(sorted(COMMON_WORDS)) + "\n", encoding="utf-8")
    return paths
