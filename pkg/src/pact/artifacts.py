"""Typed artifacts, the ground-truth link graph, and the JSONL corpus format."""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from pact.errors import DanglingEdge, ParseError, TypeNotInTemplate

SEPARATOR = " | "
CORPUS_VERSION = 1

_WHITESPACE = re.compile(r"\s")

Template = Mapping[str, Sequence[str]]


@dataclass(frozen=True)
class Artifact:
    id: str
    type: str
    fields: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.id or _WHITESPACE.search(self.id):
            raise ValueError(f"invalid artifact id {self.id!r}")
        object.__setattr__(self, "fields", tuple((str(k), str(v)) for k, v in self.fields))
        if not any(text for _, text in self.fields):
            raise ValueError(f"artifact {self.id} has no non-empty text field")

    @property
    def composed_text(self) -> str:
        """Fields joined in their stored order."""
        return SEPARATOR.join(text for _, text in self.fields if text)

    def field(self, name: str) -> str:
        for key, text in self.fields:
            if key == name:
                return text
        return ""


def compose_text(artifact: Artifact, template: Template) -> str:
    """Join the artifact's fields in the order the template lists for its type.

    Fields absent from the artifact or with empty text are skipped.

    Raises:
        TypeNotInTemplate: the template has no entry for the artifact's type.
    """
    try:
        order = template[artifact.type]
    except KeyError:
        raise TypeNotInTemplate(f"type {artifact.type!r} not covered by template") from None
    values = dict(artifact.fields)
    return SEPARATOR.join(values[name] for name in order if values.get(name))


@dataclass(frozen=True)
class LinkEdge:
    src: str
    dst: str
    relation: str


class LinkGraph:
    """Directed ground-truth edges with a direction-agnostic adjacency view."""

    def __init__(self, edges: Iterable[LinkEdge] = ()):
        self._edges: list[LinkEdge] = []
        self._seen: set[LinkEdge] = set()
        self._adj: dict[str, set[tuple[str, str]]] = defaultdict(set)
        self._succ: dict[str, list[str]] = defaultdict(list)
        self._direct: set[tuple[str, str]] = set()
        for edge in edges:
            self.add(edge)

    def add(self, edge: LinkEdge) -> None:
        if edge.src == edge.dst:
            raise ValueError(f"self-loop on {edge.src}")
        if edge in self._seen:
            raise ValueError(f"duplicate edge {edge.src} -> {edge.dst} ({edge.relation})")
        self._seen.add(edge)
        self._edges.append(edge)
        self._adj[edge.src].add((edge.dst, edge.relation))
        self._adj[edge.dst].add((edge.src, edge.relation))
        if (edge.src, edge.dst) not in self._direct:
            self._succ[edge.src].append(edge.dst)
        self._direct.add((edge.src, edge.dst))

    @property
    def edges(self) -> tuple[LinkEdge, ...]:
        return tuple(self._edges)

    def __len__(self) -> int:
        return len(self._edges)

    def __iter__(self) -> Iterator[LinkEdge]:
        return iter(self._edges)

    def adjacency(self, node: str) -> frozenset[tuple[str, str]]:
        return frozenset(self._adj.get(node, ()))

    def neighbors(self, node: str) -> set[str]:
        return {other for other, _ in self._adj.get(node, ())}

    def successors(self, node: str) -> list[str]:
        return list(self._succ.get(node, ()))

    def has_edge(self, src: str, dst: str) -> bool:
        """True when a directed edge src -> dst exists under any relation."""
        return (src, dst) in self._direct

    def linked(self, a: str, b: str) -> bool:
        return (a, b) in self._direct or (b, a) in self._direct


def two_hop_pairs(graph: LinkGraph) -> list[tuple[str, str]]:
    """Ordered pairs (A, C) joined by a directed chain A -> B -> C.

    Pairs that are already a direct edge A -> C, and pairs with A == C, are
    left out. Output order follows the edge order of the graph.
    """
    pairs: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for edge in graph:
        a, b = edge.src, edge.dst
        for c in graph.successors(b):
            pair = (a, c)
            if c == a or pair in seen or graph.has_edge(a, c):
                continue
            seen.add(pair)
            pairs.append(pair)
    return pairs


@dataclass
class Corpus:
    types: tuple[str, ...]
    artifacts: list[Artifact]
    graph: LinkGraph
    template: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._by_id = {a.id: a for a in self.artifacts}
        if len(self._by_id) != len(self.artifacts):
            raise ValueError("duplicate artifact ids")
        if not self.template:
            self.template = default_template(self.artifacts)

    def __len__(self) -> int:
        return len(self.artifacts)

    def __contains__(self, artifact_id: str) -> bool:
        return artifact_id in self._by_id

    def __getitem__(self, artifact_id: str) -> Artifact:
        return self._by_id[artifact_id]

    def text(self, artifact_id: str) -> str:
        return compose_text(self._by_id[artifact_id], self.template)

    def of_type(self, type_name: str) -> list[Artifact]:
        return [a for a in self.artifacts if a.type == type_name]

    def with_graph(self, graph: LinkGraph) -> "Corpus":
        return Corpus(self.types, self.artifacts, graph, self.template)


def default_template(artifacts: Iterable[Artifact]) -> dict[str, list[str]]:
    """Per type, field names in first-seen order across the corpus."""
    template: dict[str, list[str]] = {}
    for artifact in artifacts:
        order = template.setdefault(artifact.type, [])
        for name, _ in artifact.fields:
            if name not in order:
                order.append(name)
    return template


def load_corpus(path: str | Path) -> Corpus:
    """Parse a JSONL corpus file.

    Raises:
        ParseError: malformed JSON, a bad header, an unknown type, or a
            duplicate id/edge; carries the 1-based line number.
        DanglingEdge: an edge endpoint is not an artifact in the file.
    """
    artifacts: list[Artifact] = []
    pending_edges: list[tuple[int, LinkEdge]] = []
    types: tuple[str, ...] = ()
    template: dict[str, list[str]] = {}
    ids: set[str] = set()

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(record, dict):
                raise ParseError("expected a JSON object", lineno)
            if lineno == 1:
                if record.get("version") != CORPUS_VERSION or not isinstance(record.get("types"), list):
                    raise ParseError("header must be {\"types\": [...], \"version\": 1}", lineno)
                types = tuple(str(t) for t in record["types"])
                template = {str(k): [str(f) for f in v] for k, v in record.get("templates", {}).items()}
                continue
            if "edge" in record:
                e = record["edge"]
                try:
                    edge = LinkEdge(str(e["src"]), str(e["dst"]), str(e["relation"]))
                except (KeyError, TypeError):
                    raise ParseError("edge needs src, dst and relation", lineno) from None
                pending_edges.append((lineno, edge))
                continue
            try:
                artifact = Artifact(
                    str(record["id"]),
                    str(record["type"]),
                    tuple((str(k), str(v)) for k, v in record["fields"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad artifact record: {exc}", lineno) from None
            if artifact.type not in types:
                raise ParseError(f"type {artifact.type!r} not declared in header", lineno)
            if artifact.id in ids:
                raise ParseError(f"duplicate id {artifact.id}", lineno)
            ids.add(artifact.id)
            artifacts.append(artifact)

    if not types:
        raise ParseError("missing header", 1)
    graph = LinkGraph()
    for lineno, edge in pending_edges:
        for end in (edge.src, edge.dst):
            if end not in ids:
                raise DanglingEdge(f"line {lineno}: edge endpoint {end!r} is not in the corpus")
        try:
            graph.add(edge)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return Corpus(types, artifacts, graph, template)


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    lines = [{"types": list(corpus.types), "version": CORPUS_VERSION, "templates": corpus.template}]
    lines += [{"id": a.id, "type": a.type, "fields": [list(f) for f in a.fields]} for a in corpus.artifacts]
    lines += [{"edge": {"src": e.src, "dst": e.dst, "relation": e.relation}} for e in corpus.graph]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in lines:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=False) + "\n")
