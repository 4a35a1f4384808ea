from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_corpus, write_jsonl
from pact.artifacts import (
    Artifact,
    LinkEdge,
    LinkGraph,
    compose_text,
    load_corpus,
    two_hop_pairs,
    write_corpus,
)
from pact.errors import DanglingEdge, ParseError, TypeNotInTemplate

TEMPLATE = {"oncall_team": ["name", "charter"], "doc": ["name", "desc"]}


def test_compose_joins_fields_in_template_order():
    team = Artifact("team:pay", "oncall_team", (("name", "payments-oncall"), ("charter", "owns payment flows")))
    assert compose_text(team, TEMPLATE) == "payments-oncall | owns payment flows"


def test_compose_skips_empty_fields():
    doc = Artifact("doc:x", "doc", (("name", "x"), ("desc", "")))
    assert compose_text(doc, TEMPLATE) == "x"


def test_compose_follows_template_not_storage_order():
    team = Artifact("team:pay", "oncall_team", (("charter", "owns flows"), ("name", "pay")))
    assert compose_text(team, TEMPLATE) == "pay | owns flows"
    assert compose_text(team, TEMPLATE) == compose_text(team, dict(TEMPLATE))


def test_compose_unknown_type():
    product = Artifact("product:p", "product", (("name", "p"),))
    with pytest.raises(TypeNotInTemplate):
        compose_text(product, TEMPLATE)


def test_artifact_needs_text():
    with pytest.raises(ValueError):
        Artifact("doc:y", "doc", (("name", ""),))


def _graph(pairs):
    return LinkGraph(LinkEdge(a, b, "rel") for a, b in pairs)


def test_two_hop_chain():
    assert two_hop_pairs(_graph([("A", "B"), ("B", "C")])) == [("A", "C")]


def test_two_hop_needs_a_chain():
    assert two_hop_pairs(_graph([("A", "B")])) == []


def test_two_hop_excludes_direct_edges():
    # oracle: every 2-path on {A, B, C}, minus the direct edge A->C
    edges = {("A", "B"), ("B", "C"), ("A", "C")}
    paths = {(a, c) for a, b in edges for b2, c in edges if b == b2 and a != c}
    assert paths - edges == set()
    assert two_hop_pairs(_graph([("A", "B"), ("B", "C"), ("A", "C")])) == []


def test_graph_rejects_self_loops_and_duplicates():
    g = LinkGraph()
    with pytest.raises(ValueError):
        g.add(LinkEdge("A", "A", "rel"))
    g.add(LinkEdge("A", "B", "rel"))
    with pytest.raises(ValueError):
        g.add(LinkEdge("A", "B", "rel"))


edge_lists = st.lists(
    st.tuples(st.integers(0, 14), st.integers(0, 14)).filter(lambda e: e[0] != e[1]),
    max_size=60,
    unique=True,
)


@given(edge_lists)
@settings(max_examples=200, deadline=None)
def test_two_hop_matches_double_loop(pairs):
    graph = _graph([(f"n{a}", f"n{b}") for a, b in pairs])
    got = two_hop_pairs(graph)
    direct = {(e.src, e.dst) for e in graph}
    succ = {}
    for a, b in direct:
        succ.setdefault(a, set()).add(b)
    oracle = {(a, c) for a in succ for b in succ[a] for c in succ.get(b, ()) if a != c and (a, c) not in direct}
    assert set(got) == oracle
    assert len(got) == len(set(got))
    assert all(a != c and (a, c) not in direct for a, c in got)


def _sample_corpus():
    return make_corpus(
        [
            ("code_path:src/pay/api.py", "code_path", [("path", "src/pay/api.py")]),
            ("oncall_team:pay", "oncall_team", [("name", "pay"), ("description", "payments ✓ team")]),
            ("product:wallet", "product", [("name", "wallet"), ("description", "")]),
        ],
        [("code_path:src/pay/api.py", "oncall_team:pay", "owned_by"), ("oncall_team:pay", "product:wallet", "supports")],
    )


def _snapshot(corpus):
    return (
        corpus.types,
        [(a.id, a.type, a.fields) for a in corpus.artifacts],
        [(e.src, e.dst, e.relation) for e in corpus.graph],
    )


def test_round_trip_small(tmp_path):
    corpus = _sample_corpus()
    write_corpus(corpus, tmp_path / "c.jsonl")
    again = load_corpus(tmp_path / "c.jsonl")
    assert _snapshot(again) == _snapshot(corpus)
    assert again.template == corpus.template


def test_round_trip_synthetic(tmp_path, synthetic):
    write_corpus(synthetic.corpus, tmp_path / "c.jsonl")
    again = load_corpus(tmp_path / "c.jsonl")
    assert _snapshot(again) == _snapshot(synthetic.corpus)
    write_corpus(again, tmp_path / "d.jsonl")
    assert (tmp_path / "c.jsonl").read_bytes() == (tmp_path / "d.jsonl").read_bytes()


words = st.text(alphabet="abcdefghij -_/", min_size=1, max_size=12).filter(str.strip)


@given(st.lists(st.lists(st.tuples(st.sampled_from(["name", "desc", "path"]), words), min_size=1, max_size=3),
                min_size=2, max_size=8),
       st.data())
@settings(max_examples=50, deadline=None)
def test_round_trip_property(tmp_path_factory, field_lists, data):
    records = [(f"a{i}", "t" if i % 2 else "u", fields) for i, fields in enumerate(field_lists)]
    n = len(records)
    pairs = data.draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                               .filter(lambda e: e[0] != e[1]), unique=True, max_size=10))
    corpus = make_corpus(records, [(f"a{a}", f"a{b}") for a, b in pairs])
    path = tmp_path_factory.mktemp("rt") / "c.jsonl"
    write_corpus(corpus, path)
    assert _snapshot(load_corpus(path)) == _snapshot(corpus)


def test_load_reports_line_of_malformed_json(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"types": ["doc"], "version": 1}\n{"id": "d1", "type": "doc", "fields": [["name", "x"]]}\n{oops\n')
    with pytest.raises(ParseError) as info:
        load_corpus(path)
    assert info.value.line == 3
    assert "line 3" in str(info.value)


@pytest.mark.parametrize(
    "rows, line",
    [
        ([{"types": ["doc"]}], 1),  # no version
        ([{"types": ["doc"], "version": 1}, {"id": "d1", "type": "team", "fields": [["n", "x"]]}], 2),
        ([{"types": ["doc"], "version": 1}, {"id": "d1", "type": "doc", "fields": [["n", "x"]]},
          {"id": "d1", "type": "doc", "fields": [["n", "y"]]}], 3),
        ([{"types": ["doc"], "version": 1}, {"id": "d1", "type": "doc"}], 2),
        ([{"types": ["doc"], "version": 1}, {"edge": {"src": "a"}}], 2),
    ],
)
def test_load_rejects_bad_records(tmp_path, rows, line):
    with pytest.raises(ParseError) as info:
        load_corpus(write_jsonl(tmp_path / "c.jsonl", rows))
    assert info.value.line == line


def test_load_rejects_dangling_edge(tmp_path):
    rows = [
        {"types": ["doc"], "version": 1},
        {"id": "d1", "type": "doc", "fields": [["name", "x"]]},
        {"edge": {"src": "d1", "dst": "d9", "relation": "mentions"}},
    ]
    with pytest.raises(DanglingEdge, match="d9"):
        load_corpus(write_jsonl(tmp_path / "c.jsonl", rows))


def test_load_keeps_file_order(tmp_path):
    rows = [{"types": ["doc"], "version": 1}]
    rows += [{"id": f"d{i}", "type": "doc", "fields": [["name", f"w{i}"]]} for i in (3, 1, 2)]
    corpus = load_corpus(write_jsonl(tmp_path / "c.jsonl", rows))
    assert [a.id for a in corpus.artifacts] == ["d3", "d1", "d2"]
    assert json.loads((tmp_path / "c.jsonl").read_text().splitlines()[0])["version"] == 1
