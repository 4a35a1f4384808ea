from __future__ import annotations

import json
from pathlib import Path

import pytest

from pact.artifacts import Artifact, Corpus, LinkEdge, LinkGraph
from pact.embedder import FeatureHashEncoder
from pact.eval.experiments import run_experiment1
from pact.eval.synthetic import SyntheticSpec, generate, generate_corpus, guard_spec
from pact.trainer import TrainConfig


def make_corpus(records, edges=(), types=None) -> Corpus:
    """``records``: (id, type, fields); ``edges``: (src, dst[, relation])."""
    artifacts = [Artifact(i, t, tuple(f)) for i, t, f in records]
    graph = LinkGraph(LinkEdge(e[0], e[1], e[2] if len(e) > 2 else "rel") for e in edges)
    types = types or tuple(dict.fromkeys(a.type for a in artifacts))
    return Corpus(tuple(types), artifacts, graph)


def write_jsonl(path: Path, rows) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def synthetic():
    return generate(SyntheticSpec())


@pytest.fixture(scope="session")
def guard_corpus():
    return generate_corpus(guard_spec(SyntheticSpec()))[0]


@pytest.fixture(scope="session")
def encoder():
    return FeatureHashEncoder(256, 0)


@pytest.fixture(scope="session")
def experiment1(synthetic, encoder):
    """(report, adapters, train report) for the default corpus and config."""
    return run_experiment1(synthetic.corpus, TrainConfig(), encoder)


_criteria: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if rep.failed or rep.when == "call":
        _criteria[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict, detail = _criteria[number]
        line = f"criterion {number:>2} {verdict}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
