"""ReAct-style controller around the search tool.

A policy is any callable that takes the current :class:`AgentState` and
returns the model's next message. The controller accepts exactly two shapes::

    Thought: ...
    Action: <tool name> [Query: <text>]

    Thought: ...
    Final Answer: <text>
"""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Collection, Iterable, Mapping, Sequence

from pact.embedder import Embedder, tokenize
from pact.index import VectorIndex
from pact.knn_graph import KnnGraph
from pact.search import SearchRequest, search

SEARCH_TOOL = "PACT Search Tool"
OBSERVATION_CHARS = 1000
DEFAULT_MAX_STEPS = 8

_ACTION = re.compile(r"^\s*Action:\s*(?P<tool>[^\[\n]+?)\s*\[Query:\s*(?P<query>[^\n]*?)\s*\]\s*$", re.M)
_FINAL = re.compile(r"^\s*Final Answer:\s*(?P<answer>.*\S)", re.M | re.S)
_THOUGHT = re.compile(r"^\s*Thought:\s*(?P<thought>.*?)\s*(?=^\s*(?:Action|Final Answer):|\Z)", re.M | re.S)

FORMAT_REMINDER = (
    "Your last reply did not follow the required format. Reply with either\n"
    "Thought: <reasoning>\nAction: <tool name> [Query: <search text>]\n"
    "or\nThought: <reasoning>\nFinal Answer: <answer>"
)


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    invoke: Callable[[str], str] = field(compare=False)


@dataclass
class AgentStep:
    thought: str
    action: tuple[str, str] | None = None  # (tool name, tool input)
    observation: str | None = None
    answer: str | None = None


@dataclass
class Transcript:
    question: str
    steps: list[AgentStep] = field(default_factory=list)
    final_answer: str = ""
    stopped: str = "normal"  # "normal" | "max_steps"

    @property
    def tool_calls(self) -> list[AgentStep]:
        return [s for s in self.steps if s.action is not None]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class AgentState:
    question: str
    prompt: str
    steps: list[AgentStep]
    tool_names: tuple[str, ...]
    max_steps: int = DEFAULT_MAX_STEPS


Policy = Callable[[AgentState], str]


def parse_reply(text: str) -> AgentStep | None:
    """Strict parse of one policy reply; ``None`` when it matches neither shape."""
    action, final = _ACTION.search(text), _FINAL.search(text)
    thought_match = _THOUGHT.search(text)
    thought = thought_match.group("thought") if thought_match else ""
    if action and (not final or action.start() < final.start()):
        return AgentStep(thought, (action.group("tool").strip(), action.group("query")))
    if final:
        return AgentStep(thought, answer=final.group("answer").strip())
    return None


def system_prompt(tools: Iterable[ToolSpec]) -> str:
    lines = ["You answer questions about enterprise artifacts."]
    tools = list(tools)
    if tools:
        lines.append("You have access to the following tools:")
        lines += [f"{t.name}: {t.description}" for t in tools]
        lines.append("To use a tool reply with:\nThought: <reasoning>\nAction: <tool name> [Query: <search text>]")
    lines.append("When you can answer reply with:\nThought: <reasoning>\nFinal Answer: <answer>")
    return "\n".join(lines)


def render_prompt(question: str, tools: Sequence[ToolSpec], steps: Sequence[AgentStep]) -> str:
    parts = [system_prompt(tools), "", f"Question: {question}"]
    for step in steps:
        parts.append(f"Thought: {step.thought}")
        if step.action is not None:
            parts.append(f"Action: {step.action[0]} [Query: {step.action[1]}]")
            parts.append(f"Observation: {step.observation}")
    return "\n".join(parts)


def run_agent(
    question: str,
    policy: Policy,
    tools: Sequence[ToolSpec] = (),
    max_steps: int = DEFAULT_MAX_STEPS,
    observation_chars: int = OBSERVATION_CHARS,
) -> Transcript:
    """Alternate policy replies and tool calls until a final answer or ``max_steps``.

    An unparseable reply gets one reprompt with a format reminder; a second
    failure aborts the run with ``stopped="max_steps"``. Calls to tools that
    are not registered produce an error observation instead of a call.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    registry = {t.name: t for t in tools}
    if len(registry) != len(tools):
        raise ValueError("tool names must be unique")
    transcript = Transcript(question)
    names = tuple(registry)
    while len(transcript.steps) < max_steps:
        prompt = render_prompt(question, tools, transcript.steps)
        step = parse_reply(policy(AgentState(question, prompt, list(transcript.steps), names, max_steps)))
        if step is None:
            prompt += "\n\n" + FORMAT_REMINDER
            step = parse_reply(policy(AgentState(question, prompt, list(transcript.steps), names, max_steps)))
            if step is None:
                transcript.stopped = "max_steps"
                return transcript
        if step.answer is not None:
            transcript.steps.append(step)
            transcript.final_answer = step.answer
            return transcript
        tool_name, tool_input = step.action
        tool = registry.get(tool_name)
        if tool is None:
            observation = f"Error: unknown tool {tool_name}"
        else:
            try:
                observation = tool.invoke(tool_input)
            except Exception as exc:  # tool failures are observations, never loop errors
                observation = f"Error: {exc}"
        step.observation = observation[:observation_chars]
        transcript.steps.append(step)
    transcript.stopped = "max_steps"
    return transcript


def render_hits(result) -> str:
    lines = []
    for n, hit in enumerate(result.hits, 1):
        score = f"{hit.score:.4f}" if hit.score is not None else f"edge {hit.edge_similarity:.4f} from {hit.source}"
        lines.append(f"{n}. {hit.type} | {hit.id} | {hit.snippet} | {score}")
    return "\n".join(lines) if lines else "No results."


def pact_tool(
    index: VectorIndex,
    embedder: Embedder,
    graph: KnnGraph | None = None,
    k: int = 5,
    hops: int = 0,
) -> ToolSpec:
    """The search tool: numbered ``type | id | snippet | score`` lines."""

    def invoke(query: str) -> str:
        req = SearchRequest(query, k, enrich_hops=hops if graph is not None else 0)
        return render_hits(search(req, index, embedder, graph))

    return ToolSpec(
        SEARCH_TOOL,
        "Semantic search over enterprise artifacts such as code paths, oncall teams and "
        "products. Input is free text; output lists the closest artifacts.",
        invoke,
    )


def scripted_policy(replies: Sequence[str]) -> Policy:
    """Returns pre-authored replies in order, then repeats the last one."""
    replies = list(replies)
    if not replies:
        raise ValueError("scripted policy needs at least one reply")
    cursor = {"n": 0}

    def policy(state: AgentState) -> str:
        reply = replies[min(cursor["n"], len(replies) - 1)]
        cursor["n"] += 1
        return reply

    return policy


def load_scripted_policy(path: str | Path) -> Policy:
    return scripted_policy(json.loads(Path(path).read_text(encoding="utf-8")))


def completion_policy(complete: Callable[[dict], dict], max_tokens: int = 512) -> Policy:
    """Sends the rendered prompt to a remote model (``{"prompt", "max_tokens"} -> {"text"}``)."""

    def policy(state: AgentState) -> str:
        return str(complete({"prompt": state.prompt, "max_tokens": max_tokens}).get("text", ""))

    return policy


_LINE = re.compile(r"^\d+\. (?P<type>[^|]+?) \| (?P<id>\S+) \| (?P<snippet>.*) \| (?P<score>[^|]+)$")


def unknown_terms(text: str, vocab: Collection[str]) -> list[str]:
    """Distinct non-numeric tokens of ``text`` outside ``vocab``, in order of appearance."""
    terms = []
    for token in tokenize(text):
        if token not in vocab and not token.isdigit() and token not in terms:
            terms.append(token)
    return terms


def observation_hits(observation: str) -> list[tuple[str, str]]:
    """(id, snippet) pairs parsed from rendered tool output."""
    out = []
    for line in observation.splitlines():
        m = _LINE.match(line.strip())
        if m:
            out.append((m.group("id"), m.group("snippet")))
    return out


def rule_policy(vocab: Collection[str], follow_hits: int = 2, tool: str = SEARCH_TOOL) -> Policy:
    """Deterministic stand-in for an LLM.

    Searches each question token outside ``vocab``, then each unfamiliar token
    in the snippets of the top ``follow_hits`` results of every observation
    (the multi-hop part), and answers with every distinct retrieved
    ``id: snippet``. The last step of the budget is always kept for the answer.
    """
    vocab = frozenset(v.lower() for v in vocab)

    def policy(state: AgentState) -> str:
        searched = {s.action[1] for s in state.steps if s.action is not None}
        pending = unknown_terms(state.question, vocab)
        found: list[str] = []
        for step in state.steps:
            if step.observation is None:
                continue
            hits = observation_hits(step.observation)
            for _, snippet in hits[:follow_hits]:
                pending += [t for t in unknown_terms(snippet, vocab) if t not in pending]
            found += [f"{i}: {s}" for i, s in hits if f"{i}: {s}" not in found]
        if tool in state.tool_names and len(state.steps) < state.max_steps - 1:
            for term in pending:
                if term not in searched:
                    return f"Thought: I do not know '{term}', so I will look it up.\nAction: {tool} [Query: {term}]"
        if found:
            return "Thought: I have gathered the relevant artifacts.\nFinal Answer: " + "; ".join(found)
        return "Thought: I have no way to look this up.\nFinal Answer: I do not know."

    return policy
