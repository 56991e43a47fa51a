"""Chat model backends, prompt templates, knowledge extraction, and digest ordering."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
from dataclasses import dataclass
from importlib import resources
from typing import TYPE_CHECKING, Protocol

import numpy as np
import requests

from urca._http import TransportError, post_json
from urca.clustering import Cluster

if TYPE_CHECKING:
    from urca.corpus import ResearchQuestion

logger = logging.getLogger(__name__)

CHAT_KINDS = ("remote", "scripted")
ORDERING_KINDS = ("ascending", "descending", "random", "pingpong_desc_top", "pingpong_desc_bottom")

EMPTY_EVIDENCE_MARKER = "NO RELEVANT EVIDENCE"
NO_EVIDENCE_NOTICE = "No evidence was found in the provided sources."

DEFAULT_CHAR_BUDGET = 12_000

TEMPLATE_PLACEHOLDERS = ("{question}", "{left}", "{right}", "{passages}")


class UnknownPromptError(Exception):
    """A scripted chat model saw a prompt it has no canned response for."""


@dataclass(frozen=True)
class ChatConfig:
    kind: str
    endpoint_url: str | None = None
    model_name: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 120.0
    script_path: str | None = None
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.kind not in CHAT_KINDS:
            raise ValueError(f"kind must be one of {CHAT_KINDS}, got {self.kind!r}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")
        if self.kind == "remote" and not self.endpoint_url:
            raise ValueError("remote chat requires endpoint_url")


@dataclass(frozen=True)
class PromptTemplate:
    """Editable prompt template; the user_text_pattern carries the placeholders."""

    name: str
    system_text: str
    user_text_pattern: str

    def __post_init__(self) -> None:
        missing = [p for p in TEMPLATE_PLACEHOLDERS if p not in self.user_text_pattern]
        if missing:
            raise ValueError(
                f"template {self.name!r} is missing placeholder(s): {', '.join(missing)}"
            )


@dataclass(frozen=True)
class Digest:
    """Knowledge extracted from one cluster of passages."""

    cluster_id: int
    text: str
    is_empty_marker: bool = False


@dataclass(frozen=True)
class OrderingStrategy:
    kind: str = "ascending"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ORDERING_KINDS:
            raise ValueError(f"kind must be one of {ORDERING_KINDS}, got {self.kind!r}")


def load_template(path: str) -> PromptTemplate:
    with open(path, "r", encoding="utf-8") as handle:
        obj = json.load(handle)
    try:
        return PromptTemplate(
            name=obj["name"], system_text=obj["system_text"], user_text_pattern=obj["user_text_pattern"]
        )
    except KeyError as exc:
        raise ValueError(f"template file {path} is missing field {exc}") from exc


def default_template(name: str) -> PromptTemplate:
    """Load one of the packaged templates ("extraction" or "answer")."""
    text = resources.files("urca").joinpath(f"templates/{name}.json").read_text(encoding="utf-8")
    obj = json.loads(text)
    return PromptTemplate(
        name=obj["name"], system_text=obj["system_text"], user_text_pattern=obj["user_text_pattern"]
    )


def prompt_fingerprint(messages: list[dict]) -> str:
    """Stable content hash of a rendered message list."""
    canonical = json.dumps(messages, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ChatModel(Protocol):
    def complete(self, messages: list[dict]) -> str: ...


class RemoteChatModel:
    """Client for a hosted chat-completions endpoint."""

    def __init__(self, config: ChatConfig):
        self.config = config
        self._session = requests.Session()
        self._gate = threading.Semaphore(config.max_in_flight)

    def complete(self, messages: list[dict]) -> str:
        payload = {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }
        with self._gate:
            body = post_json(
                self.config.endpoint_url, payload, timeout=self.config.timeout, session=self._session
            )
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat response: {exc}") from exc


class ScriptedChatModel:
    """Offline chat backend: a frozen mapping from prompt fingerprint to response."""

    def __init__(self, responses: dict[str, str]):
        self.responses = dict(responses)

    def complete(self, messages: list[dict]) -> str:
        fingerprint = prompt_fingerprint(messages)
        try:
            return self.responses[fingerprint]
        except KeyError:
            raise UnknownPromptError(
                f"no scripted response for prompt fingerprint {fingerprint}"
            ) from None


class RecordingChatModel:
    """Answers through a responder callback while recording fingerprint -> response.

    Run a deterministic pipeline once with this to build the mapping a
    ScriptedChatModel needs; rendering is deterministic, so a later scripted
    run sees exactly the recorded fingerprints.
    """

    def __init__(self, responder):
        self.responder = responder
        self.recorded: dict[str, str] = {}

    def complete(self, messages: list[dict]) -> str:
        response = self.responder(messages)
        self.recorded[prompt_fingerprint(messages)] = response
        return response


def make_chat_model(config: ChatConfig) -> ChatModel:
    if config.kind == "remote":
        return RemoteChatModel(config)
    if not config.script_path:
        raise ValueError("scripted chat requires script_path")
    with open(config.script_path, "r", encoding="utf-8") as handle:
        responses = json.load(handle)
    return ScriptedChatModel(responses)


def complete(messages: list[dict], config: ChatConfig) -> str:
    """One-shot completion with the configured backend."""
    return make_chat_model(config).complete(messages)


# ---------------------------------------------------------------------------
# Prompt rendering
# ---------------------------------------------------------------------------

def _render(template: PromptTemplate, question: "ResearchQuestion", passages_block: str) -> list[dict]:
    user_text = (
        template.user_text_pattern
        .replace("{question}", question.text)
        .replace("{left}", question.left_intervention)
        .replace("{right}", question.right_intervention)
        .replace("{passages}", passages_block)
    )
    return [
        {"role": "system", "content": template.system_text},
        {"role": "user", "content": user_text},
    ]


def render_extraction_prompt(
    question: "ResearchQuestion",
    cluster: Cluster,
    template: PromptTemplate,
    char_budget: int = DEFAULT_CHAR_BUDGET,
) -> list[dict]:
    """Render the per-cluster extraction prompt.

    Members appear in descending retrieval score. If their combined text
    exceeds char_budget, whole lowest-score chunks are dropped until it fits;
    partial chunks are never included.
    """
    if char_budget < 1:
        raise ValueError(f"char_budget must be >= 1, got {char_budget}")
    members = sorted(cluster.members, key=lambda m: (-m.score, m.chunk.paper_id, m.chunk.id))
    total = sum(len(m.chunk.text) for m in members)
    dropped = 0
    while members and total > char_budget:
        victim = members.pop()
        total -= len(victim.chunk.text)
        dropped += 1
    if dropped:
        logger.info(
            "extraction prompt for cluster %d dropped %d low-score chunk(s) to fit %d chars",
            cluster.id, dropped, char_budget,
        )
    lines = []
    for rank, member in enumerate(members, start=1):
        lines.append(f"[{rank}] (source {member.chunk.paper_id}, chunk {member.chunk.id})")
        lines.append(member.chunk.text)
    return _render(template, question, "\n".join(lines))


def extract_cluster_knowledge(
    chat: ChatModel,
    question: "ResearchQuestion",
    cluster: Cluster,
    template: PromptTemplate,
    char_budget: int = DEFAULT_CHAR_BUDGET,
) -> Digest:
    """Ask the model to digest one cluster; the literal empty-evidence reply is flagged."""
    messages = render_extraction_prompt(question, cluster, template, char_budget)
    text = chat.complete(messages)
    return Digest(
        cluster_id=cluster.id,
        text=text,
        is_empty_marker=text.strip() == EMPTY_EVIDENCE_MARKER,
    )


def order_clusters(digests_with_similarity: list[tuple[Digest, float]], strategy: OrderingStrategy) -> list[Digest]:
    """Arrange digests for the answer prompt by mean query similarity.

    ascending / descending sort by similarity; random is a seeded shuffle;
    the ping-pong orders interleave the descending list end-to-end, reading
    from the top (d1, d3, ..., d4, d2) or from the bottom (its reverse).
    """
    pairs = list(digests_with_similarity)
    if strategy.kind == "ascending":
        pairs.sort(key=lambda p: p[1])
        return [d for d, _ in pairs]
    if strategy.kind == "descending":
        pairs.sort(key=lambda p: -p[1])
        return [d for d, _ in pairs]
    if strategy.kind == "random":
        perm = np.random.default_rng(strategy.seed).permutation(len(pairs))
        return [pairs[int(i)][0] for i in perm]

    pairs.sort(key=lambda p: -p[1])
    front = [pairs[i][0] for i in range(0, len(pairs), 2)]
    back = [pairs[i][0] for i in range(1, len(pairs), 2)]
    ordered = front + back[::-1]
    if strategy.kind == "pingpong_desc_bottom":
        ordered.reverse()
    return ordered


def render_answer_prompt(
    question: "ResearchQuestion", digests: list[Digest], template: PromptTemplate
) -> list[dict]:
    """Render the finalisation prompt over ordered digests.

    Empty-marker digests carry no evidence and are skipped; if nothing
    remains the passages block says so instead. The template instructs the
    model to end with exactly one "ANSWER:" line.
    """
    useful = [d for d in digests if not d.is_empty_marker]
    if useful:
        lines = []
        for rank, digest in enumerate(useful, start=1):
            lines.append(f"[{rank}]")
            lines.append(digest.text)
        block = "\n".join(lines)
    else:
        block = NO_EVIDENCE_NOTICE
    return _render(template, question, block)
