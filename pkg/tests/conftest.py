"""Shared fixtures: synthetic corpora, scripted chat responses, and HTTP stubs.

The chat responders here are pure functions of the rendered prompt, so a
recording pass and a later scripted pass see exactly the same
fingerprint -> response mapping.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from urca.corpus import EvidenceRecord, Paper, ResearchQuestion, Study, record_to_dict
from urca.embedding import EmbedderConfig
from urca.generation import ChatConfig, RecordingChatModel
from urca.labels import ConclusionLabel
from urca.pipeline import PipelineConfig, parse_variant, run_dataset

# Phrases unique to the packaged templates, used to tell the two prompt
# kinds apart inside responders.
EXTRACTION_MARKER = "Summarise every finding"
ANSWER_MARKER = "Decide whether the evidence favours"


# ---------------------------------------------------------------------------
# Synthetic five-record dataset
# ---------------------------------------------------------------------------

_ARMS = {
    "q1": ("alphacillin", "placebo"),
    "q2": ("betamab", "usual care"),
    "q3": ("gammazine", "deltazine"),
    "q4": ("zetamol", "saline"),
    "q5": ("etaparib", "standard chemo"),
}

_GOLDS = {
    "q1": ConclusionLabel.FAVOURS_LEFT,
    "q2": ConclusionLabel.FAVOURS_RIGHT,
    "q3": ConclusionLabel.NO_DIFFERENCE,
    "q4": ConclusionLabel.FAVOURS_LEFT,
    "q5": ConclusionLabel.FAVOURS_RIGHT,
}

# q4 returns prose without an ANSWER line (unparsable); q5 names the left
# arm although gold favours the right (a wrong but parsable answer).
_ANSWER_REPLIES = {
    "q1": "The digests point the same way.\nANSWER: alphacillin",
    "q2": "Most digests favour the comparator.\nANSWER: usual care",
    "q3": "The effects cancel out.\nANSWER: no difference",
    "q4": "The evidence is mixed and further trials are needed.",
    "q5": "One digest dominates.\nANSWER: etaparib",
}


def _body(theme: str, other: str, n_sentences: int = 16) -> str:
    sentences = [
        f"{theme} was assessed against {other} in trial section {i} with outcome index {i}."
        for i in range(n_sentences)
    ]
    return " ".join(sentences)


def build_five_records() -> list[EvidenceRecord]:
    records = []
    for qid in sorted(_ARMS):
        left, right = _ARMS[qid]
        question = ResearchQuestion(
            id=qid,
            text=f"[{qid}] Does {left} improve recovery compared with {right}?",
            left_intervention=left,
            right_intervention=right,
            outcome="recovery",
        )
        papers = (
            Paper(id=f"{qid}p1", title=f"Trial one of {left}", body=_body(left, right)),
            Paper(id=f"{qid}p2", title=f"Trial two of {left}", body=_body(right, left)),
        )
        study = Study(id=f"s{qid[1:]}", papers=papers, gold_conclusion=_GOLDS[qid])
        records.append(
            EvidenceRecord(
                review_id="rev01",
                forest_plot_id=f"fp{qid[1:]}",
                question=question,
                study=study,
            )
        )
    return records


def build_skew_record() -> EvidenceRecord:
    """One study where paper A monopolises similarity to the query.

    Paper A repeats the query vocabulary; papers B and C use disjoint
    tokens, so global top-k retrieval sees only A while uniform retrieval
    still covers all three sources.
    """
    question = ResearchQuestion(
        id="qskew",
        text="[qskew] Does alpha beta gamma therapy improve survival against control?",
        left_intervention="alpha beta gamma therapy",
        right_intervention="control",
    )
    a_body = " ".join(
        f"alpha beta gamma therapy improves survival in cohort {i}." for i in range(40)
    )
    b_body = " ".join(f"delta epsilon kappa measurement {i} was recorded." for i in range(12))
    c_body = " ".join(f"lambda sigma omicron reading {i} was archived." for i in range(12))
    study = Study(
        id="sskew",
        papers=(
            Paper(id="pA", title="Source A", body=a_body),
            Paper(id="pB", title="Source B", body=b_body),
            Paper(id="pC", title="Source C", body=c_body),
        ),
        gold_conclusion=ConclusionLabel.NO_DIFFERENCE,
    )
    return EvidenceRecord(
        review_id="revskew", forest_plot_id="fpskew", question=question, study=study
    )


def default_responder(messages: list[dict]) -> str:
    """Pure prompt -> response function covering both prompt kinds."""
    user = messages[-1]["content"]
    if EXTRACTION_MARKER in user:
        tag = hashlib.sha256(user.encode("utf-8")).hexdigest()[:10]
        return f"Digest {tag}: the passages report treatment effects."
    if ANSWER_MARKER in user:
        for qid, reply in _ANSWER_REPLIES.items():
            if f"[{qid}]" in user:
                return reply
        if "[qskew]" in user:
            return "Nothing separates the arms.\nANSWER: no difference"
        raise AssertionError("answer prompt for an unknown fixture question")
    raise AssertionError("responder saw a prompt of unknown kind")


class CountingChat:
    """Wraps a chat model, counting extraction and answer calls separately."""

    def __init__(self, inner):
        self.inner = inner
        self.extraction_calls = 0
        self.answer_calls = 0

    def complete(self, messages: list[dict]) -> str:
        if EXTRACTION_MARKER in messages[-1]["content"]:
            self.extraction_calls += 1
        else:
            self.answer_calls += 1
        return self.inner.complete(messages)


class CountingEmbedder:
    """Wraps an embedder, counting embed_texts calls and texts embedded."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.texts_embedded = 0

    def embed_texts(self, texts):
        self.calls += 1
        self.texts_embedded += len(texts)
        return self.inner.embed_texts(texts)


# ---------------------------------------------------------------------------
# Config and file builders
# ---------------------------------------------------------------------------

def fixture_config(script_path: str | None = None, **overrides) -> PipelineConfig:
    """Small, fast pipeline config for the synthetic corpora."""
    base = dict(
        embedder=EmbedderConfig(kind="deterministic_hash", dim=64, seed=0),
        chat=ChatConfig(kind="scripted", script_path=script_path),
        chunk_size=400,
        chunk_overlap=80,
        seed=0,
    )
    base.update(overrides)
    return PipelineConfig(**base)


def with_seed(config: PipelineConfig, seed: int) -> PipelineConfig:
    """Reseed everything seeded, the way the CLI --seed override does."""
    return dataclasses.replace(
        config,
        seed=seed,
        ordering=dataclasses.replace(config.ordering, seed=seed),
        reducer=dataclasses.replace(config.reducer, seed=seed),
    )


def record_script(
    records: list[EvidenceRecord],
    variants,
    config: PipelineConfig,
    responder=default_responder,
    orderings=None,
    seeds=None,
) -> dict[str, str]:
    """Dry-run every (variant, ordering, seed) combination, recording responses."""
    recorder = RecordingChatModel(responder)
    ordering_kinds = orderings or (config.ordering.kind,)
    seed_values = seeds or (config.seed,)
    for variant in variants:
        spec = parse_variant(variant) if isinstance(variant, str) else variant
        for seed in seed_values:
            for kind in ordering_kinds:
                cfg = with_seed(config, seed)
                cfg = dataclasses.replace(
                    cfg, ordering=dataclasses.replace(cfg.ordering, kind=kind)
                )
                run_dataset(records, spec, cfg, chat=recorder)
    return dict(recorder.recorded)


def write_dataset(path, records: list[EvidenceRecord]) -> str:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record_to_dict(record)) + "\n")
    return str(path)


def write_script(path, mapping: dict[str, str]) -> str:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(mapping, handle)
    return str(path)


def write_cli_config(path, script_path: str, **scalars) -> str:
    obj = {
        "embedder": {"kind": "deterministic_hash", "dim": 64, "seed": 0},
        "chat": {"kind": "scripted", "script_path": script_path},
        "chunk_size": 400,
        "chunk_overlap": 80,
    }
    obj.update(scalars)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(obj, handle)
    return str(path)


# ---------------------------------------------------------------------------
# HTTP stub for remote-backend tests
# ---------------------------------------------------------------------------

class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 - http.server API
        length = int(self.headers.get("Content-Length", "0"))
        payload = json.loads(self.rfile.read(length) or b"{}")
        status, body = self.server.app(self.path, payload, dict(self.headers))
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@contextlib.contextmanager
def serve(app):
    """Serve app(path, payload, headers) -> (status, body) on a local port."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.app = app
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}"
    finally:
        server.shutdown()
        thread.join()


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

@pytest.fixture
def five_records():
    return build_five_records()


@pytest.fixture
def skew_record():
    return build_skew_record()


@pytest.fixture
def stub_server():
    return serve


@pytest.fixture
def scripted_setup(tmp_path, five_records):
    """Config + dataset + script covering the urca variant on the five records."""
    config = fixture_config()
    script = record_script(five_records, ["urca"], config)
    script_path = write_script(tmp_path / "script.json", script)
    dataset_path = write_dataset(tmp_path / "dataset.jsonl", five_records)
    config = fixture_config(script_path=script_path)
    return config, dataset_path, script_path
