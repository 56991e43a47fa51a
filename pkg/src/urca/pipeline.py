"""End-to-end runs: retrieval, clustering, extraction, answering, for every variant."""

from __future__ import annotations

import concurrent.futures
import json
import logging
import threading
import time
from dataclasses import dataclass

from urca.clustering import Cluster, cluster_chunks, group_contiguous
from urca.corpus import EvidenceRecord, Study, chunk_paper
from urca.embedding import EmbedderConfig, EmbeddingVector, make_embedder
from urca.generation import (
    ChatConfig,
    ChatModel,
    Digest,
    OrderingStrategy,
    PromptTemplate,
    default_template,
    extract_cluster_knowledge,
    load_template,
    make_chat_model,
    order_clusters,
    prompt_fingerprint,
    render_answer_prompt,
    render_extraction_prompt,
)
from urca.labels import (
    UNPARSED,
    ConclusionLabel,
    Prediction,
    label_to_str,
    parse_model_answer,
)
from urca.reduction import ReducerParams
from urca.retrieval import (
    RetrievalConfig,
    ScoredChunk,
    VectorIndex,
    build_index,
    retrieve_global,
    retrieve_uniform,
)

logger = logging.getLogger(__name__)

VARIANT_KINDS = (
    "urca",
    "urca_no_uniform",
    "urca_no_clustering",
    "rag",
    "rag_uniform",
    "no_rag",
    "abstracts",
    "contiguous",
)


@dataclass(frozen=True)
class VariantSpec:
    """A named pipeline configuration; contiguous additionally carries its group count."""

    kind: str
    n_groups: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"unknown variant {self.kind!r}; expected one of {VARIANT_KINDS}")
        if self.kind == "contiguous":
            if self.n_groups is None or self.n_groups < 1:
                raise ValueError("contiguous requires n_groups >= 1 (e.g. contiguous:3)")
        elif self.n_groups is not None:
            raise ValueError(f"n_groups only applies to contiguous, not {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind == "contiguous":
            return f"contiguous:{self.n_groups}"
        return self.kind


def parse_variant(text: str) -> VariantSpec:
    """Parse a CLI variant name, e.g. "urca" or "contiguous:3"."""
    if ":" in text:
        kind, _, arg = text.partition(":")
        try:
            n_groups = int(arg)
        except ValueError:
            raise ValueError(f"variant argument must be an integer, got {arg!r}") from None
        return VariantSpec(kind=kind, n_groups=n_groups)
    return VariantSpec(kind=text)


@dataclass(frozen=True)
class PipelineConfig:
    embedder: EmbedderConfig = EmbedderConfig(kind="deterministic_hash", dim=256)
    chat: ChatConfig = ChatConfig(kind="scripted")
    retrieval: RetrievalConfig = RetrievalConfig()
    reducer: ReducerParams = ReducerParams()
    ordering: OrderingStrategy = OrderingStrategy()
    chunk_size: int = 1600
    chunk_overlap: int = 200
    max_components: int = 8
    assign_threshold: float = 0.1
    char_budget: int = 12_000
    seed: int = 0
    extraction_template_path: str | None = None
    answer_template_path: str | None = None


@dataclass
class PredictionRecord:
    """One record's outcome plus enough provenance to audit the run."""

    question_id: str
    study_id: str
    variant: str
    model_name: str
    predicted: Prediction
    gold: ConclusionLabel | None
    retrieved: tuple[tuple[str, str], ...]  # (chunk_id, paper_id) pairs in retrieval order
    n_clusters: int
    digests: tuple[Digest, ...]  # in answer-prompt order
    sources_covered: int
    total_sources: int
    prompt_fingerprints: tuple[str, ...]
    timing_ms: float = 0.0
    error: str | None = None

    def to_dict(self) -> dict:
        """Run-log form. timing_ms is volatile and stays out so logs are reproducible."""
        return {
            "question_id": self.question_id,
            "study_id": self.study_id,
            "variant": self.variant,
            "model_name": self.model_name,
            "predicted": label_to_str(self.predicted),
            "gold": label_to_str(self.gold) if self.gold is not None else None,
            "retrieved": [
                {"chunk_id": chunk_id, "paper_id": paper_id} for chunk_id, paper_id in self.retrieved
            ],
            "n_clusters": self.n_clusters,
            "digests": [
                {"cluster_id": d.cluster_id, "text": d.text, "is_empty_marker": d.is_empty_marker}
                for d in self.digests
            ],
            "sources_covered": self.sources_covered,
            "total_sources": self.total_sources,
            "prompt_fingerprints": list(self.prompt_fingerprints),
            "error": self.error,
        }


def resolve_templates(config: PipelineConfig) -> tuple[PromptTemplate, PromptTemplate]:
    extraction = (
        load_template(config.extraction_template_path)
        if config.extraction_template_path
        else default_template("extraction")
    )
    answer = (
        load_template(config.answer_template_path)
        if config.answer_template_path
        else default_template("answer")
    )
    return extraction, answer


def model_label(config: PipelineConfig) -> str:
    return config.chat.model_name or config.chat.kind


def build_study_index(study: Study, config: PipelineConfig, embedder) -> VectorIndex:
    """Chunk and embed every paper of a study into one index."""
    chunks = []
    for paper in study.papers:
        chunks.extend(chunk_paper(paper, config.chunk_size, config.chunk_overlap, study_id=study.id))
    vectors = embedder.embed_texts([c.text for c in chunks])
    return build_index(chunks, vectors)


def _abstract_text(paper, config: PipelineConfig) -> str:
    if paper.is_abstract_only:
        return paper.body
    return paper.body[: config.chunk_size]


def run_variant(
    record: EvidenceRecord,
    variant: VariantSpec,
    config: PipelineConfig,
    embedder=None,
    chat: ChatModel | None = None,
    index: VectorIndex | None = None,
    query_vector: EmbeddingVector | None = None,
) -> PredictionRecord:
    """Run one record through one pipeline variant.

    Backends, the study index, and the query vector can be injected; anything
    missing is built from the config. Exceptions propagate; run_dataset is
    the layer that isolates per-record failures.
    """
    question = record.question
    study = record.study
    extraction_template, answer_template = resolve_templates(config)
    started = time.perf_counter()

    retrieved: list[ScoredChunk] = []
    clusters: list[Cluster] = []
    fingerprints: list[str] = []
    n_clusters = 0

    needs_retrieval = variant.kind not in ("no_rag", "abstracts")
    if needs_retrieval:
        if embedder is None:
            embedder = make_embedder(config.embedder)
        if index is None:
            index = build_study_index(study, config, embedder)
        if query_vector is None:
            query_vector = embedder.embed_texts([question.text])[0]
        if variant.kind in ("urca_no_uniform", "rag"):
            retrieved = retrieve_global(index, query_vector, config.retrieval)
        else:
            retrieved = retrieve_uniform(index, query_vector, config.retrieval)

    if chat is None:
        chat = make_chat_model(config.chat)

    if variant.kind == "no_rag":
        pairs: list[tuple[Digest, float]] = []
    elif variant.kind == "abstracts":
        pairs = [
            (Digest(cluster_id=i, text=_abstract_text(paper, config)), 0.0)
            for i, paper in enumerate(study.papers)
        ]
    elif variant.kind in ("rag", "rag_uniform"):
        pairs = [
            (Digest(cluster_id=i, text=sc.chunk.text), sc.score) for i, sc in enumerate(retrieved)
        ]
    else:
        if variant.kind == "urca_no_clustering":
            mean_sim = sum(sc.score for sc in retrieved) / len(retrieved)
            clusters = [Cluster(id=0, members=tuple(retrieved), mean_query_similarity=mean_sim)]
        elif variant.kind == "contiguous":
            effective_groups = min(variant.n_groups, len(retrieved))
            if effective_groups < variant.n_groups:
                logger.info(
                    "record %s/%s: only %d chunks retrieved, using %d contiguous groups",
                    question.id, study.id, len(retrieved), effective_groups,
                )
            clusters = group_contiguous(retrieved, effective_groups, seed=config.seed)
        else:  # urca, urca_no_uniform
            vectors = [index.vector_for(sc.chunk.id) for sc in retrieved]
            clusters = cluster_chunks(
                retrieved,
                vectors,
                reducer=config.reducer,
                max_components=config.max_components,
                assign_threshold=config.assign_threshold,
                seed=config.seed,
            )
        n_clusters = len(clusters)
        pairs = []
        for cluster in clusters:
            fingerprints.append(
                prompt_fingerprint(
                    render_extraction_prompt(question, cluster, extraction_template, config.char_budget)
                )
            )
            digest = extract_cluster_knowledge(
                chat, question, cluster, extraction_template, config.char_budget
            )
            pairs.append((digest, cluster.mean_query_similarity))

    ordered = order_clusters(pairs, config.ordering)
    answer_messages = render_answer_prompt(question, ordered, answer_template)
    fingerprints.append(prompt_fingerprint(answer_messages))
    answer_text = chat.complete(answer_messages)
    predicted = parse_model_answer(answer_text, question)

    if variant.kind == "abstracts":
        sources_covered = len(study.papers)
    else:
        sources_covered = len({sc.chunk.paper_id for sc in retrieved})

    return PredictionRecord(
        question_id=question.id,
        study_id=study.id,
        variant=variant.name,
        model_name=model_label(config),
        predicted=predicted,
        gold=study.gold_conclusion,
        retrieved=tuple((sc.chunk.id, sc.chunk.paper_id) for sc in retrieved),
        n_clusters=n_clusters,
        digests=tuple(ordered),
        sources_covered=sources_covered,
        total_sources=len(study.papers),
        prompt_fingerprints=tuple(fingerprints),
        timing_ms=(time.perf_counter() - started) * 1000.0,
    )


def run_urca(
    record: EvidenceRecord,
    config: PipelineConfig,
    embedder=None,
    chat: ChatModel | None = None,
    index: VectorIndex | None = None,
) -> PredictionRecord:
    """The full pipeline: uniform retrieval, clustering, extraction, ordered answering."""
    return run_variant(record, VariantSpec(kind="urca"), config, embedder=embedder, chat=chat, index=index)


def _error_record(record: EvidenceRecord, variant: VariantSpec, config: PipelineConfig, error: Exception) -> PredictionRecord:
    return PredictionRecord(
        question_id=record.question.id,
        study_id=record.study.id,
        variant=variant.name,
        model_name=model_label(config),
        predicted=UNPARSED,
        gold=record.study.gold_conclusion,
        retrieved=(),
        n_clusters=0,
        digests=(),
        sources_covered=0,
        total_sources=len(record.study.papers),
        prompt_fingerprints=(),
        error=f"{type(error).__name__}: {error}",
    )


def run_dataset(
    records: list[EvidenceRecord],
    variant: VariantSpec,
    config: PipelineConfig,
    parallelism: int = 1,
    embedder=None,
    chat: ChatModel | None = None,
) -> list[PredictionRecord]:
    """Run every record, with study-index caching and bounded parallelism.

    Output order equals input order regardless of completion order, and a
    failing record yields an error-state PredictionRecord instead of killing
    the run. Deterministic backends give identical results at any
    parallelism.
    """
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")
    if embedder is None:
        embedder = make_embedder(config.embedder)
    if chat is None:
        chat = make_chat_model(config.chat)

    index_cache: dict[str, VectorIndex] = {}
    query_cache: dict[str, EmbeddingVector] = {}
    lock = threading.Lock()

    def get_index(study: Study) -> VectorIndex:
        # built under the lock so a duplicated study is embedded exactly once
        with lock:
            if study.id in index_cache:
                logger.info("index cache hit for study %s", study.id)
                return index_cache[study.id]
            index = build_study_index(study, config, embedder)
            index_cache[study.id] = index
            return index

    def get_query_vector(text: str) -> EmbeddingVector:
        with lock:
            if text not in query_cache:
                query_cache[text] = embedder.embed_texts([text])[0]
            return query_cache[text]

    def run_one(record: EvidenceRecord) -> PredictionRecord:
        try:
            needs_retrieval = variant.kind not in ("no_rag", "abstracts")
            index = get_index(record.study) if needs_retrieval else None
            qvec = get_query_vector(record.question.text) if needs_retrieval else None
            return run_variant(
                record, variant, config, embedder=embedder, chat=chat, index=index, query_vector=qvec
            )
        except Exception as exc:  # noqa: BLE001 - per-record isolation is the contract
            logger.exception(
                "record %s/%s failed", record.question.id, record.study.id
            )
            return _error_record(record, variant, config, exc)

    if parallelism == 1:
        return [run_one(record) for record in records]
    with concurrent.futures.ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(run_one, records))


# ---------------------------------------------------------------------------
# Run logs
# ---------------------------------------------------------------------------

def _dump_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_run_log(path: str, header: dict, records: list[PredictionRecord]) -> None:
    """JSON-lines run log: one header line, then one line per PredictionRecord."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(_dump_line(header) + "\n")
        for record in records:
            handle.write(_dump_line(record.to_dict()) + "\n")


def read_run_log(path: str) -> tuple[dict, list[dict]]:
    with open(path, "r", encoding="utf-8") as handle:
        lines = [json.loads(line) for line in handle if line.strip()]
    if not lines:
        raise ValueError(f"run log {path} is empty")
    return lines[0], lines[1:]
