"""Uniform retrieval and clustered augmentation for evidence synthesis."""

from urca.clustering import (
    Cluster,
    GmmModel,
    assign_members,
    cluster_chunks,
    fit_gmm,
    gmm_responsibilities,
    group_contiguous,
    select_components_bic,
)
from urca.config import RunManifest, config_hash, load_config, make_manifest
from urca.corpus import (
    Chunk,
    DatasetError,
    EvidenceRecord,
    Paper,
    RecordInvariantError,
    ResearchQuestion,
    Study,
    chunk_paper,
    load_dataset,
    record_from_dict,
    record_to_dict,
    validate_chunk,
    validate_record,
)
from urca.embedding import (
    EmbedderConfig,
    EmbeddingVector,
    cosine,
    embed_texts,
    hash_embed,
    make_embedder,
    normalize,
)
from urca.evaluation import (
    AgreementStats,
    ConfusionCounts,
    MetricsReport,
    confusion,
    coverage_rate,
    emit_report,
    fleiss_kappa,
    levenshtein,
    micro_metrics,
    pairwise_cosine_agreement,
    per_label_metrics,
    proportion_changed,
)
from urca.generation import (
    ChatConfig,
    Digest,
    OrderingStrategy,
    PromptTemplate,
    complete,
    extract_cluster_knowledge,
    make_chat_model,
    order_clusters,
    prompt_fingerprint,
    render_answer_prompt,
    render_extraction_prompt,
)
from urca.labels import (
    UNPARSED,
    ConclusionLabel,
    EffectEstimate,
    label_from_ci,
    parse_model_answer,
)
from urca.pipeline import (
    PipelineConfig,
    PredictionRecord,
    VariantSpec,
    parse_variant,
    run_dataset,
    run_urca,
    run_variant,
)
from urca.reduction import ReducerParams, reduce_umap
from urca.retrieval import (
    RetrievalConfig,
    ScoredChunk,
    VectorIndex,
    allocate_per_source,
    build_index,
    retrieve_global,
    retrieve_uniform,
)

__version__ = "0.1.0"
