"""Pipeline variants: wiring, call counts, caching, parallel determinism, run logs."""

import json

import pytest

from conftest import (
    ANSWER_MARKER,
    CountingChat,
    CountingEmbedder,
    build_five_records,
    build_skew_record,
    default_responder,
    fixture_config,
    record_script,
)
from urca.corpus import chunk_paper
from urca.embedding import make_embedder
from urca.generation import ChatConfig, RecordingChatModel, ScriptedChatModel
from urca.retrieval import allocate_per_source
from urca.labels import UNPARSED, ConclusionLabel
from urca.pipeline import (
    VariantSpec,
    model_label,
    parse_variant,
    read_run_log,
    run_dataset,
    run_urca,
    run_variant,
    write_run_log,
)

EXPECTED_PREDICTIONS = {
    "q1": ConclusionLabel.FAVOURS_LEFT,
    "q2": ConclusionLabel.FAVOURS_RIGHT,
    "q3": ConclusionLabel.NO_DIFFERENCE,
    "q4": UNPARSED,
    "q5": ConclusionLabel.FAVOURS_LEFT,  # scripted wrong answer; gold favours right
}


def live_chat() -> RecordingChatModel:
    return RecordingChatModel(default_responder)


@pytest.fixture(scope="module")
def five():
    return build_five_records()


@pytest.fixture(scope="module")
def config():
    return fixture_config()


@pytest.fixture(scope="module")
def skew():
    return build_skew_record()


@pytest.fixture(scope="module")
def skew_config():
    # narrower chunks so the similarity-heavy paper alone can fill global top-k
    return fixture_config(chunk_size=150, chunk_overlap=0)


class TestVariantSpec:
    def test_parse_plain(self):
        spec = parse_variant("urca")
        assert spec == VariantSpec(kind="urca")
        assert spec.name == "urca"
        assert spec.n_groups is None

    def test_parse_contiguous(self):
        spec = parse_variant("contiguous:3")
        assert spec.kind == "contiguous"
        assert spec.n_groups == 3
        assert spec.name == "contiguous:3"

    def test_contiguous_requires_groups(self):
        with pytest.raises(ValueError, match="contiguous requires"):
            VariantSpec(kind="contiguous")
        with pytest.raises(ValueError, match="contiguous requires"):
            VariantSpec(kind="contiguous", n_groups=0)

    def test_groups_only_for_contiguous(self):
        with pytest.raises(ValueError, match="n_groups only applies"):
            VariantSpec(kind="urca", n_groups=3)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown variant"):
            parse_variant("bogus")

    def test_non_integer_argument(self):
        with pytest.raises(ValueError, match="must be an integer"):
            parse_variant("contiguous:three")


class TestUrcaOnFixture:
    def test_predictions_and_provenance(self, five, config):
        results = run_dataset(five, parse_variant("urca"), config, chat=live_chat())
        assert [r.question_id for r in results] == ["q1", "q2", "q3", "q4", "q5"]
        per_source = allocate_per_source(
            config.retrieval.k, config.retrieval.beta, config.retrieval.n_max, 2
        )
        for record, rec in zip(five, results):
            assert rec.error is None
            assert rec.predicted == EXPECTED_PREDICTIONS[rec.question_id]
            assert rec.variant == "urca"
            assert rec.model_name == "scripted"
            assert rec.total_sources == 2
            assert rec.sources_covered == 2  # uniform retrieval reaches both papers
            assert rec.n_clusters >= 1
            assert len(rec.digests) == rec.n_clusters
            # one extraction fingerprint per cluster plus the answer prompt
            assert len(rec.prompt_fingerprints) == rec.n_clusters + 1
            expected_retrieved = sum(
                min(per_source, len(chunk_paper(p, config.chunk_size, config.chunk_overlap)))
                for p in record.study.papers
            )
            assert len(rec.retrieved) == expected_retrieved
        golds = [r.gold for r in results]
        assert golds == [
            ConclusionLabel.FAVOURS_LEFT,
            ConclusionLabel.FAVOURS_RIGHT,
            ConclusionLabel.NO_DIFFERENCE,
            ConclusionLabel.FAVOURS_LEFT,
            ConclusionLabel.FAVOURS_RIGHT,
        ]

    def test_run_urca_is_the_urca_variant(self, five, config):
        direct = run_urca(five[0], config, chat=live_chat())
        via_spec = run_variant(five[0], VariantSpec(kind="urca"), config, chat=live_chat())
        assert direct.to_dict() == via_spec.to_dict()

    def test_scripted_replay_matches_live_run(self, five, config, tmp_path):
        script = record_script(five, ["urca"], config)
        live = run_dataset(five, parse_variant("urca"), config, chat=live_chat())
        replayed = run_dataset(
            five, parse_variant("urca"), config, chat=ScriptedChatModel(script)
        )
        assert [r.to_dict() for r in replayed] == [r.to_dict() for r in live]


class TestVariantWiring:
    def test_no_clustering_makes_one_extraction_call(self, five, config):
        chat = CountingChat(live_chat())
        rec = run_variant(five[0], parse_variant("urca_no_clustering"), config, chat=chat)
        assert chat.extraction_calls == 1
        assert chat.answer_calls == 1
        assert rec.n_clusters == 1
        assert len(rec.prompt_fingerprints) == 2

    def test_contiguous_three_makes_three_extraction_calls(self, five, config):
        chat = CountingChat(live_chat())
        rec = run_variant(five[0], parse_variant("contiguous:3"), config, chat=chat)
        assert chat.extraction_calls == 3
        assert rec.n_clusters == 3
        assert len(rec.prompt_fingerprints) == 4

    def test_contiguous_groups_clamp_to_retrieved(self, five, config):
        chat = CountingChat(live_chat())
        rec = run_variant(five[0], parse_variant("contiguous:20"), config, chat=chat)
        assert 1 <= len(rec.retrieved) < 20
        assert rec.n_clusters == len(rec.retrieved)
        assert chat.extraction_calls == rec.n_clusters

    def test_rag_skips_extraction(self, five, config):
        chat = CountingChat(live_chat())
        rec = run_variant(five[0], parse_variant("rag"), config, chat=chat)
        assert chat.extraction_calls == 0
        assert chat.answer_calls == 1
        assert len(rec.prompt_fingerprints) == 1
        assert rec.n_clusters == 0
        # every retrieved chunk becomes one pseudo-digest
        assert len(rec.digests) == len(rec.retrieved)
        assert rec.predicted == ConclusionLabel.FAVOURS_LEFT

    def test_no_rag_answers_without_evidence(self, five, config):
        chat = CountingChat(live_chat())
        rec = run_variant(five[0], parse_variant("no_rag"), config, chat=chat)
        assert rec.retrieved == ()
        assert rec.digests == ()
        assert rec.sources_covered == 0
        assert chat.extraction_calls == 0
        assert chat.answer_calls == 1

    def test_abstracts_covers_every_source_without_retrieval(self, five, config):
        chat = CountingChat(live_chat())
        rec = run_variant(five[0], parse_variant("abstracts"), config, chat=chat)
        assert rec.retrieved == ()
        assert rec.sources_covered == rec.total_sources == 2
        assert len(rec.digests) == 2
        assert chat.extraction_calls == 0

    def test_global_retrieval_misses_quiet_sources(self, skew, skew_config):
        rec = run_variant(skew, parse_variant("urca_no_uniform"), skew_config, chat=live_chat())
        papers = {paper_id for _, paper_id in rec.retrieved}
        assert papers == {"pA"}
        assert rec.sources_covered == 1

    def test_uniform_retrieval_covers_quiet_sources(self, skew, skew_config):
        rec = run_urca(skew, skew_config, chat=live_chat())
        papers = {paper_id for _, paper_id in rec.retrieved}
        assert papers == {"pA", "pB", "pC"}
        assert rec.sources_covered == 3


class TestRunDataset:
    def test_parallelism_must_be_positive(self, five, config):
        with pytest.raises(ValueError, match="parallelism"):
            run_dataset(five, parse_variant("urca"), config, parallelism=0)

    def test_parallel_run_matches_serial(self, five, config, tmp_path):
        serial = run_dataset(five, parse_variant("urca"), config, parallelism=1, chat=live_chat())
        threaded = run_dataset(five, parse_variant("urca"), config, parallelism=4, chat=live_chat())
        assert [r.to_dict() for r in threaded] == [r.to_dict() for r in serial]

        header = {"run": "fixture"}
        path_a = tmp_path / "serial.jsonl"
        path_b = tmp_path / "threaded.jsonl"
        write_run_log(str(path_a), header, serial)
        write_run_log(str(path_b), header, threaded)
        assert path_a.read_bytes() == path_b.read_bytes()

    def test_study_index_is_embedded_once(self, five, config):
        embedder = CountingEmbedder(make_embedder(config.embedder))
        run_dataset(five, parse_variant("urca"), config, embedder=embedder, chat=live_chat())
        # one embed call per study build plus one per distinct question
        assert embedder.calls == 10

    def test_duplicate_study_hits_the_cache(self, five, config):
        embedder = CountingEmbedder(make_embedder(config.embedder))
        run_dataset(
            [five[0], five[0]], parse_variant("urca"), config, embedder=embedder, chat=live_chat()
        )
        assert embedder.calls == 2

    def test_failing_record_is_isolated(self, five, config):
        def failing_responder(messages):
            user = messages[-1]["content"]
            if ANSWER_MARKER in user and "[q3]" in user:
                raise RuntimeError("backend unavailable")
            return default_responder(messages)

        results = run_dataset(
            five, parse_variant("urca"), config, chat=RecordingChatModel(failing_responder)
        )
        assert [r.question_id for r in results] == ["q1", "q2", "q3", "q4", "q5"]
        failed = results[2]
        assert failed.error == "RuntimeError: backend unavailable"
        assert failed.predicted is UNPARSED
        assert failed.retrieved == ()
        assert failed.total_sources == 2
        for rec in results[:2] + results[3:]:
            assert rec.error is None
            assert rec.predicted == EXPECTED_PREDICTIONS[rec.question_id]

    def test_missing_script_entry_becomes_error_record(self, five, config):
        results = run_dataset(five, parse_variant("urca"), config, chat=ScriptedChatModel({}))
        assert all(r.error is not None for r in results)
        assert all(r.error.startswith("UnknownPromptError") for r in results)
        assert all(r.predicted is UNPARSED for r in results)


class TestRunLogs:
    def test_to_dict_leaves_out_timing(self, five, config):
        rec = run_urca(five[0], config, chat=live_chat())
        assert rec.timing_ms > 0
        payload = rec.to_dict()
        assert "timing_ms" not in payload
        assert payload["predicted"] == "favours_left"
        assert payload["gold"] == "favours_left"
        assert payload["error"] is None
        assert all(set(item) == {"chunk_id", "paper_id"} for item in payload["retrieved"])

    def test_round_trip(self, five, config, tmp_path):
        results = run_dataset(five, parse_variant("urca"), config, chat=live_chat())
        path = tmp_path / "run.jsonl"
        header = {"dataset": "fixture", "variant": "urca"}
        write_run_log(str(path), header, results)
        read_header, rows = read_run_log(str(path))
        assert read_header == header
        assert rows == [r.to_dict() for r in results]

    def test_log_bytes_are_reproducible(self, five, config, tmp_path):
        results = run_dataset(five, parse_variant("urca"), config, chat=live_chat())
        path_a = tmp_path / "a.jsonl"
        path_b = tmp_path / "b.jsonl"
        write_run_log(str(path_a), {"h": 1}, results)
        write_run_log(str(path_b), {"h": 1}, results)
        assert path_a.read_bytes() == path_b.read_bytes()
        first_line = path_a.read_text(encoding="utf-8").splitlines()[0]
        assert json.loads(first_line) == {"h": 1}

    def test_empty_log_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(ValueError, match="empty"):
            read_run_log(str(path))


class TestModelLabel:
    def test_falls_back_to_backend_kind(self, config):
        assert model_label(config) == "scripted"

    def test_prefers_model_name(self):
        cfg = fixture_config(chat=ChatConfig(kind="scripted", model_name="model-x"))
        assert model_label(cfg) == "model-x"
