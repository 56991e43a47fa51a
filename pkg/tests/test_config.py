"""Config loading, config hashing, and the run manifest header."""

import json

import pytest

from urca.config import ConfigError, config_hash, load_config, make_manifest
from urca.pipeline import PipelineConfig


def _write(tmp_path, obj) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(obj))
    return str(path)


class TestLoadConfig:
    def test_sections_and_scalars(self, tmp_path):
        path = _write(
            tmp_path,
            {
                "embedder": {"kind": "deterministic_hash", "dim": 32, "seed": 3},
                "chat": {"kind": "scripted", "script_path": "script.json"},
                "retrieval": {"k": 4, "beta": 1.5, "n_max": 8},
                "reducer": {"target_dim": 5, "seed": 3},
                "ordering": {"kind": "descending", "seed": 3},
                "chunk_size": 500,
                "chunk_overlap": 50,
                "seed": 3,
            },
        )
        config = load_config(path)
        assert config.embedder.dim == 32
        assert config.chat.script_path == "script.json"
        assert config.retrieval.k == 4
        assert config.reducer.target_dim == 5
        assert config.ordering.kind == "descending"
        assert config.chunk_size == 500
        assert config.seed == 3

    def test_omitted_parts_take_defaults(self, tmp_path):
        config = load_config(_write(tmp_path, {"chunk_size": 700}))
        assert config.chunk_size == 700
        assert config.chunk_overlap == PipelineConfig().chunk_overlap
        assert config.retrieval == PipelineConfig().retrieval

    def test_unknown_top_level_field(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown config field"):
            load_config(_write(tmp_path, {"bogus_knob": 1}))

    def test_unknown_section_field(self, tmp_path):
        with pytest.raises(ConfigError, match="retrieval: unknown field"):
            load_config(_write(tmp_path, {"retrieval": {"budget": 9}}))

    def test_invalid_section_value(self, tmp_path):
        with pytest.raises(ConfigError, match="retrieval"):
            load_config(_write(tmp_path, {"retrieval": {"k": 0}}))

    def test_non_object_section(self, tmp_path):
        with pytest.raises(ConfigError, match="expected an object"):
            load_config(_write(tmp_path, {"retrieval": 5}))

    def test_non_object_root(self, tmp_path):
        with pytest.raises(ConfigError, match="root"):
            load_config(_write(tmp_path, [1, 2]))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(str(tmp_path / "nope.json"))


class TestManifest:
    def test_header_omits_timestamp(self):
        manifest = make_manifest(PipelineConfig(), "data.jsonl", "urca", "scripted")
        header = manifest.header()
        assert "timestamp" not in header
        assert manifest.timestamp  # still reported alongside the log
        assert header["variant"] == "urca"
        assert header["model_name"] == "scripted"
        assert header["dataset_path"] == "data.jsonl"
        assert header["seed"] == 0

    def test_config_hash_tracks_content(self):
        base = PipelineConfig()
        assert config_hash(base) == config_hash(PipelineConfig())
        changed = PipelineConfig(chunk_size=999)
        assert config_hash(changed) != config_hash(base)

    def test_headers_of_equal_configs_are_equal(self):
        a = make_manifest(PipelineConfig(), "d.jsonl", "urca", "m").header()
        b = make_manifest(PipelineConfig(), "d.jsonl", "urca", "m").header()
        assert a == b
