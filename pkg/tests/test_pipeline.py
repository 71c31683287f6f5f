"""
test_pipeline.py

Tests for tablesynth/pipeline.py covering the stage drivers end to end on
small on-disk corpora:
  - run_mine() stub and template files
  - run_validate_grammar()
  - run_synthesize() outputs, determinism and partial output
  - run_label() / run_serialize() / run_stats()
"""

import json

import pytest

from tablesynth.config import PipelineConfig
from tablesynth.errors import ConfigError, GrammarError, PartialOutput
from tablesynth.grammar import load_grammar
from tablesynth.labeler import read_vocabulary
from tablesynth.pipeline import (
    DATASET_FILE,
    DIAGNOSTICS_FILE,
    EXAMPLES_FILE,
    LABELED_FILE,
    STUB_FILE,
    TEMPLATES_FILE,
    VOCAB_FILE,
    run_label,
    run_mine,
    run_serialize,
    run_stats,
    run_synthesize,
    run_validate_grammar,
)
from tests.conftest import PAIRED_GRAMMAR, write_jsonl


def config_for(tmp_path, **options) -> PipelineConfig:
    return PipelineConfig().with_options(output_dir=tmp_path / "out", **options)


# ─── mine ─────────────────────────────────────────────────────────────────────

class TestRunMine:

    def test_writes_stubs_and_templates(self, tmp_path, corpus_file, seed_pairs_file):
        result = run_mine(config_for(tmp_path, corpus=corpus_file, seed_pairs=seed_pairs_file, top_k=1))
        assert result["pairs"] == 10
        assert result["templates"][0]["count"] == 6
        assert (tmp_path / "out" / STUB_FILE).exists()
        templates = json.loads((tmp_path / "out" / TEMPLATES_FILE).read_text(encoding="utf-8"))
        assert len(templates["templates"]) == 1

    def test_requires_seed_pairs(self, tmp_path, corpus_file):
        with pytest.raises(ConfigError):
            run_mine(config_for(tmp_path, corpus=corpus_file))

    def test_no_usable_pair(self, tmp_path, corpus_file):
        pairs = write_jsonl(tmp_path / "p.jsonl", [{"question": "q", "sql": "SELECT nothing", "table_id": "performance"}])
        with pytest.raises(ConfigError):
            run_mine(config_for(tmp_path, corpus=corpus_file, seed_pairs=pairs))


# ─── validate-grammar ─────────────────────────────────────────────────────────

class TestRunValidateGrammar:

    def test_starter(self, tmp_path):
        result = run_validate_grammar(config_for(tmp_path))
        assert result["grammar"] == "starter"
        assert result["rules"] == 36
        assert len(result["label_space"]) == 15

    def test_invalid_grammar_file(self, tmp_path):
        path = tmp_path / "bad.grammar"
        path.write_text("[rule]\nid: broken\nnl: COLUMN9\nsql: SELECT COLUMN0\n", encoding="utf-8")
        with pytest.raises(GrammarError) as info:
            run_validate_grammar(config_for(tmp_path, grammar=path))
        assert info.value.rule_id == "broken"


# ─── synthesize ───────────────────────────────────────────────────────────────

class TestRunSynthesize:

    def test_outputs(self, tmp_path, corpus_file):
        result = run_synthesize(config_for(tmp_path, corpus=corpus_file, n_examples=30, seed=1))
        assert result["examples"] == 30
        lines = (tmp_path / "out" / EXAMPLES_FILE).read_text(encoding="utf-8").splitlines()
        assert len(lines) == 30
        vocab = read_vocabulary(tmp_path / "out" / VOCAB_FILE)
        assert len(vocab) == result["vocabulary_size"]

    def test_same_seed_same_bytes(self, tmp_path, corpus_file):
        run_synthesize(config_for(tmp_path / "a", corpus=corpus_file, n_examples=25, seed=9))
        run_synthesize(config_for(tmp_path / "b", corpus=corpus_file, n_examples=25, seed=9, workers=2))
        a = (tmp_path / "a" / "out" / EXAMPLES_FILE).read_bytes()
        b = (tmp_path / "b" / "out" / EXAMPLES_FILE).read_bytes()
        assert a == b

    def test_partial_output_is_written(self, tmp_path):
        corpus = write_jsonl(tmp_path / "t.jsonl", [{"id": "pairs", "header": ["city", "wins"], "rows": [["Oslo", "3"]]}])
        grammar = tmp_path / "g.grammar"
        grammar.write_text(PAIRED_GRAMMAR, encoding="utf-8")
        config = config_for(tmp_path, corpus=corpus, grammar=grammar, n_examples=40, retry_budget=3)
        with pytest.raises(PartialOutput):
            run_synthesize(config)
        diagnostics = json.loads((tmp_path / "out" / DIAGNOSTICS_FILE).read_text(encoding="utf-8"))
        assert diagnostics["ineligible_rules"] == ["compare_to_aggregate"]
        assert (tmp_path / "out" / EXAMPLES_FILE).exists()

    def test_custom_grammar(self, tmp_path, corpus_file):
        grammar = tmp_path / "g.grammar"
        grammar.write_text(PAIRED_GRAMMAR, encoding="utf-8")
        assert len(load_grammar(grammar).rules) == 2
        run_synthesize(config_for(tmp_path, corpus=corpus_file, grammar=grammar, n_examples=10))
        lines = (tmp_path / "out" / EXAMPLES_FILE).read_text(encoding="utf-8").splitlines()
        assert {json.loads(line)["rule_id"] for line in lines} <= {"count_per_group", "compare_to_aggregate"}


# ─── label / serialize / stats ────────────────────────────────────────────────

class TestDownstreamStages:

    def test_label_recomputes_synthesis_labels(self, tmp_path, corpus_file):
        run_synthesize(config_for(tmp_path, corpus=corpus_file, n_examples=20))
        examples = tmp_path / "out" / EXAMPLES_FILE
        result = run_label(config_for(tmp_path, corpus=corpus_file, examples=examples))
        assert result["examples"] == 20
        original = [json.loads(line)["labels"] for line in examples.read_text(encoding="utf-8").splitlines()]
        relabeled = [
            json.loads(line)["labels"]
            for line in (tmp_path / "out" / LABELED_FILE).read_text(encoding="utf-8").splitlines()
        ]
        assert original == relabeled

    def test_label_skips_bad_sql(self, tmp_path, corpus_file):
        examples = write_jsonl(tmp_path / "e.jsonl", [
            {"sql": "SELECT host WHERE wins > 1", "table_id": "performance"},
            {"sql": "SELECT stadium", "table_id": "performance"},
            {"sql": "DROP TABLE performance", "table_id": "performance"},
        ])
        result = run_label(config_for(tmp_path, corpus=corpus_file, examples=examples))
        assert result["examples"] == 1
        assert result["skipped"] == 2

    def test_serialize_and_stats(self, tmp_path, corpus_file, utterances_file):
        run_synthesize(config_for(tmp_path, corpus=corpus_file, n_examples=12))
        result = run_serialize(config_for(
            tmp_path,
            corpus=corpus_file,
            examples=tmp_path / "out" / EXAMPLES_FILE,
            utterances=utterances_file,
        ))
        assert result["objectives"] == {"SSP": 12, "MLM": 2}
        stats = run_stats(tmp_path / "out" / DATASET_FILE, tmp_path / "out" / VOCAB_FILE)
        assert stats["objectives"] == {"SSP": 12, "MLM": 2}
        assert sum(stats["rules"].values()) == 12

    def test_serialize_utterances_only(self, tmp_path, corpus_file, utterances_file):
        result = run_serialize(config_for(tmp_path, corpus=corpus_file, utterances=utterances_file))
        assert result["objectives"] == {"SSP": 0, "MLM": 2}

    def test_serialize_needs_an_input(self, tmp_path, corpus_file):
        with pytest.raises(ConfigError):
            run_serialize(config_for(tmp_path, corpus=corpus_file))

    def test_serialize_is_deterministic(self, tmp_path, corpus_file, utterances_file):
        run_synthesize(config_for(tmp_path, corpus=corpus_file, n_examples=8))
        examples = tmp_path / "out" / EXAMPLES_FILE
        for name in ("a", "b"):
            run_serialize(PipelineConfig().with_options(
                output_dir=tmp_path / name, corpus=corpus_file, examples=examples, utterances=utterances_file, seed=4,
            ))
        assert (tmp_path / "a" / DATASET_FILE).read_bytes() == (tmp_path / "b" / DATASET_FILE).read_bytes()

    def test_stats_missing_dataset(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            run_stats(tmp_path / "missing.jsonl")
