"""
pipeline.py

Stage drivers behind the CLI subcommands. Each run_* takes a validated
PipelineConfig, reads its inputs, writes its outputs under output_dir and
returns a small summary dict for the terminal.
"""

import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from tablesynth.config import PipelineConfig
from tablesynth.corpus import SkipReport, TableSchema, dedup_by_headers, index_tables, load_corpus, load_utterances
from tablesynth.errors import ConfigError, LabelError, ParseError, PartialOutput
from tablesynth.grammar import Grammar, load_grammar, load_starter_grammar
from tablesynth.labeler import (
    LabelVocabulary,
    build_vocabulary,
    label_columns,
    read_vocabulary,
    template_label_space,
    write_vocabulary,
)
from tablesynth.miner import emit_rule_stubs, frequency_table, mine_templates, read_seed_pairs
from tablesynth.report import build_stats, write_report
from tablesynth.serializer import read_dataset, serialize_mlm, serialize_ssp, write_dataset
from tablesynth.sql import parse_sql
from tablesynth.synthesizer import SynthExample, generate, read_examples, write_examples

logger = logging.getLogger(__name__)

STUB_FILE = "rules.stub.grammar"
TEMPLATES_FILE = "templates.json"
EXAMPLES_FILE = "examples.jsonl"
LABELED_FILE = "labeled.jsonl"
VOCAB_FILE = "labels.vocab"
DATASET_FILE = "dataset.jsonl"
SKIPS_FILE = "skipped.jsonl"
DIAGNOSTICS_FILE = "diagnostics.json"


def _require(config: PipelineConfig, *names: str) -> None:
    missing = [n for n in names if getattr(config, n) is None]
    if missing:
        raise ConfigError(f"missing setting(s): {', '.join(missing)}")


def _load_tables(config: PipelineConfig, skips: SkipReport, dedup: bool = False) -> list[TableSchema]:
    tables = load_corpus(config.corpus, config.corpus_format, skips=skips, workers=config.workers)
    if dedup:
        before = len(tables)
        tables = dedup_by_headers(tables)
        logger.info("dedup kept %d of %d table(s)", len(tables), before)
    return tables


def _write_skips(config: PipelineConfig, skips: SkipReport) -> Path | None:
    if not len(skips):
        return None
    path = config.output_dir / SKIPS_FILE
    skips.write(path)
    return path


def load_configured_grammar(config: PipelineConfig) -> Grammar:
    if config.grammar is None:
        return load_starter_grammar()
    return load_grammar(config.grammar)


# ─── Stages ───────────────────────────────────────────────────────────────────

def run_mine(config: PipelineConfig) -> dict:
    _require(config, "corpus", "seed_pairs")
    start = time.monotonic()
    skips = SkipReport()
    tables = index_tables(_load_tables(config, skips))
    pairs = read_seed_pairs(config.seed_pairs, tables, skips)
    groups = mine_templates(pairs, config.top_k, config.exemplar_cap, skips)
    if not groups:
        raise ConfigError(f"no seed pair in {config.seed_pairs} could be abstracted")

    stub_path = config.output_dir / STUB_FILE
    emit_rule_stubs(groups, stub_path)
    write_report({"templates": frequency_table(groups)}, config.output_dir / TEMPLATES_FILE)
    return {
        "pairs": len(pairs),
        "templates": frequency_table(groups),
        "stub_path": stub_path,
        "skipped": len(skips),
        "skips_path": _write_skips(config, skips),
        "duration_seconds": time.monotonic() - start,
    }


def run_validate_grammar(config: PipelineConfig) -> dict:
    grammar = load_configured_grammar(config)
    space = template_label_space(grammar)
    return {
        "grammar": str(config.grammar) if config.grammar else "starter",
        "rules": len(grammar.rules),
        "multi_table_rules": sum(1 for r in grammar.rules if r.is_multi_table),
        "terminals": len(grammar.lexicon.entries),
        "label_space": list(space.labels),
    }


def run_synthesize(config: PipelineConfig) -> dict:
    """
    Generate config.n_examples labeled examples. On PartialOutput the
    examples produced so far and the diagnostics are written before the
    exception propagates.
    """
    _require(config, "corpus")
    start = time.monotonic()
    grammar = load_configured_grammar(config)
    skips = SkipReport()
    tables = _load_tables(config, skips, dedup=config.dedup)

    examples_path = config.output_dir / EXAMPLES_FILE
    try:
        examples = generate(
            grammar,
            tables,
            config.n_examples,
            seed=config.stage_seed("synthesize"),
            retry_budget=config.retry_budget,
            workers=config.workers,
        )
    except PartialOutput as e:
        write_examples(e.examples, examples_path)
        write_report(e.diagnostics, config.output_dir / DIAGNOSTICS_FILE)
        _write_skips(config, skips)
        raise

    write_examples(examples, examples_path)
    vocab = build_vocabulary(examples)
    write_vocabulary(vocab, config.output_dir / VOCAB_FILE)
    return {
        "tables": len(tables),
        "examples": len(examples),
        "examples_path": examples_path,
        "vocabulary_size": len(vocab),
        "skipped": len(skips),
        "skips_path": _write_skips(config, skips),
        "duration_seconds": time.monotonic() - start,
    }


def relabel(examples: list[SynthExample], skips: SkipReport) -> list[SynthExample]:
    """Recompute labels from each example's SQL; unparseable or unresolvable ones are skipped."""
    labeled = []
    for position, example in enumerate(examples, start=1):
        try:
            labels = label_columns(parse_sql(example.sql), example.tables)
        except (ParseError, LabelError) as e:
            skips.add(example.example_id, position, str(e))
            continue
        labeled.append(replace(example, labels=labels))
    return labeled


def run_label(config: PipelineConfig) -> dict:
    _require(config, "corpus", "examples")
    start = time.monotonic()
    skips = SkipReport()
    tables = index_tables(_load_tables(config, skips))
    examples = relabel(read_examples(config.examples, tables, skips), skips)

    labeled_path = config.output_dir / LABELED_FILE
    write_examples(examples, labeled_path)
    vocab = build_vocabulary(examples)
    write_vocabulary(vocab, config.output_dir / VOCAB_FILE)
    return {
        "examples": len(examples),
        "labeled_path": labeled_path,
        "vocabulary_size": len(vocab),
        "skipped": len(skips),
        "skips_path": _write_skips(config, skips),
        "duration_seconds": time.monotonic() - start,
    }


def _vocabulary(config: PipelineConfig, examples: list[SynthExample]) -> LabelVocabulary:
    if config.vocabulary is not None:
        return read_vocabulary(config.vocabulary)
    return build_vocabulary(examples)


def run_serialize(config: PipelineConfig) -> dict:
    """
    SSP records from config.examples, MLM records from config.utterances,
    mixed into one shuffled dataset. Either input may be absent, not both.
    """
    _require(config, "corpus")
    if config.examples is None and config.utterances is None:
        raise ConfigError("serialize needs examples, utterances or both")
    start = time.monotonic()
    skips = SkipReport()
    tables = index_tables(_load_tables(config, skips))

    examples = read_examples(config.examples, tables, skips) if config.examples else []
    if any(not e.labels for e in examples):
        examples = relabel(examples, skips)
    vocab = _vocabulary(config, examples)
    ssp = [serialize_ssp(e, vocab, config.separator) for e in examples]

    mlm = []
    if config.utterances is not None:
        mask_seed = config.stage_seed("mask")
        records = load_utterances(config.utterances, tables, skips)
        for index, record in enumerate(records):
            rng = np.random.default_rng([mask_seed, index])
            mlm.append(serialize_mlm(record, rng, config.separator, config.mask_probability))

    dataset_path = config.output_dir / DATASET_FILE
    counts = write_dataset(ssp, mlm, dataset_path, config.stage_seed("shuffle"))
    write_vocabulary(vocab, config.output_dir / VOCAB_FILE)
    return {
        "objectives": counts,
        "dataset_path": dataset_path,
        "vocabulary_size": len(vocab),
        "skipped": len(skips),
        "skips_path": _write_skips(config, skips),
        "duration_seconds": time.monotonic() - start,
    }


def run_stats(dataset_path: Path, vocabulary: Path | None = None) -> dict:
    """Stats of a serialized dataset; raises FileNotFoundError when it is missing."""
    if not dataset_path.exists():
        raise FileNotFoundError(f"Dataset not found: {dataset_path}")
    vocab = read_vocabulary(vocabulary) if vocabulary is not None else None
    return build_stats(read_dataset(dataset_path), vocab)
