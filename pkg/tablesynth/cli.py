import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import click

from tablesynth.config import ENV_PREFIX, PipelineConfig, build_default_map, read_config_file
from tablesynth.corpus import CorpusFormat
from tablesynth.errors import GrammarError, LexiconError, PartialOutput, TableSynthError
from tablesynth.pipeline import (
    run_label,
    run_mine,
    run_serialize,
    run_stats,
    run_synthesize,
    run_validate_grammar,
)
from tablesynth.report import format_size, summarize_run, summarize_stats

EXIT_IO = 2
EXIT_GRAMMAR = 3
EXIT_PARTIAL = 4


@contextmanager
def exit_codes():
    """Map pipeline failures to process exit codes, message on stderr."""
    try:
        yield
    except PartialOutput as e:
        missing = e.diagnostics.get("missing", 0)
        click.echo(f"\n  ✗ Partial output: {e} ({missing} missing)", err=True)
        for rule_id, count in e.diagnostics.get("failed_by_rule", {}).items():
            click.echo(f"    · {rule_id}: {count} failed", err=True)
        for rule_id in e.diagnostics.get("ineligible_rules", []):
            click.echo(f"    · {rule_id}: no eligible table", err=True)
        sys.exit(EXIT_PARTIAL)
    except (GrammarError, LexiconError) as e:
        click.echo(f"\n  ✗ Invalid grammar: {e}", err=True)
        sys.exit(EXIT_GRAMMAR)
    except (OSError, ValueError, TableSynthError) as e:
        click.echo(f"\n  ✗ {e}", err=True)
        sys.exit(EXIT_IO)


def build_config(**options) -> PipelineConfig:
    with exit_codes():
        return PipelineConfig().with_options(**options)


def _file_line(label: str, path: Path | None) -> tuple[str, str]:
    if path is None or not path.exists():
        return label, "-"
    return label, f"{path}  ({format_size(path.stat().st_size)})"


# ─── Shared options ───────────────────────────────────────────────────────────

def corpus_options(f):
    f = click.option(
        "--format", "corpus_format",
        type=click.Choice([c.value for c in CorpusFormat]),
        default=CorpusFormat.JSONL_TABLES.value,
        show_default=True,
        help="jsonl: one table per line. csv: a directory of .csv files.",
    )(f)
    f = click.option(
        "--corpus", "-c",
        type=click.Path(exists=True, resolve_path=True),
        required=True,
        help="Table corpus: a .jsonl file, a directory of them, or a CSV directory.",
    )(f)
    return f


def output_option(f):
    return click.option(
        "--output-dir", "-o",
        type=click.Path(file_okay=False),
        default="tablesynth-out",
        show_default=True,
        help="Directory for every file the command writes.",
    )(f)


def seed_options(f):
    f = click.option("--workers", "-w", type=int, default=1, show_default=True, help="Worker processes.")(f)
    f = click.option("--seed", "-s", type=int, default=0, show_default=True, help="Seed for the whole run.")(f)
    return f


# ─── Root group ───────────────────────────────────────────────────────────────

@click.group(context_settings={"auto_envvar_prefix": ENV_PREFIX})
@click.version_option(version="0.1.0", prog_name="tablesynth")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="key = value settings file. Flags and TABLESYNTH_* variables override it.",
)
@click.option("--verbose", "-v", is_flag=True, default=False, help="Debug logging.")
@click.option("--quiet", "-q", is_flag=True, default=False, help="Only warnings and errors.")
@click.pass_context
def cli(ctx, config_path, verbose, quiet):
    """
    Synthesize grammar-grounded question/SQL pairs over tables
    and serialize them for text-to-SQL pre-training.

    \b
    Typical workflow:
      1. tablesynth mine --corpus tables.jsonl --seed-pairs pairs.jsonl
      2. tablesynth validate-grammar --grammar my.grammar
      3. tablesynth synthesize --corpus tables.jsonl --n-examples 100000
      4. tablesynth serialize --corpus tables.jsonl --examples out/examples.jsonl
      5. tablesynth stats out/dataset.jsonl
    """
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="  %(levelname)s %(name)s: %(message)s")
    if config_path:
        with exit_codes():
            ctx.default_map = build_default_map(read_config_file(Path(config_path)), cli.commands)


# ─── Mine subcommand ──────────────────────────────────────────────────────────

@cli.command()
@corpus_options
@click.option(
    "--seed-pairs", "-p",
    type=click.Path(exists=True, dir_okay=False, resolve_path=True),
    required=True,
    help='JSONL of {"question", "sql", "table_id"} seed pairs.',
)
@click.option("--top-k", "-k", type=int, default=90, show_default=True, help="Templates to keep.")
@click.option("--exemplar-cap", type=int, default=4, show_default=True, help="Exemplar questions per stub.")
@output_option
def mine(corpus, corpus_format, seed_pairs, top_k, exemplar_cap, output_dir):
    """
    Abstract seed pairs into SQL templates and write grammar stubs for the
    TOP_K most frequent ones.
    """
    config = build_config(
        corpus=corpus, corpus_format=corpus_format, seed_pairs=seed_pairs,
        top_k=top_k, exemplar_cap=exemplar_cap, output_dir=output_dir,
    )
    with exit_codes():
        result = run_mine(config)

    click.echo(f"\n── Templates ({len(result['templates'])} kept) {'─' * 33}")
    click.echo(f"  {'Count':>6}  Template")
    click.echo(f"  {'─' * 6}  {'─' * 44}")
    for row in result["templates"]:
        click.echo(f"  {row['count']:>6}  {row['template']}")
    click.echo(summarize_run("Mine Complete", [
        ("Seed pairs", result["pairs"]),
        ("Skipped", result["skipped"]),
        _file_line("Stubs", result["stub_path"]),
    ], result["duration_seconds"]))


# ─── Validate-grammar subcommand ──────────────────────────────────────────────

@cli.command("validate-grammar")
@click.option(
    "--grammar", "-g",
    type=click.Path(exists=True, dir_okay=False, resolve_path=True),
    default=None,
    help="Grammar file. Defaults to the bundled starter grammar.",
)
@click.option("--show-labels", is_flag=True, default=False, help="List the reachable label classes.")
def validate_grammar(grammar, show_labels):
    """
    Load and validate a grammar. Exits 3 and names the offending rule when
    it is invalid.
    """
    config = build_config(grammar=grammar)
    with exit_codes():
        result = run_validate_grammar(config)

    click.echo(summarize_run("Grammar OK", [
        ("Grammar", result["grammar"]),
        ("Rules", result["rules"]),
        ("Multi-table", result["multi_table_rules"]),
        ("Terminals", result["terminals"]),
        ("Label classes", len(result["label_space"])),
    ], None))
    if show_labels:
        for index, label in enumerate(result["label_space"]):
            click.echo(f"  {index:>4}  {label}")
        click.echo()


# ─── Synthesize subcommand ────────────────────────────────────────────────────

@cli.command()
@corpus_options
@click.option(
    "--grammar", "-g",
    type=click.Path(exists=True, dir_okay=False, resolve_path=True),
    default=None,
    help="Grammar file. Defaults to the bundled starter grammar.",
)
@click.option("--n-examples", "-n", type=int, default=1000, show_default=True, help="Examples to generate.")
@click.option("--retry-budget", type=int, default=50, show_default=True, help="Table draws per example.")
@click.option("--no-dedup", is_flag=True, default=False, help="Keep tables with identical headers.")
@seed_options
@output_option
def synthesize(corpus, corpus_format, grammar, n_examples, retry_budget, no_dedup, seed, workers, output_dir):
    """
    Generate N_EXAMPLES labeled question/SQL pairs from the grammar over the
    corpus tables. Exits 4 (partial file kept) when some examples could not
    be bound.
    """
    config = build_config(
        corpus=corpus, corpus_format=corpus_format, grammar=grammar,
        n_examples=n_examples, retry_budget=retry_budget, dedup=not no_dedup,
        seed=seed, workers=workers, output_dir=output_dir,
    )
    click.echo(f"\n  Synthesizing {config.n_examples} example(s), seed {config.seed}, {config.workers} worker(s)")
    with exit_codes():
        result = run_synthesize(config)

    click.echo(summarize_run("Synthesis Complete", [
        ("Tables", result["tables"]),
        ("Examples", result["examples"]),
        ("Label classes", result["vocabulary_size"]),
        ("Skipped tables", result["skipped"]),
        _file_line("Output", result["examples_path"]),
    ], result["duration_seconds"]))


# ─── Label subcommand ─────────────────────────────────────────────────────────

@cli.command()
@corpus_options
@click.option(
    "--examples", "-e",
    type=click.Path(exists=True, dir_okay=False, resolve_path=True),
    required=True,
    help='JSONL with at least {"sql", "table_id"} per line.',
)
@output_option
def label(corpus, corpus_format, examples, output_dir):
    """Recompute SSP labels for an existing question/SQL JSONL."""
    config = build_config(corpus=corpus, corpus_format=corpus_format, examples=examples, output_dir=output_dir)
    with exit_codes():
        result = run_label(config)

    click.echo(summarize_run("Labeling Complete", [
        ("Examples", result["examples"]),
        ("Label classes", result["vocabulary_size"]),
        ("Skipped", result["skipped"]),
        _file_line("Output", result["labeled_path"]),
    ], result["duration_seconds"]))


# ─── Serialize subcommand ─────────────────────────────────────────────────────

@cli.command()
@corpus_options
@click.option(
    "--examples", "-e",
    type=click.Path(exists=True, dir_okay=False, resolve_path=True),
    default=None,
    help="Labeled examples for SSP records.",
)
@click.option(
    "--utterances", "-u",
    type=click.Path(exists=True, dir_okay=False, resolve_path=True),
    default=None,
    help='JSONL of {"text", "table_id", "source"} for MLM records.',
)
@click.option(
    "--vocabulary",
    type=click.Path(exists=True, dir_okay=False, resolve_path=True),
    default=None,
    help="Frozen label vocabulary. Built from the examples when omitted.",
)
@click.option("--separator", default="</s>", show_default=True, help="Column separator token.")
@click.option("--mask-probability", type=float, default=0.15, show_default=True, help="MLM masking rate.")
@seed_options
@output_option
def serialize(corpus, corpus_format, examples, utterances, vocabulary, separator,
              mask_probability, seed, workers, output_dir):
    """Write the mixed SSP/MLM pre-training dataset."""
    config = build_config(
        corpus=corpus, corpus_format=corpus_format, examples=examples,
        utterances=utterances, vocabulary=vocabulary, separator=separator,
        mask_probability=mask_probability, seed=seed, workers=workers,
        output_dir=output_dir,
    )
    with exit_codes():
        result = run_serialize(config)

    counts = result["objectives"]
    click.echo(summarize_run("Serialization Complete", [
        ("SSP records", counts["SSP"]),
        ("MLM records", counts["MLM"]),
        ("Label classes", result["vocabulary_size"]),
        ("Skipped", result["skipped"]),
        _file_line("Output", result["dataset_path"]),
    ], result["duration_seconds"]))


# ─── Stats subcommand ─────────────────────────────────────────────────────────

@cli.command()
@click.argument("dataset", type=click.Path(dir_okay=False))
@click.option(
    "--vocabulary",
    type=click.Path(exists=True, dir_okay=False, resolve_path=True),
    default=None,
    help="Label vocabulary, to print class names instead of indices.",
)
@click.option("--top", type=int, default=20, show_default=True, help="Rules and labels to list.")
def stats(dataset, vocabulary, top):
    """
    Print record counts, per-rule shares, the label histogram and the mask
    rate of a serialized DATASET.
    """
    with exit_codes():
        result = run_stats(Path(dataset), Path(vocabulary) if vocabulary else None)
    click.echo(summarize_stats(result, top=top))


# ─── Entry point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    cli()
