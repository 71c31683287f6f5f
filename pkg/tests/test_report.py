"""
test_report.py

Tests for tablesynth/report.py covering:
  - build_stats() over a small dataset
  - write_report()
  - formatting helpers and terminal summaries
"""

import json

import pytest

from tablesynth.labeler import LabelVocabulary
from tablesynth.report import (
    build_stats,
    format_duration,
    format_size,
    summarize_run,
    summarize_stats,
    write_report,
)
from tablesynth.serializer import FlatSequence, MaskAction, MaskSelection, Objective

VOCAB = LabelVocabulary(("NONE", "SELECT", "WHERE"))


def ssp(rule_id: str, classes: tuple[int, ...]) -> tuple[FlatSequence, None]:
    tokens = ("q",) + sum((("</s>", f"c{i}") for i in range(len(classes))), ())
    return (
        FlatSequence(
            tokens=tokens,
            sep_positions=tuple(range(1, 2 * len(classes), 2)),
            column_order=tuple(range(len(classes))),
            objective=Objective.SSP,
            classes=classes,
            meta={"rule_id": rule_id},
        ),
        None,
    )


def mlm(n_masked: int, eligible: int) -> tuple[FlatSequence, MaskSelection]:
    return (
        FlatSequence(tokens=("x",) * eligible, sep_positions=(), column_order=(), objective=Objective.MLM),
        MaskSelection(
            positions=tuple(range(n_masked)),
            actions=(MaskAction.MASK,) * n_masked,
            probability=0.15,
            eligible=eligible,
        ),
    )


@pytest.fixture
def records():
    """Three SSP records over two rules and two MLM records."""
    return [
        ssp("select_where", (1, 2, 0)),
        ssp("select_where", (1, 0, 2)),
        ssp("count_all", (0, 0, 0)),
        mlm(3, 20),
        mlm(1, 20),
    ]


# ─── build_stats ──────────────────────────────────────────────────────────────

class TestBuildStats:

    def test_counts(self, records):
        stats = build_stats(records, VOCAB)
        assert stats["total_records"] == 5
        assert stats["objectives"] == {"SSP": 3, "MLM": 2}
        assert stats["rules"] == {"select_where": 2, "count_all": 1}

    def test_labels_by_name(self, records):
        stats = build_stats(records, VOCAB)
        assert stats["labels"] == {"NONE": 5, "SELECT": 2, "WHERE": 2}
        assert stats["vocabulary_size"] == 3

    def test_labels_without_vocabulary(self, records):
        stats = build_stats(records)
        assert stats["labels"] == {"0": 5, "1": 2, "2": 2}

    def test_mask_rate(self, records):
        stats = build_stats(records)
        assert stats["masked_tokens"] == 4
        assert stats["eligible_tokens"] == 40
        assert stats["mask_rate"] == pytest.approx(0.1)

    def test_empty(self):
        stats = build_stats([])
        assert stats["total_records"] == 0
        assert stats["mask_rate"] == 0.0

    def test_write_report_creates_parents(self, tmp_path, records):
        stats = build_stats(records, VOCAB)
        path = tmp_path / "reports" / "stats.json"
        write_report(stats, path)
        assert json.loads(path.read_text(encoding="utf-8")) == stats


# ─── Formatting ───────────────────────────────────────────────────────────────

class TestFormatting:

    @pytest.mark.parametrize("size,expected", [
        (512, "512 B"),
        (2048, "2.0 KB"),
        (5 * 1024 ** 2, "5.0 MB"),
        (3 * 1024 ** 3, "3.00 GB"),
    ])
    def test_format_size(self, size, expected):
        assert format_size(size) == expected

    @pytest.mark.parametrize("seconds,expected", [
        (None, "unknown"),
        (4.3, "4.3s"),
        (125.0, "2m 5.0s"),
    ])
    def test_format_duration(self, seconds, expected):
        assert format_duration(seconds) == expected

    def test_summarize_stats(self, records):
        text = summarize_stats(build_stats(records, VOCAB), top=1)
        assert "Dataset Stats" in text
        assert "select_where" in text
        assert "count_all" not in text

    def test_summarize_run(self):
        text = summarize_run("Synthesize", [("Examples", 10)], 3.0)
        assert "── Synthesize " in text
        assert "Examples" in text and "3.0s" in text
        assert "Took" not in summarize_run("Validate", [("Rules", 2)], None)
