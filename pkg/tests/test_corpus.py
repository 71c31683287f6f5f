"""
test_corpus.py

Tests for tablesynth/corpus.py covering:
  - load_corpus() over JSONL files, JSONL directories and CSV directories
  - infer_column_types() thresholds
  - dedup_by_headers() ordering rules
  - load_utterances() referential checks
  - group_databases() and SkipReport
"""

import json
from pathlib import Path

import pytest

from tablesynth.corpus import (
    ColumnType,
    CorpusFormat,
    SkipReport,
    classify_cells,
    dedup_by_headers,
    group_databases,
    index_tables,
    load_corpus,
    load_utterances,
)
from tests.conftest import (
    PERFORMANCE_HEADER,
    build_corpus_records,
    make_table,
    performance_record,
    write_csv_dir,
    write_jsonl,
)

# ─── load_corpus ──────────────────────────────────────────────────────────────

class TestLoadCorpus:

    def test_csv_directory_loads_every_file(self, tmp_path):
        """Three well-formed CSV files produce three tables."""
        write_csv_dir(tmp_path / "csv", {
            "a": [["x", "y"], ["1", "2"]],
            "b": [["name"], ["Oslo"]],
            "nested/c": [["year", "city"], ["2001", "Lima"]],
        })
        tables = load_corpus(tmp_path / "csv", CorpusFormat.CSV_DIR)
        assert [t.table_id for t in tables] == ["a", "b", "nested/c"]

    def test_ragged_row_is_skipped_and_reported(self, tmp_path):
        """Two valid tables and one with a ragged row: 2 loaded, 1 skip entry."""
        ragged = {"id": "bad", "header": ["a", "b"], "rows": [["1", "2"], ["3"]]}
        path = write_jsonl(tmp_path / "t.jsonl", [performance_record(), ragged, build_corpus_records(1)[0]])
        skips = SkipReport()
        tables = load_corpus(path, CorpusFormat.JSONL_TABLES, skips=skips)
        assert len(tables) == 2
        assert len(skips) == 1
        assert skips.entries[0]["line"] == 2
        assert "ragged" in skips.entries[0]["reason"]

    def test_empty_directory_gives_empty_corpus(self, tmp_path):
        (tmp_path / "empty").mkdir()
        skips = SkipReport()
        assert load_corpus(tmp_path / "empty", CorpusFormat.CSV_DIR, skips=skips) == []
        assert len(skips) == 0

    def test_missing_path_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_corpus(tmp_path / "nope.jsonl", CorpusFormat.JSONL_TABLES)

    def test_invalid_json_line_is_skipped(self, tmp_path):
        path = write_jsonl(tmp_path / "t.jsonl", [performance_record(), "{not json"])
        skips = SkipReport()
        assert len(load_corpus(path, CorpusFormat.JSONL_TABLES, skips=skips)) == 1
        assert len(skips) == 1

    def test_invalid_utf8_line_is_skipped(self, tmp_path):
        """A line of undecodable bytes between two good tables: 2 loaded, 1 skip entry."""
        good = [json.dumps(performance_record()), json.dumps(build_corpus_records(1)[0])]
        path = tmp_path / "t.jsonl"
        path.write_bytes(good[0].encode("utf-8") + b"\n\xff\xfe{}\n" + good[1].encode("utf-8") + b"\n")
        skips = SkipReport()
        tables = load_corpus(path, CorpusFormat.JSONL_TABLES, skips=skips)
        assert [t.table_id for t in tables] == ["performance", "t00000"]
        assert [(e["line"], e["reason"]) for e in skips.entries] == [(2, "invalid UTF-8")]

    def test_csv_byte_order_mark_is_not_part_of_the_header(self, tmp_path):
        path = tmp_path / "csv" / "years.csv"
        path.parent.mkdir()
        path.write_text("\ufeffyear,city\n2001,Lima\n", encoding="utf-8")
        (table,) = load_corpus(tmp_path / "csv", CorpusFormat.CSV_DIR)
        assert [c.name for c in table.columns] == ["year", "city"]
        assert table.columns[0].col_type == ColumnType.NUMBER

    def test_duplicate_column_names_are_skipped(self, tmp_path):
        record = {"id": "dup", "header": ["a", "a"], "rows": [["1", "2"]]}
        skips = SkipReport()
        assert load_corpus(write_jsonl(tmp_path / "t.jsonl", [record]), CorpusFormat.JSONL_TABLES, skips) == []
        assert "duplicate" in skips.entries[0]["reason"]

    def test_missing_id_falls_back_to_position(self, tmp_path):
        record = {"header": ["a"], "rows": [["1"]]}
        tables = load_corpus(write_jsonl(tmp_path / "corpus.jsonl", [record]), CorpusFormat.JSONL_TABLES)
        assert tables[0].table_id == "corpus-1"

    def test_worker_count_does_not_change_result(self, tmp_path):
        """Directory of JSONL shards loads identically with 1 and 4 workers."""
        records = build_corpus_records(12, seed=9)
        for i in range(4):
            write_jsonl(tmp_path / "shards" / f"part-{i}.jsonl", records[i * 3:(i + 1) * 3])
        serial = load_corpus(tmp_path / "shards", CorpusFormat.JSONL_TABLES, workers=1)
        parallel = load_corpus(tmp_path / "shards", CorpusFormat.JSONL_TABLES, workers=4)
        assert serial == parallel
        assert [t.table_id for t in serial] == [r["id"] for r in records]

    def test_db_fields_are_kept(self, tmp_path):
        record = {
            "id": "d/concert", "name": "concert", "db_id": "d",
            "header": ["concert_id", "stadium_id"], "rows": [["1", "2"]],
            "foreign_keys": [["stadium_id", "stadium", "stadium_id"]],
        }
        table = load_corpus(write_jsonl(tmp_path / "t.jsonl", [record]), CorpusFormat.JSONL_TABLES)[0]
        assert table.db_id == "d"
        assert table.foreign_keys == (("stadium_id", "stadium", "stadium_id"),)


# ─── infer_column_types ───────────────────────────────────────────────────────

class TestInferColumnTypes:

    def test_all_numeric_is_number(self):
        assert classify_cells(["1", "2", "3"]) == ColumnType.NUMBER

    def test_eighty_percent_numeric_is_number(self):
        """4 of 5 cells numeric sits exactly on the threshold."""
        assert classify_cells(["12", "n/a", "15", "20", "31"]) == ColumnType.NUMBER

    def test_words_are_text(self):
        assert classify_cells(["Bangkok", "Paris"]) == ColumnType.TEXT

    def test_dates(self):
        assert classify_cells(["2001-03-04", "1999-12-31", "May 3, 2010"]) == ColumnType.DATE

    def test_thousands_separators_count_as_numbers(self):
        assert classify_cells(["1,200", "3,400,000", "12"]) == ColumnType.NUMBER

    def test_empty_cells_are_ignored(self):
        assert classify_cells(["", "4", " ", "5"]) == ColumnType.NUMBER
        assert classify_cells(["", ""]) == ColumnType.TEXT

    def test_table_columns_are_typed(self, performance):
        types = [c.col_type for c in performance.columns]
        assert types == [ColumnType.TEXT, ColumnType.TEXT, ColumnType.NUMBER, ColumnType.NUMBER]


# ─── dedup_by_headers ─────────────────────────────────────────────────────────

class TestDedupByHeaders:

    def test_identical_headers_keep_the_first(self):
        first = make_table("t1", ["year", "event", "city"], [["2001", "a", "b"]])
        second = make_table("t2", ["year", "event", "city"], [["2002", "c", "d"]])
        assert dedup_by_headers([first, second]) == [first]

    def test_header_order_matters(self):
        ab = make_table("t1", ["a", "b"], [])
        ba = make_table("t2", ["b", "a"], [])
        assert dedup_by_headers([ab, ba]) == [ab, ba]

    def test_headers_compare_normalized(self):
        upper = make_table("t1", ["Year", "City"], [])
        lower = make_table("t2", ["year", " city "], [])
        assert dedup_by_headers([upper, lower]) == [upper]

    def test_duplicate_groups_reduce_to_one_each(self):
        """100 tables in 60 header groups (40 duplicates) reduce to 60."""
        tables = [make_table(f"t{i}", [f"h{i}", "x"], []) for i in range(60)]
        tables += [make_table(f"d{i}", [f"h{i}", "x"], []) for i in range(40)]
        kept = dedup_by_headers(tables)
        assert len(kept) == 60
        assert all(t.table_id.startswith("t") for t in kept)


# ─── load_utterances ──────────────────────────────────────────────────────────

class TestLoadUtterances:

    def test_valid_records_resolve(self, tmp_path, performance):
        records = [{"text": f"question {i}", "table_id": "performance"} for i in range(5)]
        path = write_jsonl(tmp_path / "u.jsonl", records)
        utterances = load_utterances(path, {"performance": performance})
        assert len(utterances) == 5
        assert utterances[0].schema is performance

    def test_unknown_table_is_skipped(self, tmp_path, performance):
        path = write_jsonl(tmp_path / "u.jsonl", [{"text": "hi", "table_id": "missing"}])
        skips = SkipReport()
        assert load_utterances(path, {"performance": performance}, skips) == []
        assert "unknown table_id" in skips.entries[0]["reason"]

    def test_mixed_file_counts(self, tmp_path, performance):
        """10 valid and 2 invalid records: 10 loaded, 2 skipped."""
        records = [{"text": f"q {i}", "table_id": "performance"} for i in range(10)]
        records.insert(3, {"text": "", "table_id": "performance"})
        records.insert(7, {"text": "orphan", "table_id": "elsewhere"})
        skips = SkipReport()
        path = write_jsonl(tmp_path / "u.jsonl", records)
        assert len(load_utterances(path, {"performance": performance}, skips)) == 10
        assert len(skips) == 2

    def test_invalid_utf8_is_skipped(self, tmp_path, performance):
        path = tmp_path / "u.jsonl"
        path.write_bytes(b'{"text": "caf\xe9", "table_id": "performance"}\n{"text": "ok", "table_id": "performance"}\n')
        skips = SkipReport()
        assert [u.text for u in load_utterances(path, {"performance": performance}, skips)] == ["ok"]
        assert skips.entries[0]["reason"] == "invalid UTF-8"


# ─── databases and skip reports ───────────────────────────────────────────────

class TestDatabases:

    def test_group_databases_keeps_corpus_order(self, concert_db, performance):
        stadium, concert = concert_db
        groups = group_databases([stadium, performance, concert])
        assert groups == {"concert_singer": (stadium, concert)}

    def test_index_tables(self, performance):
        assert index_tables([performance]) == {"performance": performance}


class TestSkipReport:

    def test_write_is_jsonl(self, tmp_path):
        skips = SkipReport()
        skips.add(Path("a.jsonl"), 3, "ragged row 0")
        skips.write(tmp_path / "out" / "skips.jsonl")
        lines = (tmp_path / "out" / "skips.jsonl").read_text().splitlines()
        assert json.loads(lines[0]) == {"path": "a.jsonl", "line": 3, "reason": "ragged row 0"}

    def test_header_constant_matches_fixture(self, performance):
        assert performance.header() == tuple(PERFORMANCE_HEADER)
