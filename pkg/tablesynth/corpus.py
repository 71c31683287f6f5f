"""
corpus.py

Ingest, type, deduplicate and index relational tables from disk corpora,
plus the natural-utterance records used for MLM-only serialization.

Malformed entries never abort a run: they are skipped and recorded in a
SkipReport.
"""

import csv
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import StrEnum
from pathlib import Path

logger = logging.getLogger(__name__)

NUMERIC_THRESHOLD = 0.8
DATE_THRESHOLD = 0.8

_NUMERAL = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")
_THOUSANDS = re.compile(r"(?<=\d),(?=\d{3}(\D|$))")
_MONTHS = (
    "jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec|"
    "january|february|march|april|june|july|august|september|october|november|december"
)
_DATE_PATTERNS = (
    re.compile(r"^\d{4}-\d{1,2}-\d{1,2}([ t]\d{1,2}:\d{2}(:\d{2})?)?$"),
    re.compile(r"^\d{4}/\d{1,2}/\d{1,2}$"),
    re.compile(rf"^({_MONTHS})\.?\s+\d{{1,2}},\s*\d{{4}}$"),
    re.compile(rf"^\d{{1,2}}\s+({_MONTHS})\.?\s+\d{{4}}$"),
)


class ColumnType(StrEnum):
    NUMBER = "NUMBER"
    TEXT = "TEXT"
    DATE = "DATE"


class CorpusFormat(StrEnum):
    JSONL_TABLES = "jsonl"
    CSV_DIR = "csv"


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    col_type: ColumnType
    index: int


@dataclass(frozen=True)
class TableSchema:
    table_id: str
    name: str
    columns: tuple[ColumnMeta, ...]
    rows: tuple[tuple[str, ...], ...]
    source: str
    db_id: str | None = None
    # (column name, referenced table name, referenced column name)
    foreign_keys: tuple[tuple[str, str, str], ...] = ()

    def cells(self, index: int) -> list[str]:
        """Non-empty cells of column `index`, in row order."""
        return [row[index] for row in self.rows if row[index].strip()]

    def distinct_cells(self, index: int) -> list[str]:
        """Non-empty distinct cells of column `index`, first occurrence order."""
        return list(dict.fromkeys(self.cells(index)))

    def header(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)


@dataclass(frozen=True)
class UtteranceRecord:
    text: str
    schema: TableSchema
    source: str


@dataclass
class SkipReport:
    """Entries of {path, line, reason} for every skipped corpus record."""

    entries: list[dict] = field(default_factory=list)

    def add(self, path: Path | str, line: int, reason: str) -> None:
        logger.warning("skipping %s:%d: %s", path, line, reason)
        self.entries.append({"path": str(path), "line": line, "reason": reason})

    def extend(self, other: "SkipReport") -> None:
        self.entries.extend(other.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def write(self, output_path: Path) -> None:
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "w", encoding="utf-8") as f:
            for entry in self.entries:
                f.write(json.dumps(entry) + "\n")


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())


def normalize_header(name: str) -> str:
    """Dedup key form of a header: lowercased, whitespace collapsed."""
    return normalize_whitespace(name).lower()


# ─── Typing ───────────────────────────────────────────────────────────────────

def is_numeral(cell: str) -> bool:
    """True for integers/decimals, thousands separators allowed."""
    return bool(_NUMERAL.match(_THOUSANDS.sub("", cell.strip())))


def is_date(cell: str) -> bool:
    text = cell.strip().lower()
    return any(p.match(text) for p in _DATE_PATTERNS)


def classify_cells(cells: list[str]) -> ColumnType:
    non_empty = [c for c in cells if c.strip()]
    if not non_empty:
        return ColumnType.TEXT
    numeric = sum(1 for c in non_empty if is_numeral(c))
    if numeric / len(non_empty) >= NUMERIC_THRESHOLD:
        return ColumnType.NUMBER
    dates = sum(1 for c in non_empty if is_date(c))
    if dates / len(non_empty) >= DATE_THRESHOLD:
        return ColumnType.DATE
    return ColumnType.TEXT


def infer_column_types(table: TableSchema) -> TableSchema:
    """Return a copy of `table` whose columns carry an inferred col_type."""
    columns = tuple(
        replace(column, col_type=classify_cells([row[column.index] for row in table.rows]))
        for column in table.columns
    )
    return replace(table, columns=columns)


# ─── Table construction ───────────────────────────────────────────────────────

def build_table(
    table_id: str,
    name: str,
    header: list,
    rows: list,
    source: str,
    db_id: str | None = None,
    foreign_keys: list | None = None,
) -> TableSchema:
    """
    Validate raw header/rows and build a typed TableSchema.

    Raises ValueError with a human-readable reason when the record is
    malformed; loaders turn that into a skip-report entry.
    """
    if not isinstance(header, list) or not header:
        raise ValueError("missing or empty header")
    names = [normalize_whitespace(str(h)) if h is not None else "" for h in header]
    if any(not n for n in names):
        raise ValueError("empty column name")
    if len(set(names)) != len(names):
        raise ValueError("duplicate column name")
    if not isinstance(rows, list):
        raise ValueError("rows is not a list")

    cells: list[tuple[str, ...]] = []
    for row_number, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != len(names):
            raise ValueError(f"ragged row {row_number}")
        cells.append(tuple("" if c is None else str(c) for c in row))

    keys = []
    for fk in foreign_keys or []:
        if not isinstance(fk, list) or len(fk) != 3:
            raise ValueError("malformed foreign key")
        keys.append(tuple(str(part) for part in fk))

    columns = tuple(
        ColumnMeta(name=n, col_type=ColumnType.TEXT, index=i) for i, n in enumerate(names)
    )
    table = TableSchema(
        table_id=table_id,
        name=normalize_whitespace(str(name)) or table_id,
        columns=columns,
        rows=tuple(cells),
        source=source,
        db_id=str(db_id) if db_id is not None else None,
        foreign_keys=tuple(keys),
    )
    return infer_column_types(table)


# ─── Loaders ──────────────────────────────────────────────────────────────────

def _load_jsonl_file(path: Path) -> tuple[list[TableSchema], SkipReport]:
    tables: list[TableSchema] = []
    skips = SkipReport()
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw.decode("utf-8"))
                if not isinstance(record, dict):
                    raise ValueError("record is not an object")
                table_id = str(record.get("id") or f"{path.stem}-{line_no}")
                tables.append(
                    build_table(
                        table_id=table_id,
                        name=record.get("name") or table_id,
                        header=record.get("header"),
                        rows=record.get("rows", []),
                        source=str(path),
                        db_id=record.get("db_id"),
                        foreign_keys=record.get("foreign_keys"),
                    )
                )
            except UnicodeDecodeError:
                skips.add(path, line_no, "invalid UTF-8")
            except (ValueError, TypeError) as e:
                skips.add(path, line_no, str(e))
    return tables, skips


def _load_csv_file(path: Path, root: Path) -> tuple[list[TableSchema], SkipReport]:
    skips = SkipReport()
    table_id = path.relative_to(root).with_suffix("").as_posix()
    try:
        with open(path, "r", encoding="utf-8-sig", newline="") as f:
            rows = list(csv.reader(f))
        if not rows:
            raise ValueError("empty file")
        table = build_table(
            table_id=table_id,
            name=path.stem,
            header=rows[0],
            rows=rows[1:],
            source=str(path),
        )
    except (ValueError, csv.Error, UnicodeDecodeError) as e:
        skips.add(path, 1, str(e))
        return [], skips
    return [table], skips


def load_corpus(
    path: Path,
    fmt: CorpusFormat,
    skips: SkipReport | None = None,
    workers: int = 1,
) -> list[TableSchema]:
    """
    Load every parseable table under `path`.

    JSONL_TABLES takes one .jsonl file or a directory of them; CSV_DIR takes
    a directory of .csv files, traversed recursively. Files are processed in
    sorted order and merged in that order, so the result does not depend on
    `workers`. Duplicate table ids keep their first occurrence.

    Raises FileNotFoundError when `path` does not exist.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Corpus not found: {path}")

    if fmt == CorpusFormat.JSONL_TABLES:
        files = [path] if path.is_file() else sorted(path.rglob("*.jsonl"))
        load_one = _load_jsonl_file
    else:
        if not path.is_dir():
            raise NotADirectoryError(f"CSV corpus must be a directory: {path}")
        files = sorted(path.rglob("*.csv"))

        def load_one(file_path: Path):
            return _load_csv_file(file_path, path)

    if workers > 1 and len(files) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(load_one, files))
    else:
        results = [load_one(f) for f in files]

    report = skips if skips is not None else SkipReport()
    tables: list[TableSchema] = []
    seen: set[str] = set()
    for file_tables, file_skips in results:
        report.extend(file_skips)
        for table in file_tables:
            if table.table_id in seen:
                report.add(table.source, 0, f"duplicate table id {table.table_id!r}")
                continue
            seen.add(table.table_id)
            tables.append(table)

    logger.info("loaded %d table(s) from %s, %d skipped", len(tables), path, len(report))
    return tables


def dedup_by_headers(tables: list[TableSchema]) -> list[TableSchema]:
    """
    Keep the first table of every group with identical normalized, ordered
    header tuples. Output order follows input order.
    """
    seen: set[tuple[str, ...]] = set()
    kept = []
    for table in tables:
        key = tuple(normalize_header(c.name) for c in table.columns)
        if key in seen:
            continue
        seen.add(key)
        kept.append(table)
    return kept


def index_tables(tables: list[TableSchema]) -> dict[str, TableSchema]:
    return {t.table_id: t for t in tables}


def group_databases(tables: list[TableSchema]) -> dict[str, tuple[TableSchema, ...]]:
    """Tables sharing a db_id, in corpus order. Tables without one are omitted."""
    groups: dict[str, list[TableSchema]] = {}
    for table in tables:
        if table.db_id is not None:
            groups.setdefault(table.db_id, []).append(table)
    return {db_id: tuple(members) for db_id, members in groups.items()}


def load_utterances(
    path: Path,
    tables: dict[str, TableSchema],
    skips: SkipReport | None = None,
) -> list[UtteranceRecord]:
    """
    Read utterance records ({"text", "table_id", "source"} per line) and
    resolve each against `tables`. Records with empty text or an unknown
    table_id are skipped.
    """
    path = Path(path)
    report = skips if skips is not None else SkipReport()
    records = []
    with open(path, "rb") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw.decode("utf-8"))
            except UnicodeDecodeError:
                report.add(path, line_no, "invalid UTF-8")
                continue
            except json.JSONDecodeError as e:
                report.add(path, line_no, f"invalid JSON: {e.msg}")
                continue
            if not isinstance(record, dict):
                report.add(path, line_no, "record is not an object")
                continue
            text = normalize_whitespace(str(record.get("text") or ""))
            if not text:
                report.add(path, line_no, "empty text")
                continue
            table = tables.get(str(record.get("table_id")))
            if table is None:
                report.add(path, line_no, f"unknown table_id {record.get('table_id')!r}")
                continue
            records.append(
                UtteranceRecord(text=text, schema=table, source=str(record.get("source", "")))
            )
    return records
