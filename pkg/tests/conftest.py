"""
conftest.py

Pytest fixtures for tablesynth. Builds tables, on-disk corpora, seed pairs
and utterance files in a temporary directory that is created before each
test and cleaned up afterward.

The "performance" table mirrors the concert example the SSP labels are
described with:

    locations               host        wins  attendance
    Madison Square Garden   Ann Lee     3     1200
    Wembley                 Bo Chan     1     800
    Madison Square Garden   Cy O'Neil   2     1500
    Olympia                 Ann Lee     2     650
    Wembley                 Dee Park    4     900

Random corpora come from build_corpus_records(): every table has 3-6
columns, at least two of them NUMBER, no empty cells, so every starter
grammar rule is bindable against every table.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from tablesynth.corpus import TableSchema, build_table
from tablesynth.grammar import Grammar, load_starter_grammar, loads_grammar

# ─── Table builders ───────────────────────────────────────────────────────────

PERFORMANCE_HEADER = ["locations", "host", "wins", "attendance"]
PERFORMANCE_ROWS = [
    ["Madison Square Garden", "Ann Lee", "3", "1200"],
    ["Wembley", "Bo Chan", "1", "800"],
    ["Madison Square Garden", "Cy O'Neil", "2", "1500"],
    ["Olympia", "Ann Lee", "2", "650"],
    ["Wembley", "Dee Park", "4", "900"],
]

TABLE_NAMES = ["performance", "team", "city", "album", "flight", "school", "station", "player", "film"]
TEXT_HEADERS = ["name", "country", "city", "genre", "host", "title", "owner", "team", "home team", "status"]
NUMBER_HEADERS = ["year", "wins", "price", "rank", "age", "population", "score", "attendance", "capacity"]
DATE_HEADERS = ["opened", "date"]
WORDS = ["Paris", "Bangkok", "Oslo", "O'Hare", "Lima", "red", "blue", "Delta", "Echo", "north", "Kyoto"]

PAIRED_GRAMMAR = """
[lexicon]
MAX: maximum | the largest
MIN: minimum | the smallest
COUNT: number of
AVG: average
SUM: total
=: equal to
<: less than
<=: no more than | no above
>: more than
>=: at least
ASC: ascending
DESC: descending

[rule]
id: count_per_group
nl: For each COLUMN0 , return how many times TABLE0 with COLUMN1 OP0 VALUE0 ?
sql: SELECT COLUMN0 , COUNT ( * ) WHERE COLUMN1 OP0 VALUE0 GROUP BY COLUMN0

[rule]
id: compare_to_aggregate
nl: What are the COLUMN0 and COLUMN1 of the TABLE0 whose COLUMN2 is OP0 AGG0 COLUMN2 ?
sql: SELECT COLUMN0 , COLUMN1 WHERE COLUMN2 OP0 ( SELECT AGG0 ( COLUMN2 ) )
"""

HAVING_RULE = """
[rule]
id: group_having_count
nl: Show the COLUMN0 that have OP0 VALUE0 TABLE0 .
sql: SELECT COLUMN0 GROUP BY COLUMN0 HAVING COUNT ( * ) OP0 VALUE0
"""

JOIN_GRAMMAR = """
[lexicon]
COUNT: number of
=: equal to
>: more than

[rule]
id: join_select
nl: Show the TABLE0 COLUMN0 and TABLE1 COLUMN1 .
sql: SELECT TABLE0 . COLUMN0 , TABLE1 . COLUMN1 FROM TABLE0 JOIN TABLE1 ON TABLE0 . COLUMN2 = TABLE1 . COLUMN3
"""


def make_table(
    table_id: str,
    header: list[str],
    rows: list[list[str]],
    name: str | None = None,
    db_id: str | None = None,
    foreign_keys: list | None = None,
) -> TableSchema:
    return build_table(
        table_id=table_id,
        name=name or table_id,
        header=header,
        rows=rows,
        source="<test>",
        db_id=db_id,
        foreign_keys=foreign_keys,
    )


def performance_table() -> TableSchema:
    return make_table("performance", PERFORMANCE_HEADER, PERFORMANCE_ROWS)


def concert_database() -> tuple[TableSchema, TableSchema]:
    """Two tables of one database joined by stadium_id."""
    stadium = make_table(
        "concert_singer/stadium",
        ["stadium_id", "location", "capacity"],
        [["1", "Raith Rovers", "10104"], ["2", "Ayr United", "11998"], ["3", "Glasgow", "52500"]],
        name="stadium",
        db_id="concert_singer",
    )
    concert = make_table(
        "concert_singer/concert",
        ["concert_id", "concert_name", "stadium_id", "year"],
        [["1", "Auditions", "1", "2014"], ["2", "Super bootcamp", "2", "2014"], ["3", "Home Visits", "3", "2015"]],
        name="concert",
        db_id="concert_singer",
        foreign_keys=[["stadium_id", "stadium", "stadium_id"]],
    )
    return stadium, concert


def _cell(rng: np.random.Generator, kind: str) -> str:
    if kind == "number":
        if rng.random() < 0.3:
            return f"{rng.integers(0, 1000) / 10:.1f}"
        return str(int(rng.integers(0, 500)))
    if kind == "date":
        return f"{rng.integers(1990, 2024)}-{rng.integers(1, 13):02d}-{rng.integers(1, 29):02d}"
    words = rng.choice(WORDS, size=int(rng.integers(1, 3)))
    return " ".join(str(w) for w in words)


def build_corpus_records(n_tables: int, seed: int = 0) -> list[dict]:
    """
    Deterministic JSONL table records. Each table draws 2-3 NUMBER columns,
    1-2 TEXT columns and sometimes a DATE column, with 4-10 rows.
    """
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_tables):
        n_number = int(rng.integers(2, 4))
        n_text = int(rng.integers(1, 3))
        kinds = ["number"] * n_number + ["text"] * n_text
        headers = list(rng.choice(NUMBER_HEADERS, size=n_number, replace=False))
        headers += list(rng.choice(TEXT_HEADERS, size=n_text, replace=False))
        if rng.random() < 0.3:
            kinds.append("date")
            headers.append(str(rng.choice(DATE_HEADERS)))
        order = rng.permutation(len(kinds))
        kinds = [kinds[j] for j in order]
        headers = [str(headers[j]) for j in order]
        rows = [[_cell(rng, k) for k in kinds] for _ in range(int(rng.integers(4, 11)))]
        records.append({
            "id": f"t{i:05d}",
            "name": str(rng.choice(TABLE_NAMES)),
            "header": headers,
            "rows": rows,
        })
    return records


def build_tables(n_tables: int, seed: int = 0) -> list[TableSchema]:
    return [
        make_table(r["id"], r["header"], r["rows"], name=r["name"])
        for r in build_corpus_records(n_tables, seed)
    ]


# ─── Disk builders ────────────────────────────────────────────────────────────

def write_jsonl(path: Path, records: list) -> Path:
    """Write one JSON value per line; strings are written verbatim."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write((record if isinstance(record, str) else json.dumps(record)) + "\n")
    return path


def write_csv_dir(root: Path, tables: dict[str, list[list[str]]]) -> Path:
    """Write {relative name: rows (header first)} as CSV files under root."""
    import csv

    for name, rows in tables.items():
        path = root / f"{name}.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            csv.writer(f).writerows(rows)
    return root


def seed_pair_records() -> list[dict]:
    """Ten pairs over the performance table: six share one template, four another."""
    per_group = [
        ("For each location, how many hosts won at least 2?", "SELECT locations , COUNT ( * ) WHERE wins >= 2 GROUP BY locations"),
        ("Count performances per location with fewer than 3 wins.", "SELECT locations , COUNT ( * ) WHERE wins < 3 GROUP BY locations"),
        ("Per host, how many shows drew over 900?", "SELECT host , COUNT ( * ) WHERE attendance > 900 GROUP BY host"),
        ("How many wins of 4 per location?", "SELECT locations , COUNT ( * ) WHERE wins = 4 GROUP BY locations"),
        ("Per location, shows hosted by Ann Lee?", "SELECT locations , COUNT ( * ) WHERE host = 'Ann Lee' GROUP BY locations"),
        ("Per host, shows with at most 1 win?", "SELECT host , COUNT ( * ) WHERE wins <= 1 GROUP BY host"),
    ]
    select_where = [
        ("Which locations hosted Bo Chan?", "SELECT locations WHERE host = 'Bo Chan'"),
        ("Hosts with more than 1000 attendance?", "SELECT host WHERE attendance > 1000"),
        ("Locations with 2 wins?", "SELECT locations WHERE wins = 2"),
        ("Who hosted at Olympia?", "SELECT host WHERE locations = 'Olympia'"),
    ]
    return [
        {"question": q, "sql": s, "table_id": "performance"}
        for q, s in per_group + select_where
    ]


def performance_record() -> dict:
    return {"id": "performance", "name": "performance", "header": PERFORMANCE_HEADER, "rows": PERFORMANCE_ROWS}


# ─── Pytest fixtures ──────────────────────────────────────────────────────────

@pytest.fixture
def performance() -> TableSchema:
    return performance_table()


@pytest.fixture
def concert_db() -> tuple[TableSchema, TableSchema]:
    return concert_database()


@pytest.fixture(scope="session")
def starter_grammar() -> Grammar:
    return load_starter_grammar()


@pytest.fixture
def paired_grammar() -> Grammar:
    return loads_grammar(PAIRED_GRAMMAR)


@pytest.fixture
def having_grammar() -> Grammar:
    return loads_grammar(PAIRED_GRAMMAR + HAVING_RULE)


@pytest.fixture
def join_grammar() -> Grammar:
    return loads_grammar(JOIN_GRAMMAR)


@pytest.fixture
def corpus_tables() -> list[TableSchema]:
    """100 random tables, all eligible for every starter rule."""
    return build_tables(100, seed=3)


@pytest.fixture
def corpus_file(tmp_path: Path) -> Path:
    """JSONL corpus: the performance table plus 20 random tables."""
    return write_jsonl(tmp_path / "tables.jsonl", [performance_record()] + build_corpus_records(20, seed=5))


@pytest.fixture
def seed_pairs_file(tmp_path: Path) -> Path:
    return write_jsonl(tmp_path / "pairs.jsonl", seed_pair_records())


@pytest.fixture
def utterances_file(tmp_path: Path) -> Path:
    records = [
        {"text": "which stadium hosted the most concerts", "table_id": "performance", "source": "spider"},
        {"text": "how many wins did Wembley have", "table_id": "performance", "source": "wikisql"},
    ]
    return write_jsonl(tmp_path / "utterances.jsonl", records)
