"""
generate_test_fixtures.py

Generates a small corpus for trying tablesynth end to end: a JSONL table
corpus (single tables plus one two-table database), a CSV directory, seed
question/SQL pairs, utterances for MLM records and a config file.

Usage:
    python generate_test_fixtures.py
    python generate_test_fixtures.py --output /path/to/fixtures --tables 200
"""

import argparse
import csv
import json
from pathlib import Path

import numpy as np

# ─── Table content ────────────────────────────────────────────────────────────

PERFORMANCE = {
    "id": "performance",
    "name": "performance",
    "header": ["locations", "host", "wins", "attendance"],
    "rows": [
        ["Madison Square Garden", "Ann Lee", "3", "1200"],
        ["Wembley", "Bo Chan", "1", "800"],
        ["Madison Square Garden", "Cy O'Neil", "2", "1500"],
        ["Olympia", "Ann Lee", "2", "650"],
        ["Wembley", "Dee Park", "4", "900"],
    ],
}

CONCERT_SINGER = [
    {
        "id": "concert_singer/stadium",
        "name": "stadium",
        "db_id": "concert_singer",
        "header": ["stadium_id", "location", "capacity"],
        "rows": [["1", "Raith Rovers", "10104"], ["2", "Ayr United", "11998"], ["3", "Glasgow", "52500"]],
    },
    {
        "id": "concert_singer/concert",
        "name": "concert",
        "db_id": "concert_singer",
        "header": ["concert_id", "concert_name", "stadium_id", "year"],
        "rows": [["1", "Auditions", "1", "2014"], ["2", "Super bootcamp", "2", "2014"], ["3", "Home Visits", "3", "2015"]],
        "foreign_keys": [["stadium_id", "stadium", "stadium_id"]],
    },
]

TABLE_NAMES = ["team", "city", "album", "flight", "school", "station", "player", "film"]
TEXT_HEADERS = ["name", "country", "city", "genre", "title", "owner", "home team", "status"]
NUMBER_HEADERS = ["year", "wins", "price", "rank", "age", "population", "score", "capacity"]
WORDS = ["Paris", "Bangkok", "Oslo", "O'Hare", "Lima", "red", "blue", "Delta", "Echo", "Kyoto"]


def random_table(rng: np.random.Generator, index: int) -> dict:
    """2-3 NUMBER columns and 1-2 TEXT columns, 4-10 rows."""
    n_number = int(rng.integers(2, 4))
    n_text = int(rng.integers(1, 3))
    headers = list(rng.choice(NUMBER_HEADERS, size=n_number, replace=False))
    headers += list(rng.choice(TEXT_HEADERS, size=n_text, replace=False))
    rows = []
    for _ in range(int(rng.integers(4, 11))):
        numbers = [str(int(rng.integers(0, 500))) for _ in range(n_number)]
        texts = [" ".join(str(w) for w in rng.choice(WORDS, size=int(rng.integers(1, 3)))) for _ in range(n_text)]
        rows.append(numbers + texts)
    return {
        "id": f"t{index:05d}",
        "name": str(rng.choice(TABLE_NAMES)),
        "header": [str(h) for h in headers],
        "rows": rows,
    }


SEED_PAIRS = [
    ("For each location, how many hosts won at least 2?", "SELECT locations , COUNT ( * ) WHERE wins >= 2 GROUP BY locations"),
    ("Count performances per location with fewer than 3 wins.", "SELECT locations , COUNT ( * ) WHERE wins < 3 GROUP BY locations"),
    ("Per host, how many shows drew over 900?", "SELECT host , COUNT ( * ) WHERE attendance > 900 GROUP BY host"),
    ("Which locations hosted Bo Chan?", "SELECT locations WHERE host = 'Bo Chan'"),
    ("Hosts with more than 1000 attendance?", "SELECT host WHERE attendance > 1000"),
    ("Show the locations that have at least 2 performances.", "SELECT locations GROUP BY locations HAVING COUNT ( * ) >= 2"),
    ("Which host drew the biggest crowd?", "SELECT host ORDER BY attendance DESC LIMIT 1"),
    ("What is the total attendance?", "SELECT SUM ( attendance )"),
    ("Drop everything.", "DROP TABLE performance"),
]

UTTERANCES = [
    ("which stadium hosted the most concerts", "performance", "spider"),
    ("how many wins did Wembley have", "performance", "wikisql"),
    ("list every concert held in 2014", "concert_singer/concert", "spider"),
    ("what is the capacity of Glasgow", "concert_singer/stadium", "wikisql"),
]

CONFIG = """\
# Settings shared by every command
seed = 7
workers = 2

[synthesize]
n-examples = 500

[serialize]
mask-probability = 0.15
"""


# ─── Writers ──────────────────────────────────────────────────────────────────

def write_jsonl(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_csv(path: Path, header: list[str], rows: list[list[str]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


# ─── Fixture tree ─────────────────────────────────────────────────────────────

def generate_fixtures(output_root: Path, n_tables: int, seed: int) -> None:
    """
    Generate:

    fixtures/
    ├── tables.jsonl          performance + N random tables + concert_singer
    ├── csv/
    │   ├── sales/2023.csv
    │   ├── sales/2024.csv    same header as 2023, dropped by dedup
    │   └── broken.csv        duplicate header, skipped
    ├── pairs.jsonl           9 seed pairs, one unparseable
    ├── utterances.jsonl      4 MLM utterances
    └── tablesynth.cfg
    """
    print(f"\n  Generating fixtures in: {output_root}\n")
    rng = np.random.default_rng(seed)

    tables = [PERFORMANCE] + [random_table(rng, i) for i in range(n_tables)] + CONCERT_SINGER
    write_jsonl(output_root / "tables.jsonl", tables)
    print(f"  [tables    ]  tables.jsonl ({len(tables)} tables, 1 database)")

    sales_header = ["region", "units", "revenue"]
    for year in ("2023", "2024"):
        rows = [[str(rng.choice(WORDS)), str(int(rng.integers(1, 90))), str(int(rng.integers(100, 9000)))] for _ in range(6)]
        write_csv(output_root / "csv" / "sales" / f"{year}.csv", sales_header, rows)
        print(f"  [csv       ]  csv/sales/{year}.csv")
    write_csv(output_root / "csv" / "broken.csv", ["name", "name"], [["a", "b"]])
    print("  [csv       ]  csv/broken.csv (skipped on load)")

    write_jsonl(output_root / "pairs.jsonl", [
        {"question": q, "sql": s, "table_id": "performance"} for q, s in SEED_PAIRS
    ])
    print(f"  [pairs     ]  pairs.jsonl ({len(SEED_PAIRS)} pairs)")

    write_jsonl(output_root / "utterances.jsonl", [
        {"text": text, "table_id": table_id, "source": source} for text, table_id, source in UTTERANCES
    ])
    print(f"  [utterances]  utterances.jsonl ({len(UTTERANCES)} records)")

    (output_root / "tablesynth.cfg").write_text(CONFIG, encoding="utf-8")
    print("  [config    ]  tablesynth.cfg")

    print("\n  Fixtures ready. Run:")
    print(f"\n    tablesynth mine -c {output_root}/tables.jsonl -p {output_root}/pairs.jsonl -k 5")
    print(f"    tablesynth --config {output_root}/tablesynth.cfg synthesize -c {output_root}/tables.jsonl")
    print(f"    tablesynth serialize -c {output_root}/tables.jsonl -e tablesynth-out/examples.jsonl "
          f"-u {output_root}/utterances.jsonl")
    print("    tablesynth stats tablesynth-out/dataset.jsonl --vocabulary tablesynth-out/labels.vocab\n")


# ─── Entry point ──────────────────────────────────────────────────────────────

if __name__ == "__main__":
    parser = argparse.ArgumentParser(
        description="Generate a synthetic corpus for trying tablesynth."
    )
    parser.add_argument(
        "--output",
        type=str,
        default="fixtures",
        help="Root directory to write fixtures into. Default: ./fixtures",
    )
    parser.add_argument("--tables", type=int, default=50, help="Random tables to generate. Default: 50")
    parser.add_argument("--seed", type=int, default=0, help="Seed for the random tables. Default: 0")
    args = parser.parse_args()
    generate_fixtures(Path(args.output), args.tables, args.seed)
