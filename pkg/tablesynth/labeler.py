"""
labeler.py

SQL semantic prediction targets: for every column of the schema, the
operation class describing the clause roles the column plays in the query.

A label is "NONE" or clause-role atoms joined by " AND ", ordered by clause
(SELECT, FROM, WHERE, GROUP BY, HAVING, ORDER BY, LIMIT). GROUP BY fuses with
HAVING into one atom when the select has a HAVING clause, and ORDER BY fuses
with LIMIT the same way. Atoms inside the right arm of a set operation are
prefixed with its kind, atoms inside a subquery with "SUB":

    SELECT locations , COUNT ( * ) GROUP BY locations HAVING COUNT ( * ) >= 2
    locations -> "SELECT AND GROUP BY HAVING"
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Sequence

from tablesynth.corpus import TableSchema, normalize_header
from tablesynth.errors import LabelError, VocabError
from tablesynth.sql import (
    AggExpr,
    ColumnRef,
    ParseMode,
    Predicate,
    Query,
    Select,
    SetOp,
    SlotName,
    Subquery,
    parse_sql,
)

if TYPE_CHECKING:
    from tablesynth.grammar import Grammar
    from tablesynth.synthesizer import Binding, SynthExample

logger = logging.getLogger(__name__)

NONE_LABEL = "NONE"
SUBQUERY_CONTEXT = "SUB"

_ATOM_RANK = {
    "SELECT": 0,
    "FROM": 1,
    "WHERE": 2,
    "GROUP BY": 3,
    "GROUP BY HAVING": 3,
    "HAVING": 4,
    "ORDER BY": 5,
    "ORDER BY LIMIT": 5,
    "LIMIT": 6,
}
_CONTEXT_RANK = {SUBQUERY_CONTEXT: 0, "INTERSECT": 1, "UNION": 2, "EXCEPT": 3}


@dataclass(frozen=True)
class Atom:
    clause: str
    prefix: tuple[str, ...] = ()

    def sort_key(self) -> tuple:
        return (_ATOM_RANK[self.clause], tuple(_CONTEXT_RANK[c] for c in self.prefix), str(self))

    def __str__(self) -> str:
        return " ".join(self.prefix + (self.clause,))


def _operand_columns(operand: ColumnRef | AggExpr) -> list[ColumnRef]:
    if isinstance(operand, AggExpr):
        return [operand.arg] if operand.arg is not None else []
    return [operand]


def _predicate_roles(predicate: Predicate, clause: str, prefix: tuple) -> Iterator:
    for condition in predicate.conditions:
        for column in _operand_columns(condition.left):
            yield column, Atom(clause, prefix)
        for value in condition.values:
            if isinstance(value, Subquery):
                yield from clause_roles(value.query, prefix + (SUBQUERY_CONTEXT,))


def clause_roles(query: Query, prefix: tuple[str, ...] = ()) -> Iterator[tuple[ColumnRef, Atom]]:
    """Every (column reference, atom) pair the query assigns."""
    if isinstance(query, SetOp):
        yield from clause_roles(query.left, prefix)
        yield from clause_roles(query.right, prefix + (str(query.kind),))
        return

    select: Select = query
    for projection in select.projections:
        for column in _operand_columns(projection):
            yield column, Atom("SELECT", prefix)
    if select.join is not None:
        yield select.join.left, Atom("FROM", prefix)
        yield select.join.right, Atom("FROM", prefix)
    if select.where is not None:
        yield from _predicate_roles(select.where, "WHERE", prefix)
    if select.group_by is not None:
        clause = "GROUP BY HAVING" if select.having is not None else "GROUP BY"
        for column in select.group_by.columns:
            yield column, Atom(clause, prefix)
    if select.having is not None:
        yield from _predicate_roles(select.having.predicate, "HAVING", prefix)
    if select.order_by is not None:
        clause = "ORDER BY LIMIT" if select.limit is not None else "ORDER BY"
        for key in select.order_by.keys:
            for column in _operand_columns(key):
                yield column, Atom(clause, prefix)


def format_label(atoms: set[Atom]) -> str:
    if not atoms:
        return NONE_LABEL
    return " AND ".join(str(a) for a in sorted(atoms, key=Atom.sort_key))


# ─── Column resolution ────────────────────────────────────────────────────────

def as_tables(schema: TableSchema | Sequence[TableSchema]) -> tuple[TableSchema, ...]:
    if isinstance(schema, TableSchema):
        return (schema,)
    return tuple(schema)


def column_offsets(tables: Sequence[TableSchema]) -> dict[str, int]:
    """Flat index of each table's first column, keyed by table_id."""
    offsets, total = {}, 0
    for table in tables:
        offsets[table.table_id] = total
        total += len(table.columns)
    return offsets


def _find(candidates: list, name: str, key) -> list:
    exact = [c for c in candidates if key(c) == name]
    if exact:
        return exact
    wanted = normalize_header(name)
    return [c for c in candidates if normalize_header(key(c)) == wanted]


def resolve_column(column: ColumnRef, tables: Sequence[TableSchema]) -> int:
    """Flat column index of a concrete column reference. Raises LabelError."""
    if isinstance(column.name, SlotName) or isinstance(column.table, SlotName):
        raise LabelError(f"slot in a concrete query: {column}")
    offsets = column_offsets(tables)
    scope = list(tables)
    if column.table is not None:
        scope = _find(scope, column.table, lambda t: t.name)
        if len(scope) != 1:
            raise LabelError(f"cannot resolve table {column.table!r}")
    matches = [
        (table, meta)
        for table in scope
        for meta in _find(list(table.columns), column.name, lambda c: c.name)
    ]
    if len(matches) != 1:
        reason = "ambiguous" if matches else "unknown"
        raise LabelError(f"{reason} column {column.name!r}")
    table, meta = matches[0]
    return offsets[table.table_id] + meta.index


# ─── Labeling ─────────────────────────────────────────────────────────────────

def _labels(roles, index_of, n_columns: int) -> dict[int, str]:
    atoms: dict[int, set[Atom]] = {i: set() for i in range(n_columns)}
    for column, atom in roles:
        atoms[index_of(column)].add(atom)
    return {i: format_label(a) for i, a in atoms.items()}


def label_columns(sql: Query, schema: TableSchema | Sequence[TableSchema]) -> dict[int, str]:
    """Label every column of `schema` (flattened across tables) for `sql`."""
    tables = as_tables(schema)
    n_columns = sum(len(t.columns) for t in tables)
    return _labels(clause_roles(sql), lambda c: resolve_column(c, tables), n_columns)


def label_template(
    template: Query,
    binding: "Binding",
    schema: TableSchema | Sequence[TableSchema],
) -> dict[int, str]:
    """Labels implied by a rule template plus the binding that filled it."""
    tables = as_tables(schema)
    offsets = column_offsets(tables)
    n_columns = sum(len(t.columns) for t in tables)

    def index_of(column: ColumnRef) -> int:
        if isinstance(column.name, SlotName):
            if column.name not in binding.columns:
                raise LabelError(f"unbound column slot {column.name}")
            table, meta = binding.columns[column.name]
            return offsets[table.table_id] + meta.index
        return resolve_column(column, tables)

    return _labels(clause_roles(template), index_of, n_columns)


def label_diff(example: "SynthExample") -> dict[int, dict]:
    """Columns whose recorded, SQL-derived and template-derived labels disagree."""
    from_sql = label_columns(parse_sql(example.sql), example.tables)
    if example.binding is None:
        from_template = from_sql
    else:
        from_template = label_template(
            parse_sql(example.template, ParseMode.TEMPLATE), example.binding, example.tables
        )
    names = [c.name for t in example.tables for c in t.columns]
    diff = {}
    for index, name in enumerate(names):
        recorded = example.labels.get(index)
        if not (recorded == from_sql[index] == from_template[index]):
            diff[index] = {
                "column": name,
                "recorded": recorded,
                "sql": from_sql[index],
                "template": from_template[index],
            }
    return diff


def verify_against_binding(example: "SynthExample") -> bool:
    """True iff the labels recomputed from the SQL match the synthesis-time labels."""
    diff = label_diff(example)
    if diff:
        logger.warning("label mismatch in %s: %s", example.example_id, diff)
    return not diff


# ─── Vocabulary ───────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class LabelVocabulary:
    labels: tuple[str, ...]
    provenance: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.labels or self.labels[0] != NONE_LABEL:
            raise VocabError("vocabulary must start with NONE")
        if len(set(self.labels)) != len(self.labels):
            raise VocabError("vocabulary labels must be distinct")

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise VocabError(f"label {label!r} not in vocabulary") from None

    @cached_property
    def _index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index


def vocabulary_from_labels(labels, provenance: str = "") -> LabelVocabulary:
    distinct = sorted(set(labels) - {NONE_LABEL})
    return LabelVocabulary((NONE_LABEL, *distinct), provenance)


def build_vocabulary(examples: list["SynthExample"]) -> LabelVocabulary:
    """
    Sorted distinct labels of `examples`, NONE first. The provenance digest
    covers each example's id, SQL, table and labels; order of examples is
    irrelevant.
    """
    digest = hashlib.sha256()
    records = sorted(
        json.dumps(
            [e.example_id, e.sql, e.table_id, {str(i): label for i, label in e.labels.items()}],
            sort_keys=True,
            ensure_ascii=False,
        )
        for e in examples
    )
    for record in records:
        digest.update(record.encode("utf-8") + b"\n")
    labels = (label for e in examples for label in e.labels.values())
    return vocabulary_from_labels(labels, provenance=digest.hexdigest())


def template_label_space(grammar: "Grammar") -> LabelVocabulary:
    """Every label a grammar can assign: each rule template labeled per column slot."""
    labels = set()
    for rule in grammar.rules:
        atoms: dict[SlotName, set[Atom]] = {}
        for column, atom in clause_roles(rule.sql):
            if isinstance(column.name, SlotName):
                atoms.setdefault(column.name, set()).add(atom)
        labels.update(format_label(a) for a in atoms.values())
    return vocabulary_from_labels(labels, provenance="grammar")


def write_vocabulary(vocab: LabelVocabulary, output_path: Path) -> None:
    """One label per line; the line number is the class index."""
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8") as f:
        for label in vocab.labels:
            f.write(label + "\n")


def read_vocabulary(path: Path) -> LabelVocabulary:
    with open(path, "r", encoding="utf-8") as f:
        labels = tuple(line.rstrip("\n") for line in f if line.strip())
    return LabelVocabulary(labels, provenance=str(path))
