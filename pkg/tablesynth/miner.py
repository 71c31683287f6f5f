"""
miner.py

Abstract concrete (question, SQL) seed pairs into SQL templates, group the
pairs by template and rank templates by frequency. The ranked groups are
written out as grammar stubs: the SQL side filled in, the question side left
blank for a human author, with a few exemplar questions as comments.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, fields, is_dataclass, replace
from pathlib import Path

from tablesynth.corpus import SkipReport, TableSchema, group_databases, normalize_header, normalize_whitespace
from tablesynth.errors import AbstractionError, LabelError, ParseError
from tablesynth.grammar import TerminalLexicon, dump_lexicon, load_starter_grammar
from tablesynth.labeler import as_tables, resolve_column
from tablesynth.sql import (
    BINARY_OPS,
    AggExpr,
    ColumnRef,
    Condition,
    Literal,
    OrderBy,
    Query,
    SlotKind,
    SlotName,
    TableRef,
    parse_sql,
    render_sql,
)

logger = logging.getLogger(__name__)

EXEMPLAR_CAP = 4


@dataclass(frozen=True)
class SeedPair:
    question: str
    sql: str
    schema: TableSchema | tuple[TableSchema, ...]
    table_id: str


@dataclass(frozen=True)
class TemplateGroup:
    template: Query
    count: int
    exemplars: tuple[SeedPair, ...] = ()

    @property
    def key(self) -> str:
        return render_sql(self.template)


# ─── Abstraction ──────────────────────────────────────────────────────────────

class _Abstractor:
    """One pass over a concrete query, handing out slot ordinals by first occurrence."""

    def __init__(self, tables: tuple[TableSchema, ...]):
        self.tables = tables
        self.ordinals: Counter = Counter()
        self.seen: dict[tuple, SlotName] = {}
        self.binding: dict[SlotName, object] = {}

    def slot(self, kind: SlotKind, key, terminal) -> SlotName:
        if key is not None and key in self.seen:
            return self.seen[key]
        slot = SlotName(kind, self.ordinals[kind])
        self.ordinals[kind] += 1
        self.binding[slot] = terminal
        if key is not None:
            self.seen[key] = slot
        return slot

    def table_slot(self, name: str) -> SlotName:
        matches = [t for t in self.tables if t.name == name]
        if not matches:
            matches = [t for t in self.tables if normalize_header(t.name) == normalize_header(name)]
        if len(matches) != 1:
            raise AbstractionError(f"cannot resolve table {name!r}")
        return self.slot(SlotKind.TABLE, ("table", matches[0].table_id), name)

    def visit(self, node):
        match node:
            case ColumnRef():
                try:
                    index = resolve_column(node, self.tables)
                except LabelError as e:
                    raise AbstractionError(str(e)) from None
                table = self.table_slot(node.table) if node.table is not None else None
                return ColumnRef(self.slot(SlotKind.COLUMN, ("column", index), node.name), table)
            case TableRef():
                return TableRef(self.table_slot(node.name))
            case Literal():
                return self.slot(SlotKind.VALUE, None, node)
            case AggExpr(arg=None):
                return node
            case AggExpr():
                fn = self.slot(SlotKind.AGG, ("agg", node.fn), node.fn)
                return AggExpr(fn, self.visit(node.arg), node.distinct)
            case Condition():
                left = self.visit(node.left)
                op = node.op
                if op in BINARY_OPS:
                    op = self.slot(SlotKind.OP, ("op", op), op)
                return Condition(left, op, tuple(self.visit(v) for v in node.values))
            case OrderBy():
                keys = tuple(self.visit(k) for k in node.keys)
                direction = node.direction
                if direction is not None:
                    direction = self.slot(SlotKind.SC, ("sc", direction), direction)
                return OrderBy(keys, direction)
        if not is_dataclass(node):
            return node
        changes = {}
        for f in fields(node):
            value = getattr(node, f.name)
            if isinstance(value, tuple):
                changes[f.name] = tuple(self.visit(v) for v in value)
            elif is_dataclass(value):
                changes[f.name] = self.visit(value)
        return replace(node, **changes)


def abstract_sql(
    sql: Query,
    schema: TableSchema | tuple[TableSchema, ...],
) -> tuple[Query, dict[SlotName, object]]:
    """
    Replace table names, column names, literals, column aggregates, binary
    comparison ops and sort directions with slots. Ordinals follow first
    occurrence per kind; a repeated identifier or terminal reuses its slot,
    every literal gets its own. COUNT(*), BETWEEN/IN and LIMIT counts stay
    concrete.

    Returns (template, binding) with substitute_slots(template, binding)
    rendering identically to `sql`. Raises AbstractionError for identifiers
    the schema cannot resolve.
    """
    abstractor = _Abstractor(as_tables(schema))
    template = abstractor.visit(sql)
    return template, abstractor.binding


# ─── Mining ───────────────────────────────────────────────────────────────────

def mine_templates(
    pairs: list[SeedPair],
    top_k: int,
    exemplar_cap: int = EXEMPLAR_CAP,
    skips: SkipReport | None = None,
) -> list[TemplateGroup]:
    """
    Group `pairs` by abstracted template and return the `top_k` most
    frequent groups, ties broken by template text. Pairs outside the
    dialect or unresolvable against their schema go to `skips`.
    """
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    report = skips if skips is not None else SkipReport()

    templates: dict[str, Query] = {}
    counts: Counter = Counter()
    exemplars: dict[str, list[SeedPair]] = {}
    for position, pair in enumerate(pairs, start=1):
        try:
            template, _ = abstract_sql(parse_sql(pair.sql), pair.schema)
        except (ParseError, AbstractionError) as e:
            report.add("<seed pairs>", position, str(e))
            continue
        key = render_sql(template)
        templates.setdefault(key, template)
        counts[key] += 1
        bucket = exemplars.setdefault(key, [])
        if len(bucket) < exemplar_cap:
            bucket.append(pair)

    ranked = sorted(counts, key=lambda k: (-counts[k], k))[:top_k]
    logger.info("mined %d distinct template(s), keeping %d", len(counts), len(ranked))
    return [TemplateGroup(templates[k], counts[k], tuple(exemplars[k])) for k in ranked]


def emit_rule_stubs(
    groups: list[TemplateGroup],
    output_path: Path,
    lexicon: TerminalLexicon | None = None,
) -> None:
    """
    Write a grammar skeleton: the lexicon, then one [rule] block per group
    with sql filled, exemplar questions as comments and a blank nl line.
    """
    if not groups:
        raise ValueError("no template groups to emit")
    if lexicon is None:
        lexicon = load_starter_grammar().lexicon

    parts = [
        "# Mined rule stubs. Write an nl: template for every rule before loading.\n",
        dump_lexicon(lexicon),
    ]
    width = len(str(len(groups)))
    for rank, group in enumerate(groups, start=1):
        lines = ["[rule]", f"id: mined_{rank:0{width}d}", f"weight: {group.count}"]
        lines += [f"# {normalize_whitespace(p.question)}" for p in group.exemplars]
        lines += ["nl:", f"sql: {group.key}"]
        parts.append("\n".join(lines) + "\n")

    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts))


def frequency_table(groups: list[TemplateGroup]) -> list[dict]:
    return [{"template": g.key, "count": g.count} for g in groups]


def read_seed_pairs(
    path: Path,
    tables: dict[str, TableSchema],
    skips: SkipReport | None = None,
) -> list[SeedPair]:
    """
    Read {"question", "sql", "table_id"} lines. A table_id may also name a
    database (db_id), in which case the pair is resolved against all its
    tables.
    """
    report = skips if skips is not None else SkipReport()
    databases = group_databases(list(tables.values()))
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                report.add(path, line_no, f"invalid JSON: {e.msg}")
                continue
            if not isinstance(record, dict) or not str(record.get("sql") or "").strip():
                report.add(path, line_no, "missing sql")
                continue
            table_id = str(record.get("table_id"))
            schema = tables.get(table_id) or databases.get(table_id)
            if schema is None:
                report.add(path, line_no, f"unknown table_id {table_id!r}")
                continue
            pairs.append(
                SeedPair(
                    question=str(record.get("question", "")),
                    sql=str(record["sql"]),
                    schema=schema,
                    table_id=table_id,
                )
            )
    return pairs
