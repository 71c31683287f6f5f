"""
grammar.py

The synchronous grammar: production rules pairing a natural-language
template (alpha) with a SQL template (beta), and the terminal lexicon that
maps AGG/OP/SC terminals to natural-language phrases.

Grammar files are plain text:

    # comment
    [lexicon]
    MAX: maximum | the largest
    <=: no more than | no above

    [rule]
    id: count_per_group
    weight: 1
    nl: For each COLUMN0 , return how many times TABLE0 with COLUMN1 OP0 VALUE0 ?
    sql: SELECT COLUMN0 , COUNT ( * ) WHERE COLUMN1 OP0 VALUE0 GROUP BY COLUMN0

A rule may carry several `nl:` lines; each is an alternative question
template for the same SQL. Single-table templates that omit FROM bind TABLE0
implicitly, so alpha may mention TABLE0 once even though beta does not.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib.resources import files
from pathlib import Path

import numpy as np

from tablesynth.errors import GrammarError, LexiconError, ParseError
from tablesynth.sql import (
    ARITHMETIC_OPS,
    BINARY_OPS,
    OP_ALIASES,
    AggExpr,
    AggFn,
    ColumnRef,
    CompOp,
    Condition,
    Direction,
    Join,
    ParseMode,
    Query,
    SlotKind,
    SlotName,
    TableRef,
    iter_nodes,
    iter_slots,
    parse_sql,
    render_sql,
)

logger = logging.getLogger(__name__)

Terminal = AggFn | CompOp | Direction

NUMERIC_AGGS = frozenset({AggFn.MAX, AggFn.MIN, AggFn.AVG, AggFn.SUM})
IMPLICIT_TABLE = SlotName(SlotKind.TABLE, 0)
STARTER_GRAMMAR = "starter.grammar"


def parse_terminal(text: str | Terminal) -> Terminal:
    """Map a lexicon key ("MAX", "<=", "≤", "desc") to its terminal."""
    if isinstance(text, (AggFn, CompOp, Direction)):
        return text
    key = " ".join(str(text).split()).upper()
    if key in AggFn.__members__:
        return AggFn(key)
    if key in Direction.__members__:
        return Direction(key)
    if key in OP_ALIASES:
        return OP_ALIASES[key]
    raise LexiconError(f"unknown terminal {text!r}")


# ─── Types ────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class NlTemplate:
    tokens: tuple[str | SlotName, ...]

    def slots(self) -> list[SlotName]:
        return [t for t in self.tokens if isinstance(t, SlotName)]

    def __str__(self) -> str:
        return " ".join(str(t) for t in self.tokens)


def parse_nl_template(text: str) -> NlTemplate:
    tokens = []
    for word in text.split():
        slot = SlotName.parse(word)
        tokens.append(slot if slot is not None else word)
    return NlTemplate(tuple(tokens))


@dataclass(frozen=True)
class TerminalLexicon:
    entries: dict = field(default_factory=dict)  # Terminal -> tuple[str, ...]

    def terminals(self, kind: SlotKind) -> list[Terminal]:
        """Lexicon-backed terminals of one slot kind, in enum order."""
        pool = {SlotKind.AGG: list(AggFn), SlotKind.OP: list(BINARY_OPS), SlotKind.SC: list(Direction)}
        return [t for t in pool[kind] if self.entries.get(t)]


@dataclass(frozen=True)
class ProductionRule:
    rule_id: str
    nl_variants: tuple[NlTemplate, ...]
    sql: Query
    weight: float = 1.0
    # Derived by derive_constraints; never set by hand.
    min_columns: int = 0
    requires_numeric: frozenset = frozenset()
    requires_text: frozenset = frozenset()
    column_tables: tuple[tuple[SlotName, SlotName], ...] = ()
    table_slots: tuple[SlotName, ...] = ()

    @property
    def nl(self) -> NlTemplate:
        return self.nl_variants[0]

    @property
    def is_multi_table(self) -> bool:
        return len(self.table_slots) > 1


@dataclass(frozen=True)
class Grammar:
    rules: tuple[ProductionRule, ...]
    lexicon: TerminalLexicon

    def rule(self, rule_id: str) -> ProductionRule:
        for rule in self.rules:
            if rule.rule_id == rule_id:
                return rule
        raise KeyError(rule_id)


# ─── Constraints ──────────────────────────────────────────────────────────────

def has_from(query: Query) -> bool:
    return any(isinstance(n, TableRef) for n in iter_nodes(query))


def derive_constraints(rule: ProductionRule) -> ProductionRule:
    """
    Recompute min_columns (distinct COLUMN slots), requires_numeric (COLUMN
    slots under AVG/SUM/MAX/MIN or an AGG slot, or compared with an
    arithmetic op), requires_text (COLUMN slots compared with a literal
    LIKE), the COLUMN -> TABLE qualification map, and the TABLE slots of
    the SQL template.
    """
    column_slots = set()
    numeric = set()
    text = set()
    qualified = {}
    for node in iter_nodes(rule.sql):
        if isinstance(node, ColumnRef) and isinstance(node.name, SlotName):
            column_slots.add(node.name)
            if isinstance(node.table, SlotName):
                qualified.setdefault(node.name, node.table)
        elif isinstance(node, AggExpr) and node.arg is not None:
            if isinstance(node.arg.name, SlotName) and (
                isinstance(node.fn, SlotName) or node.fn in NUMERIC_AGGS
            ):
                numeric.add(node.arg.name)
        elif isinstance(node, Condition) and isinstance(node.left, ColumnRef):
            if isinstance(node.left.name, SlotName):
                if node.op in ARITHMETIC_OPS:
                    numeric.add(node.left.name)
                elif node.op == CompOp.LIKE:
                    text.add(node.left.name)

    table_slots = tuple(dict.fromkeys(s for s in iter_slots(rule.sql) if s.kind == SlotKind.TABLE))
    return replace(
        rule,
        min_columns=len(column_slots),
        requires_numeric=frozenset(numeric),
        requires_text=frozenset(text),
        column_tables=tuple(sorted(qualified.items())),
        table_slots=table_slots,
    )


def validate_rule(rule: ProductionRule) -> None:
    """Raise GrammarError for the first invariant the rule violates."""
    if not rule.rule_id:
        raise GrammarError(None, "rule without an id")
    if rule.weight <= 0:
        raise GrammarError(rule.rule_id, f"weight must be positive, got {rule.weight}")
    if not rule.nl_variants:
        raise GrammarError(rule.rule_id, "no natural-language template")

    sql_slots = Counter(iter_slots(rule.sql))
    if not has_from(rule.sql):
        sql_slots[IMPLICIT_TABLE] += 1
    for nl in rule.nl_variants:
        if not nl.tokens:
            raise GrammarError(rule.rule_id, "empty natural-language template")
        extra = Counter(nl.slots()) - sql_slots
        if extra:
            names = ", ".join(str(s) for s in sorted(extra))
            raise GrammarError(rule.rule_id, f"slot not in SQL template: {names}")

    in_condition = set()
    for node in iter_nodes(rule.sql):
        if isinstance(node, Condition):
            in_condition.update(v for v in node.values if isinstance(v, SlotName))
    for slot in sql_slots:
        if slot.kind == SlotKind.VALUE and slot not in in_condition:
            raise GrammarError(rule.rule_id, f"{slot} is not compared with any column")
    conflicting = sorted(rule.requires_numeric & rule.requires_text)
    if conflicting:
        raise GrammarError(rule.rule_id, f"{conflicting[0]} must be a NUMBER column and a text column at once")

    if len(rule.table_slots) > 2:
        raise GrammarError(rule.rule_id, "at most two TABLE slots (one join path)")
    if len(rule.table_slots) > 1:
        joins = [n for n in iter_nodes(rule.sql) if isinstance(n, Join)]
        if not joins:
            raise GrammarError(rule.rule_id, "multi-table template needs a JOIN")
        join = joins[0]
        sides = (join.left, join.right)
        if not all(isinstance(c.name, SlotName) and isinstance(c.table, SlotName) for c in sides):
            raise GrammarError(rule.rule_id, "JOIN columns must be qualified COLUMN slots")
        if {join.left.table, join.right.table} != set(rule.table_slots):
            raise GrammarError(rule.rule_id, "JOIN must connect the two TABLE slots")
        owners: dict[SlotName, set] = {}
        for node in iter_nodes(rule.sql):
            if isinstance(node, ColumnRef) and isinstance(node.name, SlotName):
                if not isinstance(node.table, SlotName):
                    raise GrammarError(
                        rule.rule_id, f"{node.name} must be qualified in a multi-table template"
                    )
                owners.setdefault(node.name, set()).add(node.table)
        for slot, tables in owners.items():
            if len(tables) > 1:
                raise GrammarError(rule.rule_id, f"{slot} is qualified by more than one table")


def validate_grammar(grammar: Grammar) -> None:
    seen = set()
    for rule in grammar.rules:
        if rule.rule_id in seen:
            raise GrammarError(rule.rule_id, "duplicate rule id")
        seen.add(rule.rule_id)
        validate_rule(rule)
        kinds = {s.kind for s in iter_slots(rule.sql)}
        for kind in (SlotKind.AGG, SlotKind.OP, SlotKind.SC):
            if kind in kinds and not grammar.lexicon.terminals(kind):
                raise GrammarError(rule.rule_id, f"lexicon has no phrase for any {kind} terminal")


# ─── File format ──────────────────────────────────────────────────────────────

def _build_rule(block: dict, line_no: int) -> ProductionRule:
    rule_id = block.get("id", "")
    if not rule_id:
        raise GrammarError(None, f"[rule] block at line {line_no} has no id")
    if not block.get("sql"):
        raise GrammarError(rule_id, "missing sql template")
    try:
        sql = parse_sql(block["sql"], ParseMode.TEMPLATE)
    except ParseError as e:
        raise GrammarError(rule_id, f"sql does not parse: {e}") from None
    try:
        weight = float(block.get("weight", 1.0))
    except ValueError:
        raise GrammarError(rule_id, f"invalid weight {block['weight']!r}") from None
    nl_variants = tuple(parse_nl_template(text) for text in block.get("nl", []))
    rule = ProductionRule(rule_id=rule_id, nl_variants=nl_variants, sql=sql, weight=weight)
    return derive_constraints(rule)


def loads_grammar(text: str) -> Grammar:
    """Parse and validate grammar text. Raises GrammarError."""
    lexicon: dict = {}
    rules = []
    section = None
    block: dict | None = None
    block_line = 0

    def close_block():
        if block is not None:
            rules.append(_build_rule(block, block_line))

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line in ("[lexicon]", "[rule]"):
            close_block()
            section = line[1:-1]
            block = {"nl": []} if section == "rule" else None
            block_line = line_no
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise GrammarError(None, f"line {line_no}: expected 'key: value'")
        key, value = key.strip(), value.strip()
        if section == "lexicon":
            try:
                terminal = parse_terminal(key)
            except LexiconError as e:
                raise GrammarError(None, f"line {line_no}: {e}") from None
            phrases = tuple(p.strip() for p in value.split("|") if p.strip())
            if not phrases:
                raise GrammarError(None, f"line {line_no}: no phrases for {key}")
            lexicon[terminal] = lexicon.get(terminal, ()) + phrases
        elif section == "rule":
            if key == "nl":
                if value:
                    block["nl"].append(value)
            elif key in ("id", "sql", "weight"):
                block[key] = value
            else:
                raise GrammarError(block.get("id"), f"line {line_no}: unknown key {key!r}")
        else:
            raise GrammarError(None, f"line {line_no}: content outside a section")
    close_block()

    grammar = Grammar(rules=tuple(rules), lexicon=TerminalLexicon(lexicon))
    validate_grammar(grammar)
    return grammar


def load_grammar(path: Path) -> Grammar:
    """Read and validate a grammar file. Raises GrammarError or OSError."""
    with open(path, "r", encoding="utf-8") as f:
        grammar = loads_grammar(f.read())
    logger.info("loaded %d rule(s) from %s", len(grammar.rules), path)
    return grammar


def load_starter_grammar() -> Grammar:
    """The grammar shipped with the package."""
    return loads_grammar((files("tablesynth") / "data" / STARTER_GRAMMAR).read_text("utf-8"))


def dump_lexicon(lexicon: TerminalLexicon) -> str:
    lines = ["[lexicon]"]
    for terminal, phrases in lexicon.entries.items():
        lines.append(f"{terminal}: {' | '.join(phrases)}")
    return "\n".join(lines) + "\n"


def dump_rule(rule: ProductionRule) -> str:
    lines = ["[rule]", f"id: {rule.rule_id}", f"weight: {rule.weight:g}"]
    lines += [f"nl: {nl}" for nl in rule.nl_variants]
    lines.append(f"sql: {render_sql(rule.sql)}")
    return "\n".join(lines) + "\n"


def dump_grammar(grammar: Grammar) -> str:
    """Serialize a grammar; loads_grammar(dump_grammar(g)) == g."""
    parts = [dump_lexicon(grammar.lexicon)]
    parts += [dump_rule(rule) for rule in grammar.rules]
    return "\n".join(parts)


# ─── Phrase realization ───────────────────────────────────────────────────────

def realize_phrase(terminal, lexicon: TerminalLexicon, rng: np.random.Generator) -> str:
    """Uniformly sample one of the terminal's phrases."""
    terminal = parse_terminal(terminal)
    phrases = lexicon.entries.get(terminal)
    if not phrases:
        raise LexiconError(f"no phrase for terminal {terminal}")
    return phrases[int(rng.integers(len(phrases)))]
