"""
synthesizer.py

Sample production rules against tables to generate grounded question-SQL
pairs. Every example index draws its own generator from (seed, index), so
the output is identical whatever the worker count.
"""

import json
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tablesynth.corpus import (
    ColumnMeta,
    ColumnType,
    SkipReport,
    TableSchema,
    group_databases,
    normalize_header,
)
from tablesynth.errors import BindFailure, LabelError, PartialOutput, UnboundSlot
from tablesynth.grammar import (
    IMPLICIT_TABLE,
    Grammar,
    NlTemplate,
    ProductionRule,
    Terminal,
    TerminalLexicon,
    realize_phrase,
)
from tablesynth.labeler import as_tables, label_columns
from tablesynth.sql import (
    SQL_NUMBER,
    AggExpr,
    AggFn,
    ColumnRef,
    CompOp,
    Condition,
    Join,
    Literal,
    SlotKind,
    SlotName,
    Subquery,
    iter_nodes,
    iter_slots,
    render_sql,
    substitute_slots,
)

logger = logging.getLogger(__name__)

RETRY_BUDGET = 50
COUNT_THRESHOLDS = (1, 5)

_NUMERIC_OPS = (CompOp.EQ, CompOp.NE, CompOp.LT, CompOp.LE, CompOp.GT, CompOp.GE)
_TEXT_OPS = (CompOp.EQ, CompOp.NE, CompOp.LIKE)

Target = TableSchema | tuple[TableSchema, ...]


@dataclass
class Binding:
    """Terminals bound to each slot of one rule, plus their question surfaces."""

    tables: dict[SlotName, TableSchema] = field(default_factory=dict)
    columns: dict[SlotName, tuple[TableSchema, ColumnMeta]] = field(default_factory=dict)
    values: dict[SlotName, Literal] = field(default_factory=dict)
    surfaces: dict[SlotName, str] = field(default_factory=dict)
    terminals: dict[SlotName, Terminal] = field(default_factory=dict)
    phrases: dict[SlotName, str] = field(default_factory=dict)

    def sql_bindings(self) -> dict[SlotName, object]:
        """The slot -> terminal map substitute_slots expects."""
        out: dict[SlotName, object] = {s: t.name for s, t in self.tables.items()}
        out.update({s: meta.name for s, (_, meta) in self.columns.items()})
        out.update(self.values)
        out.update(self.terminals)
        return out

    def surface(self, slot: SlotName) -> str:
        """Question text for a slot: names verbatim, values verbatim, phrases for AGG/OP/SC."""
        try:
            match slot.kind:
                case SlotKind.TABLE:
                    return self.tables[slot].name
                case SlotKind.COLUMN:
                    return self.columns[slot][1].name
                case SlotKind.VALUE:
                    return self.surfaces[slot]
                case _:
                    return self.phrases[slot]
        except KeyError:
            raise UnboundSlot(slot) from None

    def to_json(self) -> dict:
        out = {}
        for slot, text in sorted(self.sql_bindings().items()):
            out[str(slot)] = text.value if isinstance(text, Literal) else str(text)
        return out


@dataclass(frozen=True)
class SynthExample:
    example_id: str
    question: str
    sql: str
    template: str
    table_id: str
    rule_id: str
    tables: tuple[TableSchema, ...]
    binding: Binding | None = None
    labels: dict = field(default_factory=dict)  # column index -> label

    def to_json(self) -> dict:
        record = {
            "id": self.example_id,
            "question": self.question,
            "sql": self.sql,
            "template": self.template,
            "table_id": self.table_id,
            "rule_id": self.rule_id,
        }
        if len(self.tables) > 1:
            record["tables"] = [t.table_id for t in self.tables]
        if self.binding is not None:
            record["binding"] = self.binding.to_json()
            record["phrases"] = {str(s): p for s, p in sorted(self.binding.phrases.items())}
        record["labels"] = {str(i): label for i, label in sorted(self.labels.items())}
        return record


def render_question(nl: NlTemplate, binding: Binding) -> str:
    """Alpha with every slot replaced by its surface form, tokens joined by single spaces."""
    return " ".join(binding.surface(t) if isinstance(t, SlotName) else t for t in nl.tokens)


# ─── Eligibility ──────────────────────────────────────────────────────────────

def join_candidates(left: TableSchema, right: TableSchema) -> list[tuple[ColumnMeta, ColumnMeta]]:
    """Column pairs that join `left` to `right`: declared foreign keys, else shared names."""
    pairs = []
    by_name = {c.name: c for c in left.columns}
    right_by_name = {c.name: c for c in right.columns}
    for column, ref_table, ref_column in left.foreign_keys:
        if ref_table == right.name and column in by_name and ref_column in right_by_name:
            pairs.append((by_name[column], right_by_name[ref_column]))
    for column, ref_table, ref_column in right.foreign_keys:
        if ref_table == left.name and column in right_by_name and ref_column in by_name:
            pairs.append((by_name[ref_column], right_by_name[column]))
    if pairs:
        return list(dict.fromkeys(pairs))
    right_norm = {normalize_header(c.name): c for c in right.columns}
    return [
        (c, right_norm[normalize_header(c.name)])
        for c in left.columns
        if normalize_header(c.name) in right_norm
    ]


def _join_options(tables: tuple[TableSchema, ...]):
    return [
        (a, b, ca, cb)
        for a in tables
        for b in tables
        if a is not b
        for ca, cb in join_candidates(a, b)
    ]


def check_eligibility(rule: ProductionRule, target: Target) -> str | None:
    """Reason the target can never bind the rule, or None when it might."""
    if rule.is_multi_table:
        if isinstance(target, TableSchema) or len(target) < 2:
            return "needs a multi-table database"
        if not _join_options(target):
            return "no join path between tables"
        return None
    if not isinstance(target, TableSchema):
        return "single-table rule"
    if len(target.columns) < rule.min_columns:
        return f"needs {rule.min_columns} columns"
    numeric = sum(1 for c in target.columns if c.col_type == ColumnType.NUMBER)
    if numeric < len(rule.requires_numeric):
        return f"needs {len(rule.requires_numeric)} NUMBER columns"
    if len(target.columns) - numeric < len(rule.requires_text):
        return f"needs {len(rule.requires_text)} text columns"
    return None


def eligibility_report(grammar: Grammar, tables: list[TableSchema]) -> dict[str, dict]:
    """Per rule: how many targets are eligible and why the others are not."""
    singles, databases = _candidate_targets(tables)
    report = {}
    for rule in grammar.rules:
        pool = databases if rule.is_multi_table else singles
        reasons = Counter(check_eligibility(rule, t) for t in pool)
        eligible = reasons.pop(None, 0)
        report[rule.rule_id] = {"eligible": eligible, "reasons": dict(reasons)}
    return report


def _candidate_targets(tables: list[TableSchema]):
    databases = [db for db in group_databases(tables).values() if len(db) > 1]
    return list(tables), databases


# ─── Binding ──────────────────────────────────────────────────────────────────

def _pick(rng: np.random.Generator, items: list):
    return items[int(rng.integers(len(items)))]


def _bind_tables(rule: ProductionRule, tables: tuple[TableSchema, ...], binding: Binding, rng) -> None:
    if not rule.is_multi_table:
        if len(tables) != 1:
            raise BindFailure("single-table rule needs exactly one table")
        slot = rule.table_slots[0] if rule.table_slots else IMPLICIT_TABLE
        binding.tables[slot] = tables[0]
        return

    if len(rule.table_slots) != 2:
        raise BindFailure("only one join path is supported")
    join = next((n for n in iter_nodes(rule.sql) if isinstance(n, Join)), None)
    if join is None:
        raise BindFailure("multi-table rule without a JOIN")
    options = _join_options(tables)
    if not options:
        raise BindFailure("no join path between tables")
    left, right, left_column, right_column = _pick(rng, options)
    binding.tables[join.left.table] = left
    binding.tables[join.right.table] = right
    binding.columns[join.left.name] = (left, left_column)
    binding.columns[join.right.name] = (right, right_column)


def _bind_columns(rule: ProductionRule, binding: Binding, rng) -> None:
    owners = dict(rule.column_tables)
    default_owner = next(iter(binding.tables))
    pending: dict[SlotName, list[SlotName]] = {}
    for slot in sorted({s for s in iter_slots(rule.sql) if s.kind == SlotKind.COLUMN}):
        if slot not in binding.columns:
            pending.setdefault(owners.get(slot, default_owner), []).append(slot)

    for table_slot, slots in pending.items():
        table = binding.tables[table_slot]
        taken = {meta.index for t, meta in binding.columns.values() if t is table}
        groups = (
            ([s for s in slots if s in rule.requires_numeric], lambda c: c.col_type == ColumnType.NUMBER,
             "NUMBER columns"),
            ([s for s in slots if s in rule.requires_text], lambda c: c.col_type != ColumnType.NUMBER,
             "text columns"),
            ([s for s in slots if s not in rule.requires_numeric | rule.requires_text], lambda c: True,
             "columns"),
        )
        for group, accepts, noun in groups:
            pool = [c for c in table.columns if c.index not in taken and accepts(c)]
            if len(pool) < len(group):
                raise BindFailure(f"needs {len(group)} {noun}")
            chosen = rng.choice(len(pool), size=len(group), replace=False)
            for slot, i in zip(group, chosen):
                binding.columns[slot] = (table, pool[int(i)])
                taken.add(pool[int(i)].index)


def _column_of(operand, binding: Binding) -> ColumnMeta | None:
    ref = operand.arg if isinstance(operand, AggExpr) else operand
    if isinstance(ref, ColumnRef) and isinstance(ref.name, SlotName):
        return binding.columns[ref.name][1]
    return None


def _resolved(term, binding: Binding):
    return binding.terminals.get(term, term) if isinstance(term, SlotName) else term


def _allowed_ops(condition: Condition, binding: Binding) -> set[CompOp]:
    if isinstance(condition.left, AggExpr):
        allowed = set(_NUMERIC_OPS)
    else:
        column = _column_of(condition.left, binding)
        numeric = column is not None and column.col_type == ColumnType.NUMBER
        allowed = set(_NUMERIC_OPS if numeric else _TEXT_OPS)
    if any(isinstance(v, Subquery) for v in condition.values):
        allowed.discard(CompOp.LIKE)
    return allowed


def _bind_terminals(rule: ProductionRule, binding: Binding, rng, lexicon: TerminalLexicon) -> None:
    nodes = list(iter_nodes(rule.sql))
    slots = sorted({s for s in iter_slots(rule.sql) if s.kind in (SlotKind.AGG, SlotKind.OP, SlotKind.SC)})
    for slot in slots:
        candidates = lexicon.terminals(slot.kind)
        if slot.kind == SlotKind.AGG:
            for node in nodes:
                if isinstance(node, AggExpr) and node.fn == slot:
                    column = _column_of(node, binding)
                    if column is None or column.col_type != ColumnType.NUMBER:
                        candidates = [t for t in candidates if t == AggFn.COUNT]
        elif slot.kind == SlotKind.OP:
            for node in nodes:
                if isinstance(node, Condition) and node.op == slot:
                    allowed = _allowed_ops(node, binding)
                    candidates = [t for t in candidates if t in allowed]
        if not candidates:
            raise BindFailure(f"no compatible terminal for {slot}")
        terminal = _pick(rng, candidates)
        binding.terminals[slot] = terminal
        binding.phrases[slot] = realize_phrase(terminal, lexicon, rng)


def like_pattern(cell: str, rng) -> tuple[str, str]:
    """Wrap a random prefix, suffix or infix of `cell` with %. Returns (pattern, fragment)."""
    n = len(cell)
    mode = int(rng.integers(3))
    if mode == 0:
        fragment = cell[: int(rng.integers(1, n + 1))]
        pattern = fragment + "%"
    elif mode == 1:
        fragment = cell[n - int(rng.integers(1, n + 1)):]
        pattern = "%" + fragment
    else:
        start = int(rng.integers(n))
        fragment = cell[start: int(rng.integers(start + 1, n + 1))]
        pattern = "%" + fragment + "%"
    return pattern, fragment


def _value_candidates(columns: list[tuple[TableSchema, ColumnMeta]]) -> list[str]:
    pools = []
    for table, meta in columns:
        cells = [c for c in table.distinct_cells(meta.index) if "\n" not in c and "\r" not in c]
        if meta.col_type == ColumnType.NUMBER:
            cells = [c for c in cells if SQL_NUMBER.match(c)]
        pools.append(cells)
    shared = set(pools[0]).intersection(*pools[1:])
    return [c for c in pools[0] if c in shared]


def _bind_values(rule: ProductionRule, binding: Binding, rng) -> None:
    conditions = [n for n in iter_nodes(rule.sql) if isinstance(n, Condition)]
    slots = sorted({s for s in iter_slots(rule.sql) if s.kind == SlotKind.VALUE})
    for slot in slots:
        uses = [c for c in conditions if slot in c.values]
        counts = any(
            isinstance(c.left, AggExpr) and _resolved(c.left.fn, binding) == AggFn.COUNT
            for c in uses
        )
        if counts:
            value = str(int(rng.integers(COUNT_THRESHOLDS[0], COUNT_THRESHOLDS[1] + 1)))
            binding.values[slot] = Literal(value, quoted=False)
            binding.surfaces[slot] = value
            continue

        columns = []
        for condition in uses:
            ref = condition.left.arg if isinstance(condition.left, AggExpr) else condition.left
            if isinstance(ref, ColumnRef) and isinstance(ref.name, SlotName):
                columns.append(binding.columns[ref.name])
        if not columns:
            raise BindFailure(f"{slot} is not compared with a bound column")
        candidates = _value_candidates(columns)
        if not candidates:
            raise BindFailure(f"no usable cell for {slot}")
        cell = _pick(rng, candidates)

        if any(_resolved(c.op, binding) == CompOp.LIKE for c in uses):
            pattern, fragment = like_pattern(cell, rng)
            binding.values[slot] = Literal(pattern, quoted=True)
            binding.surfaces[slot] = fragment.strip() or fragment
        else:
            numeric = all(meta.col_type == ColumnType.NUMBER for _, meta in columns)
            binding.values[slot] = Literal(cell, quoted=not numeric)
            binding.surfaces[slot] = cell

    for condition in conditions:
        if condition.op == CompOp.BETWEEN and all(isinstance(v, SlotName) for v in condition.values):
            low, high = condition.values
            a, b = binding.values[low], binding.values[high]
            if not a.quoted and not b.quoted and float(a.value) > float(b.value):
                binding.values[low], binding.values[high] = b, a
                binding.surfaces[low], binding.surfaces[high] = b.value, a.value


def bind_rule(
    rule: ProductionRule,
    table: Target,
    rng: np.random.Generator,
    lexicon: TerminalLexicon,
) -> Binding:
    """
    Bind every slot of `rule` against `table` (a database tuple for
    multi-table rules). Raises BindFailure when the table cannot host the
    rule; callers retry with another table.
    """
    reason = check_eligibility(rule, table)
    if reason is not None:
        raise BindFailure(reason)
    binding = Binding()
    _bind_tables(rule, as_tables(table), binding, rng)
    _bind_columns(rule, binding, rng)
    _bind_terminals(rule, binding, rng, lexicon)
    _bind_values(rule, binding, rng)
    return binding


# ─── Generation ───────────────────────────────────────────────────────────────

def _build_example(index: int, rule: ProductionRule, target: Target, binding: Binding, rng) -> SynthExample:
    tables = as_tables(target)
    nl = _pick(rng, list(rule.nl_variants))
    sql = substitute_slots(rule.sql, binding.sql_bindings())
    table_id = tables[0].table_id if isinstance(target, TableSchema) else tables[0].db_id
    return SynthExample(
        example_id=f"synth-{index:07d}",
        question=render_question(nl, binding),
        sql=render_sql(sql),
        template=render_sql(rule.sql),
        table_id=table_id,
        rule_id=rule.rule_id,
        tables=tables,
        binding=binding,
        labels=label_columns(sql, tables),
    )


def _generate_range(grammar, pools, probabilities, start, stop, seed, retry_budget):
    examples = []
    failures: Counter = Counter()
    for index in range(start, stop):
        rng = np.random.default_rng([seed, index])
        rule_index = int(rng.choice(len(grammar.rules), p=probabilities))
        rule = grammar.rules[rule_index]
        pool = pools[rule_index]
        example = None
        for _ in range(retry_budget if pool else 0):
            target = _pick(rng, pool)
            try:
                binding = bind_rule(rule, target, rng, grammar.lexicon)
                example = _build_example(index, rule, target, binding, rng)
            except (BindFailure, LabelError) as e:
                logger.debug("bind failure for %s: %s", rule.rule_id, e)
                continue
            break
        if example is None:
            failures[rule.rule_id] += 1
        else:
            examples.append(example)
    return examples, failures


def generate(
    grammar: Grammar,
    tables: list[TableSchema],
    n: int,
    seed: int,
    retry_budget: int = RETRY_BUDGET,
    workers: int = 1,
) -> list[SynthExample]:
    """
    Generate exactly `n` examples. Rules are drawn in proportion to their
    weights, targets uniformly among those structurally eligible for the
    rule. Raises PartialOutput (carrying what was generated) when some
    index exhausts its retry budget.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not grammar.rules:
        raise ValueError("grammar has no rules")
    if n == 0:
        return []

    singles, databases = _candidate_targets(tables)
    pools = [
        [t for t in (databases if rule.is_multi_table else singles) if check_eligibility(rule, t) is None]
        for rule in grammar.rules
    ]
    weights = np.array([rule.weight for rule in grammar.rules], dtype=float)
    probabilities = weights / weights.sum()

    workers = max(1, min(workers, n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    jobs = [
        (grammar, pools, probabilities, int(a), int(b), seed, retry_budget)
        for a, b in zip(bounds[:-1], bounds[1:])
    ]
    if workers == 1:
        results = [_generate_range(*jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_generate_range, *zip(*jobs)))

    examples: list[SynthExample] = []
    failures: Counter = Counter()
    for chunk, chunk_failures in results:
        examples.extend(chunk)
        failures.update(chunk_failures)

    if failures:
        report = eligibility_report(grammar, tables)
        diagnostics = {
            "missing": sum(failures.values()),
            "failed_by_rule": dict(sorted(failures.items())),
            "ineligible_rules": sorted(r for r, info in report.items() if info["eligible"] == 0),
            "eligibility": report,
        }
        logger.warning("partial generation: %d of %d example(s)", len(examples), n)
        raise PartialOutput(examples, diagnostics)

    logger.info("generated %d example(s) from %d rule(s)", len(examples), len(grammar.rules))
    return examples


# ─── JSONL ────────────────────────────────────────────────────────────────────

def write_examples(examples: list[SynthExample], output_path: Path) -> None:
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8") as f:
        for example in examples:
            f.write(json.dumps(example.to_json(), ensure_ascii=False) + "\n")


def read_examples(
    path: Path,
    tables: dict[str, TableSchema],
    skips: SkipReport | None = None,
) -> list[SynthExample]:
    """
    Read synthesized (or any {"sql", "table_id"}) JSONL back. A table_id
    that names a database (db_id) resolves to all of its tables. Bindings
    are not reconstructed; labels are kept when present.
    """
    report = skips if skips is not None else SkipReport()
    databases = group_databases(list(tables.values()))
    examples = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                ids = record.get("tables")
                if ids:
                    schema = tuple(tables[str(i)] for i in ids)
                else:
                    table_id = str(record["table_id"])
                    schema = (tables[table_id],) if table_id in tables else databases[table_id]
                examples.append(
                    SynthExample(
                        example_id=str(record.get("id", f"{Path(path).stem}-{line_no}")),
                        question=str(record.get("question", "")),
                        sql=record["sql"],
                        template=str(record.get("template", "")),
                        table_id=str(record["table_id"]),
                        rule_id=str(record.get("rule_id", "")),
                        tables=schema,
                        labels={int(k): v for k, v in record.get("labels", {}).items()},
                    )
                )
            except json.JSONDecodeError as e:
                report.add(path, line_no, f"invalid JSON: {e.msg}")
            except KeyError as e:
                report.add(path, line_no, f"missing or unknown {e.args[0]!r}")
    return examples
