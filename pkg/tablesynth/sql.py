"""
sql.py

AST, parser and canonical renderer for the template SQL dialect: SELECT with
optional DISTINCT, single- or two-table FROM with one JOIN path, WHERE and
HAVING predicate chains, GROUP BY, ORDER BY, LIMIT, one set operation and one
level of subquery nesting.

Canonical text puts single spaces between all tokens, keywords uppercase and
identifiers verbatim, e.g.

    SELECT COLUMN0 , COUNT ( * ) WHERE COLUMN1 OP0 VALUE0 GROUP BY COLUMN0

Single-table queries may omit FROM. Slot tokens (TABLE0, COLUMN1, VALUE0,
AGG0, OP0, SC0) are only legal when parsing in TEMPLATE mode.

The dialect is a parsimonious PEG grammar; SqlVisitor turns its parse tree
into the dataclasses below.
"""

import re
from dataclasses import dataclass, fields, is_dataclass, replace
from enum import StrEnum
from typing import Any, Iterator, Mapping

from parsimonious.exceptions import ParseError as PegParseError
from parsimonious.grammar import Grammar
from parsimonious.nodes import Node, NodeVisitor

from tablesynth.errors import BindingTypeError, ParseError, UnboundSlot


class SlotKind(StrEnum):
    TABLE = "TABLE"
    COLUMN = "COLUMN"
    VALUE = "VALUE"
    AGG = "AGG"
    OP = "OP"
    SC = "SC"


class AggFn(StrEnum):
    MAX = "MAX"
    MIN = "MIN"
    COUNT = "COUNT"
    AVG = "AVG"
    SUM = "SUM"


class CompOp(StrEnum):
    EQ = "="
    NE = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    LIKE = "LIKE"
    BETWEEN = "BETWEEN"
    IN = "IN"
    NOT_IN = "NOT IN"


class Direction(StrEnum):
    ASC = "ASC"
    DESC = "DESC"


class SetOpKind(StrEnum):
    INTERSECT = "INTERSECT"
    UNION = "UNION"
    EXCEPT = "EXCEPT"


class ParseMode(StrEnum):
    TEMPLATE = "TEMPLATE"
    CONCRETE = "CONCRETE"


# Ops an OP slot may stand for: one value child, so binding never changes shape.
BINARY_OPS = (CompOp.EQ, CompOp.NE, CompOp.LT, CompOp.LE, CompOp.GT, CompOp.GE, CompOp.LIKE)
ARITHMETIC_OPS = frozenset({CompOp.LT, CompOp.LE, CompOp.GT, CompOp.GE, CompOp.BETWEEN})

OP_ALIASES = {
    "=": CompOp.EQ,
    "!=": CompOp.NE,
    "<>": CompOp.NE,
    "≠": CompOp.NE,
    "<": CompOp.LT,
    "<=": CompOp.LE,
    "≤": CompOp.LE,
    ">": CompOp.GT,
    ">=": CompOp.GE,
    "≥": CompOp.GE,
    "LIKE": CompOp.LIKE,
    "BETWEEN": CompOp.BETWEEN,
    "IN": CompOp.IN,
    "NOT IN": CompOp.NOT_IN,
}

KEYWORDS = frozenset({
    "SELECT", "DISTINCT", "FROM", "JOIN", "ON", "AS", "WHERE", "GROUP", "BY",
    "HAVING", "ORDER", "LIMIT", "ASC", "DESC", "AND", "OR", "NOT", "IN",
    "LIKE", "BETWEEN", "INTERSECT", "UNION", "EXCEPT",
    "COUNT", "MAX", "MIN", "AVG", "SUM",
})

SLOT_PATTERN = re.compile(r"^(TABLE|COLUMN|VALUE|AGG|OP|SC)(\d+)$")
SQL_NUMBER = re.compile(r"^-?\d+(\.\d+)?$")
_PLAIN_IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


# ─── AST ──────────────────────────────────────────────────────────────────────

@dataclass(frozen=True, order=True)
class SlotName:
    kind: SlotKind
    ordinal: int

    def __str__(self) -> str:
        return f"{self.kind}{self.ordinal}"

    @classmethod
    def parse(cls, text: str) -> "SlotName | None":
        match = SLOT_PATTERN.match(text)
        if not match:
            return None
        return cls(SlotKind(match.group(1)), int(match.group(2)))


@dataclass(frozen=True)
class ColumnRef:
    name: str | SlotName
    table: str | SlotName | None = None


@dataclass(frozen=True)
class TableRef:
    name: str | SlotName


@dataclass(frozen=True)
class Literal:
    value: str
    quoted: bool


@dataclass(frozen=True)
class AggExpr:
    fn: AggFn | SlotName
    arg: ColumnRef | None  # None is "*"
    distinct: bool = False


@dataclass(frozen=True)
class Subquery:
    query: "Select | SetOp"


@dataclass(frozen=True)
class Condition:
    left: ColumnRef | AggExpr
    op: CompOp | SlotName
    values: tuple[Literal | SlotName | Subquery, ...]


@dataclass(frozen=True)
class Predicate:
    conditions: tuple[Condition, ...]
    connectors: tuple[str, ...] = ()  # "AND" / "OR", one fewer than conditions


@dataclass(frozen=True)
class Join:
    table: TableRef
    left: ColumnRef
    right: ColumnRef


@dataclass(frozen=True)
class GroupBy:
    columns: tuple[ColumnRef, ...]


@dataclass(frozen=True)
class Having:
    predicate: Predicate


@dataclass(frozen=True)
class OrderBy:
    keys: tuple[ColumnRef | AggExpr, ...]
    direction: Direction | SlotName | None = None


@dataclass(frozen=True)
class Limit:
    count: int


@dataclass(frozen=True)
class Select:
    projections: tuple[ColumnRef | AggExpr, ...]
    distinct: bool = False
    from_table: TableRef | None = None
    join: Join | None = None
    where: Predicate | None = None
    group_by: GroupBy | None = None
    having: Having | None = None
    order_by: OrderBy | None = None
    limit: Limit | None = None


@dataclass(frozen=True)
class SetOp:
    kind: SetOpKind
    left: Select
    right: Select


SqlNode = (
    Select | SetOp | Subquery | ColumnRef | TableRef | Literal | SlotName
    | AggExpr | Condition | Predicate | Join | GroupBy | Having | OrderBy | Limit
)
Query = Select | SetOp


def iter_nodes(node) -> Iterator:
    """Every node of the tree, depth first, in canonical textual order."""
    yield node
    if isinstance(node, SlotName) or not is_dataclass(node):
        return
    for f in fields(node):
        value = getattr(node, f.name)
        items = value if isinstance(value, tuple) else (value,)
        for item in items:
            if is_dataclass(item):
                yield from iter_nodes(item)


def iter_slots(node) -> Iterator[SlotName]:
    """Slot occurrences in textual order, repeats included."""
    for n in iter_nodes(node):
        if isinstance(n, SlotName):
            yield n


# ─── Parser ───────────────────────────────────────────────────────────────────

_KEYWORD_ALTERNATION = "|".join(sorted(KEYWORDS, key=len, reverse=True))

sql_grammar = Grammar(
    rf"""
    sql             = ws query end
    query           = select set_tail?
    set_tail        = set_kind select
    set_kind        = ~r"(INTERSECT|UNION|EXCEPT)\b"i ws

    select          = SELECT DISTINCT? operand_list from_clause? where_clause? group_clause? having_clause? order_clause? limit_clause?
    from_clause     = FROM table_name join_clause?
    join_clause     = JOIN table_name ON column EQUALS column
    where_clause    = WHERE predicate
    group_clause    = GROUP BY column more_column*
    having_clause   = HAVING predicate
    order_clause    = ORDER BY operand_list direction?
    limit_clause    = LIMIT integer

    operand_list    = operand more_operand*
    more_operand    = COMMA operand
    more_column     = COMMA column
    operand         = aggregate / column
    aggregate       = agg_fn LPAREN DISTINCT? agg_arg RPAREN
    agg_fn          = agg_word / agg_slot
    agg_arg         = star / column
    column          = qualifier? column_name
    qualifier       = table_name DOT
    column_name     = name / column_slot
    table_name      = name / table_slot
    name            = bare_name / quoted_name
    direction       = sort_word / sc_slot

    predicate       = condition connected*
    connected       = connector condition
    condition       = operand comparison
    comparison      = between / not_in / binary
    between         = BETWEEN value AND value
    not_in          = NOT IN value
    binary          = comparator value
    comparator      = member_word / op_symbol / op_slot
    value           = string / text_value / number / value_slot / subquery
    subquery        = LPAREN query RPAREN

    bare_name       = !keyword !slot_word ~r"[A-Za-z_][A-Za-z0-9_]*" ws
    quoted_name     = ~r'"(?:[^"]|"")*"' ws
    string          = ~r"'(?:[^']|'')*'" ws
    text_value      = ~r'"(?:[^"]|"")*"' ws
    number          = ~r"-?\d+(?:\.\d+)?(?![A-Za-z0-9_])" ws
    integer         = ~r"\d+(?![A-Za-z0-9_.])" ws
    op_symbol       = ~r"<=|>=|!=|<>|=|<|>|≤|≥|≠" ws
    member_word     = ~r"(IN|LIKE)\b"i ws
    connector       = ~r"(AND|OR)\b"i ws
    sort_word       = ~r"(ASC|DESC)\b"i ws
    agg_word        = ~r"(COUNT|MAX|MIN|AVG|SUM)\b"i ws
    keyword         = ~r"({_KEYWORD_ALTERNATION})\b"i
    slot_word       = ~r"(TABLE|COLUMN|VALUE|AGG|OP|SC)\d+\b"

    table_slot      = ~r"TABLE\d+\b" ws
    column_slot     = ~r"COLUMN\d+\b" ws
    value_slot      = ~r"VALUE\d+\b" ws
    agg_slot        = ~r"AGG\d+\b" ws
    op_slot         = ~r"OP\d+\b" ws
    sc_slot         = ~r"SC\d+\b" ws

    SELECT          = ~r"SELECT\b"i ws
    DISTINCT        = ~r"DISTINCT\b"i ws
    FROM            = ~r"FROM\b"i ws
    JOIN            = ~r"JOIN\b"i ws
    ON              = ~r"ON\b"i ws
    WHERE           = ~r"WHERE\b"i ws
    GROUP           = ~r"GROUP\b"i ws
    BY              = ~r"BY\b"i ws
    HAVING          = ~r"HAVING\b"i ws
    ORDER           = ~r"ORDER\b"i ws
    LIMIT           = ~r"LIMIT\b"i ws
    BETWEEN         = ~r"BETWEEN\b"i ws
    AND             = ~r"AND\b"i ws
    NOT             = ~r"NOT\b"i ws
    IN              = ~r"IN\b"i ws
    EQUALS          = "=" ws
    LPAREN          = "(" ws
    RPAREN          = ")" ws
    COMMA           = "," ws
    DOT             = "." ws
    star            = "*" ws
    ws              = ~r"\s*"
    end             = ~r"\Z"
    """
)


def _optional(child):
    """The visited value of an optional match, None when it matched nothing."""
    return child[0] if isinstance(child, list) else None


def _repeated(child) -> list:
    return child if isinstance(child, list) else []


def _unquote(node: Node, quote: str) -> str:
    return node.children[0].text[1:-1].replace(quote * 2, quote)


class SqlVisitor(NodeVisitor):
    """
    Builds the dataclass AST from the parsimonious parse tree.
    """

    unwrapped_exceptions = (ParseError,)

    def __init__(self, mode: ParseMode):
        self.mode = mode

    def generic_visit(self, node: Node, visited_children: list) -> Any:
        return visited_children or node

    def _lift(self, node: Node, visited_children: list) -> Any:
        return visited_children[0]

    visit_operand = visit_agg_fn = visit_agg_arg = _lift
    visit_column_name = visit_table_name = visit_name = visit_direction = _lift
    visit_comparison = visit_comparator = visit_value = _lift

    def _slot(self, node: Node, visited_children: list) -> SlotName:
        token = node.children[0].text
        if self.mode != ParseMode.TEMPLATE:
            raise ParseError(f"slot token {token} in a concrete query", node.start)
        return SlotName.parse(token)

    visit_table_slot = visit_column_slot = visit_value_slot = _slot
    visit_agg_slot = visit_op_slot = visit_sc_slot = _slot

    def visit_sql(self, node: Node, visited_children: list) -> Query:
        _, query, _ = visited_children
        return query

    def visit_query(self, node: Node, visited_children: list) -> Query:
        left, tail = visited_children
        tail = _optional(tail)
        if tail is None:
            return left
        kind, right = tail
        return SetOp(kind, left, right)

    def visit_set_tail(self, node: Node, visited_children: list) -> tuple:
        kind, right = visited_children
        return kind, right

    def visit_set_kind(self, node: Node, visited_children: list) -> SetOpKind:
        return SetOpKind(node.children[0].text.upper())

    def visit_select(self, node: Node, visited_children: list) -> Select:
        _, distinct, projections, from_clause, where, group_by, having, order_by, limit = visited_children
        from_table, join = _optional(from_clause) or (None, None)
        return Select(
            projections=projections,
            distinct=_optional(distinct) is not None,
            from_table=from_table,
            join=join,
            where=_optional(where),
            group_by=_optional(group_by),
            having=_optional(having),
            order_by=_optional(order_by),
            limit=_optional(limit),
        )

    def visit_from_clause(self, node: Node, visited_children: list) -> tuple:
        _, table, join = visited_children
        return TableRef(table), _optional(join)

    def visit_join_clause(self, node: Node, visited_children: list) -> Join:
        _, table, _, left, _, right = visited_children
        return Join(TableRef(table), left, right)

    def visit_where_clause(self, node: Node, visited_children: list) -> Predicate:
        _, predicate = visited_children
        return predicate

    def visit_group_clause(self, node: Node, visited_children: list) -> GroupBy:
        _, _, first, rest = visited_children
        return GroupBy((first, *_repeated(rest)))

    def visit_having_clause(self, node: Node, visited_children: list) -> Having:
        _, predicate = visited_children
        return Having(predicate)

    def visit_order_clause(self, node: Node, visited_children: list) -> OrderBy:
        _, _, keys, direction = visited_children
        return OrderBy(keys, _optional(direction))

    def visit_limit_clause(self, node: Node, visited_children: list) -> Limit:
        _, count = visited_children
        return Limit(count)

    def visit_operand_list(self, node: Node, visited_children: list) -> tuple:
        first, rest = visited_children
        return (first, *_repeated(rest))

    def visit_more_operand(self, node: Node, visited_children: list) -> ColumnRef | AggExpr:
        _, operand = visited_children
        return operand

    def visit_more_column(self, node: Node, visited_children: list) -> ColumnRef:
        _, column = visited_children
        return column

    def visit_aggregate(self, node: Node, visited_children: list) -> AggExpr:
        fn, _, distinct, arg, _ = visited_children
        return AggExpr(fn, arg, _optional(distinct) is not None)

    def visit_star(self, node: Node, visited_children: list) -> None:
        return None

    def visit_column(self, node: Node, visited_children: list) -> ColumnRef:
        qualifier, name = visited_children
        return ColumnRef(name, _optional(qualifier))

    def visit_qualifier(self, node: Node, visited_children: list) -> str | SlotName:
        table, _ = visited_children
        return table

    def visit_bare_name(self, node: Node, visited_children: list) -> str:
        return node.children[2].text

    def visit_quoted_name(self, node: Node, visited_children: list) -> str:
        return _unquote(node, '"')

    def visit_predicate(self, node: Node, visited_children: list) -> Predicate:
        first, rest = visited_children
        rest = _repeated(rest)
        return Predicate(
            (first, *(condition for _, condition in rest)),
            tuple(connector for connector, _ in rest),
        )

    def visit_connected(self, node: Node, visited_children: list) -> tuple:
        connector, condition = visited_children
        return connector, condition

    def visit_connector(self, node: Node, visited_children: list) -> str:
        return node.children[0].text.upper()

    def visit_condition(self, node: Node, visited_children: list) -> Condition:
        left, (op, values) = visited_children
        return Condition(left, op, values)

    def visit_between(self, node: Node, visited_children: list) -> tuple:
        _, low, _, high = visited_children
        return CompOp.BETWEEN, (low, high)

    def visit_not_in(self, node: Node, visited_children: list) -> tuple:
        _, _, value = visited_children
        return CompOp.NOT_IN, (value,)

    def visit_binary(self, node: Node, visited_children: list) -> tuple:
        op, value = visited_children
        return op, (value,)

    def visit_member_word(self, node: Node, visited_children: list) -> CompOp:
        return OP_ALIASES[node.children[0].text.upper()]

    def visit_op_symbol(self, node: Node, visited_children: list) -> CompOp:
        return OP_ALIASES[node.children[0].text]

    def visit_sort_word(self, node: Node, visited_children: list) -> Direction:
        return Direction(node.children[0].text.upper())

    def visit_agg_word(self, node: Node, visited_children: list) -> AggFn:
        return AggFn(node.children[0].text.upper())

    def visit_string(self, node: Node, visited_children: list) -> Literal:
        return Literal(_unquote(node, "'"), quoted=True)

    def visit_text_value(self, node: Node, visited_children: list) -> Literal:
        return Literal(_unquote(node, '"'), quoted=True)

    def visit_number(self, node: Node, visited_children: list) -> Literal:
        return Literal(node.children[0].text, quoted=False)

    def visit_integer(self, node: Node, visited_children: list) -> int:
        return int(node.children[0].text)

    def visit_subquery(self, node: Node, visited_children: list) -> Subquery:
        _, query, _ = visited_children
        if any(isinstance(n, Subquery) for n in iter_nodes(query)):
            raise ParseError("subqueries nest at most one level", node.start)
        return Subquery(query)


def parse_sql(text: str, mode: ParseMode = ParseMode.CONCRETE) -> Query:
    """
    Parse `text` into an AST.

    Raises ParseError (with character position) for anything outside the
    dialect, and for slot tokens when `mode` is CONCRETE.
    """
    if not text or not text.strip():
        raise ParseError("empty query", 0)
    try:
        tree = sql_grammar.parse(text)
    except PegParseError as e:
        position = max(e.pos, 0)
        near = text[position:position + 20].split("\n")[0]
        message = f"unexpected {near!r}" if near else "unexpected end of query"
        raise ParseError(message, position) from None
    return SqlVisitor(mode).visit(tree)


# ─── Renderer ─────────────────────────────────────────────────────────────────

def render_identifier(name: str | SlotName) -> str:
    if isinstance(name, SlotName):
        return str(name)
    if (
        _PLAIN_IDENTIFIER.match(name)
        and name.upper() not in KEYWORDS
        and not SLOT_PATTERN.match(name)
    ):
        return name
    return '"' + name.replace('"', '""') + '"'


def render_literal(literal: Literal) -> str:
    if literal.quoted:
        return "'" + literal.value.replace("'", "''") + "'"
    return literal.value


def _render(node) -> list[str]:
    match node:
        case SlotName():
            return [str(node)]
        case Literal():
            return [render_literal(node)]
        case TableRef():
            return [render_identifier(node.name)]
        case ColumnRef():
            out = [render_identifier(node.name)]
            if node.table is not None:
                out = [render_identifier(node.table), "."] + out
            return out
        case AggExpr():
            inner = ["DISTINCT"] if node.distinct else []
            inner += ["*"] if node.arg is None else _render(node.arg)
            return [str(node.fn), "("] + inner + [")"]
        case Condition():
            out = _render(node.left) + [str(node.op)] + _render(node.values[0])
            if node.op == CompOp.BETWEEN:
                out += ["AND"] + _render(node.values[1])
            return out
        case Predicate():
            out = _render(node.conditions[0])
            for connector, condition in zip(node.connectors, node.conditions[1:]):
                out += [connector] + _render(condition)
            return out
        case Subquery():
            return ["("] + _render(node.query) + [")"]
        case Join():
            return (
                ["JOIN"] + _render(node.table) + ["ON"]
                + _render(node.left) + ["="] + _render(node.right)
            )
        case GroupBy():
            return ["GROUP", "BY"] + _join_commas(node.columns)
        case Having():
            return ["HAVING"] + _render(node.predicate)
        case OrderBy():
            out = ["ORDER", "BY"] + _join_commas(node.keys)
            if node.direction is not None:
                out.append(str(node.direction))
            return out
        case Limit():
            return ["LIMIT", str(node.count)]
        case Select():
            out = ["SELECT"] + (["DISTINCT"] if node.distinct else [])
            out += _join_commas(node.projections)
            if node.from_table is not None:
                out += ["FROM"] + _render(node.from_table)
            if node.join is not None:
                out += _render(node.join)
            if node.where is not None:
                out += ["WHERE"] + _render(node.where)
            for clause in (node.group_by, node.having, node.order_by, node.limit):
                if clause is not None:
                    out += _render(clause)
            return out
        case SetOp():
            return _render(node.left) + [str(node.kind)] + _render(node.right)
    raise TypeError(f"cannot render {type(node).__name__}")


def _join_commas(items) -> list[str]:
    out: list[str] = []
    for i, item in enumerate(items):
        if i:
            out.append(",")
        out += _render(item)
    return out


def render_sql(node) -> str:
    """Canonical single-line rendering of any AST node."""
    return " ".join(_render(node))


# ─── Slot substitution ────────────────────────────────────────────────────────

def to_literal(value) -> Literal:
    """Bare when the value is a plain SQL number, single-quoted otherwise."""
    if isinstance(value, Literal):
        return value
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = str(value)
    if not isinstance(value, str):
        raise BindingTypeError(f"cannot use {value!r} as a value")
    return Literal(value, quoted=not SQL_NUMBER.match(value))


def _terminal(slot: SlotName, bindings: Mapping):
    if slot not in bindings:
        raise UnboundSlot(slot)
    value = bindings[slot]
    try:
        match slot.kind:
            case SlotKind.TABLE | SlotKind.COLUMN:
                if not isinstance(value, str) or not value:
                    raise BindingTypeError(f"{slot} needs a name, got {value!r}")
                return value
            case SlotKind.VALUE:
                return to_literal(value)
            case SlotKind.AGG:
                return value if isinstance(value, AggFn) else AggFn(str(value).upper())
            case SlotKind.OP:
                op = value if isinstance(value, CompOp) else OP_ALIASES[str(value).upper()]
                if op not in BINARY_OPS:
                    raise BindingTypeError(f"{slot} cannot stand for {op}")
                return op
            case SlotKind.SC:
                return value if isinstance(value, Direction) else Direction(str(value).upper())
    except (ValueError, KeyError):
        raise BindingTypeError(f"{slot} cannot be bound to {value!r}") from None


def substitute_slots(template, bindings: Mapping[SlotName, object]):
    """
    Replace every slot in `template` with its bound terminal.

    Accepted terminals: TABLE/COLUMN -> name string, VALUE -> Literal or
    string, AGG -> AggFn (or its name), OP -> one of BINARY_OPS (or its
    symbol), SC -> Direction (or its name). Tree shape is unchanged.
    """
    if isinstance(template, SlotName):
        return _terminal(template, bindings)
    if not is_dataclass(template):
        return template
    changes = {}
    for f in fields(template):
        value = getattr(template, f.name)
        if isinstance(value, tuple):
            new = tuple(substitute_slots(item, bindings) for item in value)
            if all(a is b for a, b in zip(new, value)):
                new = value
        else:
            new = substitute_slots(value, bindings)
        if new is not value:
            changes[f.name] = new
    return replace(template, **changes) if changes else template
