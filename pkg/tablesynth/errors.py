"""
errors.py

Exception hierarchy shared by every tablesynth stage. Per-record problems
(a ragged table, an out-of-dialect seed query) are not raised; they are
recorded in a SkipReport. Everything here is raised.
"""


class TableSynthError(Exception):
    """Base class for all tablesynth errors."""


class ParseError(TableSynthError):
    """SQL text outside the template dialect."""

    def __init__(self, message: str, position: int):
        self.message = message
        self.position = position
        super().__init__(f"{message} (at position {position})")


class UnboundSlot(TableSynthError):
    """A slot with no binding was reached during substitution or rendering."""

    def __init__(self, slot):
        self.slot = slot
        super().__init__(f"unbound slot {slot}")


class BindingTypeError(TableSynthError):
    """A slot was bound to a terminal of the wrong kind."""


class GrammarError(TableSynthError):
    """A grammar file or production rule violates a grammar invariant."""

    def __init__(self, rule_id: str | None, violation: str):
        self.rule_id = rule_id
        self.violation = violation
        where = f"rule {rule_id!r}" if rule_id else "grammar"
        super().__init__(f"{where}: {violation}")


class LexiconError(TableSynthError):
    """A terminal has no natural-language phrase in the lexicon."""


class AbstractionError(TableSynthError):
    """A concrete query references an identifier the schema does not have."""


class BindFailure(TableSynthError):
    """A rule cannot be bound against the drawn table. Callers retry."""

    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


class PartialOutput(TableSynthError):
    """Generation ran out of retries before producing every example."""

    def __init__(self, examples: list, diagnostics: dict):
        self.examples = examples
        self.diagnostics = diagnostics
        super().__init__(
            f"generated {len(examples)} example(s) before the retry budget ran out"
        )


class LabelError(TableSynthError):
    """A column reference in the query does not resolve against the schema."""


class VocabError(TableSynthError):
    """A label is missing from the frozen label vocabulary."""


class ConfigError(TableSynthError):
    """Invalid pipeline configuration."""
