"""
serializer.py

Model-ready pre-training records. Every record is one flat whitespace-level
token sequence:

    utterance tokens </s> column tokens </s> column tokens ...

SSP records carry one class index per separator; MLM records carry the
positions chosen for masking and the replacement action for each.
Multi-table records prefix every column with its table name.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from tablesynth.corpus import TableSchema, UtteranceRecord
from tablesynth.errors import LabelError
from tablesynth.labeler import LabelVocabulary, as_tables

logger = logging.getLogger(__name__)

SEPARATOR = "</s>"
MASK_PROBABILITY = 0.15
# mask / random token / keep, applied to each selected position
MASK_POLICY = (0.8, 0.1, 0.1)


class Objective(StrEnum):
    SSP = "SSP"
    MLM = "MLM"


class MaskAction(StrEnum):
    MASK = "mask"
    RANDOM = "random"
    KEEP = "keep"


@dataclass(frozen=True)
class FlatSequence:
    tokens: tuple[str, ...]
    sep_positions: tuple[int, ...]
    column_order: tuple[int, ...]
    objective: Objective
    classes: tuple[int, ...] = ()
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MaskSelection:
    positions: tuple[int, ...]
    actions: tuple[MaskAction, ...]
    probability: float
    eligible: int


def flatten(
    question: str,
    schema: TableSchema | Sequence[TableSchema],
    separator: str = SEPARATOR,
) -> tuple[list[str], list[int], list[int]]:
    """Tokens, separator positions and flat column indices for one record."""
    tables = as_tables(schema)
    prefix_tables = len(tables) > 1
    tokens = question.split()
    sep_positions, column_order = [], []
    flat_index = 0
    for table in tables:
        for column in table.columns:
            sep_positions.append(len(tokens))
            column_order.append(flat_index)
            tokens.append(separator)
            if prefix_tables:
                tokens.extend(table.name.split())
            tokens.extend(column.name.split())
            flat_index += 1
    return tokens, sep_positions, column_order


def serialize_ssp(example, vocab: LabelVocabulary, separator: str = SEPARATOR) -> FlatSequence:
    """
    Flat sequence of a labeled SynthExample with one class index per column.
    Raises VocabError for a label outside `vocab`.
    """
    tokens, sep_positions, column_order = flatten(example.question, example.tables, separator)
    missing = [i for i in column_order if i not in example.labels]
    if missing:
        raise LabelError(f"{example.example_id} has no label for column(s) {missing}")
    classes = tuple(vocab.index(example.labels[i]) for i in column_order)
    return FlatSequence(
        tokens=tuple(tokens),
        sep_positions=tuple(sep_positions),
        column_order=tuple(column_order),
        objective=Objective.SSP,
        classes=classes,
        meta={"id": example.example_id, "rule_id": example.rule_id, "table_id": example.table_id},
    )


def select_masks(
    n_tokens: int,
    sep_positions: Sequence[int],
    rng: np.random.Generator,
    probability: float = MASK_PROBABILITY,
) -> MaskSelection:
    """Draw each non-separator position independently with `probability`."""
    separators = set(sep_positions)
    eligible = np.array([i for i in range(n_tokens) if i not in separators], dtype=int)
    chosen = eligible[rng.random(len(eligible)) < probability]
    draws = rng.random(len(chosen))
    mask_cut, random_cut = MASK_POLICY[0], MASK_POLICY[0] + MASK_POLICY[1]
    actions = tuple(
        MaskAction.MASK if d < mask_cut else MaskAction.RANDOM if d < random_cut else MaskAction.KEEP
        for d in draws
    )
    return MaskSelection(
        positions=tuple(int(i) for i in chosen),
        actions=actions,
        probability=probability,
        eligible=len(eligible),
    )


def serialize_mlm(
    record: UtteranceRecord,
    rng: np.random.Generator,
    separator: str = SEPARATOR,
    probability: float = MASK_PROBABILITY,
) -> tuple[FlatSequence, MaskSelection]:
    tokens, sep_positions, column_order = flatten(record.text, record.schema, separator)
    selection = select_masks(len(tokens), sep_positions, rng, probability)
    sequence = FlatSequence(
        tokens=tuple(tokens),
        sep_positions=tuple(sep_positions),
        column_order=tuple(column_order),
        objective=Objective.MLM,
        meta={
            "source": record.source,
            "table_id": record.schema.table_id,
            "mask_probability": probability,
        },
    )
    return sequence, selection


# ─── Dataset file ─────────────────────────────────────────────────────────────

def _ssp_line(sequence: FlatSequence) -> dict:
    return {
        "objective": str(Objective.SSP),
        "tokens": list(sequence.tokens),
        "sep_positions": list(sequence.sep_positions),
        "classes": list(sequence.classes),
        "meta": sequence.meta,
    }


def _mlm_line(sequence: FlatSequence, selection: MaskSelection) -> dict:
    return {
        "objective": str(Objective.MLM),
        "tokens": list(sequence.tokens),
        "sep_positions": list(sequence.sep_positions),
        "mask_positions": list(selection.positions),
        "mask_actions": [str(a) for a in selection.actions],
        "meta": sequence.meta,
    }


def write_dataset(
    ssp: list[FlatSequence],
    mlm: list[tuple[FlatSequence, MaskSelection]],
    output_path: Path,
    shuffle_seed: int,
) -> dict[str, int]:
    """
    Write SSP and MLM records interleaved into one JSONL file, shuffled by
    `shuffle_seed`. Returns the per-objective record counts.
    """
    lines = [_ssp_line(s) for s in ssp] + [_mlm_line(s, m) for s, m in mlm]
    if not lines:
        raise ValueError("dataset has no records")
    order = np.random.default_rng(shuffle_seed).permutation(len(lines))

    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8") as f:
        for i in order:
            f.write(json.dumps(lines[i], ensure_ascii=False) + "\n")

    counts = {str(Objective.SSP): len(ssp), str(Objective.MLM): len(mlm)}
    logger.info("wrote %d SSP and %d MLM record(s) to %s", len(ssp), len(mlm), output_path)
    return counts


def read_dataset(path: Path) -> list[tuple[FlatSequence, MaskSelection | None]]:
    """Records of a dataset file in file order; the selection is None for SSP."""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            data = json.loads(line)
            objective = Objective(data["objective"])
            sep_positions = tuple(data["sep_positions"])
            sequence = FlatSequence(
                tokens=tuple(data["tokens"]),
                sep_positions=sep_positions,
                column_order=tuple(range(len(sep_positions))),
                objective=objective,
                classes=tuple(data.get("classes", ())),
                meta=data.get("meta", {}),
            )
            selection = None
            if objective == Objective.MLM:
                selection = MaskSelection(
                    positions=tuple(data["mask_positions"]),
                    actions=tuple(MaskAction(a) for a in data.get("mask_actions", ())),
                    probability=sequence.meta.get("mask_probability", MASK_PROBABILITY),
                    eligible=len(sequence.tokens) - len(sep_positions),
                )
            records.append((sequence, selection))
    return records
