"""
config.py

PipelineConfig, the INI-style config file (read with configparser), and
per-stage seed derivation.
"""

import configparser
import logging
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from tablesynth.corpus import CorpusFormat
from tablesynth.errors import ConfigError
from tablesynth.serializer import MASK_PROBABILITY, SEPARATOR
from tablesynth.synthesizer import RETRY_BUDGET

logger = logging.getLogger(__name__)

ENV_PREFIX = "TABLESYNTH"
SEED_STAGES = ("synthesize", "mask", "shuffle")
_SHARED_SECTION = "__shared__"


@dataclass(frozen=True)
class PipelineConfig:
    corpus: Path | None = None
    corpus_format: CorpusFormat = CorpusFormat.JSONL_TABLES
    grammar: Path | None = None  # None: the starter grammar
    seed_pairs: Path | None = None
    utterances: Path | None = None
    examples: Path | None = None
    vocabulary: Path | None = None
    output_dir: Path = Path("tablesynth-out")
    seed: int = 0
    n_examples: int = 1000
    top_k: int = 90
    exemplar_cap: int = 4
    separator: str = SEPARATOR
    mask_probability: float = MASK_PROBABILITY
    retry_budget: int = RETRY_BUDGET
    workers: int = 1
    dedup: bool = True

    def validate(self) -> "PipelineConfig":
        for name in ("seed", "n_examples", "exemplar_cap"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("top_k", "workers", "retry_budget"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if not 0.0 <= self.mask_probability <= 1.0:
            raise ConfigError(f"mask_probability must be in [0, 1], got {self.mask_probability}")
        if not self.separator or self.separator != self.separator.strip() or " " in self.separator:
            raise ConfigError(f"separator must be a single token, got {self.separator!r}")
        return self

    def with_options(self, **options) -> "PipelineConfig":
        """Copy with every non-None option applied, paths coerced."""
        known = {f.name for f in fields(self)}
        changes = {}
        for name, value in options.items():
            if name not in known:
                raise ConfigError(f"unknown setting {name!r}")
            if value is None:
                continue
            if name in ("corpus", "grammar", "seed_pairs", "utterances", "examples", "vocabulary", "output_dir"):
                value = Path(value)
            elif name == "corpus_format":
                value = CorpusFormat(value)
            changes[name] = value
        return replace(self, **changes).validate()

    def stage_seed(self, stage: str) -> int:
        return derive_seed(self.seed, stage)


def derive_seed(seed: int, stage: str) -> int:
    """Independent 32-bit seed for one pipeline stage, fixed by (seed, stage)."""
    if stage not in SEED_STAGES:
        raise ConfigError(f"unknown seed stage {stage!r}")
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    sequence = np.random.SeedSequence(seed, spawn_key=(SEED_STAGES.index(stage),))
    return int(sequence.generate_state(1)[0])


def read_config_file(path: Path) -> dict[str, dict[str, str]]:
    """
    Parse a config file into {section: {key: value}}. Lines before any
    `[section]` header land in the "" section and apply to every command.

        # tablesynth.cfg
        seed = 7
        workers = 4

        [synthesize]
        n-examples = 50000

    Raises ConfigError for malformed lines, OSError when unreadable.
    """
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SHARED_SECTION}]\n{text}", source=str(path))
    except configparser.ParsingError as e:
        line_no, line = e.errors[0]
        raise ConfigError(f"{path}:{line_no - 1}: expected 'key = value', got {line}") from None
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e.message}") from None

    sections: dict[str, dict[str, str]] = {}
    for name in parser.sections():
        key = "" if name == _SHARED_SECTION else name
        sections[key] = {k.replace("-", "_"): v for k, v in parser.items(name, raw=True)}
    return sections


def build_default_map(sections: dict[str, dict[str, str]], commands) -> dict[str, dict[str, str]]:
    """click default_map: shared settings under every command, section settings on top."""
    shared = sections.get("", {})
    unknown = set(sections) - {""} - set(commands)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    return {name: {**shared, **sections.get(name, {})} for name in commands}
