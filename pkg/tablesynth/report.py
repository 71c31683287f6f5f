import json
from collections import Counter
from datetime import datetime, timezone
from pathlib import Path

from tablesynth.labeler import LabelVocabulary
from tablesynth.serializer import FlatSequence, MaskSelection, Objective


def build_stats(
    records: list[tuple[FlatSequence, MaskSelection | None]],
    vocab: LabelVocabulary | None = None,
) -> dict:
    """
    Build the stats dictionary for a serialized dataset.

    Args:
        records: (sequence, mask selection) pairs as returned by read_dataset.
        vocab: When given, class indices are reported by label name.

    Returns:
        A dict with per-objective counts, per-rule counts, the label
        histogram and the empirical mask rate.
    """
    ssp = [s for s, _ in records if s.objective == Objective.SSP]
    mlm = [m for s, m in records if s.objective == Objective.MLM and m is not None]

    rules = Counter(s.meta.get("rule_id", "") for s in ssp)
    classes = Counter(c for s in ssp for c in s.classes)

    def label_name(index: int) -> str:
        if vocab is not None and 0 <= index < len(vocab):
            return vocab.labels[index]
        return str(index)

    masked = sum(len(m.positions) for m in mlm)
    eligible = sum(m.eligible for m in mlm)

    return {
        "built_at": datetime.now(timezone.utc).isoformat(),
        "total_records": len(records),
        "objectives": {str(Objective.SSP): len(ssp), str(Objective.MLM): len(mlm)},
        "rules": dict(sorted(rules.items(), key=lambda kv: (-kv[1], kv[0]))),
        "vocabulary_size": len(vocab) if vocab is not None else len(classes),
        "labels": {label_name(i): n for i, n in sorted(classes.items(), key=lambda kv: (-kv[1], kv[0]))},
        "masked_tokens": masked,
        "eligible_tokens": eligible,
        "mask_rate": masked / eligible if eligible else 0.0,
    }


def write_report(report: dict, output_path: Path) -> None:
    """Write a report dict to a JSON file at output_path."""
    output_path.parent.mkdir(parents=True, exist_ok=True)
    with open(output_path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, ensure_ascii=False)


def format_size(size_bytes: int) -> str:
    """Human-readable file size string."""
    if size_bytes < 1024:
        return f"{size_bytes} B"
    elif size_bytes < 1024 ** 2:
        return f"{size_bytes / 1024:.1f} KB"
    elif size_bytes < 1024 ** 3:
        return f"{size_bytes / 1024 ** 2:.1f} MB"
    else:
        return f"{size_bytes / 1024 ** 3:.2f} GB"


def format_duration(seconds: float | None) -> str:
    if seconds is None:
        return "unknown"
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes = int(seconds // 60)
    secs = seconds % 60
    return f"{minutes}m {secs:.1f}s"


def _share(count: int, total: int) -> str:
    return f"{100 * count / total:5.1f}%" if total else "  0.0%"


def summarize_stats(stats: dict, top: int = 20) -> str:
    """
    Return a human-readable summary of a stats dict, suitable for printing
    to the terminal. Only the `top` most frequent rules and labels are listed.
    """
    objectives = stats["objectives"]
    ssp_total = objectives.get("SSP", 0)
    lines = [
        "",
        "── Dataset Stats ───────────────────────────────────────",
        f"  Records         {stats['total_records']}",
        f"  SSP             {ssp_total}",
        f"  MLM             {objectives.get('MLM', 0)}",
        f"  Label classes   {stats['vocabulary_size']}",
        f"  Mask rate       {stats['mask_rate']:.4f}"
        f"  ({stats['masked_tokens']}/{stats['eligible_tokens']} tokens)",
        "────────────────────────────────────────────────────────",
    ]

    if stats["rules"]:
        lines.append("\n  Rules")
        for rule_id, count in list(stats["rules"].items())[:top]:
            lines.append(f"    {rule_id:<32} {count:>8}  {_share(count, ssp_total)}")

    if stats["labels"]:
        total_columns = sum(stats["labels"].values())
        lines.append("\n  Labels")
        for label, count in list(stats["labels"].items())[:top]:
            lines.append(f"    {label:<32} {count:>8}  {_share(count, total_columns)}")

    lines.append("")
    return "\n".join(lines)


def summarize_run(title: str, rows: list[tuple[str, object]], duration_seconds: float | None) -> str:
    """Box-drawn block for the end of a pipeline stage."""
    lines = ["", f"── {title} " + "─" * max(3, 52 - len(title))]
    lines += [f"  {label:<16}{value}" for label, value in rows]
    if duration_seconds is not None:
        lines.append(f"  {'Took':<16}{format_duration(duration_seconds)}")
    lines.append("─" * 56)
    lines.append("")
    return "\n".join(lines)
