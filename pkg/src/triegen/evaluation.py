"""Edit-distance evaluation of ranked query predictions against ground truth.

The headline number is the mean character-level edit distance between the
ground-truth query and the top-k predictions, averaged over records;
lower is better. Distances are over Unicode scalars with unit costs.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance: minimal insertions + deletions + substitutions."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ch_a in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, ch_b in enumerate(b, start=1):
            current[j] = min(
                previous[j] + 1,        # delete from a
                current[j - 1] + 1,     # insert into a
                previous[j - 1] + (ch_a != ch_b),
            )
        previous = current
    return previous[-1]


@dataclass(frozen=True)
class EvalRecord:
    """Ground truth plus predictions ranked best-first."""

    ground_truth: str
    predictions: tuple[str, ...]


@dataclass(frozen=True)
class EvalSummary:
    """Per-k means, counts of records that had fewer than k predictions,
    and the unweighted average of the per-k means."""

    edit_at: dict[int, float]
    shortfalls: dict[int, int]
    average: float


def edit_at_k(record: EvalRecord, k: int) -> float:
    """Mean distance from the ground truth to the top-k predictions.

    Records with fewer than k predictions average over what is available;
    the shortfall is surfaced by `evaluate` rather than penalized here.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if not record.predictions:
        raise ValueError("record has no predictions")
    top = record.predictions[:k]
    return sum(edit_distance(record.ground_truth, p) for p in top) / len(top)


def evaluate(records: Sequence[EvalRecord], ks: Sequence[int] = (1, 5, 10, 20)) -> EvalSummary:
    if not records:
        raise ValueError("no records to evaluate")
    if not ks:
        raise ValueError("need at least one k")
    for k in ks:
        if k < 1:
            raise ValueError(f"k must be at least 1, got {k}")
    edit_at = {k: sum(edit_at_k(r, k) for r in records) / len(records) for k in ks}
    shortfalls = {k: sum(1 for r in records if len(r.predictions) < k) for k in ks}
    average = sum(edit_at.values()) / len(edit_at)
    return EvalSummary(edit_at=edit_at, shortfalls=shortfalls, average=average)


def summary_table(summary: EvalSummary) -> str:
    """Render the summary as a TSV table, one row per k plus the average."""
    lines = ["k\tmean_edit_distance\trecords_missing_k"]
    for k in summary.edit_at:
        lines.append(f"{k}\t{summary.edit_at[k]:.6f}\t{summary.shortfalls[k]}")
    lines.append(f"avg\t{summary.average:.6f}\t")
    return "\n".join(lines) + "\n"
