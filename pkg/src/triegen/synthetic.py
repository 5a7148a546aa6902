"""Deterministic synthetic interaction logs for demos and end-to-end tests.

The generator fabricates short-video metadata around a fixed pool of 100
two-word queries. Most rows clear the default cleaning thresholds; a
slice deliberately fails each rule so rejection reporting has something
to count. Everything is driven by a single seed.
"""
from __future__ import annotations

import random
from datetime import datetime, timedelta
from pathlib import Path

from .ingest import LogRecord, log_tsv_text

SUBJECTS = (
    "nba", "pasta", "guitar", "yoga", "drone", "sourdough", "chess", "skiing", "anime", "garden",
)
ASPECTS = (
    "highlights", "recipe", "tutorial", "tips", "review", "fails", "history", "rules", "workout", "setup",
)

_CAPTION_SHAPES = (
    "watch this {subject} {aspect} video",
    "my best {subject} {aspect} so far",
    "{subject} {aspect} for beginners",
    "daily {subject} clip about {aspect}",
    "the {aspect} every {subject} fan needs",
)
_OCR_SHAPES = (
    "{subject} {aspect}",
    "top {subject} {aspect}",
    "{aspect} time",
)

DEFAULT_START = datetime(2024, 5, 1, 8, 0)


def query_pool() -> list[str]:
    """The 100 distinct queries all synthetic records draw from."""
    return sorted(f"{s} {a}" for s in SUBJECTS for a in ASPECTS)


def _item_text(query: str, rng: random.Random) -> tuple[str, str]:
    subject, aspect = query.split(" ", 1)
    caption = rng.choice(_CAPTION_SHAPES).format(subject=subject, aspect=aspect)
    ocr = "" if rng.random() < 0.15 else rng.choice(_OCR_SHAPES).format(subject=subject, aspect=aspect)
    return caption, ocr


def make_log_records(
    n: int = 500,
    seed: int = 0,
    start: datetime = DEFAULT_START,
    span_days: int = 20,
) -> list[LogRecord]:
    rng = random.Random(seed)
    pool = query_pool()
    records: list[LogRecord] = []
    for _ in range(n):
        query = rng.choice(pool)
        caption, ocr = _item_text(query, rng)
        roll = rng.random()
        if roll < 0.05:
            exposure = rng.randint(0, 999)          # fails the exposure rule
            clicks = rng.randint(0, min(9, exposure))
        elif roll < 0.10:
            exposure = rng.randint(1000, 20000)
            clicks = rng.randint(0, 9)              # fails the clicks rule
        else:
            exposure = rng.randint(1000, 50000)
            clicks = rng.randint(10, max(10, exposure // 20))
        if rng.random() < 0.06:
            similarity = round(rng.uniform(0.0, 0.43), 3)   # fails similarity
        else:
            similarity = round(rng.uniform(0.44, 0.98), 3)
        timestamp = start + timedelta(
            days=rng.randint(0, span_days - 1),
            hours=rng.randint(0, 23),
            minutes=rng.randint(0, 59),
        )
        records.append(
            LogRecord(
                caption=caption,
                ocr_cover=ocr,
                query=query,
                exposure=exposure,
                clicks=clicks,
                similarity=similarity,
                timestamp=timestamp,
            )
        )
    return records


def write_synthetic_logs(path, n: int = 500, seed: int = 0) -> int:
    """Write a synthetic log TSV; returns the number of rows written."""
    records = make_log_records(n=n, seed=seed)
    Path(path).write_text(log_tsv_text(records), encoding="utf-8")
    return len(records)


def make_query_examples(n: int = 500, seed: int = 0) -> list[tuple[str, str, str]]:
    """(caption, ocr_cover, query) triples whose queries all come from the pool.

    Handy for training-dynamics tests that need every target to be a
    stored trie query.
    """
    rng = random.Random(seed)
    pool = query_pool()
    out: list[tuple[str, str, str]] = []
    for _ in range(n):
        query = rng.choice(pool)
        caption, ocr = _item_text(query, rng)
        out.append((caption, ocr, query))
    return out
