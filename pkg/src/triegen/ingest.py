"""Log cleaning, chronological splitting, and query-pool extraction.

Raw interaction logs arrive as TSV rows (one video-query pair each, with
exposure/click/similarity side data). Cleaning keeps rows with enough
exposure and clicks, similarity at or above threshold, and no blocked
terms; the survivors are split chronologically into train/validation/test
and reduced to a windowed, deduplicated query pool that feeds the trie.
"""
from __future__ import annotations

import random
from abc import ABC, abstractmethod
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass
from datetime import date, datetime
from pathlib import Path

from .io_utils import FileFormatError, dump_json_line

LOG_COLUMNS = ("caption", "ocr_cover", "query", "exposure", "clicks", "similarity", "timestamp")
REJECT_REASONS = ("exposure", "clicks", "similarity", "blocklist", "excluded")


@dataclass(frozen=True)
class LogRecord:
    """One video-query interaction row."""

    caption: str
    ocr_cover: str
    query: str
    exposure: int
    clicks: int
    similarity: float
    timestamp: datetime

    def __post_init__(self) -> None:
        if self.exposure < 0:
            raise ValueError("exposure must be nonnegative")
        if self.clicks < 0:
            raise ValueError("clicks must be nonnegative")
        if self.clicks > self.exposure:
            raise ValueError(f"clicks ({self.clicks}) exceed exposure ({self.exposure})")
        if not 0.0 <= self.similarity <= 1.0:
            raise ValueError(f"similarity {self.similarity} outside [0, 1]")


@dataclass(frozen=True)
class CleaningConfig:
    """Admission thresholds; keeps use >=, i.e. rows below are filtered out.

    ``min_similarity`` defaults to 0.44 as calibrated against a production
    multimodal similarity model; runs that score with the bundled bigram
    scorer should recalibrate it. ``blocklist`` matches substrings in any
    text field; ``excluded_queries`` drops exact query strings, the manual
    review hook.
    """

    min_exposure: int = 1000
    min_clicks: int = 10
    min_similarity: float = 0.44
    blocklist: frozenset[str] = frozenset()
    excluded_queries: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if self.min_exposure < 0 or self.min_clicks < 0:
            raise ValueError("thresholds must be nonnegative")
        if self.min_similarity < 0:
            raise ValueError("min_similarity must be nonnegative")


class SimilarityScorer(ABC):
    """Deterministic item/query similarity in [0, 1].

    Stands in for a learned multimodal relevance model; the reference
    implementation below is character-bigram Jaccard overlap.
    """

    @abstractmethod
    def score(self, caption: str, ocr_cover: str, query: str) -> float: ...


def _char_bigrams(text: str) -> set[str]:
    text = text.strip()
    if len(text) < 2:
        return {text} if text else set()
    return {text[i : i + 2] for i in range(len(text) - 1)}


class CharBigramJaccard(SimilarityScorer):
    def score(self, caption: str, ocr_cover: str, query: str) -> float:
        item = _char_bigrams(f"{caption} {ocr_cover}".strip())
        q = _char_bigrams(query)
        if not item and not q:
            return 1.0
        if not item or not q:
            return 0.0
        return len(item & q) / len(item | q)


def rejection_reason(record: LogRecord, cfg: CleaningConfig) -> str | None:
    """First failing rule in fixed order, or None if the record is kept."""
    if record.exposure < cfg.min_exposure:
        return "exposure"
    if record.clicks < cfg.min_clicks:
        return "clicks"
    if record.similarity < cfg.min_similarity:
        return "similarity"
    for term in cfg.blocklist:
        if term and (term in record.caption or term in record.ocr_cover or term in record.query):
            return "blocklist"
    if record.query in cfg.excluded_queries:
        return "excluded"
    return None


def clean(
    records: Sequence[LogRecord],
    cfg: CleaningConfig | None = None,
) -> tuple[list[LogRecord], Counter]:
    """Split records into (kept, rejection counts by first-failing rule)."""
    if cfg is None:
        cfg = CleaningConfig()
    kept: list[LogRecord] = []
    report: Counter = Counter({reason: 0 for reason in REJECT_REASONS})
    for record in records:
        reason = rejection_reason(record, cfg)
        if reason is None:
            kept.append(record)
        else:
            report[reason] += 1
    return kept, report


def chronological_split(
    records: Sequence[LogRecord],
    train_count: int,
    holdout_count: int,
    seed: int,
) -> tuple[list[LogRecord], list[LogRecord], list[LogRecord]]:
    """Oldest ``train_count`` records train; the next ``holdout_count`` are
    shuffled by ``seed`` and halved into validation and test."""
    if train_count < 0 or holdout_count < 0:
        raise ValueError("counts must be nonnegative")
    if holdout_count % 2 != 0:
        raise ValueError("holdout_count must be even to halve into validation/test")
    if train_count + holdout_count > len(records):
        raise ValueError(
            f"need {train_count + holdout_count} records, have {len(records)}"
        )
    ordered = sorted(records, key=lambda r: r.timestamp)
    train = ordered[:train_count]
    holdout = ordered[train_count : train_count + holdout_count]
    rng = random.Random(seed)
    shuffled = list(holdout)
    rng.shuffle(shuffled)
    half = holdout_count // 2
    return train, shuffled[:half], shuffled[half:]


def build_query_pool(
    records: Sequence[LogRecord],
    today: date,
    window_days: int,
) -> list[tuple[str, date, int]]:
    """Deduplicate cleaned records into (query, last seen, count) pool entries.

    Records observed more than ``window_days`` before ``today`` are ignored
    (inclusive boundary: exactly window_days old still counts). Entries
    come back sorted by query string.
    """
    if window_days < 1:
        raise ValueError("window_days must be positive")
    merged: dict[str, tuple[date, int]] = {}
    for record in records:
        seen = record.timestamp.date()
        if (today - seen).days > window_days:
            continue
        if record.query in merged:
            last, count = merged[record.query]
            merged[record.query] = (max(last, seen), count + 1)
        else:
            merged[record.query] = (seen, 1)
    return [(q, seen, count) for q, (seen, count) in sorted(merged.items())]


# ---------------------------------------------------------------------------
# File formats.
# ---------------------------------------------------------------------------

def read_log_tsv(path) -> list[LogRecord]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FileFormatError(path, 1, "missing header row")
    header = tuple(lines[0].split("\t"))
    if header != LOG_COLUMNS:
        raise FileFormatError(path, 1, f"expected header {list(LOG_COLUMNS)}, got {list(header)}")
    records: list[LogRecord] = []
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            raise FileFormatError(path, i, "blank line inside data section")
        parts = line.split("\t")
        if len(parts) != len(LOG_COLUMNS):
            raise FileFormatError(path, i, f"expected {len(LOG_COLUMNS)} fields, got {len(parts)}")
        caption, ocr_cover, query, raw_exposure, raw_clicks, raw_similarity, raw_ts = parts
        try:
            record = LogRecord(
                caption=caption,
                ocr_cover=ocr_cover,
                query=query,
                exposure=int(raw_exposure),
                clicks=int(raw_clicks),
                similarity=float(raw_similarity),
                timestamp=datetime.fromisoformat(raw_ts),
            )
        except ValueError as exc:
            raise FileFormatError(path, i, str(exc)) from exc
        records.append(record)
    return records


def log_tsv_text(records: Sequence[LogRecord]) -> str:
    lines = ["\t".join(LOG_COLUMNS)]
    for r in records:
        for name, value in (("caption", r.caption), ("ocr_cover", r.ocr_cover), ("query", r.query)):
            if "\t" in value or "\n" in value or "\r" in value:
                raise ValueError(f"{name} contains a control character, cannot serialize to TSV")
        lines.append(
            "\t".join(
                (
                    r.caption,
                    r.ocr_cover,
                    r.query,
                    str(r.exposure),
                    str(r.clicks),
                    repr(r.similarity),
                    r.timestamp.isoformat(),
                )
            )
        )
    return "\n".join(lines) + "\n"


def dataset_jsonl_text(records: Sequence[LogRecord]) -> str:
    lines = [
        dump_json_line({"caption": r.caption, "ocr_cover": r.ocr_cover, "query": r.query})
        for r in records
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def read_dataset_jsonl(path) -> list[dict]:
    """Read {caption, ocr_cover, query} rows, validating the required keys."""
    from .io_utils import read_jsonl

    rows = read_jsonl(path)
    for i, row in enumerate(rows, start=1):
        for key in ("caption", "ocr_cover", "query"):
            if key not in row or not isinstance(row[key], str):
                raise FileFormatError(path, i, f"missing or non-string field {key!r}")
    return rows
