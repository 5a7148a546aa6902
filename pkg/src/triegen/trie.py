"""Prefix trie over tokenized queries, with recency metadata and eviction.

The trie stores the admissible query pool: inserting a query marks a
root-to-terminal path, `children(prefix)` answers which tokens may follow
a prefix, and `evict_expired` drops queries whose most recent sighting
fell out of the retention window. A snapshot text format round-trips the
stored queries so a freshly built trie can be swapped in under readers.

Writer/reader discipline: `insert` mutates (single-writer construction),
while `evict_expired` returns a new pruned trie and leaves the original
untouched, so readers of the old snapshot are never disturbed.
"""
from __future__ import annotations

import re
from collections.abc import Iterator, Sequence
from datetime import date, timedelta
from pathlib import Path

from .io_utils import FileFormatError, escape, unescape
from .vocab import OutOfVocabularyError, Vocabulary


class SnapshotParseError(FileFormatError):
    """A trie snapshot or pool file could not be parsed."""


_HEADER_RE = re.compile(r"^TRIE v1 window=(\d+)$")


class TrieNode:
    """One trie position.

    `last_seen` is the max over every stored query at or below this node,
    which lets eviction discard whole stale subtrees without visiting
    them. The query's own date lives at its terminal (`terminal_seen`).
    `weight` counts distinct stored queries whose path runs through here.
    """

    __slots__ = ("children", "terminal", "last_seen", "terminal_seen", "terminal_count", "weight")

    def __init__(self) -> None:
        self.children: dict[int, TrieNode] = {}
        self.terminal = False
        self.last_seen: date | None = None
        self.terminal_seen: date | None = None
        self.terminal_count = 0
        self.weight = 0

    def equivalent(self, other: "TrieNode") -> bool:
        if (
            self.terminal != other.terminal
            or self.last_seen != other.last_seen
            or self.terminal_seen != other.terminal_seen
            or self.terminal_count != other.terminal_count
            or self.weight != other.weight
            or self.children.keys() != other.children.keys()
        ):
            return False
        return all(child.equivalent(other.children[tok]) for tok, child in self.children.items())


class QueryTrie:
    """Prefix tree over token-id sequences with a day-granular retention window."""

    def __init__(self, window_days: int = 15) -> None:
        if window_days < 1:
            raise ValueError("window_days must be a positive integer")
        self.window_days = window_days
        self.root = TrieNode()

    @property
    def query_count(self) -> int:
        return self.root.weight

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QueryTrie):
            return NotImplemented
        return self.window_days == other.window_days and self.root.equivalent(other.root)

    def insert(self, query: Sequence[int], seen: date, count: int = 1) -> "QueryTrie":
        """Store a query observed on `seen`.

        Re-inserting an existing query keeps the later date and adds to its
        observation count; the structure itself does not change.
        """
        ids = list(query)
        if not ids:
            raise ValueError("cannot insert an empty query")
        if count < 1:
            raise ValueError("count must be at least 1")
        node = self.root
        path = [node]
        for token in ids:
            node = node.children.setdefault(token, TrieNode())
            path.append(node)
        new_query = not node.terminal
        node.terminal = True
        node.terminal_seen = seen if node.terminal_seen is None else max(node.terminal_seen, seen)
        node.terminal_count += count
        for step in path:
            if new_query:
                step.weight += 1
            step.last_seen = seen if step.last_seen is None else max(step.last_seen, seen)
        return self

    def _walk(self, prefix: Sequence[int]) -> TrieNode | None:
        node = self.root
        for token in prefix:
            node = node.children.get(token)  # type: ignore[assignment]
            if node is None:
                return None
        return node

    def children(self, prefix: Sequence[int]) -> set[int]:
        """Token ids that may follow `prefix`; empty set if `prefix` is not a path."""
        node = self._walk(prefix)
        return set() if node is None else set(node.children)

    def is_complete(self, query: Sequence[int]) -> bool:
        node = self._walk(query)
        return node is not None and node.terminal

    def node_at(self, prefix: Sequence[int]) -> TrieNode | None:
        """Expose the node for a prefix; decoding walks nodes directly."""
        return self._walk(prefix)

    def evict_expired(self, today: date) -> "QueryTrie":
        """Return a new trie without queries last seen before the window.

        A query seen exactly `window_days` ago is retained (inclusive
        boundary). The receiver is left untouched.
        """
        cutoff = today - timedelta(days=self.window_days)
        fresh = QueryTrie(self.window_days)
        pruned = _prune(self.root, cutoff)
        if pruned is not None:
            fresh.root = pruned
        return fresh

    def queries(self) -> Iterator[tuple[tuple[int, ...], date, int]]:
        """Yield (token ids, last seen, observation count), token-lexicographic."""
        yield from _collect(self.root, [])

    def max_depth(self) -> int:
        return _depth(self.root)


def _prune(node: TrieNode, cutoff: date) -> TrieNode | None:
    if node.last_seen is not None and node.last_seen < cutoff:
        return None  # every query below is stale
    fresh = TrieNode()
    for token in node.children:
        kept = _prune(node.children[token], cutoff)
        if kept is not None:
            fresh.children[token] = kept
    if node.terminal and node.terminal_seen is not None and node.terminal_seen >= cutoff:
        fresh.terminal = True
        fresh.terminal_seen = node.terminal_seen
        fresh.terminal_count = node.terminal_count
    if not fresh.terminal and not fresh.children:
        return None  # would be a dangling path
    fresh.weight = sum(child.weight for child in fresh.children.values())
    seen = [child.last_seen for child in fresh.children.values() if child.last_seen is not None]
    if fresh.terminal:
        fresh.weight += 1
        seen.append(fresh.terminal_seen)  # type: ignore[arg-type]
    fresh.last_seen = max(seen) if seen else None
    return fresh


def _collect(node: TrieNode, prefix: list[int]) -> Iterator[tuple[tuple[int, ...], date, int]]:
    if node.terminal:
        yield tuple(prefix), node.terminal_seen, node.terminal_count  # type: ignore[misc]
    for token in sorted(node.children):
        prefix.append(token)
        yield from _collect(node.children[token], prefix)
        prefix.pop()


def _depth(node: TrieNode) -> int:
    if not node.children:
        return 0
    return 1 + max(_depth(child) for child in node.children.values())


# ---------------------------------------------------------------------------
# Text formats. A snapshot is a header line plus one record per stored query;
# pool files produced by ingest reuse the bare record format without a header.
# ---------------------------------------------------------------------------

def format_query_record(query: str, seen: date, count: int) -> str:
    return f"{escape(query)}\t{seen.isoformat()}\t{count}"


def parse_query_record(line: str, path, line_no: int) -> tuple[str, date, int]:
    parts = line.split("\t")
    if len(parts) != 3:
        raise SnapshotParseError(path, line_no, f"expected 3 tab-separated fields, got {len(parts)}")
    raw_query, raw_date, raw_count = parts
    try:
        query = unescape(raw_query)
    except ValueError as exc:
        raise SnapshotParseError(path, line_no, str(exc)) from exc
    if not query:
        raise SnapshotParseError(path, line_no, "empty query string")
    try:
        seen = date.fromisoformat(raw_date)
    except ValueError as exc:
        raise SnapshotParseError(path, line_no, f"bad date {raw_date!r}") from exc
    try:
        count = int(raw_count)
    except ValueError as exc:
        raise SnapshotParseError(path, line_no, f"bad count {raw_count!r}") from exc
    if count < 1:
        raise SnapshotParseError(path, line_no, f"count must be positive, got {count}")
    return query, seen, count


def read_query_records(path, expect_header: bool = False) -> tuple[int | None, list[tuple[str, date, int]]]:
    """Parse a snapshot (with header) or pool file (records only).

    Returns (window_days or None, records). Purely textual: no vocabulary
    needed, which is what lets pool files and snapshots be rewritten
    without retokenizing.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    window: int | None = None
    start = 0
    if expect_header:
        if not lines:
            raise SnapshotParseError(path, 1, "missing 'TRIE v1' header")
        match = _HEADER_RE.match(lines[0])
        if match is None:
            raise SnapshotParseError(path, 1, f"bad header {lines[0]!r}")
        window = int(match.group(1))
        if window < 1:
            raise SnapshotParseError(path, 1, "window must be positive")
        start = 1
    records = []
    for i, line in enumerate(lines[start:], start=start + 1):
        if not line:
            raise SnapshotParseError(path, i, "blank line inside record section")
        records.append(parse_query_record(line, path, i))
    return window, records


def write_snapshot_text(window_days: int, records: Sequence[tuple[str, date, int]]) -> str:
    lines = [f"TRIE v1 window={window_days}"]
    lines.extend(format_query_record(q, seen, count) for q, seen, count in records)
    return "\n".join(lines) + "\n"


def snapshot_save(trie: QueryTrie, vocab: Vocabulary, path) -> None:
    records = [(vocab.detokenize(ids), seen, count) for ids, seen, count in trie.queries()]
    Path(path).write_text(write_snapshot_text(trie.window_days, records), encoding="utf-8")


def snapshot_load(path, vocab: Vocabulary) -> QueryTrie:
    window, records = read_query_records(path, expect_header=True)
    trie = QueryTrie(window_days=window)  # type: ignore[arg-type]
    for i, (query, seen, count) in enumerate(records, start=2):
        try:
            ids = vocab.tokenize(query)
        except OutOfVocabularyError as exc:
            raise SnapshotParseError(path, i, str(exc)) from exc
        trie.insert(ids, seen, count)
    return trie
