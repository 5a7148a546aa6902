import random
from datetime import date, timedelta

import pytest
from hypothesis import given, settings, strategies as st

from triegen.trie import (
    QueryTrie,
    SnapshotParseError,
    snapshot_load,
    snapshot_save,
    read_query_records,
)
from triegen.vocab import build_vocabulary

D = date(2024, 5, 20)


def day(offset: int) -> date:
    return D + timedelta(days=offset)


def make_trie(queries, seen=D, window=15):
    trie = QueryTrie(window)
    for q in queries:
        trie.insert(q, seen)
    return trie


def test_insert_builds_shared_prefixes():
    trie = make_trie([[0, 1], [0, 2]])
    assert trie.children([0]) == {1, 2}
    assert trie.children([]) == {0}
    assert trie.children([3]) == set()


def test_insert_empty_query_rejected():
    with pytest.raises(ValueError):
        QueryTrie().insert([], D)


def test_last_seen_takes_max():
    trie = QueryTrie()
    trie.insert([0, 1], day(0))
    trie.insert([0, 1], day(2))
    [(ids, seen, count)] = list(trie.queries())
    assert ids == (0, 1) and seen == day(2) and count == 2
    # an earlier sighting never rolls the date back
    trie.insert([0, 1], day(1))
    [(_, seen, count)] = list(trie.queries())
    assert seen == day(2) and count == 3


def test_reinsert_same_day_is_structurally_idempotent():
    one = QueryTrie().insert([0, 1], D)
    twice = QueryTrie().insert([0, 1], D).insert([0, 1], D)
    assert twice.query_count == 1
    assert twice.children([]) == one.children([])
    assert twice.children([0]) == one.children([0])
    assert twice.root.weight == one.root.weight
    [(_, seen, _)] = list(twice.queries())
    assert seen == D


def test_is_complete_only_at_terminals():
    trie = make_trie([[0, 1, 2]])
    assert not trie.is_complete([0, 1])
    assert trie.is_complete([0, 1, 2])
    assert not trie.is_complete([9])
    assert not trie.is_complete([])


def test_weight_counts_distinct_queries():
    trie = make_trie([[0, 1], [0, 2], [0, 1, 3]])
    assert trie.query_count == 3
    assert trie.root.children[0].weight == 3
    assert trie.root.children[0].children[1].weight == 2


def test_evict_window_boundary():
    trie = QueryTrie(window_days=15)
    trie.insert([0], day(-16))  # strictly older than the window
    trie.insert([1], day(-15))  # exactly at the window: retained
    trie.insert([2], day(0))
    survived = trie.evict_expired(day(0))
    assert not survived.is_complete([0])
    assert survived.is_complete([1])
    assert survived.is_complete([2])
    assert survived.query_count == 2
    # the original trie is untouched
    assert trie.query_count == 3


def test_evict_empty_trie():
    trie = QueryTrie(15)
    assert trie.evict_expired(D).query_count == 0


def test_evict_keeps_fresh_descendant_of_stale_terminal():
    trie = QueryTrie(15)
    trie.insert([0, 1], day(-30))
    trie.insert([0, 1, 2], day(0))
    survived = trie.evict_expired(day(0))
    assert not survived.is_complete([0, 1])
    assert survived.is_complete([0, 1, 2])
    assert survived.children([0]) == {1}
    assert survived.root.weight == 1


def _random_queries(rng, n, alphabet, max_len=6):
    return {
        tuple(rng.randrange(alphabet) for _ in range(rng.randint(1, max_len)))
        for _ in range(n)
    }


def test_membership_matches_brute_force():
    rng = random.Random(11)
    for _ in range(20):
        queries = _random_queries(rng, rng.randint(1, 500), alphabet=4)
        trie = QueryTrie(15)
        for q in queries:
            trie.insert(q, D)
        for q in queries:
            assert trie.is_complete(q)
        for _ in range(200):
            probe = tuple(rng.randrange(4) for _ in range(rng.randint(1, 6)))
            assert trie.is_complete(probe) == (probe in queries)
        prefixes = {q[:i] for q in queries for i in range(len(q) + 1)}
        for p in prefixes:
            expected = {q[len(p)] for q in queries if len(q) > len(p) and q[: len(p)] == p}
            assert trie.children(p) == expected


def test_eviction_matches_brute_force():
    rng = random.Random(23)
    for _ in range(20):
        entries = {}
        for _ in range(rng.randint(1, 120)):
            q = tuple(rng.randrange(3) for _ in range(rng.randint(1, 5)))
            seen = day(-rng.randint(0, 40))
            entries[q] = max(entries.get(q, seen), seen)
        window = rng.randint(1, 20)
        trie = QueryTrie(window)
        for q, seen in entries.items():
            trie.insert(q, seen)
        survived = trie.evict_expired(day(0))
        expected = {q for q, seen in entries.items() if (day(0) - seen).days <= window}
        assert {ids for ids, _, _ in survived.queries()} == expected


def _assert_no_dangling(node):
    if not node.children:
        assert node.terminal
    for child in node.children.values():
        _assert_no_dangling(child)


def test_no_dangling_paths_after_mixed_operations():
    rng = random.Random(5)
    trie = QueryTrie(10)
    for step in range(300):
        q = [rng.randrange(3) for _ in range(rng.randint(1, 5))]
        trie.insert(q, day(-rng.randint(0, 30)))
        if step % 25 == 24:
            trie = trie.evict_expired(day(0))
            _assert_no_dangling_root(trie)
    _assert_no_dangling_root(trie)


def _assert_no_dangling_root(trie):
    for child in trie.root.children.values():
        _assert_no_dangling(child)


@settings(max_examples=50, deadline=None)
@given(
    st.sets(
        st.lists(st.integers(0, 3), min_size=1, max_size=5).map(tuple),
        min_size=1,
        max_size=30,
    )
)
def test_queries_iterator_round_trips_inserted_set(queries):
    trie = QueryTrie(15)
    for q in queries:
        trie.insert(q, D)
    assert {ids for ids, _, _ in trie.queries()} == queries
    assert trie.query_count == len(queries)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def test_snapshot_round_trip(tmp_path):
    vocab = build_vocabulary(["star wars", "star trek", "steam deck"])
    trie = QueryTrie(15)
    trie.insert(vocab.tokenize("star wars"), day(0), count=3)
    trie.insert(vocab.tokenize("star trek"), day(-2))
    trie.insert(vocab.tokenize("steam deck"), day(-5), count=7)
    path = tmp_path / "trie.txt"
    snapshot_save(trie, vocab, path)
    assert snapshot_load(path, vocab) == trie


def test_snapshot_round_trip_empty(tmp_path):
    vocab = build_vocabulary(["a"])
    path = tmp_path / "trie.txt"
    snapshot_save(QueryTrie(9), vocab, path)
    loaded = snapshot_load(path, vocab)
    assert loaded.query_count == 0 and loaded.window_days == 9


def test_snapshot_escapes_control_characters(tmp_path):
    vocab = build_vocabulary(["a\tb\nc"])
    trie = QueryTrie(15).insert(vocab.tokenize("a\tb\nc"), D)
    path = tmp_path / "trie.txt"
    snapshot_save(trie, vocab, path)
    assert "\t" in path.read_text().splitlines()[1]  # field separators survive
    loaded = snapshot_load(path, vocab)
    assert loaded == trie
    [(ids, _, _)] = list(loaded.queries())
    assert vocab.detokenize(ids) == "a\tb\nc"


def test_snapshot_load_truncated_record(tmp_path):
    path = tmp_path / "trie.txt"
    path.write_text("TRIE v1 window=15\nabc\t2024-05-20\n", encoding="utf-8")
    with pytest.raises(SnapshotParseError, match="2"):
        snapshot_load(path, build_vocabulary(["abc"]))


def test_snapshot_load_bad_header(tmp_path):
    path = tmp_path / "trie.txt"
    path.write_text("TRIE v2 window=15\n", encoding="utf-8")
    with pytest.raises(SnapshotParseError, match="header"):
        snapshot_load(path, build_vocabulary(["a"]))


def test_snapshot_load_bad_date_and_count(tmp_path):
    vocab = build_vocabulary(["abc"])
    path = tmp_path / "trie.txt"
    path.write_text("TRIE v1 window=15\na\tnot-a-date\t1\n", encoding="utf-8")
    with pytest.raises(SnapshotParseError, match="date"):
        snapshot_load(path, vocab)
    path.write_text("TRIE v1 window=15\na\t2024-05-20\tzero\n", encoding="utf-8")
    with pytest.raises(SnapshotParseError, match="count"):
        snapshot_load(path, vocab)


def test_snapshot_load_out_of_vocabulary_query(tmp_path):
    path = tmp_path / "trie.txt"
    path.write_text("TRIE v1 window=15\nxyz\t2024-05-20\t1\n", encoding="utf-8")
    with pytest.raises(SnapshotParseError):
        snapshot_load(path, build_vocabulary(["abc"]))


def test_pool_records_have_no_header(tmp_path):
    path = tmp_path / "pool.txt"
    path.write_text("abc\t2024-05-20\t2\n", encoding="utf-8")
    window, records = read_query_records(path, expect_header=False)
    assert window is None
    assert records == [("abc", date(2024, 5, 20), 2)]
