import pytest
from hypothesis import given, strategies as st

from triegen.io_utils import FileFormatError
from triegen.vocab import (
    InvalidTokenIdError,
    OutOfVocabularyError,
    Vocabulary,
    build_vocabulary,
    load_vocabulary,
    save_vocabulary,
)


def test_build_assigns_codepoint_order():
    v = build_vocabulary(["ab", "ba"])
    assert v.tokens == ("a", "b")
    assert v.id_of("a") == 0 and v.id_of("b") == 1


def test_build_deduplicates():
    v = build_vocabulary(["aaa"])
    assert v.tokens == ("a",)


def test_build_unions_scalars():
    v = build_vocabulary(["ab", "abc"])
    assert v.tokens == ("a", "b", "c")


def test_build_rejects_empty_corpus():
    with pytest.raises(ValueError):
        build_vocabulary([])
    with pytest.raises(ValueError):
        build_vocabulary(["", ""])


def test_build_is_deterministic():
    corpus = ["query one", "another query", "zebra"]
    assert build_vocabulary(corpus) == build_vocabulary(list(reversed(corpus)))


def test_tokenize_direct_lookup():
    v = build_vocabulary(["ab"])
    assert v.tokenize("aba") == [0, 1, 0]


def test_tokenize_empty_string():
    v = build_vocabulary(["ab"])
    assert v.tokenize("") == []


def test_tokenize_out_of_vocabulary_names_scalar():
    v = build_vocabulary(["ab"])
    with pytest.raises(OutOfVocabularyError, match="'x'"):
        v.tokenize("ax")


def test_tokenize_known_drops_unknown():
    v = build_vocabulary(["ab"])
    assert v.tokenize_known("axbya") == [0, 1, 0]


def test_detokenize_inverse():
    v = build_vocabulary(["ab"])
    assert v.detokenize([0, 1, 0]) == "aba"
    assert v.detokenize([]) == ""


def test_detokenize_invalid_id():
    v = build_vocabulary(["ab"])
    with pytest.raises(InvalidTokenIdError):
        v.detokenize([5])


def test_eos_sits_past_last_token():
    v = build_vocabulary(["abc"])
    assert v.size == 3
    assert v.eos_id == 3
    assert v.n_symbols == 4


def test_direct_construction_preserves_order():
    v = Vocabulary(("z", "a"))
    assert v.id_of("z") == 0


def test_duplicate_or_multichar_tokens_rejected():
    with pytest.raises(ValueError):
        Vocabulary(("a", "a"))
    with pytest.raises(ValueError):
        Vocabulary(("ab",))


@given(st.text(alphabet="abc é中", min_size=0, max_size=40))
def test_round_trip_any_string_over_alphabet(text):
    v = build_vocabulary(["abc é中"])
    assert v.detokenize(v.tokenize(text)) == text


@given(st.text(min_size=1, max_size=40))
def test_tokenize_length_equals_scalar_count(text):
    v = build_vocabulary([text])
    assert len(v.tokenize(text)) == len(text)


def test_file_round_trip(tmp_path):
    v = build_vocabulary(["hello world", "\n\t\\ ", "中文"])
    path = tmp_path / "vocab.txt"
    save_vocabulary(v, path)
    assert load_vocabulary(path) == v


def test_file_line_number_is_id(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("b\na\n", encoding="utf-8")
    v = load_vocabulary(path)
    assert v.id_of("b") == 0 and v.id_of("a") == 1


def test_load_rejects_multi_scalar_line(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("a\nxy\n", encoding="utf-8")
    with pytest.raises(FileFormatError, match="2"):
        load_vocabulary(path)


def test_load_rejects_empty_file(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("", encoding="utf-8")
    with pytest.raises(FileFormatError):
        load_vocabulary(path)
