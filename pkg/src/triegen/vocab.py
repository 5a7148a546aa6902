"""Character-level tokenization and the token<->id bijection.

Every other component speaks dense integer token ids. The reference
tokenizer is character-level: one token per Unicode scalar, with ids
assigned in codepoint order so a vocabulary is fully determined by the
corpus it was built from. A subword tokenizer can be substituted behind
the same interface without touching downstream code.
"""
from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

from .io_utils import FileFormatError, escape, unescape


class OutOfVocabularyError(ValueError):
    """The input contains a scalar the vocabulary does not know."""


class InvalidTokenIdError(ValueError):
    """A token id falls outside the vocabulary range."""


@dataclass(frozen=True)
class Vocabulary:
    """Immutable bijection between single-scalar tokens and ids 0..N-1.

    The end-of-sequence symbol is not a stored token; it lives at id N
    (one past the last token) so probability vectors have N+1 slots.
    """

    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise ValueError("vocabulary must contain at least one token")
        index: dict[str, int] = {}
        for i, token in enumerate(self.tokens):
            if len(token) != 1:
                raise ValueError(f"token {token!r} is not a single Unicode scalar")
            if token in index:
                raise ValueError(f"duplicate token {token!r}")
            index[token] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index  # type: ignore[attr-defined]

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def eos_id(self) -> int:
        """Id of the end-of-sequence symbol."""
        return len(self.tokens)

    @property
    def n_symbols(self) -> int:
        """Number of distribution slots: all tokens plus end-of-sequence."""
        return len(self.tokens) + 1

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]  # type: ignore[attr-defined]
        except KeyError:
            raise OutOfVocabularyError(f"out-of-vocabulary scalar {token!r}") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise InvalidTokenIdError(
                f"token id {token_id} outside vocabulary of size {len(self.tokens)}"
            )
        return self.tokens[token_id]

    def tokenize(self, text: str) -> list[int]:
        """Map text to ids, one per Unicode scalar. Unknown scalars raise."""
        index = self._index  # type: ignore[attr-defined]
        try:
            return [index[ch] for ch in text]
        except KeyError:
            for ch in text:
                if ch not in index:
                    raise OutOfVocabularyError(f"out-of-vocabulary scalar {ch!r}") from None
            raise  # unreachable

    def tokenize_known(self, text: str) -> list[int]:
        """Like tokenize, but silently drops unknown scalars.

        Used for conditioning text (prompts), where unseen characters at
        inference time should degrade gracefully instead of failing.
        """
        index = self._index  # type: ignore[attr-defined]
        return [index[ch] for ch in text if ch in index]

    def detokenize(self, ids: Sequence[int]) -> str:
        return "".join(self.token_of(i) for i in ids)


def build_vocabulary(corpus: Iterable[str]) -> Vocabulary:
    """Collect every distinct scalar in the corpus, ordered by codepoint."""
    scalars: set[str] = set()
    empty = True
    for text in corpus:
        empty = False
        scalars.update(text)
    if empty:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    if not scalars:
        raise ValueError("corpus contains no scalars")
    return Vocabulary(tuple(sorted(scalars)))


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """One token per line, line number = id. Control characters are escaped."""
    text = "\n".join(escape(token) for token in vocab.tokens) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_vocabulary(path) -> Vocabulary:
    path = Path(path)
    tokens: list[str] = []
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        try:
            token = unescape(line)
        except ValueError as exc:
            raise FileFormatError(path, i, str(exc)) from exc
        if len(token) != 1:
            raise FileFormatError(path, i, f"expected a single scalar, got {token!r}")
        tokens.append(token)
    if not tokens:
        raise FileFormatError(path, 1, "vocabulary file is empty")
    try:
        return Vocabulary(tuple(tokens))
    except ValueError as exc:
        raise FileFormatError(path, 1, str(exc)) from exc
