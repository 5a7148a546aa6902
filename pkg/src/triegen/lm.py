"""Next-token scorers: the probability interface plus two reference models.

A scorer maps (context token ids, optional conditioning prompt) to a
probability vector over ``n_symbols`` slots, where the final slot is the
end-of-sequence symbol. Two implementations ship:

* ``NgramScorer`` -- additive-smoothed counts, fast and untrainable.
* ``TinyLM`` -- mean-pooled embedding bag over the last few tokens feeding
  a linear softmax layer. Small enough to gradient-check exhaustively, but
  trainable, which is all the training machinery needs.
"""
from __future__ import annotations

import re
from abc import ABC, abstractmethod
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io_utils import FileFormatError

# Probabilities are clamped here before any log, so losses stay finite.
PROB_FLOOR = 1e-12


class NonFiniteModelError(ValueError):
    """Model parameters produced non-finite logits."""


class CheckpointParseError(FileFormatError):
    """A model checkpoint file could not be parsed."""


@dataclass(frozen=True)
class PromptContext:
    """Conditioning tokens derived from an item's text fields.

    ``item_tokens`` holds the tokenized item content (caption plus cover
    text); ``text`` keeps the fully rendered prompt for inspection. An
    empty context means unconditional generation.
    """

    item_tokens: tuple[int, ...] = ()
    text: str = ""

    def __bool__(self) -> bool:
        return bool(self.item_tokens)


EMPTY_PROMPT = PromptContext()


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def validate_distribution(probs: np.ndarray, n_symbols: int | None = None) -> None:
    """Raise ValueError unless `probs` is a valid probability vector."""
    arr = np.asarray(probs, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d probability vector, got shape {arr.shape}")
    if n_symbols is not None and arr.shape[0] != n_symbols:
        raise ValueError(f"expected {n_symbols} slots, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError("distribution contains non-finite entries")
    if (arr < 0).any():
        raise ValueError("distribution contains negative entries")
    if abs(arr.sum() - 1.0) > 1e-9:
        raise ValueError(f"distribution sums to {arr.sum()!r}, not 1")


class NextTokenScorer(ABC):
    """Context in, probability distribution over the next symbol out."""

    n_symbols: int

    @abstractmethod
    def score(self, context: Sequence[int], prompt: PromptContext | None = None) -> np.ndarray:
        """Return a probability vector of length ``n_symbols``."""


class NgramScorer(NextTokenScorer):
    """Additive-smoothed n-gram model over token ids plus end-of-sequence.

    score(t | context) = (count(suffix, t) + alpha) / (count(suffix) + alpha * S)
    where suffix is the last order-1 tokens of (prompt + context) and S is
    the number of symbols. Unseen suffixes fall back to the uniform prior.
    """

    def __init__(
        self,
        order: int,
        alpha: float,
        n_symbols: int,
        counts: dict[tuple[int, ...], Counter],
        totals: dict[tuple[int, ...], int],
    ) -> None:
        self.order = order
        self.alpha = alpha
        self.n_symbols = n_symbols
        self._counts = counts
        self._totals = totals

    def score(self, context: Sequence[int], prompt: PromptContext | None = None) -> np.ndarray:
        full = list(prompt.item_tokens) + list(context) if prompt else list(context)
        suffix = tuple(full[-(self.order - 1):]) if self.order > 1 else ()
        probs = np.full(self.n_symbols, self.alpha)
        total = self._totals.get(suffix, 0)
        seen = self._counts.get(suffix)
        if seen is not None:
            for token, count in seen.items():
                probs[token] += count
        return probs / (total + self.alpha * self.n_symbols)


def ngram_fit(
    corpus: Sequence[Sequence[int]],
    order: int,
    alpha: float,
    *,
    n_symbols: int,
) -> NgramScorer:
    """Count (suffix, next) pairs over the corpus with end-of-sequence appended.

    Sequences must not contain the end-of-sequence id themselves: the fit
    appends it, which is where the model's stop probabilities come from.
    """
    if order < 1:
        raise ValueError("order must be at least 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if n_symbols < 2:
        raise ValueError("need at least one token plus end-of-sequence")
    if not corpus:
        raise ValueError("corpus must be nonempty")
    eos = n_symbols - 1
    counts: dict[tuple[int, ...], Counter] = {}
    totals: dict[tuple[int, ...], int] = {}
    for seq in corpus:
        ids = list(seq)
        for token in ids:
            if not 0 <= token < eos:
                raise ValueError(f"token id {token} outside vocabulary range 0..{eos - 1}")
        ids.append(eos)
        for i, token in enumerate(ids):
            lo = max(0, i - (order - 1))
            suffix = tuple(ids[lo:i]) if order > 1 else ()
            counts.setdefault(suffix, Counter())[token] += 1
            totals[suffix] = totals.get(suffix, 0) + 1
    return NgramScorer(order, alpha, n_symbols, counts, totals)


@dataclass(eq=False)
class TinyLM(NextTokenScorer):
    """Trainable bag-of-recent-tokens softmax language model.

    The hidden state is the mean of the embeddings of the last
    ``context_order`` tokens of (prompt tokens + emitted tokens); logits
    are a linear map of that state. An empty window gives a zero hidden
    state, i.e. the bias alone.
    """

    context_order: int
    embeddings: np.ndarray      # (n_symbols, dim)
    output_weights: np.ndarray  # (dim, n_symbols)
    bias: np.ndarray            # (n_symbols,)

    def __post_init__(self) -> None:
        if self.context_order < 1:
            raise ValueError("context_order must be at least 1")
        symbols, dim = self.embeddings.shape
        if dim < 1:
            raise ValueError("embedding dimension must be at least 1")
        if self.output_weights.shape != (dim, symbols):
            raise ValueError(
                f"output_weights shape {self.output_weights.shape} does not match "
                f"embeddings {self.embeddings.shape}"
            )
        if self.bias.shape != (symbols,):
            raise ValueError(f"bias shape {self.bias.shape} does not match {symbols} symbols")
        for name, arr in self.parameters().items():
            if not np.isfinite(arr).all():
                raise NonFiniteModelError(f"non-finite values in {name}")

    @property
    def n_symbols(self) -> int:  # type: ignore[override]
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @classmethod
    def create(cls, n_symbols: int, dim: int, context_order: int, seed: int = 0, scale: float = 0.1) -> "TinyLM":
        rng = np.random.default_rng(seed)
        return cls(
            context_order=context_order,
            embeddings=rng.normal(0.0, scale, size=(n_symbols, dim)),
            output_weights=rng.normal(0.0, scale, size=(dim, n_symbols)),
            bias=np.zeros(n_symbols),
        )

    @classmethod
    def zeros(cls, n_symbols: int, dim: int, context_order: int) -> "TinyLM":
        return cls(
            context_order=context_order,
            embeddings=np.zeros((n_symbols, dim)),
            output_weights=np.zeros((dim, n_symbols)),
            bias=np.zeros(n_symbols),
        )

    def copy(self) -> "TinyLM":
        return TinyLM(
            context_order=self.context_order,
            embeddings=self.embeddings.copy(),
            output_weights=self.output_weights.copy(),
            bias=self.bias.copy(),
        )

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "embeddings": self.embeddings,
            "output_weights": self.output_weights,
            "bias": self.bias,
        }

    def window(self, context: Sequence[int], prompt: PromptContext | None = None) -> list[int]:
        full = list(prompt.item_tokens) + list(context) if prompt else list(context)
        return full[-self.context_order:]

    def logits(self, context: Sequence[int], prompt: PromptContext | None = None) -> np.ndarray:
        window = self.window(context, prompt)
        if window:
            hidden = self.embeddings[window].mean(axis=0)
        else:
            hidden = np.zeros(self.dim)
        out = hidden @ self.output_weights + self.bias
        if not np.isfinite(out).all():
            raise NonFiniteModelError("non-finite logits; model parameters have diverged")
        return out

    def forward(self, context: Sequence[int], prompt: PromptContext | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Return (probabilities, logits)."""
        logits = self.logits(context, prompt)
        return stable_softmax(logits), logits

    def score(self, context: Sequence[int], prompt: PromptContext | None = None) -> np.ndarray:
        return self.forward(context, prompt)[0]


# ---------------------------------------------------------------------------
# Checkpoint format: a header, then one section per parameter matrix with
# rows of repr'd floats. repr round-trips float64 exactly, so a reloaded
# model scores identically.
# ---------------------------------------------------------------------------

_CKPT_HEADER_RE = re.compile(r"^TINYLM v1 vocab=(\d+) dim=(\d+) order=(\d+)$")
_SECTIONS = ("EMBEDDINGS", "OUTPUT_WEIGHTS", "BIAS")


def _format_matrix(arr: np.ndarray) -> list[str]:
    rows = arr.reshape(1, -1) if arr.ndim == 1 else arr
    return [" ".join(repr(float(x)) for x in row) for row in rows]


def checkpoint_text(model: TinyLM) -> str:
    vocab_size = model.n_symbols - 1
    lines = [f"TINYLM v1 vocab={vocab_size} dim={model.dim} order={model.context_order}"]
    for name, arr in zip(_SECTIONS, (model.embeddings, model.output_weights, model.bias)):
        lines.append(name)
        lines.extend(_format_matrix(arr))
    return "\n".join(lines) + "\n"


def save_checkpoint(model: TinyLM, path) -> None:
    Path(path).write_text(checkpoint_text(model), encoding="utf-8")


def load_checkpoint(path) -> TinyLM:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise CheckpointParseError(path, 1, "missing 'TINYLM v1' header")
    match = _CKPT_HEADER_RE.match(lines[0])
    if match is None:
        raise CheckpointParseError(path, 1, f"bad header {lines[0]!r}")
    vocab_size, dim, order = (int(g) for g in match.groups())
    symbols = vocab_size + 1
    shapes = {"EMBEDDINGS": (symbols, dim), "OUTPUT_WEIGHTS": (dim, symbols), "BIAS": (1, symbols)}
    pos = 1
    matrices: dict[str, np.ndarray] = {}
    for section in _SECTIONS:
        if pos >= len(lines) or lines[pos] != section:
            found = lines[pos] if pos < len(lines) else "<end of file>"
            raise CheckpointParseError(path, pos + 1, f"expected section {section!r}, got {found!r}")
        pos += 1
        n_rows, n_cols = shapes[section]
        rows = []
        for _ in range(n_rows):
            if pos >= len(lines):
                raise CheckpointParseError(path, pos + 1, f"truncated {section} section")
            fields = lines[pos].split()
            if len(fields) != n_cols:
                raise CheckpointParseError(path, pos + 1, f"expected {n_cols} values, got {len(fields)}")
            try:
                rows.append([float(f) for f in fields])
            except ValueError as exc:
                raise CheckpointParseError(path, pos + 1, f"bad float: {exc}") from exc
            pos += 1
        matrices[section] = np.array(rows)
    if pos != len(lines):
        raise CheckpointParseError(path, pos + 1, "trailing content after BIAS section")
    return TinyLM(
        context_order=order,
        embeddings=matrices["EMBEDDINGS"],
        output_weights=matrices["OUTPUT_WEIGHTS"],
        bias=matrices["BIAS"].reshape(-1),
    )
