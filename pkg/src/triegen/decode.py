"""Trie-constrained generation: greedy and beam search over admissible tokens.

At every step the candidate set is the current trie node's children, plus
the end-of-sequence symbol when the node is terminal, so a constrained
decode can only ever emit stored queries. Unconstrained twins of both
searches exist for baseline comparisons; their outputs carry the same
bookkeeping but no containment guarantee.

Scoring conventions:

* recorded per-token probabilities are the scorer's full-vocabulary
  softmax values (low model confidence stays visible to the downstream
  filter); ``renormalize=True`` switches to probabilities renormalized
  over the step's candidate set, for comparison;
* a finished sequence's ``log_prob`` is the total log-probability of
  generating it and stopping, i.e. it includes the end-of-sequence term.
  The per-token list excludes that term; it is carried separately as
  ``eos_prob``;
* ties break lexicographically on the token sequence (ending before
  continuing, then lower token ids first), so results are reproducible.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .lm import PROB_FLOOR, NextTokenScorer, PromptContext
from .trie import QueryTrie, TrieNode
from .vocab import Vocabulary


class EmptyTrieError(ValueError):
    """Constrained decoding needs at least one stored query."""


class GenerationLimitError(RuntimeError):
    """No complete sequence was reached within the length budget."""


@dataclass(frozen=True)
class ScoredQuery:
    """A finished generation with its probability bookkeeping.

    ``token_probs[i]`` is the probability recorded when ``tokens[i]`` was
    emitted; ``eos_prob`` is the stop probability (None when the sequence
    was cut at the length budget by an unconstrained search). ``log_prob``
    sums the logs of all of them.
    """

    tokens: tuple[int, ...]
    text: str
    token_probs: tuple[float, ...]
    log_prob: float
    eos_prob: float | None = None


@dataclass
class BeamState:
    prefix: list[int]
    log_prob: float
    token_probs: list[float]
    node: TrieNode | None
    finished: bool = False
    eos_prob: float | None = None

    def sort_key(self) -> tuple[float, list[int]]:
        return (-self.log_prob, self.prefix)


def _floored(p: float) -> float:
    return max(float(p), PROB_FLOOR)


def _candidate_probs(
    probs: np.ndarray, candidates: Sequence[int], renormalize: bool
) -> dict[int, float]:
    if not renormalize:
        return {c: _floored(probs[c]) for c in candidates}
    total = float(sum(float(probs[c]) for c in candidates))
    if total <= 0.0:
        share = 1.0 / len(candidates)
        return {c: share for c in candidates}
    return {c: _floored(probs[c] / total) for c in candidates}


def _pick(candidate_probs: dict[int, float], candidates: Sequence[int], eos: int) -> int:
    """Highest probability wins; ties prefer ending, then lower token ids.

    This matches lexicographic order on the resulting sequences, which is
    the same rule beam pruning uses, keeping width-1 beam and greedy
    interchangeable.
    """
    ordered = sorted(candidates, key=lambda c: (c != eos, c))
    best = ordered[0]
    for c in ordered[1:]:
        if candidate_probs[c] > candidate_probs[best]:
            best = c
    return best


def _query(prefix: Sequence[int], token_probs: Sequence[float], log_prob: float,
           eos_prob: float | None, vocab: Vocabulary | None) -> ScoredQuery:
    return ScoredQuery(
        tokens=tuple(prefix),
        text=vocab.detokenize(prefix) if vocab is not None else "",
        token_probs=tuple(token_probs),
        log_prob=log_prob,
        eos_prob=eos_prob,
    )


def constrained_greedy(
    scorer: NextTokenScorer,
    prompt: PromptContext | None,
    trie: QueryTrie,
    max_len: int = 128,
    renormalize: bool = False,
    vocab: Vocabulary | None = None,
) -> ScoredQuery:
    """Follow the argmax among admissible tokens until the query ends.

    Single-child nodes force that child regardless of its probability (the
    probability is still recorded); end-of-sequence competes only at
    terminal nodes. Raises GenerationLimitError if no terminal is reached
    within ``max_len`` emitted tokens.
    """
    if max_len < 1:
        raise ValueError("max_len must be positive")
    if not trie.root.children:
        raise EmptyTrieError("cannot decode against an empty trie")
    eos = scorer.n_symbols - 1
    node = trie.root
    prefix: list[int] = []
    token_probs: list[float] = []
    log_prob = 0.0
    while True:
        at_cap = len(prefix) >= max_len
        if at_cap and not node.terminal:
            raise GenerationLimitError(f"no terminal reached within max_len={max_len}")
        candidates = [] if at_cap else sorted(node.children)
        if node.terminal:
            candidates.append(eos)
        probs = scorer.score(prefix, prompt)
        cand = _candidate_probs(probs, candidates, renormalize)
        choice = _pick(cand, candidates, eos)
        p = cand[choice]
        log_prob += math.log(p)
        if choice == eos:
            return _query(prefix, token_probs, log_prob, p, vocab)
        prefix.append(choice)
        token_probs.append(p)
        node = node.children[choice]


def constrained_beam(
    scorer: NextTokenScorer,
    prompt: PromptContext | None,
    trie: QueryTrie,
    beam_width: int,
    k: int,
    max_len: int = 128,
    renormalize: bool = False,
    vocab: Vocabulary | None = None,
) -> list[ScoredQuery]:
    """Beam search over trie paths; returns up to ``k`` ranked complete queries.

    All expansions of the live beams, including the end-of-sequence move
    at terminal nodes, compete for ``beam_width`` slots by log-probability.
    Finished survivors are frozen aside and the best ``k`` are returned in
    descending log-probability (lexicographic tie-break). With a width at
    least the number of stored queries nothing is ever pruned, making the
    search exhaustive.
    """
    if k < 1 or beam_width < k:
        raise ValueError("need beam_width >= k >= 1")
    if max_len < 1:
        raise ValueError("max_len must be positive")
    if not trie.root.children:
        raise EmptyTrieError("cannot decode against an empty trie")
    eos = scorer.n_symbols - 1
    active = [BeamState([], 0.0, [], trie.root)]
    done: list[BeamState] = []
    while active:
        expansions: list[BeamState] = []
        for state in active:
            node = state.node
            assert node is not None
            allow_children = len(state.prefix) < max_len
            candidates = sorted(node.children) if allow_children else []
            if node.terminal:
                candidates.append(eos)
            if not candidates:
                continue  # non-terminal node at the length cap: dead end
            probs = scorer.score(state.prefix, prompt)
            cand = _candidate_probs(probs, candidates, renormalize)
            for c in candidates:
                p = cand[c]
                if c == eos:
                    expansions.append(
                        BeamState(
                            prefix=state.prefix,
                            log_prob=state.log_prob + math.log(p),
                            token_probs=state.token_probs,
                            node=node,
                            finished=True,
                            eos_prob=p,
                        )
                    )
                else:
                    expansions.append(
                        BeamState(
                            prefix=state.prefix + [c],
                            log_prob=state.log_prob + math.log(p),
                            token_probs=state.token_probs + [p],
                            node=node.children[c],
                        )
                    )
        expansions.sort(key=BeamState.sort_key)
        kept = expansions[:beam_width]
        done.extend(s for s in kept if s.finished)
        active = [s for s in kept if not s.finished]
    if not done:
        raise GenerationLimitError(f"no complete query within max_len={max_len}")
    done.sort(key=BeamState.sort_key)
    return [_query(s.prefix, s.token_probs, s.log_prob, s.eos_prob, vocab) for s in done[:k]]


def unconstrained_greedy(
    scorer: NextTokenScorer,
    prompt: PromptContext | None,
    max_len: int = 128,
    vocab: Vocabulary | None = None,
) -> ScoredQuery:
    """Full-vocabulary argmax decoding; stops at end-of-sequence or ``max_len``.

    Baseline twin of constrained_greedy with no trie: outputs may be
    arbitrary strings, but never empty ones (end-of-sequence only competes
    once a token has been emitted). Sequences cut at the budget have
    ``eos_prob=None``.
    """
    if max_len < 1:
        raise ValueError("max_len must be positive")
    eos = scorer.n_symbols - 1
    all_symbols = list(range(scorer.n_symbols))
    prefix: list[int] = []
    token_probs: list[float] = []
    log_prob = 0.0
    while True:
        probs = scorer.score(prefix, prompt)
        candidates = all_symbols if prefix else all_symbols[:-1]
        cand = _candidate_probs(probs, candidates, renormalize=False)
        choice = _pick(cand, candidates, eos)
        p = cand[choice]
        if choice == eos:
            return _query(prefix, token_probs, log_prob + math.log(p), p, vocab)
        prefix.append(choice)
        token_probs.append(p)
        log_prob += math.log(p)
        if len(prefix) >= max_len:
            return _query(prefix, token_probs, log_prob, None, vocab)


def unconstrained_beam(
    scorer: NextTokenScorer,
    prompt: PromptContext | None,
    beam_width: int,
    k: int,
    max_len: int = 128,
    vocab: Vocabulary | None = None,
) -> list[ScoredQuery]:
    """Beam search over the full vocabulary; baseline twin of constrained_beam.

    Beams reaching ``max_len`` are force-finished without a stop term so
    the search always yields results; empty sequences are never produced.
    """
    if k < 1 or beam_width < k:
        raise ValueError("need beam_width >= k >= 1")
    if max_len < 1:
        raise ValueError("max_len must be positive")
    eos = scorer.n_symbols - 1
    active = [BeamState([], 0.0, [], None)]
    done: list[BeamState] = []
    while active:
        expansions: list[BeamState] = []
        for state in active:
            probs = scorer.score(state.prefix, prompt)
            for c in range(scorer.n_symbols):
                p = _floored(probs[c])
                if c == eos:
                    if not state.prefix:
                        continue
                    expansions.append(
                        BeamState(
                            prefix=state.prefix,
                            log_prob=state.log_prob + math.log(p),
                            token_probs=state.token_probs,
                            node=None,
                            finished=True,
                            eos_prob=p,
                        )
                    )
                    continue
                branch = BeamState(
                    prefix=state.prefix + [c],
                    log_prob=state.log_prob + math.log(p),
                    token_probs=state.token_probs + [p],
                    node=None,
                )
                if len(branch.prefix) >= max_len:
                    branch.finished = True  # cut at the budget, no stop term
                expansions.append(branch)
        expansions.sort(key=BeamState.sort_key)
        kept = expansions[:beam_width]
        done.extend(s for s in kept if s.finished)
        active = [s for s in kept if not s.finished]
    done.sort(key=BeamState.sort_key)
    return [_query(s.prefix, s.token_probs, s.log_prob, s.eos_prob, vocab) for s in done[:k]]
