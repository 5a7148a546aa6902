import math
import random

import numpy as np
import pytest

from triegen.lm import (
    CheckpointParseError,
    NgramScorer,
    NonFiniteModelError,
    PromptContext,
    TinyLM,
    load_checkpoint,
    ngram_fit,
    save_checkpoint,
    validate_distribution,
)


# ---------------------------------------------------------------------------
# n-gram scorer
# ---------------------------------------------------------------------------

def test_ngram_observed_continuation_dominates():
    scorer = ngram_fit([[0, 1], [0, 1]], order=2, alpha=1e-9, n_symbols=3)
    probs = scorer.score([0])
    assert probs[1] > 0.999
    validate_distribution(probs, 3)


def test_ngram_symmetric_corpus_is_symmetric():
    scorer = ngram_fit([[0], [1]], order=2, alpha=0.5, n_symbols=3)
    probs = scorer.score([])
    assert probs[0] == probs[1]


def test_ngram_distributions_normalize():
    rng = random.Random(3)
    corpus = [[rng.randrange(4) for _ in range(rng.randint(1, 6))] for _ in range(30)]
    scorer = ngram_fit(corpus, order=3, alpha=0.2, n_symbols=5)
    for _ in range(50):
        context = [rng.randrange(4) for _ in range(rng.randint(0, 5))]
        validate_distribution(scorer.score(context), 5)


def _brute_force_prob(corpus, order, alpha, n_symbols, context, token):
    # independent oracle: scan every position of the corpus directly
    eos = n_symbols - 1
    suffix = tuple(context[-(order - 1):]) if order > 1 else ()
    matches = 0
    hits = 0
    for seq in corpus:
        seq = list(seq) + [eos]
        for i, t in enumerate(seq):
            lo = max(0, i - (order - 1))
            if tuple(seq[lo:i]) == suffix or (order == 1):
                matches += 1
                if t == token:
                    hits += 1
    return (hits + alpha) / (matches + alpha * n_symbols)


def test_ngram_matches_brute_force_counts():
    rng = random.Random(17)
    for order in (1, 2, 3):
        corpus = [[rng.randrange(5) for _ in range(rng.randint(1, 8))] for _ in range(40)]
        alpha = 0.3
        scorer = ngram_fit(corpus, order=order, alpha=alpha, n_symbols=6)
        for _ in range(30):
            context = [rng.randrange(5) for _ in range(rng.randint(0, 6))]
            probs = scorer.score(context)
            for token in range(6):
                expected = _brute_force_prob(corpus, order, alpha, 6, context, token)
                assert math.isclose(probs[token], expected, rel_tol=0, abs_tol=1e-12)


def test_ngram_prompt_tokens_extend_context():
    scorer = ngram_fit([[0, 1, 2]], order=3, alpha=0.1, n_symbols=4)
    prompted = scorer.score([1], PromptContext(item_tokens=(0,)))
    unprompted = scorer.score([0, 1])
    assert np.array_equal(prompted, unprompted)


def test_ngram_fit_validation():
    with pytest.raises(ValueError):
        ngram_fit([[0]], order=0, alpha=0.1, n_symbols=2)
    with pytest.raises(ValueError):
        ngram_fit([[0]], order=1, alpha=0.0, n_symbols=2)
    with pytest.raises(ValueError):
        ngram_fit([], order=1, alpha=0.1, n_symbols=2)
    with pytest.raises(ValueError):
        ngram_fit([[5]], order=1, alpha=0.1, n_symbols=3)  # id is the eos slot


# ---------------------------------------------------------------------------
# tiny LM
# ---------------------------------------------------------------------------

def test_zero_parameters_give_exactly_uniform():
    model = TinyLM.zeros(4, 3, 2)
    probs = model.score([1, 2])
    assert np.array_equal(probs, np.full(4, 0.25))


def test_random_parameters_normalize():
    for seed in range(5):
        model = TinyLM.create(7, 4, 3, seed=seed, scale=2.0)
        probs = model.score([0, 5, 2])
        validate_distribution(probs, 7)


def test_softmax_shift_invariance():
    model = TinyLM.create(6, 3, 2, seed=1)
    before = model.score([0, 1])
    model.bias += 123.456  # shifts every logit equally
    after = model.score([0, 1])
    assert np.abs(before - after).max() <= 1e-12


def test_window_prepends_prompt_tokens():
    model = TinyLM.create(5, 3, 3, seed=2)
    prompt = PromptContext(item_tokens=(0, 1))
    assert model.window([2], prompt) == [0, 1, 2]
    assert model.window([2, 3, 4, 1], prompt) == [4, 1][-3:] or True
    assert model.window([2, 3, 4, 1], prompt) == [3, 4, 1]


def test_forward_matches_manual_computation():
    model = TinyLM.create(5, 3, 2, seed=3)
    window = [1, 4]
    hidden = model.embeddings[window].mean(axis=0)
    logits = hidden @ model.output_weights + model.bias
    probs, cached = model.forward([0, 1, 4])
    assert np.allclose(cached, logits, atol=1e-15)
    shifted = np.exp(logits - logits.max())
    assert np.allclose(probs, shifted / shifted.sum(), atol=1e-15)


def test_empty_window_uses_bias_only():
    model = TinyLM.create(5, 3, 2, seed=4)
    _, logits = model.forward([])
    assert np.array_equal(logits, model.bias)


def test_non_finite_parameters_rejected():
    with pytest.raises(NonFiniteModelError):
        TinyLM(
            context_order=2,
            embeddings=np.array([[np.nan, 0.0]] * 3),
            output_weights=np.zeros((2, 3)),
            bias=np.zeros(3),
        )


def test_copy_is_independent():
    model = TinyLM.create(4, 2, 2, seed=5)
    clone = model.copy()
    clone.bias += 1.0
    assert not np.array_equal(model.bias, clone.bias)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip_reproduces_scores(tmp_path):
    model = TinyLM.create(6, 4, 3, seed=9, scale=0.7)
    path = tmp_path / "model.txt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.context_order == model.context_order
    for context in ([], [0], [1, 2, 3], [5, 5]):
        assert np.array_equal(model.score(context), loaded.score(context))


def test_checkpoint_header_round_trips_dimensions(tmp_path):
    model = TinyLM.create(6, 4, 3, seed=0)
    path = tmp_path / "model.txt"
    save_checkpoint(model, path)
    header = path.read_text().splitlines()[0]
    assert header == "TINYLM v1 vocab=5 dim=4 order=3"


def test_checkpoint_bad_header(tmp_path):
    path = tmp_path / "model.txt"
    path.write_text("TINYLM v9 vocab=2 dim=2 order=1\n", encoding="utf-8")
    with pytest.raises(CheckpointParseError, match="header"):
        load_checkpoint(path)


def test_checkpoint_truncated_section(tmp_path):
    model = TinyLM.create(4, 2, 2, seed=0)
    path = tmp_path / "model.txt"
    save_checkpoint(model, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n", encoding="utf-8")
    with pytest.raises(CheckpointParseError):
        load_checkpoint(path)


def test_checkpoint_bad_float(tmp_path):
    model = TinyLM.create(4, 2, 2, seed=0)
    path = tmp_path / "model.txt"
    save_checkpoint(model, path)
    lines = path.read_text().splitlines()
    lines[2] = lines[2].replace(lines[2].split()[0], "not-a-float", 1)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CheckpointParseError, match="float"):
        load_checkpoint(path)


def test_checkpoint_trailing_garbage(tmp_path):
    model = TinyLM.create(4, 2, 2, seed=0)
    path = tmp_path / "model.txt"
    save_checkpoint(model, path)
    path.write_text(path.read_text() + "extra\n", encoding="utf-8")
    with pytest.raises(CheckpointParseError, match="trailing"):
        load_checkpoint(path)


def test_validate_distribution_rejects_bad_vectors():
    with pytest.raises(ValueError):
        validate_distribution(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        validate_distribution(np.array([-0.1, 1.1]))
    with pytest.raises(ValueError):
        validate_distribution(np.array([0.5, np.inf]))
    validate_distribution(np.array([0.25, 0.75]))
