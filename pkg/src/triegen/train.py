"""Prompt assembly, training losses, and the SGD loop for the tiny LM.

Two objectives are combined:

* next-token loss: mean cross-entropy of the gold next token over the
  target positions;
* trie-continuation loss: at each target position, reward probability
  mass on the trie's admissible continuations of the emitted prefix
  (two variants: averaged per-child log-probability, or the log of the
  total mass on the child set).

The total objective is ``ntp + alpha * nttp``. Gradients are derived by
hand against the softmax-linear model and checked against central finite
differences in the test suite.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .lm import PROB_FLOOR, NextTokenScorer, NonFiniteModelError, PromptContext, TinyLM
from .trie import QueryTrie
from .vocab import Vocabulary

DEFAULT_PROMPT_TEMPLATE = "User: <Instruction>\n<Input Item>\nAssistant: <Output>"
DEFAULT_INSTRUCTION = (
    "Based on the content of the following video, generate one keyword "
    "that the user might be interested in."
)
INSTRUCTION_SLOT = "<Instruction>"
ITEM_SLOT = "<Input Item>"
OUTPUT_SLOT = "<Output>"

VARIANT_PER_CHILD = "per-child"
VARIANT_SET_MASS = "set-mass"
_VARIANTS = (VARIANT_PER_CHILD, VARIANT_SET_MASS)
_OBJECTIVES = ("ntp", "nttp", "combined")


class PromptTemplateError(ValueError):
    """The prompt template is missing a required placeholder."""


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss or parameters."""

    def __init__(self, epoch: int, batch: int, reason: str) -> None:
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {reason}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainingExample:
    """A conditioning prompt plus the end-of-sequence-terminated target ids."""

    prompt: PromptContext
    target: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.target:
            raise ValueError("training target must be nonempty")


@dataclass(frozen=True)
class LossSpec:
    """Which objective to optimize and how the trie term is shaped.

    ``normalize_children=False`` switches the per-child variant to the raw
    unnormalized sum over the child set, for fidelity experiments; the
    default divides by the child-set size so the weight ``alpha`` keeps a
    comparable meaning across trie shapes.
    """

    alpha: float = 0.1
    nttp_variant: str = VARIANT_PER_CHILD
    normalize_children: bool = True
    objective: str = "combined"

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.nttp_variant not in _VARIANTS:
            raise ValueError(f"nttp_variant must be one of {_VARIANTS}, got {self.nttp_variant!r}")
        if self.objective not in _OBJECTIVES:
            raise ValueError(f"objective must be one of {_OBJECTIVES}, got {self.objective!r}")


@dataclass(frozen=True)
class TrainConfig:
    """Plain SGD settings, sized for the bundled tiny model.

    Fine-tuning a production-scale LLM typically runs at a learning rate
    around 5e-5 with batches of 128; those values are far too timid for a
    few hundred parameters, hence the defaults here.
    """

    learning_rate: float = 0.1
    batch_size: int = 16
    epochs: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")


def render_prompt(
    caption: str,
    ocr_cover: str,
    template: str = DEFAULT_PROMPT_TEMPLATE,
    instruction: str = DEFAULT_INSTRUCTION,
) -> tuple[str, str]:
    """Fill the template's slots; returns (rendered text, bare item text).

    Item fields go in caption-first order and empty fields are dropped, so
    a missing cover text never leaves a dangling separator. The output
    slot is left empty for generation to fill.
    """
    for slot in (INSTRUCTION_SLOT, ITEM_SLOT, OUTPUT_SLOT):
        if slot not in template:
            raise PromptTemplateError(f"prompt template is missing the {slot!r} placeholder")
    item_text = ", ".join(field for field in (caption, ocr_cover) if field)
    rendered = (
        template.replace(INSTRUCTION_SLOT, instruction)
        .replace(ITEM_SLOT, item_text)
        .replace(OUTPUT_SLOT, "")
    )
    return rendered, item_text


def build_prompt(
    vocab: Vocabulary,
    caption: str,
    ocr_cover: str,
    template: str = DEFAULT_PROMPT_TEMPLATE,
    instruction: str = DEFAULT_INSTRUCTION,
) -> PromptContext:
    rendered, item_text = render_prompt(caption, ocr_cover, template, instruction)
    # Conditioning tokenization is lenient: unseen characters in an item
    # at inference time should weaken the prompt, not abort generation.
    return PromptContext(item_tokens=tuple(vocab.tokenize_known(item_text)), text=rendered)


def make_example(
    vocab: Vocabulary,
    caption: str,
    ocr_cover: str,
    query: str,
    template: str = DEFAULT_PROMPT_TEMPLATE,
    instruction: str = DEFAULT_INSTRUCTION,
) -> TrainingExample:
    prompt = build_prompt(vocab, caption, ocr_cover, template, instruction)
    target = tuple(vocab.tokenize(query)) + (vocab.eos_id,)
    return TrainingExample(prompt=prompt, target=target)


# ---------------------------------------------------------------------------
# Scalar-path losses. These work against any scorer and serve as the
# reference the vectorized gradient path is checked against.
# ---------------------------------------------------------------------------

def ntp_loss(scorer: NextTokenScorer, example: TrainingExample) -> float:
    """Mean negative log-probability of each gold target token."""
    total = 0.0
    context: list[int] = []
    for token in example.target:
        prob = float(scorer.score(context, example.prompt)[token])
        total -= math.log(max(prob, PROB_FLOOR))
        context.append(token)
    return total / len(example.target)


def nttp_loss(
    scorer: NextTokenScorer,
    example: TrainingExample,
    trie: QueryTrie,
    variant: str = VARIANT_PER_CHILD,
    normalize_children: bool = True,
) -> float:
    """Mean trie-continuation loss over positions whose prefix is a trie path.

    Positions where the emitted prefix leaves the trie contribute nothing;
    the result is 0.0 if no position contributes at all.
    """
    if variant not in _VARIANTS:
        raise ValueError(f"nttp_variant must be one of {_VARIANTS}, got {variant!r}")
    contributions: list[float] = []
    context: list[int] = []
    for token in example.target:
        kids = sorted(trie.children(context))
        if kids:
            probs = scorer.score(context, example.prompt)
            if variant == VARIANT_PER_CHILD:
                value = sum(-math.log(max(float(probs[k]), PROB_FLOOR)) for k in kids)
                if normalize_children:
                    value /= len(kids)
            else:
                mass = float(sum(probs[k] for k in kids))
                value = -math.log(max(mass, PROB_FLOOR))
            contributions.append(value)
        context.append(token)
    if not contributions:
        return 0.0
    return sum(contributions) / len(contributions)


def combined_loss(
    scorer: NextTokenScorer,
    example: TrainingExample,
    trie: QueryTrie,
    spec: LossSpec,
) -> float:
    base = ntp_loss(scorer, example)
    if spec.alpha == 0:
        return base
    return base + spec.alpha * nttp_loss(
        scorer, example, trie, spec.nttp_variant, spec.normalize_children
    )


def example_loss(
    scorer: NextTokenScorer,
    example: TrainingExample,
    trie: QueryTrie,
    spec: LossSpec,
) -> float:
    if spec.objective == "ntp":
        return ntp_loss(scorer, example)
    if spec.objective == "nttp":
        return nttp_loss(scorer, example, trie, spec.nttp_variant, spec.normalize_children)
    return combined_loss(scorer, example, trie, spec)


def batch_loss(
    scorer: NextTokenScorer,
    batch: Sequence[TrainingExample],
    trie: QueryTrie,
    spec: LossSpec,
) -> float:
    if not batch:
        raise ValueError("batch must be nonempty")
    return sum(example_loss(scorer, ex, trie, spec) for ex in batch) / len(batch)


# ---------------------------------------------------------------------------
# Analytic gradients.
# ---------------------------------------------------------------------------

@dataclass
class TinyLMGrads:
    embeddings: np.ndarray
    output_weights: np.ndarray
    bias: np.ndarray


def tiny_backward(
    model: TinyLM,
    batch: Sequence[TrainingExample],
    trie: QueryTrie,
    spec: LossSpec,
) -> tuple[float, TinyLMGrads]:
    """Batch loss and its gradient with respect to every model parameter.

    All target positions of the batch are flattened into one matrix pass.
    The z-gradients are the usual softmax identities:

        ntp:        p - onehot(target)
        per-child:  p - ind(C) / |C|            (summed over C, optionally /|C|)
        set-mass:   p - (p * ind(C)) / mass(C)

    Positions clamped by the probability floor contribute a constant to
    the loss and therefore a zero gradient, matching what finite
    differences of the floored loss would see.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    n_batch = len(batch)
    symbols = model.n_symbols
    dim = model.dim
    order = model.context_order

    include_ntp = spec.objective in ("ntp", "combined")
    include_nttp = spec.objective == "nttp" or (spec.objective == "combined" and spec.alpha != 0)
    nttp_scale = 1.0 if spec.objective == "nttp" else spec.alpha

    windows: list[list[int]] = []
    targets: list[int] = []
    child_sets: list[list[int]] = []
    ntp_weight: list[float] = []
    nttp_rows: list[int] = []

    for example in batch:
        start = len(windows)
        prompt_ids = list(example.prompt.item_tokens)
        context: list[int] = []
        rows_with_children: list[int] = []
        for token in example.target:
            windows.append((prompt_ids + context)[-order:])
            targets.append(token)
            kids = sorted(trie.children(context)) if include_nttp else []
            child_sets.append(kids)
            if kids:
                rows_with_children.append(len(windows) - 1)
            context.append(token)
        n_positions = len(example.target)
        ntp_weight.extend([1.0 / (n_batch * n_positions)] * n_positions)
        if rows_with_children:
            nttp_rows.extend(rows_with_children)

    n_rows = len(windows)
    win_idx = np.zeros((n_rows, order), dtype=np.intp)
    win_mask = np.zeros((n_rows, order))
    for r, window in enumerate(windows):
        if window:
            win_idx[r, : len(window)] = window
            win_mask[r, : len(window)] = 1.0
    win_cnt = win_mask.sum(axis=1)
    safe_cnt = np.maximum(win_cnt, 1.0)

    hidden = (model.embeddings[win_idx] * win_mask[:, :, None]).sum(axis=1) / safe_cnt[:, None]
    logits = hidden @ model.output_weights + model.bias
    if not np.isfinite(logits).all():
        raise NonFiniteModelError("non-finite logits; model parameters have diverged")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    probs = np.exp(log_probs)

    log_floor = math.log(PROB_FLOOR)
    loss = 0.0
    d_logits = np.zeros_like(logits)
    target_idx = np.asarray(targets, dtype=np.intp)
    rows = np.arange(n_rows)

    if include_ntp:
        w = np.asarray(ntp_weight)
        target_logp = log_probs[rows, target_idx]
        clamped = target_logp < log_floor
        loss += float((w * np.where(clamped, -log_floor, -target_logp)).sum())
        grad = probs.copy()
        grad[rows, target_idx] -= 1.0
        grad[clamped] = 0.0
        d_logits += w[:, None] * grad

    if include_nttp and nttp_rows:
        # Per-example mean over contributing positions, then batch mean.
        contrib_count: dict[int, int] = {}
        row_example: list[int] = []
        for e, example in enumerate(batch):
            row_example.extend([e] * len(example.target))
        for r in nttp_rows:
            e = row_example[r]
            contrib_count[e] = contrib_count.get(e, 0) + 1

        idx = np.asarray(nttp_rows, dtype=np.intp)
        w = np.asarray([nttp_scale / (n_batch * contrib_count[row_example[r]]) for r in nttp_rows])
        sub_probs = probs[idx]
        sub_logp = log_probs[idx]
        ind = np.zeros((len(idx), symbols))
        for j, r in enumerate(nttp_rows):
            ind[j, child_sets[r]] = 1.0

        if spec.nttp_variant == VARIANT_PER_CHILD:
            child_logp = np.where(ind > 0, sub_logp, 0.0)
            clamped_child = (ind > 0) & (sub_logp < log_floor)
            row_loss = -(np.where(clamped_child, log_floor, child_logp) * ind).sum(axis=1)
            live = ind * ~clamped_child
            grad = live.sum(axis=1, keepdims=True) * sub_probs - live
            if spec.normalize_children:
                sizes = ind.sum(axis=1, keepdims=True)
                row_loss = row_loss / sizes[:, 0]
                grad = grad / sizes
        else:
            mass = (sub_probs * ind).sum(axis=1)
            clamped_mass = mass < PROB_FLOOR
            row_loss = np.where(clamped_mass, -log_floor, -np.log(np.maximum(mass, PROB_FLOOR)))
            grad = sub_probs - (sub_probs * ind) / np.maximum(mass, PROB_FLOOR)[:, None]
            grad[clamped_mass] = 0.0

        loss += float((w * row_loss).sum())
        np.add.at(d_logits, idx, w[:, None] * grad)

    d_bias = d_logits.sum(axis=0)
    d_weights = hidden.T @ d_logits
    d_hidden = d_logits @ model.output_weights.T
    d_embeddings = np.zeros_like(model.embeddings)
    real = win_mask.astype(bool)
    slot_rows = np.broadcast_to(rows[:, None], (n_rows, order))
    np.add.at(d_embeddings, win_idx[real], (d_hidden / safe_cnt[:, None])[slot_rows[real]])

    return loss, TinyLMGrads(d_embeddings, d_weights, d_bias)


def train_loop(
    model: TinyLM,
    dataset: Sequence[TrainingExample],
    trie: QueryTrie,
    spec: LossSpec,
    config: TrainConfig,
) -> tuple[TinyLM, list[float]]:
    """Plain SGD over seeded shuffles; returns (trained model, per-epoch loss).

    The epoch loss is the example-weighted mean of the pre-update batch
    losses, so it equals the dataset mean regardless of batching. The
    input model is not modified.
    """
    if not dataset:
        raise ValueError("dataset must be nonempty")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    n = len(dataset)
    trace: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            batch = [dataset[i] for i in order[start : start + config.batch_size]]
            try:
                loss, grads = tiny_backward(model, batch, trie, spec)
            except NonFiniteModelError as exc:
                raise TrainingDiverged(epoch, batch_index, str(exc)) from exc
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch, batch_index, f"loss is {loss!r}")
            model.embeddings -= config.learning_rate * grads.embeddings
            model.output_weights -= config.learning_rate * grads.output_weights
            model.bias -= config.learning_rate * grads.bias
            epoch_loss += loss * len(batch)
        trace.append(epoch_loss / n)
    return model, trace


def mean_trie_child_mass(
    scorer: NextTokenScorer,
    dataset: Sequence[TrainingExample],
    trie: QueryTrie,
) -> float:
    """Average probability mass the scorer puts on admissible trie children.

    Measured at every target position whose emitted prefix is a trie path;
    this is the quantity the trie-continuation objective pushes up.
    """
    masses: list[float] = []
    for example in dataset:
        context: list[int] = []
        for token in example.target:
            kids = sorted(trie.children(context))
            if kids:
                probs = scorer.score(context, example.prompt)
                masses.append(float(sum(probs[k] for k in kids)))
            context.append(token)
    if not masses:
        return 0.0
    return sum(masses) / len(masses)
