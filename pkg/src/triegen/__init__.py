"""Trie-constrained query generation toolkit.

Pipeline pieces, in data-flow order: ingest interaction logs into a
cleaned query pool, build a windowed prefix trie over tokenized queries,
train a small next-token model with a trie-continuation auxiliary loss,
decode new queries constrained to trie paths, post-filter them by token
confidence, and score predictions with mean edit distance.
"""
from .vocab import (
    InvalidTokenIdError,
    OutOfVocabularyError,
    Vocabulary,
    build_vocabulary,
    load_vocabulary,
    save_vocabulary,
)
from .trie import QueryTrie, SnapshotParseError, TrieNode, snapshot_load, snapshot_save
from .lm import (
    EMPTY_PROMPT,
    PROB_FLOOR,
    CheckpointParseError,
    NextTokenScorer,
    NgramScorer,
    NonFiniteModelError,
    PromptContext,
    TinyLM,
    load_checkpoint,
    ngram_fit,
    save_checkpoint,
    validate_distribution,
)
from .train import (
    DEFAULT_INSTRUCTION,
    DEFAULT_PROMPT_TEMPLATE,
    LossSpec,
    PromptTemplateError,
    TrainConfig,
    TrainingDiverged,
    TrainingExample,
    VARIANT_PER_CHILD,
    VARIANT_SET_MASS,
    batch_loss,
    build_prompt,
    combined_loss,
    make_example,
    mean_trie_child_mass,
    ntp_loss,
    nttp_loss,
    tiny_backward,
    train_loop,
)
from .decode import (
    EmptyTrieError,
    GenerationLimitError,
    ScoredQuery,
    constrained_beam,
    constrained_greedy,
    unconstrained_beam,
    unconstrained_greedy,
)
from .filters import FilterConfig, FilterReport, apply_filter, global_score, local_score
from .evaluation import EvalRecord, EvalSummary, edit_at_k, edit_distance, evaluate
from .ingest import (
    CharBigramJaccard,
    CleaningConfig,
    LogRecord,
    SimilarityScorer,
    build_query_pool,
    chronological_split,
    clean,
    read_log_tsv,
)

__version__ = "0.1.0"
