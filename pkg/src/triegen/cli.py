"""Command-line pipeline: ingest -> build-trie -> train -> generate -> filter -> eval.

Each command reads files, writes files, and exits. All randomness hangs
off --seed, outputs are staged and only moved into place on success, and
the baseline/ablation switches are plain flags: --no-trie decodes without
the trie constraint, --alpha 0 trains without the trie loss, --no-filter
passes every generated query through.

Logging goes to stderr at the level named by GREAT_LOG_LEVEL
(error|warn|info|debug, default warn).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from datetime import date
from pathlib import Path

from .decode import ScoredQuery, constrained_beam, unconstrained_beam
from .evaluation import EvalRecord, evaluate, summary_table
from .filters import FilterConfig, apply_filter
from .ingest import (
    CleaningConfig,
    build_query_pool,
    chronological_split,
    clean,
    dataset_jsonl_text,
    read_dataset_jsonl,
    read_log_tsv,
)
from .io_utils import FileFormatError, dump_json_line, escape, read_jsonl, staged_writes
from .lm import TinyLM, checkpoint_text, load_checkpoint
from .trie import (
    QueryTrie,
    format_query_record,
    read_query_records,
    snapshot_load,
    write_snapshot_text,
)
from .train import (
    LossSpec,
    TrainConfig,
    VARIANT_PER_CHILD,
    VARIANT_SET_MASS,
    build_prompt,
    make_example,
    render_prompt,
    train_loop,
)
from .vocab import build_vocabulary, load_vocabulary

LOG = logging.getLogger("triegen")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

_DEFAULT_KS = (1, 5, 10, 20)


def _configure_logging() -> None:
    raw = os.environ.get("GREAT_LOG_LEVEL", "warn").lower()
    level = _LOG_LEVELS.get(raw)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level if level is not None else logging.WARNING)
    if level is None and raw != "warn":
        LOG.warning("unknown GREAT_LOG_LEVEL %r, using warn", raw)


def read_config(path) -> dict[str, str]:
    """Flat key=value config; blank lines and # comments are ignored."""
    path = Path(path)
    values: dict[str, str] = {}
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FileFormatError(path, i, f"expected key=value, got {stripped!r}")
        key, _, value = stripped.partition("=")
        values[key.strip()] = value.strip()
    return values


def _config_subset(cfg: dict[str, str], allowed: tuple[str, ...], source) -> dict[str, str]:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise ValueError(f"{source}: unknown config keys {unknown}; allowed: {sorted(allowed)}")
    return cfg


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------

_INGEST_KEYS = (
    "min_exposure", "min_clicks", "min_similarity", "blocklist",
    "train_count", "holdout_count",
)


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _config_subset(read_config(args.config) if args.config else {}, _INGEST_KEYS, args.config)
    cleaning = CleaningConfig(
        min_exposure=int(cfg.get("min_exposure", 1000)),
        min_clicks=int(cfg.get("min_clicks", 10)),
        min_similarity=float(cfg.get("min_similarity", 0.44)),
        blocklist=frozenset(t for t in cfg.get("blocklist", "").split(",") if t),
    )
    records = read_log_tsv(args.input)
    kept, report = clean(records, cleaning)
    LOG.info("cleaning kept %d of %d records; rejections: %s", len(kept), len(records), dict(report))
    if not kept:
        raise ValueError(f"{args.input}: no records survived cleaning")

    if "holdout_count" in cfg:
        holdout_count = int(cfg["holdout_count"])
    else:
        holdout_count = max(2, (len(kept) // 5) // 2 * 2)
    train_count = int(cfg.get("train_count", len(kept) - holdout_count))
    train, validation, test = chronological_split(kept, train_count, holdout_count, args.seed)

    # "today" is the newest observation, so reruns over the same logs are
    # reproducible regardless of wall-clock date.
    today = max(r.timestamp for r in kept).date()
    pool = build_query_pool(kept, today, args.window_days)
    LOG.info("pool holds %d distinct queries as of %s", len(pool), today.isoformat())

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    pool_text = "".join(format_query_record(q, seen, count) + "\n" for q, seen, count in pool)
    with staged_writes() as stage:
        stage.stage_text(outdir / "train.jsonl", dataset_jsonl_text(train))
        stage.stage_text(outdir / "validation.jsonl", dataset_jsonl_text(validation))
        stage.stage_text(outdir / "test.jsonl", dataset_jsonl_text(test))
        stage.stage_text(outdir / "pool.txt", pool_text)
    return 0


# ---------------------------------------------------------------------------
# build-trie
# ---------------------------------------------------------------------------

def cmd_build_trie(args: argparse.Namespace) -> int:
    _, entries = read_query_records(args.input, expect_header=False)
    merged: dict[str, tuple[date, int]] = {}
    for query, seen, count in entries:
        if query in merged:
            last, total = merged[query]
            merged[query] = (max(last, seen), total + count)
        else:
            merged[query] = (seen, count)
    records = [(q, seen, count) for q, (seen, count) in sorted(merged.items())]
    if not records:
        LOG.warning("pool %s is empty; writing an empty trie snapshot", args.input)
    with staged_writes() as stage:
        stage.stage_text(args.output, write_snapshot_text(args.window_days, records))
    LOG.info("trie snapshot holds %d queries (window %d days)", len(records), args.window_days)
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

_TRAIN_KEYS = ("learning_rate", "batch_size", "epochs", "dim", "context_order")


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config_subset(read_config(args.config) if args.config else {}, _TRAIN_KEYS, args.config)
    train_cfg = TrainConfig(
        learning_rate=float(cfg.get("learning_rate", 0.1)),
        batch_size=int(cfg.get("batch_size", 16)),
        epochs=int(cfg.get("epochs", 20)),
        seed=args.seed,
    )
    dim = int(cfg.get("dim", 16))
    context_order = int(cfg.get("context_order", 8))

    rows = read_dataset_jsonl(args.input)
    if not rows:
        raise ValueError(f"{args.input}: dataset is empty")
    _, trie_records = read_query_records(args.trie, expect_header=True)

    # The vocabulary covers everything train-time text can contain: the
    # rendered prompts, the target queries, and the trie's stored queries.
    corpus: list[str] = []
    for row in rows:
        rendered, _ = render_prompt(row["caption"], row["ocr_cover"])
        corpus.append(rendered)
        corpus.append(row["query"])
    corpus.extend(q for q, _, _ in trie_records)
    vocab = build_vocabulary(corpus)

    trie = snapshot_load(args.trie, vocab)
    examples = [make_example(vocab, row["caption"], row["ocr_cover"], row["query"]) for row in rows]
    spec = LossSpec(alpha=args.alpha, nttp_variant=args.nttp_variant)
    model = TinyLM.create(vocab.n_symbols, dim, context_order, seed=args.seed)
    trained, trace = train_loop(model, examples, trie, spec, train_cfg)
    LOG.info("trained %d epochs; loss %0.4f -> %0.4f", len(trace), trace[0], trace[-1])

    out = Path(args.output)
    trace_text = "epoch,loss\n" + "".join(f"{i},{loss!r}\n" for i, loss in enumerate(trace))
    vocab_text = "\n".join(escape(t) for t in vocab.tokens) + "\n"
    with staged_writes() as stage:
        stage.stage_text(out, checkpoint_text(trained))
        stage.stage_text(Path(str(out) + ".vocab"), vocab_text)
        stage.stage_text(Path(str(out) + ".trace.csv"), trace_text)
    return 0


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

_GENERATE_KEYS = ("max_len",)


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _config_subset(read_config(args.config) if args.config else {}, _GENERATE_KEYS, args.config)
    model = load_checkpoint(args.checkpoint)
    vocab = load_vocabulary(str(args.checkpoint) + ".vocab")
    if vocab.n_symbols != model.n_symbols:
        raise ValueError(
            f"vocabulary ({vocab.n_symbols} symbols) does not match checkpoint "
            f"({model.n_symbols} symbols)"
        )
    rows = read_dataset_jsonl(args.input)
    if not rows:
        raise ValueError(f"{args.input}: dataset is empty")

    trie: QueryTrie | None = None
    if args.no_trie:
        max_len = int(cfg.get("max_len", 32))
    else:
        if not args.trie:
            raise ValueError("--trie is required unless --no-trie is given")
        trie = snapshot_load(args.trie, vocab)
        if trie.query_count == 0:
            raise ValueError(f"{args.trie}: trie is empty, nothing to generate")
        max_len = int(cfg.get("max_len", trie.max_depth() + 1))

    lines: list[str] = []
    for item_index, row in enumerate(rows):
        prompt = build_prompt(vocab, row["caption"], row["ocr_cover"])
        if trie is None:
            results = unconstrained_beam(
                model, prompt, args.beam_width, args.topk, max_len=max_len, vocab=vocab
            )
        else:
            results = constrained_beam(
                model, prompt, trie, args.beam_width, args.topk, max_len=max_len, vocab=vocab
            )
        for sq in results:
            lines.append(
                dump_json_line(
                    {
                        "item": item_index,
                        "ground_truth": row["query"],
                        "query": sq.text,
                        "log_prob": sq.log_prob,
                        "token_probs": list(sq.token_probs),
                        "eos_prob": sq.eos_prob,
                    }
                )
            )
    with staged_writes() as stage:
        stage.stage_text(args.output, "\n".join(lines) + ("\n" if lines else ""))
    LOG.info("generated %d queries for %d items", len(lines), len(rows))
    return 0


# ---------------------------------------------------------------------------
# filter
# ---------------------------------------------------------------------------

_FILTER_KEYS = ("include_eos",)


def cmd_filter(args: argparse.Namespace) -> int:
    cfg = _config_subset(read_config(args.config) if args.config else {}, _FILTER_KEYS, args.config)
    include_eos = cfg.get("include_eos", "false").lower() in ("1", "true", "yes")
    if args.no_filter:
        filter_cfg = FilterConfig(theta_g=0.0, theta_l=0.0, include_eos=include_eos)
    else:
        filter_cfg = FilterConfig(theta_g=args.theta_g, theta_l=args.theta_l, include_eos=include_eos)

    rows = read_jsonl(args.input)
    queries: list[ScoredQuery] = []
    for i, row in enumerate(rows, start=1):
        for key in ("query", "log_prob", "token_probs"):
            if key not in row:
                raise FileFormatError(args.input, i, f"missing field {key!r}")
        if not isinstance(row["token_probs"], list) or not row["token_probs"]:
            raise FileFormatError(args.input, i, "token_probs must be a nonempty array")
        queries.append(
            ScoredQuery(
                tokens=(),
                text=str(row["query"]),
                token_probs=tuple(float(p) for p in row["token_probs"]),
                log_prob=float(row["log_prob"]),
                eos_prob=None if row.get("eos_prob") is None else float(row["eos_prob"]),
            )
        )

    _, reports = apply_filter(queries, filter_cfg)
    survivors_lines = [dump_json_line(row) for row, rep in zip(rows, reports) if rep.passed_local]
    report_lines = ["query\tf_g\tf_l\tverdict"]
    report_lines.extend(
        f"{rep.query.text}\t{rep.f_g!r}\t{rep.f_l!r}\t{rep.verdict}" for rep in reports
    )
    with staged_writes() as stage:
        stage.stage_text(args.output, "\n".join(survivors_lines) + ("\n" if survivors_lines else ""))
        stage.stage_text(str(args.output) + ".report.tsv", "\n".join(report_lines) + "\n")
    LOG.info("filter kept %d of %d queries", len(survivors_lines), len(rows))
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

_EVAL_KEYS = ("ks",)


def _eval_records_from_rows(rows: list[dict], path) -> list[EvalRecord]:
    if not rows:
        raise ValueError(f"{path}: no prediction rows to evaluate")
    if "predictions" in rows[0]:
        records = []
        for i, row in enumerate(rows, start=1):
            if "query" not in row or "predictions" not in row:
                raise FileFormatError(path, i, "expected fields 'query' and 'predictions'")
            records.append(EvalRecord(str(row["query"]), tuple(str(p) for p in row["predictions"])))
        return records
    # Decode/filter output: group ranked rows by item, ground truth embedded.
    grouped: dict[int, tuple[str, list[str]]] = {}
    for i, row in enumerate(rows, start=1):
        for key in ("item", "ground_truth", "query"):
            if key not in row:
                raise FileFormatError(path, i, f"missing field {key!r}")
        item = int(row["item"])
        if item not in grouped:
            grouped[item] = (str(row["ground_truth"]), [])
        grouped[item][1].append(str(row["query"]))
    return [EvalRecord(gt, tuple(preds)) for gt, preds in (grouped[i] for i in sorted(grouped))]


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config_subset(read_config(args.config) if args.config else {}, _EVAL_KEYS, args.config)
    ks = tuple(int(k) for k in cfg.get("ks", ",".join(map(str, _DEFAULT_KS))).split(",") if k)
    rows = read_jsonl(args.input)
    records = _eval_records_from_rows(rows, args.input)
    summary = evaluate(records, ks)
    table = summary_table(summary)
    with staged_writes() as stage:
        stage.stage_text(args.output, table)
    sys.stdout.write(table)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triegen",
        description="Trie-constrained query generation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ingest = sub.add_parser("ingest", help="clean logs, split datasets, extract the query pool")
    ingest.add_argument("--input", required=True, help="interaction log TSV")
    ingest.add_argument("--output", required=True, help="output directory for datasets and pool")
    ingest.add_argument("--config", help="key=value overrides (thresholds, split sizes)")
    ingest.add_argument("--seed", type=int, default=0)
    ingest.add_argument("--window-days", type=int, default=15)
    ingest.set_defaults(func=cmd_ingest)

    build_trie = sub.add_parser("build-trie", help="turn a query pool into a trie snapshot")
    build_trie.add_argument("--input", required=True, help="pool file from ingest")
    build_trie.add_argument("--output", required=True, help="trie snapshot path")
    build_trie.add_argument("--window-days", type=int, default=15)
    build_trie.set_defaults(func=cmd_build_trie)

    train = sub.add_parser("train", help="train the tiny LM on a dataset plus trie")
    train.add_argument("--input", required=True, help="train dataset JSONL")
    train.add_argument("--trie", required=True, help="trie snapshot")
    train.add_argument("--output", required=True, help="checkpoint path (vocab/trace sidecars)")
    train.add_argument("--config", help="key=value training hyperparameters")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--alpha", type=float, default=0.1, help="trie-loss weight; 0 disables it")
    train.add_argument(
        "--nttp-variant",
        choices=(VARIANT_PER_CHILD, VARIANT_SET_MASS),
        default=VARIANT_PER_CHILD,
    )
    train.set_defaults(func=cmd_train)

    generate = sub.add_parser("generate", help="decode queries for each dataset item")
    generate.add_argument("--input", required=True, help="dataset JSONL to condition on")
    generate.add_argument("--checkpoint", required=True, help="trained checkpoint")
    generate.add_argument("--trie", help="trie snapshot (required unless --no-trie)")
    generate.add_argument("--output", required=True, help="predictions JSONL")
    generate.add_argument("--config", help="key=value decode options (max_len)")
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--beam-width", type=int, default=8)
    generate.add_argument("--topk", type=int, default=5)
    generate.add_argument("--no-trie", action="store_true", help="unconstrained baseline decode")
    generate.set_defaults(func=cmd_generate)

    filt = sub.add_parser("filter", help="drop low-confidence queries")
    filt.add_argument("--input", required=True, help="predictions JSONL")
    filt.add_argument("--output", required=True, help="survivors JSONL (+ .report.tsv)")
    filt.add_argument("--theta-g", type=float, default=0.2)
    filt.add_argument("--theta-l", type=float, default=0.05)
    filt.add_argument("--no-filter", action="store_true", help="pass every query through")
    filt.add_argument("--config", help="key=value filter options (include_eos)")
    filt.set_defaults(func=cmd_filter)

    ev = sub.add_parser("eval", help="edit-distance table for predictions vs ground truth")
    ev.add_argument("--input", required=True, help="predictions/survivors JSONL")
    ev.add_argument("--output", required=True, help="TSV table path")
    ev.add_argument("--config", help="key=value eval options (ks)")
    ev.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging()
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
