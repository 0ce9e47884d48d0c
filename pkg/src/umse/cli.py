"""Command-line pipeline driver.

Subcommands cover the full workflow: synthetic corpus generation, vocabulary
and retrieval-index building, training-pair generation, training, scoring
(neural scenarios, fused scores, or lexical overlap baselines), correlation
reports against human annotations, and a finite-difference gradient check.

Settings resolve lowest to highest: built-in defaults, then a flat JSON
config file given with --config, then explicit flags. Unknown config keys
are rejected. Every failure is reported as a one-line JSON object on
standard error with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .corpus import (
    Vocabulary,
    build_vocab,
    gen_synthetic_corpus,
    read_corpus_jsonl,
    tokenize,
    word_tokens,
    write_corpus_jsonl,
)
from .datagen import (
    DOCUMENT_MATCHING,
    SUMMARY_MATCHING,
    generate_dataset,
    read_dataset_jsonl,
    to_scenario_examples,
    write_dataset_jsonl,
)
from .metaeval import (
    DIMENSIONS,
    CorrelationReport,
    SignificanceEntry,
    evaluate,
    read_annotations_jsonl,
    rouge_l,
    rouge_n,
    significance_against_baseline,
)
from .model import (
    FUSION_METHODS,
    SCENARIOS,
    ModelConfig,
    fuse,
    init_parameters,
    load_checkpoint,
    score,
)
from .retrieval import build_index, load_index, save_index
from .training import TrainConfig, grad_check, train

VOCAB_FILE = "vocab.txt"
INDEX_FILE = "index.bin"
METRICS = ("rouge1", "rouge2", "rougeL")

SYNTH_DEFAULTS = {"n_docs": 2000, "topic_count": 50, "seed": 12}
GENDATA_DEFAULTS = {"n_pairs": 15000, "seed": 12}
TRAIN_DEFAULTS = {
    "hidden_dim": 64,
    "n_layers": 2,
    "n_heads": 4,
    "ffn_dim": 256,
    "prefix_len": 16,
    "max_len": 512,
    "init_seed": 12,
    "learning_rate": 3.0e-5,
    "epochs": 10,
    "batch_size": 8,
    "seed": 12,
    "mode": "unified",
    "scenario": None,
    "weight_decay": 0.01,
    "clip_norm": 1.0,
    "holdout_fraction": 0.1,
    "target_accuracy": None,
}
SCORE_DEFAULTS = {"scenario": None, "fusion": None, "metric": None}


class _Parser(argparse.ArgumentParser):
    """Argument errors leave as one-line JSON like every other error."""

    def error(self, message):
        print(json.dumps({"error": f"argument error: {message}"}), file=sys.stderr)
        raise SystemExit(2)


def _merge(args: argparse.Namespace, defaults: dict) -> dict:
    """Defaults, then config-file values, then explicitly passed flags."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path is not None:
        with open(config_path, encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed config file: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold a JSON object")
        for key in sorted(loaded):
            if key not in defaults:
                raise ValueError(f"unknown config key: {key}")
        merged.update(loaded)
    for key in defaults:
        value = getattr(args, key)
        if value is not None:
            merged[key] = value
    return merged


def _read_jsonl_rows(path: str) -> list[tuple[int, dict]]:
    rows: list[tuple[int, dict]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"malformed input line {lineno}: {exc}") from exc
            if not isinstance(row, dict):
                raise ValueError(f"malformed input line {lineno}: not a JSON object")
            rows.append((lineno, row))
    return rows


def _field(row: dict, name: str, lineno: int) -> str:
    value = row.get(name)
    if value is None:
        raise ValueError(f"input line {lineno}: missing field {name!r}")
    return value


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _merge(args, SYNTH_DEFAULTS)
    corpus = gen_synthetic_corpus(cfg["n_docs"], cfg["topic_count"], cfg["seed"])
    write_corpus_jsonl(corpus, args.out)
    print(f"documents: {len(corpus)}")
    return 0


def cmd_build(args: argparse.Namespace) -> int:
    corpus = read_corpus_jsonl(args.corpus)
    vocab = build_vocab(corpus, min_frequency=args.min_frequency)
    index = build_index(corpus, vocab)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / VOCAB_FILE)
    save_index(index, out_dir / INDEX_FILE)
    print(f"documents: {len(corpus)}")
    print(f"vocabulary: {len(vocab)}")
    return 0


def cmd_gendata(args: argparse.Namespace) -> int:
    cfg = _merge(args, GENDATA_DEFAULTS)
    corpus = read_corpus_jsonl(args.corpus)
    vocab = Vocabulary.load(args.vocab)
    index = load_index(args.index)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    # the document-matching stream gets its own seed so the two files do
    # not sample source documents in lockstep
    for kind, seed_offset, filename in (
        (SUMMARY_MATCHING, 0, "summary_matching.jsonl"),
        (DOCUMENT_MATCHING, 1, "document_matching.jsonl"),
    ):
        dataset = generate_dataset(
            corpus, index, vocab, kind, cfg["n_pairs"], cfg["seed"] + seed_offset
        )
        write_dataset_jsonl(dataset, out_dir / filename)
        print(f"{kind}: {len(dataset)}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _merge(args, TRAIN_DEFAULTS)
    mode = cfg["mode"]
    if mode == "single":
        mode = "single_scenario"
    corpus = read_corpus_jsonl(args.corpus)
    vocab = Vocabulary.load(args.vocab)
    datasets: dict[str, list] = {}
    for path in (args.summary_matching, args.document_matching):
        if path is None:
            continue
        labeled = read_dataset_jsonl(path, corpus, vocab)
        for ex in to_scenario_examples(labeled, corpus, vocab):
            datasets.setdefault(ex.scenario, []).append(ex)
    model_config = ModelConfig(
        vocab_size=len(vocab),
        hidden_dim=cfg["hidden_dim"],
        n_layers=cfg["n_layers"],
        n_heads=cfg["n_heads"],
        ffn_dim=cfg["ffn_dim"],
        prefix_len=cfg["prefix_len"],
        max_len=cfg["max_len"],
        init_seed=cfg["init_seed"],
    )
    clip = cfg["clip_norm"]
    train_config = TrainConfig(
        learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        seed=cfg["seed"],
        mode=mode,
        scenario=cfg["scenario"],
        weight_decay=cfg["weight_decay"],
        clip_norm=None if clip == 0 else clip,
        holdout_fraction=cfg["holdout_fraction"],
        target_accuracy=cfg["target_accuracy"],
    )
    params = init_parameters(model_config)
    params, report = train(
        params, model_config, datasets, train_config, checkpoint_path=args.checkpoint_out
    )
    print(report.to_json())
    if args.report_out:
        Path(args.report_out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 1 if report.diverged else 0


def _rouge_score(metric: str, candidate: list[str], reference: list[str]) -> float:
    if metric == "rouge1":
        return rouge_n(candidate, reference, 1)[2]
    if metric == "rouge2":
        return rouge_n(candidate, reference, 2)[2]
    return rouge_l(candidate, reference)[2]


def _score_line(row: dict, value: float, scenario, fusion, metric) -> str:
    out: dict = {}
    for key in ("doc_id", "system_id"):
        if key in row:
            out[key] = row[key]
    out["score"] = value
    out["scenario"] = scenario
    out["fusion"] = fusion
    if metric is not None:
        out["metric"] = metric
    return json.dumps(out, ensure_ascii=False)


def cmd_score(args: argparse.Namespace) -> int:
    cfg = _merge(args, SCORE_DEFAULTS)
    scenario, fusion, metric = cfg["scenario"], cfg["fusion"], cfg["metric"]
    rows = _read_jsonl_rows(args.inputs)
    lines: list[str] = []
    if metric is not None:
        for lineno, row in rows:
            cand = word_tokens(_field(row, "candidate", lineno))
            ref = word_tokens(_field(row, "reference", lineno))
            lines.append(_score_line(row, _rouge_score(metric, cand, ref), None, None, metric))
    else:
        if args.checkpoint is None or args.vocab is None or scenario is None:
            raise ValueError(
                "model scoring needs --checkpoint, --vocab and --scenario (or use --metric)"
            )
        if fusion is not None and scenario != "SDR":
            raise ValueError("fusion requires scenario SDR")
        params, model_config = load_checkpoint(args.checkpoint)
        vocab = Vocabulary.load(args.vocab)
        need_ref = scenario in ("SR", "SDR")
        need_doc = scenario in ("SD", "SDR")
        for lineno, row in rows:
            cand = tuple(tokenize(_field(row, "candidate", lineno), vocab))
            ref = (
                tuple(tokenize(_field(row, "reference", lineno), vocab)) if need_ref else None
            )
            doc = (
                tuple(tokenize(_field(row, "document", lineno), vocab)) if need_doc else None
            )
            if fusion is not None:
                s_sr = score(params, model_config, "SR", cand, reference=ref).score
                s_sd = score(params, model_config, "SD", cand, document=doc).score
                value = fuse(s_sr, s_sd, fusion)
            else:
                value = score(
                    params, model_config, scenario, cand, reference=ref, document=doc
                ).score
            lines.append(_score_line(row, value, scenario, fusion, None))
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _read_scores_file(path: str) -> list[tuple[str, str, float]]:
    out = []
    for lineno, row in _read_jsonl_rows(path):
        for key in ("doc_id", "system_id", "score"):
            if key not in row:
                raise ValueError(f"scores line {lineno}: missing field {key!r}")
        out.append((row["doc_id"], row["system_id"], float(row["score"])))
    return out


def cmd_evaluate(args: argparse.Namespace) -> int:
    scores = _read_scores_file(args.scores)
    annotations, _scale = read_annotations_jsonl(args.annotations)
    dims = [d.strip() for d in args.dimensions.split(",") if d.strip()]
    if not dims:
        raise ValueError("no dimensions requested")
    for dim in dims:
        if dim not in DIMENSIONS:
            raise ValueError(f"unknown dimension: {dim}")
    report = CorrelationReport(aggregation="system" if args.system_level else "pooled")
    for dim in dims:
        report.results.append(evaluate(scores, annotations, dim, system_level=args.system_level))
    if args.baseline is not None:
        baseline_scores = _read_scores_file(args.baseline)
        name = args.baseline_name or Path(args.baseline).stem
        for dim in dims:
            t, p, _n = significance_against_baseline(scores, baseline_scores, annotations, dim)
            report.significance.append(SignificanceEntry(dim, name, t, p))
    print(report.to_json())
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    start = time.perf_counter()
    worst = grad_check(n_coords=args.n_coords, seed=args.seed)
    seconds = time.perf_counter() - start
    passed = worst < args.tolerance
    print(
        json.dumps(
            {
                "max_rel_error": worst,
                "seconds": seconds,
                "tolerance": args.tolerance,
                "pass": passed,
            }
        )
    )
    return 0 if passed else 1


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat JSON config file; flags override its values")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="umse", description="multi-scenario summarization evaluation pipeline")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command", parser_class=_Parser)

    p = sub.add_parser(
        "synth",
        help="generate a synthetic topical corpus",
        description="Generate a synthetic topical corpus as JSONL.",
    )
    p.add_argument("--out", required=True, help="corpus JSONL output path")
    p.add_argument("--n-docs", type=int, help="number of documents (default 2000)")
    p.add_argument("--topic-count", type=int, help="number of topics (default 50)")
    p.add_argument("--seed", type=int, help="generator seed (default 12)")
    _add_config_flag(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser(
        "build",
        help="build vocabulary and retrieval index",
        description="Build the vocabulary and retrieval index for a corpus.",
    )
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--out-dir", required=True, help="directory for vocab.txt and index.bin")
    p.add_argument(
        "--min-frequency", type=int, default=1, help="minimum token count kept (default 1)"
    )
    p.set_defaults(func=cmd_build)

    p = sub.add_parser(
        "gendata",
        help="generate the two training-pair datasets",
        description="Generate summary-matching and document-matching training pairs.",
    )
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--vocab", required=True, help="vocabulary file from build")
    p.add_argument("--index", required=True, help="retrieval index file from build")
    p.add_argument("--out-dir", required=True, help="directory for the two dataset files")
    p.add_argument("--n-pairs", type=int, help="positive pairs per dataset (default 15000)")
    p.add_argument("--seed", type=int, help="sampling seed (default 12)")
    _add_config_flag(p)
    p.set_defaults(func=cmd_gendata)

    p = sub.add_parser(
        "train",
        help="train the scoring model",
        description="Train the scoring model on generated datasets.",
    )
    p.add_argument("--corpus", required=True, help="corpus JSONL path")
    p.add_argument("--vocab", required=True, help="vocabulary file from build")
    p.add_argument("--summary-matching", help="summary-matching dataset JSONL")
    p.add_argument("--document-matching", help="document-matching dataset JSONL")
    p.add_argument("--checkpoint-out", help="checkpoint output path")
    p.add_argument("--report-out", help="also write the JSON report here")
    p.add_argument("--hidden-dim", type=int, help="model width (default 64)")
    p.add_argument("--n-layers", type=int, help="encoder layers (default 2)")
    p.add_argument("--n-heads", type=int, help="attention heads (default 4)")
    p.add_argument("--ffn-dim", type=int, help="feed-forward width (default 256)")
    p.add_argument("--prefix-len", type=int, help="shared prefix length (default 16)")
    p.add_argument("--max-len", type=int, help="input length cap (default 512)")
    p.add_argument("--init-seed", type=int, help="weight init seed (default 12)")
    p.add_argument(
        "--mode",
        choices=("unified", "joint_no_prefix", "single", "single_scenario"),
        help="training mode (default unified); single trains one scenario",
    )
    p.add_argument("--scenario", choices=SCENARIOS, help="scenario for --mode single")
    p.add_argument("--learning-rate", type=float, help="step size (default 3e-05)")
    p.add_argument("--epochs", type=int, help="epoch budget, 1..10 (default 10)")
    p.add_argument("--batch-size", type=int, help="examples per step (default 8)")
    p.add_argument("--seed", type=int, help="shuffling seed (default 12)")
    p.add_argument("--weight-decay", type=float, help="decoupled decay (default 0.01)")
    p.add_argument(
        "--clip-norm", type=float, help="global gradient-norm cap, 0 disables (default 1.0)"
    )
    p.add_argument(
        "--holdout-fraction", type=float, help="held-out fraction per stream (default 0.1)"
    )
    p.add_argument(
        "--target-accuracy",
        type=float,
        help="stop once every holdout stream reaches this accuracy",
    )
    _add_config_flag(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "score",
        help="score candidate summaries",
        description=(
            "Score candidate summaries with a trained checkpoint or a lexical "
            "overlap metric. Input JSONL needs a candidate field, plus "
            "reference and document fields as the scenario requires; doc_id "
            "and system_id pass through to the output."
        ),
    )
    p.add_argument("--inputs", required=True, help="input JSONL path")
    p.add_argument("--out", help="output JSONL path (default: standard output)")
    p.add_argument("--checkpoint", help="model checkpoint path")
    p.add_argument("--vocab", help="vocabulary file from build")
    p.add_argument("--scenario", choices=SCENARIOS, help="input scenario")
    p.add_argument(
        "--fusion",
        choices=FUSION_METHODS,
        help="with --scenario SDR: fuse separate SR and SD scores instead of "
        "the direct SDR forward pass",
    )
    p.add_argument(
        "--metric", choices=METRICS, help="lexical baseline instead of the model"
    )
    _add_config_flag(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser(
        "evaluate",
        help="correlate scores with human annotations",
        description=(
            "Report rank correlations between scores and human annotations per "
            "dimension, optionally with a paired significance test against a "
            "baseline scores file."
        ),
    )
    p.add_argument("--scores", required=True, help="scores JSONL with doc_id and system_id")
    p.add_argument("--annotations", required=True, help="annotation JSONL path")
    p.add_argument(
        "--dimensions",
        default=",".join(DIMENSIONS),
        help="comma-separated rating dimensions (default: all four)",
    )
    p.add_argument("--baseline", help="baseline scores JSONL for the significance test")
    p.add_argument(
        "--baseline-name", help="label for the baseline (default: its file stem)"
    )
    p.add_argument(
        "--system-level",
        action="store_true",
        help="correlate per-system means instead of pooled pairs",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser(
        "gradcheck",
        help="finite-difference gradient check",
        description="Compare analytic gradients against central differences on a small model.",
    )
    p.add_argument(
        "--n-coords", type=int, default=200, help="coordinates probed per check (default 200)"
    )
    p.add_argument("--seed", type=int, default=12, help="probe seed (default 12)")
    p.add_argument(
        "--tolerance",
        type=float,
        default=1.0e-4,
        help="maximum accepted relative error (default 1e-04)",
    )
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyError as exc:
        print(json.dumps({"error": f"unknown document id: {exc.args[0]}"}), file=sys.stderr)
        return 1
    except (ValueError, OSError, FloatingPointError) as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
