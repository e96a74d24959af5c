"""Command-line interface.

Composable subcommands over the file formats: `mask`, `score`, `fuse`,
`prune`, `intersect`, `synth`, `eval`, `stats {iou,simmatrix}`, and `run`
(the whole pipeline in one shot). Flags override config-file values;
SIEVE_BACKEND_URL overrides both for the service URL.

Exit codes are stable per error class: 1 configuration, 2 IO/format,
3 backend, 4 data.
"""

from __future__ import annotations

import argparse
import collections
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import parse_memory, validate_config
from .corpus_io import (
    SHARD_VERSION,
    ScoreRow,
    read_embedding_shard,
    read_manifest,
    read_scores,
    read_selection,
    read_uid_set,
    write_scores,
    write_selection,
)
from .errors import DataError, SieveError
from .pipeline import (
    fuse_rows,
    load_phrases,
    make_backend,
    resolve_rank_column,
    run_pipeline,
    sieve_score_stream,
)
from .pruning import external_topk, intersect_selections, selection_iou
from .scoring import FusionWeights, sieve_score
from .synth import (
    SynthSpec,
    detection_metrics,
    generate_synthetic_corpus,
    k_sweep,
    load_corpus,
    save_corpus,
    similarity_matrix,
)
from .textnorm import load_phrase_list, mask_medium_phrases

_VERSION_TEXT = f"sieve {__version__} (formats: manifest v1, shard v{SHARD_VERSION}, selection v1)"


def _add_backend_flags(sub: argparse.ArgumentParser) -> None:
    group = sub.add_argument_group("backend and scoring settings")
    group.add_argument("--config", default=None, help="key=value config file")
    group.add_argument("--backend", choices=["mock", "file", "service"], default=None)
    group.add_argument("--backend-url", default=None, help="service backend URL")
    group.add_argument("--captions", dest="captions_path", default=None,
                       help="file backend: precomputed captions JSONL")
    group.add_argument("--embeddings", dest="embeddings_path", default=None,
                       help="file backend: text-keyed embedding shard")
    group.add_argument("--phrases", dest="phrases_path", default=None,
                       help="medium-phrase list, one per line")
    group.add_argument("--r", type=int, default=None, help="captions per image")
    group.add_argument("--top-p", dest="top_p", type=float, default=None)
    group.add_argument("--min-len", dest="min_len", type=int, default=None)
    group.add_argument("--max-len", dest="max_len", type=int, default=None)
    group.add_argument("--alpha", type=float, default=None, help="CLIPScore fusion weight")
    group.add_argument("--k", type=float, default=None, help="selected fraction")
    group.add_argument("--seed", dest="global_seed", type=int, default=None)
    group.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    group.add_argument("--jobs", type=int, default=None)
    group.add_argument("--memory", dest="memory_budget", default=None,
                       help="byte budget, e.g. 512MiB")


_CONFIG_FLAGS = (
    "backend", "backend_url", "captions_path", "embeddings_path", "phrases_path",
    "r", "top_p", "min_len", "max_len", "alpha", "k", "global_seed",
    "batch_size", "jobs", "memory_budget",
)


def _config_from_args(args: argparse.Namespace):
    overrides = {}
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if name == "memory_budget" and value is not None:
            value = parse_memory(value)
        overrides[name] = value
    return validate_config(getattr(args, "config", None), overrides)


def _open_text(path: str, mode: str):
    if path == "-":
        return sys.stdin if "r" in mode else sys.stdout
    return open(path, mode, encoding="utf-8")


def _cmd_mask(args: argparse.Namespace) -> int:
    phrases = load_phrase_list(args.phrases_path) if args.phrases_path else None
    source = _open_text(args.infile, "r")
    sink = _open_text(args.out, "w")
    try:
        for line in source:
            sink.write(mask_medium_phrases(line, phrases) + "\n")
    finally:
        if source is not sys.stdin:
            source.close()
        if sink is not sys.stdout:
            sink.close()
    return 0


def _score_rows_from_backend(args: argparse.Namespace) -> list[ScoreRow]:
    config = _config_from_args(args)
    backend = make_backend(config)
    phrases = load_phrases(config)
    clip_by_uid: dict[str, float | None] = {}

    def tracked():
        for record in read_manifest(args.manifest):
            clip_by_uid[record.uid] = record.clip_score
            yield record

    raw = dict(sieve_score_stream(tracked(), backend, config, mask=True, phrases=phrases))
    return [
        ScoreRow(uid=uid, sieve_raw=raw[uid], clip_raw=clip_by_uid[uid])
        for uid in sorted(raw)
    ]


def _score_rows_from_shards(args: argparse.Namespace) -> list[ScoreRow]:
    alt_shard = read_embedding_shard(args.alt_emb)
    caption_shard = read_embedding_shard(args.captions_emb)
    if alt_shard.dim != caption_shard.dim:
        raise DataError(
            f"shard dims differ: alt {alt_shard.dim}, captions {caption_shard.dim}"
        )
    alt_by_uid: dict[str, np.ndarray] = {}
    for uid, vector in alt_shard.rows:
        if uid in alt_by_uid:
            raise DataError(f"alt-text shard repeats uid {uid!r}")
        alt_by_uid[uid] = vector
    captions_by_uid: dict[str, list[np.ndarray]] = collections.defaultdict(list)
    for uid, vector in caption_shard.rows:
        captions_by_uid[uid].append(vector)

    rows = []
    clip_by_uid: dict[str, float | None] = {}
    uids = []
    for record in read_manifest(args.manifest):
        uids.append(record.uid)
        clip_by_uid[record.uid] = record.clip_score
    for uid in sorted(uids):
        if uid not in alt_by_uid:
            raise DataError(f"uid {uid!r} missing from alt-text shard")
        if uid not in captions_by_uid:
            raise DataError(f"uid {uid!r} missing from caption shard")
        rows.append(
            ScoreRow(
                uid=uid,
                sieve_raw=sieve_score(captions_by_uid[uid], alt_by_uid[uid]),
                clip_raw=clip_by_uid[uid],
            )
        )
    return rows


def _cmd_score(args: argparse.Namespace) -> int:
    if (args.captions_emb is None) != (args.alt_emb is None):
        raise DataError("--captions-emb and --alt-emb must be given together")
    if args.captions_emb is not None:
        rows = _score_rows_from_shards(args)
    else:
        rows = _score_rows_from_backend(args)
    count = write_scores(rows, args.out)
    print(f"scored {count} records -> {args.out}")
    return 0


def _cmd_fuse(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    rows = list(read_scores(args.infile))
    fused = fuse_rows(rows, FusionWeights(alpha=config.alpha))
    count = write_scores(fused, args.out)
    print(f"fused {count} rows at alpha={config.alpha} -> {args.out}")
    return 0


def _count_rows(paths: list[str]) -> int:
    total = 0
    for path in paths:
        with open(path, "r", encoding="utf-8") as handle:
            total += sum(1 for line in handle if line.strip())
    return total


def _cmd_prune(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    column = resolve_rank_column(read_scores(args.scores[0]), args.column)
    source_count = _count_rows(args.scores)
    selection = external_topk(
        shard_paths=list(args.scores),
        k=config.k,
        source_count=source_count,
        memory_budget=config.memory_budget,
        scorer_id=column,
        column=column,
    )
    write_selection(selection, args.out)
    print(f"selected {len(selection.uids)}/{source_count} by {column} -> {args.out}")
    return 0


def _load_uid_set(path: str) -> set[str]:
    if path.endswith(".selection.jsonl"):
        return set(read_selection(path).uids)
    return read_uid_set(path)


def _cmd_intersect(args: argparse.Namespace) -> int:
    selection = read_selection(args.a)
    members = _load_uid_set(args.b)
    result = intersect_selections(selection, members)
    write_selection(result, args.out)
    print(f"kept {len(result.uids)}/{len(selection.uids)} -> {args.out}")
    return 0


def _cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        n=args.n,
        misalignment_rate=args.rate,
        vocab_size=args.vocab_size,
        seed=args.seed,
        medium_phrase_rate=args.phrase_rate,
        hard_negative_rate=args.hard_rate,
        clip_fp_rate=args.clip_fp_rate,
        clip_fn_rate=args.clip_fn_rate,
    )
    corpus = generate_synthetic_corpus(spec)
    save_corpus(corpus, args.out)
    misaligned = sum(1 for label in corpus.labels.values() if label == "misaligned")
    print(f"wrote {len(corpus.records)} records ({misaligned} misaligned) -> {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    ks = [float(part) for part in args.ks.split(",") if part]
    rows = list(read_scores(args.scores))
    column = resolve_rank_column(iter(rows), args.column)
    scores = {}
    for row in rows:
        value = row.column(column)
        if value is None:
            raise DataError(f"uid {row.uid!r}: column {column!r} missing")
        scores[row.uid] = value
    metrics = detection_metrics(scores, corpus.labels, ks=ks)
    sweep = k_sweep(scores, corpus.labels, ks=ks)
    with open(args.report, "w", encoding="utf-8") as handle:
        handle.write(json.dumps({"metric": "auc", "column": column,
                                 "value": metrics["auc"]}) + "\n")
        for entry in sweep:
            handle.write(json.dumps({"metric": "precision_at_k", "column": column,
                                     **entry}) + "\n")
    print(f"auc[{column}]={metrics['auc']:.4f} -> {args.report}")
    return 0


def _cmd_stats_iou(args: argparse.Namespace) -> int:
    a = _load_uid_set(args.a)
    b = _load_uid_set(args.b)
    print(json.dumps({"iou": selection_iou(a, b), "a": len(a), "b": len(b)}))
    return 0


def _cmd_stats_simmatrix(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    backend = make_backend(config)
    phrases = load_phrases(config)
    with open(args.texts, "r", encoding="utf-8") as handle:
        texts = [line.rstrip("\n") for line in handle if line.strip()]
    matrix = similarity_matrix(texts, backend, phrases=phrases)
    np.savetxt(args.out, matrix, delimiter=",", fmt="%.17g")
    print(f"{matrix.shape[0]}x{matrix.shape[1]} similarity matrix -> {args.out}")
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    result = run_pipeline(config, args.manifest, args.out)
    selection = result["selection"]
    print(
        f"selected {len(selection.uids)}/{selection.source_count} "
        f"by {selection.scorer_id} -> {result['selection_path']}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sieve",
        description="Caption-alignment scoring and top-k pruning for noisy image-text corpora.",
    )
    parser.add_argument("--version", action="version", version=_VERSION_TEXT)
    commands = parser.add_subparsers(dest="command", required=True)

    mask = commands.add_parser("mask", help="strip medium phrases from text lines")
    mask.add_argument("--in", dest="infile", default="-", help="input file or - for stdin")
    mask.add_argument("--out", default="-", help="output file or - for stdout")
    mask.add_argument("--phrases", dest="phrases_path", default=None)
    mask.set_defaults(func=_cmd_mask)

    score = commands.add_parser(
        "score",
        help="compute Sieve scores for a manifest",
        description="Score via a live backend, or from precomputed embedding "
        "shards (--alt-emb one row per uid, --captions-emb r rows per uid, "
        "both over masked text).",
    )
    score.add_argument("--manifest", required=True)
    score.add_argument("--out", required=True)
    score.add_argument("--captions-emb", dest="captions_emb", default=None)
    score.add_argument("--alt-emb", dest="alt_emb", default=None)
    _add_backend_flags(score)
    score.set_defaults(func=_cmd_score)

    fuse = commands.add_parser("fuse", help="min-max normalize and fuse score columns")
    fuse.add_argument("--in", dest="infile", required=True)
    fuse.add_argument("--out", required=True)
    _add_backend_flags(fuse)
    fuse.set_defaults(func=_cmd_fuse)

    prune = commands.add_parser("prune", help="select the top-k fraction from score shards")
    prune.add_argument("--scores", nargs="+", required=True)
    prune.add_argument("--out", required=True)
    prune.add_argument("--column", default="auto",
                       choices=["auto", "fused", "sieve_raw", "clip_raw",
                                "sieve_norm", "clip_norm"])
    _add_backend_flags(prune)
    prune.set_defaults(func=_cmd_prune)

    intersect = commands.add_parser("intersect", help="filter a selection by a uid set")
    intersect.add_argument("--a", required=True, help="selection manifest")
    intersect.add_argument("--b", required=True,
                           help="uid list (one per line) or another selection")
    intersect.add_argument("--out", required=True)
    intersect.set_defaults(func=_cmd_intersect)

    synth = commands.add_parser("synth", help="generate a labeled synthetic corpus")
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--rate", type=float, required=True, help="misaligned fraction")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--vocab-size", dest="vocab_size", type=int, default=512)
    synth.add_argument("--phrase-rate", dest="phrase_rate", type=float, default=0.5)
    synth.add_argument("--hard-rate", dest="hard_rate", type=float, default=0.25)
    synth.add_argument("--clip-fp-rate", dest="clip_fp_rate", type=float, default=0.2)
    synth.add_argument("--clip-fn-rate", dest="clip_fn_rate", type=float, default=0.1)
    synth.set_defaults(func=_cmd_synth)

    evaluate = commands.add_parser("eval", help="detection metrics against corpus labels")
    evaluate.add_argument("--corpus", required=True, help="directory from `sieve synth`")
    evaluate.add_argument("--scores", required=True)
    evaluate.add_argument("--ks", default="0.1,0.2,0.3")
    evaluate.add_argument("--column", default="auto")
    evaluate.add_argument("--report", required=True)
    evaluate.set_defaults(func=_cmd_eval)

    stats = commands.add_parser("stats", help="selection and similarity diagnostics")
    stats_sub = stats.add_subparsers(dest="stat", required=True)
    iou = stats_sub.add_parser("iou", help="intersection-over-union of two uid sets")
    iou.add_argument("--a", required=True)
    iou.add_argument("--b", required=True)
    iou.set_defaults(func=_cmd_stats_iou)
    simmatrix = stats_sub.add_parser("simmatrix", help="masked-text cosine matrix as CSV")
    simmatrix.add_argument("--texts", required=True, help="one sentence per line")
    simmatrix.add_argument("--out", required=True)
    _add_backend_flags(simmatrix)
    simmatrix.set_defaults(func=_cmd_stats_simmatrix)

    run = commands.add_parser("run", help="caption, mask, embed, score, fuse, prune")
    run.add_argument("--manifest", required=True)
    run.add_argument("--out", required=True, help="output directory")
    _add_backend_flags(run)
    run.set_defaults(func=_cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SieveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
