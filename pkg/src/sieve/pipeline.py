"""End-to-end driver: caption, mask, embed, score, fuse, prune.

Every stage is resumable from files via the CLI subcommands; `run_pipeline`
chains them in-process and guarantees the composed and staged routes write
byte-identical score tables and selection manifests.

All randomness is derived from config.global_seed keyed by uid, so shard
order, batch size, and worker count never change a score.
"""

from __future__ import annotations

import collections
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence, TypeVar

from .backends import (
    Backend,
    CaptionRequest,
    FileBackend,
    MockBackend,
    ServiceBackend,
    hash64,
    resolve_service_url,
)
from .config import PipelineConfig
from .corpus_io import (
    SampleRecord,
    ScoreRow,
    read_manifest,
    write_scores,
    write_selection,
)
from .errors import ConfigError, DataError
from .pruning import rank_and_select
from .scoring import (
    FusionWeights,
    compute_stats,
    fuse_scores,
    normalize_value,
    sieve_score,
)
from .textnorm import PhraseList, load_phrase_list, mask_medium_phrases

__all__ = [
    "caption_cosine_stream",
    "fuse_rows",
    "load_phrases",
    "make_backend",
    "resolve_rank_column",
    "run_pipeline",
    "sieve_score_stream",
]

SCORES_NAME = "run.scores.jsonl"
SELECTION_NAME = "run.selection.jsonl"
REPORT_NAME = "run.report.jsonl"
QUARANTINE_DIR = ".quarantine"

_T = TypeVar("_T")
_R = TypeVar("_R")


def make_backend(config: PipelineConfig) -> Backend:
    if config.backend == "mock":
        return MockBackend()
    if config.backend == "file":
        return FileBackend(
            embeddings_path=config.embeddings_path,
            captions_path=config.captions_path,
        )
    url = resolve_service_url(None, config.backend_url)
    if not url:
        raise ConfigError("service backend requires a URL")
    return ServiceBackend(url)


def load_phrases(config: PipelineConfig) -> PhraseList | None:
    """None means the built-in default list."""
    if config.phrases_path is None:
        return None
    return load_phrase_list(config.phrases_path)


def _batched(items: Iterable[_T], size: int) -> Iterator[list[_T]]:
    batch: list[_T] = []
    for item in items:
        batch.append(item)
        if len(batch) >= size:
            yield batch
            batch = []
    if batch:
        yield batch


def _parallel_ordered(
    fn: Callable[[_T], _R], items: Iterable[_T], jobs: int
) -> Iterator[_R]:
    """Apply fn with up to `jobs` workers, yielding results in input order
    while keeping only a bounded window of submissions in flight."""
    if jobs <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        pending: collections.deque = collections.deque()
        iterator = iter(items)
        for item in iterator:
            pending.append(pool.submit(fn, item))
            if len(pending) >= jobs * 2:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()


def caption_cosine_stream(
    records: Iterable[SampleRecord],
    backend: Backend,
    config: PipelineConfig,
    mask: bool = True,
    phrases: PhraseList | None = None,
) -> Iterator[tuple[str, list[float]]]:
    """Per record: the cosine between its (masked) alt-text embedding and
    each of its r (masked) generated-caption embeddings, caption order
    preserved. The Sieve score is the max; keeping the per-caption values
    lets experiments compare caption budgets without regenerating.
    """

    def process(batch: list[SampleRecord]) -> list[tuple[str, list[float]]]:
        texts: list[str] = []
        for record in batch:
            captions = backend.generate_captions(
                CaptionRequest(
                    image_ref=record.image_ref,
                    r=config.r,
                    top_p=config.top_p,
                    min_len=config.min_len,
                    max_len=config.max_len,
                    seed=hash64(config.global_seed, record.uid),
                )
            )
            alt = record.alt_text
            if mask:
                alt = mask_medium_phrases(alt, phrases)
                captions = [mask_medium_phrases(c, phrases) for c in captions]
            texts.append(alt)
            texts.extend(captions)
        embeddings = backend.embed_texts(texts)
        out = []
        stride = config.r + 1
        for i, record in enumerate(batch):
            alt_emb = embeddings[i * stride]
            caption_embs = embeddings[i * stride + 1 : (i + 1) * stride]
            out.append((record.uid, [sieve_score([c], alt_emb) for c in caption_embs]))
        return out

    for results in _parallel_ordered(process, _batched(records, config.batch_size), config.jobs):
        yield from results


def sieve_score_stream(
    records: Iterable[SampleRecord],
    backend: Backend,
    config: PipelineConfig,
    mask: bool = True,
    phrases: PhraseList | None = None,
) -> Iterator[tuple[str, float]]:
    for uid, cosines in caption_cosine_stream(records, backend, config, mask, phrases):
        yield uid, max(cosines)


def resolve_rank_column(rows: Iterable[ScoreRow], requested: str = "auto") -> str:
    """Pick the ranking column: an explicit request, or the best available
    (fused, else sieve_raw, else clip_raw) judged from the first row."""
    if requested != "auto":
        return requested
    for row in rows:
        for name in ("fused", "sieve_raw", "clip_raw"):
            if row.column(name) is not None:
                return name
        break
    raise DataError("score table has no rankable column")


def fuse_rows(rows: Sequence[ScoreRow], weights: FusionWeights) -> list[ScoreRow]:
    """Min-max normalize both raw columns over the whole table, then fuse.

    Every row must carry both sieve_raw and clip_raw; partial tables are a
    data error rather than a silent partial fusion.
    """
    for row in rows:
        if row.sieve_raw is None or row.clip_raw is None:
            raise DataError(
                f"row {row.uid!r}: fusion needs sieve_raw and clip_raw on every row"
            )
    sieve_stats = compute_stats((row.uid, row.sieve_raw) for row in rows)
    clip_stats = compute_stats((row.uid, row.clip_raw) for row in rows)
    fused_rows = []
    for row in rows:
        sieve_norm = normalize_value(row.sieve_raw, sieve_stats)
        clip_norm = normalize_value(row.clip_raw, clip_stats)
        fused_rows.append(
            ScoreRow(
                uid=row.uid,
                sieve_raw=row.sieve_raw,
                clip_raw=row.clip_raw,
                sieve_norm=sieve_norm,
                clip_norm=clip_norm,
                fused=fuse_scores(sieve_norm, clip_norm, weights),
            )
        )
    return fused_rows


class _Quarantine:
    """Stage outputs under out_dir/.quarantine, then publish atomically.

    A failed run leaves its partial files in quarantine for inspection; final
    names only ever hold complete outputs.
    """

    def __init__(self, out_dir: Path) -> None:
        self.out_dir = out_dir
        self.staging = out_dir / QUARANTINE_DIR
        self.staging.mkdir(parents=True, exist_ok=True)
        self._staged: list[str] = []

    def path(self, name: str) -> Path:
        self._staged.append(name)
        return self.staging / name

    def publish(self) -> None:
        for name in self._staged:
            os.replace(self.staging / name, self.out_dir / name)
        try:
            self.staging.rmdir()
        except OSError:
            pass  # unrelated leftovers; keep them


def run_pipeline(
    config: PipelineConfig,
    manifest_path: str | Path,
    out_dir: str | Path,
    backend: Backend | None = None,
) -> dict:
    """Score a manifest, fuse when CLIPScores are present, prune, report.

    CLIPScore fusion is all-or-nothing: every record carries clip_score, or
    none does (pure Sieve ranking); a mixed manifest is a data error. Returns
    {"selection", "scores_path", "selection_path", "report_path"}.
    """
    started = time.monotonic()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    quarantine = _Quarantine(out_dir)
    backend = backend if backend is not None else make_backend(config)
    phrases = load_phrases(config)

    clip_by_uid: dict[str, float | None] = {}

    def tracked() -> Iterator[SampleRecord]:
        for record in read_manifest(manifest_path):
            clip_by_uid[record.uid] = record.clip_score
            yield record

    raw = dict(sieve_score_stream(tracked(), backend, config, mask=True, phrases=phrases))
    if not raw:
        raise DataError(f"manifest {manifest_path} holds no records")
    scoring_seconds = time.monotonic() - started

    with_clip = sum(1 for value in clip_by_uid.values() if value is not None)
    if 0 < with_clip < len(clip_by_uid):
        raise DataError(
            f"{with_clip} of {len(clip_by_uid)} records carry clip_score; "
            "fusion needs all or none"
        )

    rows = [
        ScoreRow(uid=uid, sieve_raw=raw[uid], clip_raw=clip_by_uid[uid])
        for uid in sorted(raw)
    ]
    stats_payload: list[dict] = []
    if with_clip:
        weights = FusionWeights(alpha=config.alpha)
        sieve_stats = compute_stats((row.uid, row.sieve_raw) for row in rows)
        clip_stats = compute_stats((row.uid, row.clip_raw) for row in rows)
        rows = fuse_rows(rows, weights)
        column = "fused"
        stats_payload = [
            {"column": "sieve_raw", "min": sieve_stats.min, "max": sieve_stats.max,
             "count": sieve_stats.count},
            {"column": "clip_raw", "min": clip_stats.min, "max": clip_stats.max,
             "count": clip_stats.count},
        ]
    else:
        column = "sieve_raw"

    selection = rank_and_select(
        ((row.uid, row.column(column)) for row in rows),
        k=config.k,
        source_count=len(rows),
        scorer_id=column,
    )

    write_scores(rows, quarantine.path(SCORES_NAME))
    write_selection(selection, quarantine.path(SELECTION_NAME))
    report_path = quarantine.path(REPORT_NAME)
    with report_path.open("w", encoding="utf-8") as handle:
        def emit(payload: dict) -> None:
            handle.write(json.dumps(payload, ensure_ascii=False) + "\n")

        config_echo = {f: getattr(config, f) for f in (
            "alpha", "k", "r", "top_p", "min_len", "max_len", "backend",
            "batch_size", "jobs", "global_seed", "tie_break",
        )}
        emit({"event": "config", **config_echo})
        for payload in stats_payload:
            emit({"event": "normalization_stats", **payload})
        emit({"event": "stage", "name": "score", "records": len(rows),
              "seconds": round(scoring_seconds, 3)})
        emit({"event": "selection", "scorer_id": column, "selected": len(selection.uids),
              "source_count": len(rows), "k": config.k,
              "seconds": round(time.monotonic() - started, 3)})
    quarantine.publish()

    return {
        "selection": selection,
        "scores_path": out_dir / SCORES_NAME,
        "selection_path": out_dir / SELECTION_NAME,
        "report_path": out_dir / REPORT_NAME,
    }
