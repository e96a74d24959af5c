"""Selection: streaming top-k over score streams and sharded score files,
intersection filters, coverage-rank filtering, and selection diagnostics.

Order is total and fixed everywhere: descending score, ties broken by
ascending uid. Every selector is a pure function of the score multiset, never
of input order, so manifests reproduce across shard layouts.

Uid uniqueness is an ingest contract (read_manifest / read_scores enforce it
per file); the selectors here stay O(selection) in memory and only detect a
cross-shard duplicate when both copies reach the selection.
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
import tempfile
from pathlib import Path
from typing import Iterable, Iterator

from .corpus_io import SelectionManifest, read_scores, selection_size
from .errors import DataError, DomainError, DuplicateUidError, ResourceError

__all__ = [
    "coverage_filter",
    "external_topk",
    "intersect_selections",
    "rank_and_select",
    "rank_key",
    "selection_iou",
]

# Working-set accounting for external_topk. A plain buffered (uid, score)
# tuple costs ~150 bytes; an entry retained by the bounded heap costs more
# (heapq.nsmallest decorates each with a key tuple and a tie-break index).
# Both estimates are deliberately pessimistic so the budget holds in practice.
_RUN_ENTRY_BYTES = 160
_HEAP_ENTRY_BYTES = 400
_MIN_BUDGET = 1 << 20


def rank_key(uid: str, score: float) -> tuple[float, str]:
    """Sort key realizing the selection order: ascending key = best first."""
    return (-score, uid)


def rank_and_select(
    scores: Iterable[tuple[str, float]],
    k: float,
    source_count: int,
    scorer_id: str,
) -> SelectionManifest:
    """Select the floor(k * source_count) best-ranked uids from a stream.

    Holds only the current winners (a bounded heap of the selection size), so
    memory is O(selection), not O(corpus).
    """
    if not (0.0 < k <= 1.0):
        raise DomainError(f"k must lie in (0, 1], got {k}")
    if source_count < 1:
        raise DomainError("source_count must be positive")
    counter = [0]

    def checked() -> Iterator[tuple[str, float]]:
        for uid, score in scores:
            if not math.isfinite(score):
                raise DataError(f"uid {uid!r}: score must be finite")
            counter[0] += 1
            yield uid, score

    n = selection_size(k, source_count)
    stream = checked()
    best = heapq.nsmallest(n, stream, key=lambda item: rank_key(item[0], item[1]))
    for _ in stream:
        # nsmallest(0, ...) never touches the stream; drain so the finiteness
        # and count checks run even when the selection is empty.
        pass
    if counter[0] != source_count:
        raise DataError(
            f"score stream holds {counter[0]} rows but source_count = {source_count}"
        )
    return SelectionManifest(
        uids=tuple(uid for uid, _ in best),
        k=k,
        scorer_id=scorer_id,
        source_count=source_count,
    )


def _shard_entries(path: str | Path, column: str) -> Iterator[tuple[str, float]]:
    for row in read_scores(path):
        value = row.column(column)
        if value is None:
            raise DataError(f"uid {row.uid!r}: column {column!r} missing")
        yield row.uid, value


def external_topk(
    shard_paths: list[str | Path],
    k: float,
    source_count: int,
    memory_budget: int,
    scorer_id: str,
    column: str = "fused",
) -> SelectionManifest:
    """rank_and_select over sharded score files within a byte budget.

    When the selection itself fits the budget, a single bounded heap streams
    all shards. Otherwise each shard is cut into budget-sized runs, sorted,
    spilled to disk, and merged; only one run buffer plus the merge frontier
    is ever resident. Either way the manifest is bit-equal to rank_and_select
    on the concatenated stream.
    """
    if memory_budget < _MIN_BUDGET:
        raise ResourceError(
            f"memory budget {memory_budget} below minimum viable {_MIN_BUDGET} bytes"
        )
    if not (0.0 < k <= 1.0):
        raise DomainError(f"k must lie in (0, 1], got {k}")
    if source_count < 1:
        raise DomainError("source_count must be positive")

    n = selection_size(k, source_count)
    if n * _HEAP_ENTRY_BYTES <= memory_budget:

        def concatenated() -> Iterator[tuple[str, float]]:
            for path in shard_paths:
                yield from _shard_entries(path, column)

        return rank_and_select(concatenated(), k, source_count, scorer_id)

    # Halve the nominal buffer so sort scratch and the growing uid output
    # stay inside the budget alongside it.
    run_rows = max(1024, memory_budget // (2 * _RUN_ENTRY_BYTES))
    total = 0
    uids: list[str] = []
    with tempfile.TemporaryDirectory(prefix="sieve-topk-") as tmp:
        runs: list[Path] = []
        buffer: list[tuple[str, float]] = []

        def spill() -> None:
            buffer.sort(key=lambda item: rank_key(item[0], item[1]))
            run_path = Path(tmp) / f"run{len(runs):06d}.jsonl"
            with run_path.open("w", encoding="utf-8") as handle:
                for uid, score in buffer:
                    handle.write(json.dumps([uid, score]) + "\n")
            runs.append(run_path)
            buffer.clear()

        for path in shard_paths:
            for entry in _shard_entries(path, column):
                buffer.append(entry)
                total += 1
                if len(buffer) >= run_rows:
                    spill()
        if buffer:
            spill()
        if total != source_count:
            raise DataError(f"shards hold {total} rows but source_count = {source_count}")

        def replay(run_path: Path) -> Iterator[tuple[str, float]]:
            with run_path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    uid, score = json.loads(line)
                    yield uid, score

        merged = heapq.merge(
            *(replay(r) for r in runs), key=lambda item: rank_key(item[0], item[1])
        )
        uids.extend(uid for uid, _ in itertools.islice(merged, n))

    return SelectionManifest(uids=tuple(uids), k=k, scorer_id=scorer_id, source_count=source_count)


def intersect_selections(a: SelectionManifest, b: set[str]) -> SelectionManifest:
    """Keep a's uids that are members of b, in a's order; k is recomputed."""
    kept = tuple(uid for uid in a.uids if uid in b)
    return SelectionManifest(
        uids=kept,
        k=len(kept) / a.source_count,
        scorer_id=a.scorer_id,
        source_count=a.source_count,
        tie_break=a.tie_break,
    )


def coverage_filter(
    coverage: Iterable[tuple[str, float]],
    keep_fraction: float = 0.8,
) -> set[str]:
    """Uids of the floor(keep_fraction * N) samples with the *smallest*
    coverage fraction (least image area obscured by rendered text)."""
    if not (0.0 < keep_fraction <= 1.0):
        raise DomainError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    items = []
    seen: set[str] = set()
    for uid, fraction in coverage:
        if not (0.0 <= fraction <= 1.0):
            raise DataError(f"uid {uid!r}: coverage must lie in [0, 1], got {fraction}")
        if uid in seen:
            raise DuplicateUidError(f"duplicate uid {uid!r} in coverage stream")
        seen.add(uid)
        items.append((uid, fraction))
    n = selection_size(keep_fraction, len(items))
    kept = heapq.nsmallest(n, items, key=lambda item: (item[1], item[0]))
    return {uid for uid, _ in kept}


def selection_iou(a: set[str], b: set[str]) -> float:
    """|a ∩ b| / |a ∪ b|. Two empty selections count as identical (1.0)."""
    union = len(a | b)
    if union == 0:
        return 1.0
    return len(a & b) / union
