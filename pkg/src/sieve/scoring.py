"""Alignment math: cosine similarity, max-over-captions score, min-max
normalization, and weighted fusion of a caption-alignment score with a stored
CLIP score.

Embeddings are float32 on disk; every score here is computed and carried as
float64 so tie behavior is stable across shard orders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import DataError, DomainError

__all__ = [
    "FusionWeights",
    "NormalizationStats",
    "clip_score_passthrough",
    "compute_stats",
    "cosine",
    "fuse_scores",
    "min_max_normalize",
    "normalize_value",
    "sieve_score",
]


@dataclass(frozen=True)
class FusionWeights:
    """Fusion weight on the CLIP side: fused = (1 - alpha)*sieve + alpha*clip."""

    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class NormalizationStats:
    """Corpus-wide min/max recorded for provenance alongside normalized scores."""

    min: float
    max: float
    count: int

    def __post_init__(self) -> None:
        if self.count < 1:
            raise DomainError("stats require at least one value")
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise DataError("normalization stats must be finite")
        if self.min > self.max:
            raise DataError(f"stats min {self.min} exceeds max {self.max}")

    def merge(self, other: "NormalizationStats") -> "NormalizationStats":
        """Commutative merge so shards can be scanned in parallel."""
        return NormalizationStats(
            min=min(self.min, other.min),
            max=max(self.max, other.max),
            count=self.count + other.count,
        )


def cosine(x: np.ndarray, y: np.ndarray) -> float:
    """Dot product of the l2-normalized vectors, clamped to [-1, 1].

    A zero-norm vector carries no alignment evidence: either side zero gives 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DomainError(f"shape mismatch: {x.shape} vs {y.shape}")
    nx = math.sqrt(float(np.dot(x, x)))
    ny = math.sqrt(float(np.dot(y, y)))
    if nx == 0.0 or ny == 0.0:
        return 0.0
    value = float(np.dot(x, y)) / (nx * ny)
    return max(-1.0, min(1.0, value))


def sieve_score(caption_embs: Sequence[np.ndarray], alt_emb: np.ndarray) -> float:
    """Maximum cosine between any generated-caption embedding and the alt-text
    embedding. Caller contract: both sides embed *masked* text."""
    if len(caption_embs) == 0:
        raise DomainError("sieve_score requires at least one caption embedding")
    return max(cosine(c, alt_emb) for c in caption_embs)


def compute_stats(scores: Iterable[tuple[str, float]]) -> NormalizationStats:
    """One streaming pass over (uid, raw) pairs; rejects non-finite values."""
    lo = math.inf
    hi = -math.inf
    count = 0
    for uid, raw in scores:
        if not math.isfinite(raw):
            raise DataError(f"non-finite raw score for uid {uid!r}")
        lo = min(lo, raw)
        hi = max(hi, raw)
        count += 1
    if count == 0:
        raise DataError("cannot normalize an empty score stream")
    return NormalizationStats(min=lo, max=hi, count=count)


def normalize_value(raw: float, stats: NormalizationStats) -> float:
    """(raw - min) / (max - min); a degenerate range maps everything to 0.5."""
    if stats.min == stats.max:
        return 0.5
    return (raw - stats.min) / (stats.max - stats.min)


def min_max_normalize(
    scores: Iterable[tuple[str, float]],
) -> tuple[Iterator[tuple[str, float]], NormalizationStats]:
    """Two-pass min-max normalization of an in-memory (uid, raw) stream.

    For file-backed streams, call compute_stats on one pass and
    normalize_value on the second instead of materializing.
    """
    rows = list(scores)
    stats = compute_stats(rows)
    normalized = ((uid, normalize_value(raw, stats)) for uid, raw in rows)
    return normalized, stats


def fuse_scores(sieve_norm: float, clip_norm: float, w: FusionWeights) -> float:
    """Per-sample weighted average of the two normalized scores."""
    for name, value in (("sieve_norm", sieve_norm), ("clip_norm", clip_norm)):
        if not (0.0 <= value <= 1.0):
            raise DomainError(f"{name} must lie in [0, 1], got {value}")
    return (1.0 - w.alpha) * sieve_norm + w.alpha * clip_norm


def clip_score_passthrough(record) -> float:
    """Return the CLIP score stored on a record; it is computed upstream."""
    if record.clip_score is None:
        raise DataError(f"record {record.uid!r} has no stored clip_score")
    if not math.isfinite(record.clip_score):
        raise DataError(f"record {record.uid!r} has a non-finite clip_score")
    return float(record.clip_score)
