"""Sharded corpus formats and streaming readers/writers.

Formats:
  *.manifest.jsonl   one sample record per line
  *.emb              binary embedding shard (magic "SIEV", see below)
  *.scores.jsonl     per-uid score rows, uid-sorted
  *.selection.jsonl  metadata header line, then one JSON-quoted uid per line

Readers are generators; nothing ever materializes a whole corpus. Cross-file
joins require uid-sorted inputs — sorting is an explicit pipeline step.
"""

from __future__ import annotations

import heapq
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator

import numpy as np

from .errors import (
    ConflictError,
    DataError,
    DuplicateUidError,
    IoError,
    OrderError,
    ParseError,
    ShardFormatError,
)

__all__ = [
    "EmbeddingShard",
    "SampleRecord",
    "ScoreRow",
    "SelectionManifest",
    "join_scores",
    "read_embedding_shard",
    "read_labels",
    "read_manifest",
    "read_scores",
    "read_selection",
    "read_uid_set",
    "selection_size",
    "write_embedding_shard",
    "write_labels",
    "write_manifest",
    "write_scores",
    "write_selection",
]

SHARD_MAGIC = b"SIEV"
SHARD_VERSION = 1

# Guards floor(k*n) against the binary representation of decimal k: 0.29*100
# evaluates to 28.999999999999996 but the intended count is 29.
_FLOOR_EPS = 1e-9


def selection_size(k: float, source_count: int) -> int:
    """floor(k * source_count), robust to decimal-fraction representation."""
    return int(math.floor(k * source_count + _FLOOR_EPS))


@dataclass(frozen=True)
class SampleRecord:
    """One image-text pair: the noisy alt-text plus optional precomputed
    attributes (upstream CLIP score, text-coverage fraction)."""

    uid: str
    alt_text: str
    image_ref: str
    clip_score: float | None = None
    text_coverage: float | None = None
    shard_id: int = 0

    def __post_init__(self) -> None:
        if not self.uid:
            raise DataError("uid must be non-empty")
        if self.clip_score is not None and not math.isfinite(self.clip_score):
            raise DataError(f"record {self.uid!r}: clip_score must be finite")
        if self.text_coverage is not None and not (0.0 <= self.text_coverage <= 1.0):
            raise DataError(f"record {self.uid!r}: text_coverage must lie in [0, 1]")
        if self.shard_id < 0:
            raise DataError(f"record {self.uid!r}: shard_id must be non-negative")


@dataclass(frozen=True)
class ScoreRow:
    """Raw/normalized/fused score columns for one uid; absent columns are None."""

    uid: str
    sieve_raw: float | None = None
    clip_raw: float | None = None
    sieve_norm: float | None = None
    clip_norm: float | None = None
    fused: float | None = None

    def __post_init__(self) -> None:
        if not self.uid:
            raise DataError("uid must be non-empty")
        for name in ("sieve_raw", "clip_raw", "sieve_norm", "clip_norm", "fused"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise DataError(f"row {self.uid!r}: {name} must be finite")
        for name in ("sieve_norm", "clip_norm"):
            value = getattr(self, name)
            if value is not None and not (0.0 <= value <= 1.0):
                raise DataError(f"row {self.uid!r}: {name} must lie in [0, 1]")
        if self.fused is not None and (self.sieve_norm is None or self.clip_norm is None):
            raise DataError(f"row {self.uid!r}: fused requires both normalized columns")

    def column(self, name: str) -> float | None:
        if name not in _SCORE_COLUMNS:
            raise DataError(f"unknown score column {name!r}")
        return getattr(self, name)


_SCORE_COLUMNS = ("sieve_raw", "clip_raw", "sieve_norm", "clip_norm", "fused")


@dataclass(frozen=True)
class EmbeddingShard:
    """Uid-keyed embedding rows from one encoder. Keys are opaque strings and
    may repeat (a caption shard stores several rows per uid); rows stay sorted
    ascending by key."""

    dim: int
    rows: tuple[tuple[str, np.ndarray], ...]
    encoder_id: str

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise DataError("shard dim must be positive")
        previous: str | None = None
        for uid, vector in self.rows:
            if not uid:
                raise DataError("shard row key must be non-empty")
            if vector.shape != (self.dim,):
                raise ShardFormatError(
                    f"row {uid!r}: expected {self.dim} components, got {vector.shape}"
                )
            if not np.all(np.isfinite(vector)):
                raise DataError(f"row {uid!r}: non-finite embedding component")
            if previous is not None and uid < previous:
                raise OrderError(f"shard rows not uid-sorted at {uid!r}")
            previous = uid


@dataclass(frozen=True)
class SelectionManifest:
    """Ordered selected uids plus the provenance needed to reproduce them."""

    uids: tuple[str, ...]
    k: float
    scorer_id: str
    source_count: int
    tie_break: str = "uid_ascending"

    def __post_init__(self) -> None:
        # k = 0 is reachable via intersection with a disjoint uid set; it is
        # legal only for the empty selection.
        if not (0.0 <= self.k <= 1.0):
            raise DataError(f"k must lie in [0, 1], got {self.k}")
        if self.k == 0.0 and self.uids:
            raise DataError("k = 0 requires an empty selection")
        if self.source_count < 1:
            raise DataError("source_count must be positive")
        if self.tie_break != "uid_ascending":
            raise DataError(f"unknown tie_break {self.tie_break!r}")
        expected = selection_size(self.k, self.source_count)
        if len(self.uids) != expected:
            raise DataError(
                f"selection holds {len(self.uids)} uids but floor(k*source_count) = {expected}"
            )
        if len(set(self.uids)) != len(self.uids):
            raise DataError("selection contains duplicate uids")


class _CountingStream(Iterator[SampleRecord]):
    """Iterator over records that exposes the total count once exhausted."""

    def __init__(self, inner: Iterator[SampleRecord]) -> None:
        self._inner = inner
        self.count = 0
        self.exhausted = False

    def __iter__(self) -> "_CountingStream":
        return self

    def __next__(self) -> SampleRecord:
        try:
            record = next(self._inner)
        except StopIteration:
            self.exhausted = True
            raise
        self.count += 1
        return record


_MANIFEST_REQUIRED = ("uid", "alt_text", "image_ref")
_MANIFEST_OPTIONAL = ("clip_score", "text_coverage", "shard_id")


def _record_from_json(payload: dict, lineno: int) -> SampleRecord:
    if not isinstance(payload, dict):
        raise ParseError(f"line {lineno}: expected an object")
    unknown = set(payload) - set(_MANIFEST_REQUIRED) - set(_MANIFEST_OPTIONAL)
    if unknown:
        raise ParseError(f"line {lineno}: unknown fields {sorted(unknown)}")
    for name in _MANIFEST_REQUIRED:
        if name not in payload:
            raise ParseError(f"line {lineno}: missing field {name!r}")
        if not isinstance(payload[name], str):
            raise ParseError(f"line {lineno}: field {name!r} must be a string")
    try:
        return SampleRecord(
            uid=payload["uid"],
            alt_text=payload["alt_text"],
            image_ref=payload["image_ref"],
            clip_score=payload.get("clip_score"),
            text_coverage=payload.get("text_coverage"),
            shard_id=payload.get("shard_id", 0),
        )
    except (DataError, TypeError) as exc:
        raise ParseError(f"line {lineno}: {exc}") from exc


def read_manifest(path: str | Path) -> _CountingStream:
    """Stream SampleRecords in file order.

    Memory per yielded record is constant; only the uid set for duplicate
    detection grows with the corpus.
    """
    path = Path(path)
    if not path.exists():
        raise IoError(f"manifest not found: {path}")

    def generate() -> Iterator[SampleRecord]:
        seen: set[str] = set()
        with path.open("r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    payload = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"line {lineno}: {exc.msg}") from exc
                record = _record_from_json(payload, lineno)
                if record.uid in seen:
                    raise DuplicateUidError(
                        f"duplicate uid {record.uid!r} at line {lineno}"
                    )
                seen.add(record.uid)
                yield record

    return _CountingStream(generate())


def _record_to_json(record: SampleRecord) -> dict:
    payload: dict = {
        "uid": record.uid,
        "alt_text": record.alt_text,
        "image_ref": record.image_ref,
    }
    if record.clip_score is not None:
        payload["clip_score"] = record.clip_score
    if record.text_coverage is not None:
        payload["text_coverage"] = record.text_coverage
    if record.shard_id != 0:
        payload["shard_id"] = record.shard_id
    return payload


def _dump(payload) -> str:
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":"))


def _open_write(path: str | Path, mode: str = "w"):
    try:
        if "b" in mode:
            return Path(path).open(mode)
        return Path(path).open(mode, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_manifest(records: Iterable[SampleRecord], path: str | Path) -> int:
    """Write records as JSONL; returns the count. Duplicate uids are an error."""
    seen: set[str] = set()
    count = 0
    with _open_write(path) as handle:
        for record in records:
            if record.uid in seen:
                raise DuplicateUidError(f"duplicate uid {record.uid!r}")
            seen.add(record.uid)
            handle.write(_dump(_record_to_json(record)) + "\n")
            count += 1
    return count


def read_scores(path: str | Path, require_sorted: bool = True) -> Iterator[ScoreRow]:
    """Stream ScoreRows; enforces ascending uid order unless disabled."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"score table not found: {path}")
    previous: str | None = None
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc.msg}") from exc
            if not isinstance(payload, dict) or "uid" not in payload:
                raise ParseError(f"line {lineno}: expected an object with a uid")
            unknown = set(payload) - {"uid", *_SCORE_COLUMNS}
            if unknown:
                raise ParseError(f"line {lineno}: unknown fields {sorted(unknown)}")
            try:
                row = ScoreRow(**payload)
            except (DataError, TypeError) as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            if require_sorted and previous is not None and row.uid < previous:
                raise OrderError(f"line {lineno}: score table not uid-sorted")
            if require_sorted and row.uid == previous:
                raise DuplicateUidError(f"line {lineno}: duplicate uid {row.uid!r}")
            previous = row.uid
            yield row


def write_scores(rows: Iterable[ScoreRow], path: str | Path) -> int:
    """Write uid-sorted ScoreRows as JSONL; returns the count."""
    previous: str | None = None
    count = 0
    with _open_write(path) as handle:
        for row in rows:
            if previous is not None and row.uid <= previous:
                raise OrderError(f"score rows must be strictly uid-sorted at {row.uid!r}")
            previous = row.uid
            payload = {"uid": row.uid}
            for name in _SCORE_COLUMNS:
                value = row.column(name)
                if value is not None:
                    payload[name] = value
            handle.write(_dump(payload) + "\n")
            count += 1
    return count


def join_scores(streams: list[Iterator[ScoreRow]]) -> Iterator[ScoreRow]:
    """Merge uid-sorted ScoreRow streams into one row per uid.

    Columns are unioned; two non-equal values for the same column of the same
    uid are a conflict. Associative and commutative up to row order.
    """

    def checked(stream: Iterator[ScoreRow], index: int) -> Iterator[tuple[str, ScoreRow]]:
        previous: str | None = None
        for row in stream:
            if previous is not None and row.uid < previous:
                raise OrderError(f"input {index} not uid-sorted at {row.uid!r}")
            previous = row.uid
            yield row.uid, row

    merged = heapq.merge(*(checked(s, i) for i, s in enumerate(streams)), key=lambda t: t[0])
    current: dict | None = None
    current_uid: str | None = None
    for uid, row in merged:
        if uid != current_uid:
            if current is not None:
                yield ScoreRow(**current)
            current = {"uid": uid}
            current_uid = uid
        assert current is not None
        for name in _SCORE_COLUMNS:
            value = row.column(name)
            if value is None:
                continue
            if name in current and current[name] != value:
                raise ConflictError(
                    f"uid {uid!r}: column {name!r} has conflicting values "
                    f"{current[name]} and {value}"
                )
            current[name] = value
    if current is not None:
        yield ScoreRow(**current)


def _write_string(handle: IO[bytes], value: str) -> None:
    data = value.encode("utf-8")
    handle.write(struct.pack("<I", len(data)))
    handle.write(data)


def _read_exact(handle: IO[bytes], size: int, what: str) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise ShardFormatError(f"truncated shard while reading {what}")
    return data


def _read_string(handle: IO[bytes], what: str) -> str:
    (length,) = struct.unpack("<I", _read_exact(handle, 4, f"{what} length"))
    return _read_exact(handle, length, what).decode("utf-8")


def write_embedding_shard(shard: EmbeddingShard, path: str | Path) -> None:
    """Binary layout: magic "SIEV", version u16, dim u32, row count u64,
    encoder_id (u32 length + UTF-8), then rows of (key string, dim f32 LE)."""
    with _open_write(path, "wb") as handle:
        handle.write(SHARD_MAGIC)
        handle.write(struct.pack("<HIQ", SHARD_VERSION, shard.dim, len(shard.rows)))
        _write_string(handle, shard.encoder_id)
        for uid, vector in shard.rows:
            _write_string(handle, uid)
            handle.write(np.ascontiguousarray(vector, dtype="<f4").tobytes())


def read_embedding_shard(path: str | Path) -> EmbeddingShard:
    """Read and validate a whole shard; round-trips write_embedding_shard."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"embedding shard not found: {path}")
    with path.open("rb") as handle:
        magic = _read_exact(handle, 4, "magic")
        if magic != SHARD_MAGIC:
            raise ShardFormatError(f"bad magic {magic!r}, expected {SHARD_MAGIC!r}")
        version, dim, count = struct.unpack("<HIQ", _read_exact(handle, 14, "header"))
        if version != SHARD_VERSION:
            raise ShardFormatError(f"unsupported shard version {version}")
        if dim < 1:
            raise ShardFormatError("shard dim must be positive")
        encoder_id = _read_string(handle, "encoder_id")
        rows = []
        for _ in range(count):
            uid = _read_string(handle, "row key")
            data = _read_exact(handle, 4 * dim, f"row {uid!r} vector")
            vector = np.frombuffer(data, dtype="<f4").astype(np.float32)
            if not np.all(np.isfinite(vector)):
                raise DataError(f"row {uid!r}: non-finite embedding component")
            rows.append((uid, vector))
        trailing = handle.read(1)
        if trailing:
            raise ShardFormatError("trailing bytes after final row")
    return EmbeddingShard(dim=dim, rows=tuple(rows), encoder_id=encoder_id)


def write_selection(manifest: SelectionManifest, path: str | Path) -> None:
    """Header line with metadata, then one JSON-quoted uid per line."""
    header = {
        "k": manifest.k,
        "scorer_id": manifest.scorer_id,
        "source_count": manifest.source_count,
        "tie_break": manifest.tie_break,
        "count": len(manifest.uids),
    }
    with _open_write(path) as handle:
        handle.write(_dump(header) + "\n")
        for uid in manifest.uids:
            handle.write(_dump(uid) + "\n")


def read_selection(path: str | Path) -> SelectionManifest:
    path = Path(path)
    if not path.exists():
        raise IoError(f"selection not found: {path}")
    with path.open("r", encoding="utf-8") as handle:
        header_line = handle.readline()
        if not header_line.strip():
            raise ParseError("line 1: missing selection header")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"line 1: {exc.msg}") from exc
        required = {"k", "scorer_id", "source_count", "tie_break", "count"}
        if not isinstance(header, dict) or set(header) != required:
            raise ParseError(f"line 1: selection header must carry {sorted(required)}")
        uids = []
        for lineno, line in enumerate(handle, start=2):
            if not line.strip():
                continue
            try:
                uid = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc.msg}") from exc
            if not isinstance(uid, str):
                raise ParseError(f"line {lineno}: expected a JSON string uid")
            uids.append(uid)
    if len(uids) != header["count"]:
        raise ParseError(f"header count {header['count']} but {len(uids)} uid lines")
    return SelectionManifest(
        uids=tuple(uids),
        k=header["k"],
        scorer_id=header["scorer_id"],
        source_count=header["source_count"],
        tie_break=header["tie_break"],
    )


def read_uid_set(path: str | Path) -> set[str]:
    """Plain-text uid membership list: one uid per line, `#` comments allowed."""
    path = Path(path)
    if not path.exists():
        raise IoError(f"uid list not found: {path}")
    uids = set()
    for line in path.read_text(encoding="utf-8").splitlines():
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            uids.add(stripped)
    return uids


def write_labels(labels: dict[str, str], path: str | Path) -> None:
    """Ground-truth labels for synthetic corpora: {"uid", "label"} per line."""
    with _open_write(path) as handle:
        for uid in sorted(labels):
            handle.write(_dump({"uid": uid, "label": labels[uid]}) + "\n")


def read_labels(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise IoError(f"labels not found: {path}")
    labels: dict[str, str] = {}
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc.msg}") from exc
            if (
                not isinstance(payload, dict)
                or set(payload) != {"uid", "label"}
                or payload["label"] not in ("aligned", "misaligned")
            ):
                raise ParseError(f"line {lineno}: expected uid plus aligned/misaligned label")
            if payload["uid"] in labels:
                raise DuplicateUidError(f"line {lineno}: duplicate uid {payload['uid']!r}")
            labels[payload["uid"]] = payload["label"]
    return labels
