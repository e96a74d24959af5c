"""Caption-generation and sentence-embedding providers.

Three interchangeable implementations:

  MockBackend     deterministic bag-of-tokens encoder + scene captioner, for
                  tests and synthetic experiments
  FileBackend     precomputed captions/embeddings, for batch workflows where
                  generation ran elsewhere
  ServiceBackend  remote model server speaking a small JSON-over-HTTP protocol

`check_backend` is the black-box conformance suite every implementation must
pass; it is public so external providers can test themselves against it.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .corpus_io import read_embedding_shard
from .errors import (
    BackendError,
    ConfigError,
    IoError,
    NotFoundError,
    ParseError,
    ProtocolError,
    TransportError,
)

__all__ = [
    "Backend",
    "BackendInfo",
    "CaptionRequest",
    "FileBackend",
    "MockBackend",
    "ServiceBackend",
    "check_backend",
    "hash64",
]

BACKEND_URL_ENV = "SIEVE_BACKEND_URL"


def hash64(*parts: object) -> int:
    """Collapse a tuple of values into a 64-bit unsigned seed.

    Keyed, length-prefixed hashing so ("ab", "c") and ("a", "bc") differ and
    the result is stable across processes (unlike builtin hash()).
    """
    digest = hashlib.blake2b(digest_size=8)
    for part in parts:
        data = str(part).encode("utf-8")
        digest.update(struct.pack("<I", len(data)))
        digest.update(data)
    return int.from_bytes(digest.digest(), "little")


@dataclass(frozen=True)
class CaptionRequest:
    """One image's generation parameters: r captions via nucleus sampling."""

    image_ref: str
    r: int = 8
    top_p: float = 0.9
    min_len: int = 5
    max_len: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.r < 1:
            raise ConfigError("r must be a positive integer")
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigError("top_p must lie in (0, 1]")
        if self.min_len < 1:
            raise ConfigError("min_len must be a positive integer")
        if self.max_len < self.min_len:
            raise ConfigError("max_len must be >= min_len")


@dataclass(frozen=True)
class BackendInfo:
    dim: int
    encoder_id: str
    captioner_id: str

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigError("backend dim must be positive")


class Backend(Protocol):
    """Uniform provider interface; every embedding has exactly info().dim
    finite components, and identical requests return identical outputs."""

    def info(self) -> BackendInfo: ...

    def generate_captions(self, request: CaptionRequest) -> list[str]: ...

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]: ...


_MOCK_DIM = 64
_MOCK_PHRASES = ("a photo of", "a picture of", "an image of")


@lru_cache(maxsize=65536)
def _token_vector(token: str) -> np.ndarray:
    rng = np.random.default_rng(hash64("mock-token", token))
    vector = rng.standard_normal(_MOCK_DIM)
    return (vector / np.linalg.norm(vector)).astype(np.float32)


def _scene_tokens(image_ref: str) -> list[str]:
    """Extract the token vocabulary a mock image depicts.

    Canonical form is "mock://scene/tok1+tok2+..."; anything else degrades to
    the alphanumeric words of the locator, and a blank locator depicts the
    generic "object"."""
    _, _, rest = image_ref.partition("://")
    source = rest if rest else image_ref
    tail = source.rsplit("/", 1)[-1]
    if "+" in tail:
        tokens = [t for t in tail.lower().split("+") if t]
    else:
        tokens = re.findall(r"[a-z0-9]+", source.lower())
    return tokens or ["object"]


class MockBackend:
    """Deterministic stand-in for the model stack.

    Embeddings are l2-normalized sums of per-token pseudo-random unit vectors,
    so similarity is predictable from token overlap and an independent oracle
    can check every downstream computation. Captions are token sequences drawn
    from the image's scene vocabulary, optionally prefixed with a medium
    phrase so masking has something to remove.
    """

    def __init__(self, medium_phrase_rate: float = 0.5) -> None:
        if not (0.0 <= medium_phrase_rate <= 1.0):
            raise ConfigError("medium_phrase_rate must lie in [0, 1]")
        self.medium_phrase_rate = medium_phrase_rate

    def info(self) -> BackendInfo:
        return BackendInfo(dim=_MOCK_DIM, encoder_id="mock-bow-v1", captioner_id="mock-captioner-v1")

    def generate_captions(self, request: CaptionRequest) -> list[str]:
        vocab = _scene_tokens(request.image_ref)
        captions = []
        for index in range(request.r):
            rng = np.random.default_rng(
                hash64("mock-caption", request.image_ref, request.seed, index)
            )
            phrase = ""
            if rng.random() < self.medium_phrase_rate:
                phrase = _MOCK_PHRASES[int(rng.integers(0, len(_MOCK_PHRASES)))]
            # Phrase tokens count toward the length bounds; drop the phrase
            # when the caller leaves no room for any scene token after it.
            overhead = len(phrase.split())
            if request.max_len - overhead < 1:
                phrase, overhead = "", 0
            low = max(1, request.min_len - overhead)
            high = request.max_len - overhead
            length = int(rng.integers(low, high + 1))
            body = " ".join(vocab[int(i)] for i in rng.integers(0, len(vocab), size=length))
            captions.append(f"{phrase} {body}".strip())
        return captions

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            tokens = text.lower().split()
            if not tokens:
                out.append(np.zeros(_MOCK_DIM, dtype=np.float32))
                continue
            total = np.zeros(_MOCK_DIM, dtype=np.float64)
            for token in tokens:
                total += _token_vector(token)
            norm = np.linalg.norm(total)
            if norm == 0.0:
                out.append(np.zeros(_MOCK_DIM, dtype=np.float32))
            else:
                out.append((total / norm).astype(np.float32))
        return out


class FileBackend:
    """Serves precomputed artifacts: an embedding shard keyed by exact text,
    plus an optional captions file keyed by image_ref.

    Captions file is JSONL of {"key": <image_ref>, "captions": [str, ...]};
    requests return the first r stored captions and ignore sampling
    parameters, since generation already happened elsewhere.

    The shard format cannot store a row for the empty string, so empty text
    (a fully masked alt-text, say) embeds to the zero vector by convention,
    matching MockBackend.
    """

    def __init__(
        self,
        embeddings_path: str | Path,
        captions_path: str | Path | None = None,
        captioner_id: str = "file-precomputed",
    ) -> None:
        shard = read_embedding_shard(embeddings_path)
        self._dim = shard.dim
        self._encoder_id = shard.encoder_id
        self._captioner_id = captioner_id
        self._embeddings = dict(shard.rows)
        self._captions: dict[str, list[str]] = {}
        if captions_path is not None:
            self._captions = _load_caption_file(captions_path)

    def info(self) -> BackendInfo:
        return BackendInfo(dim=self._dim, encoder_id=self._encoder_id, captioner_id=self._captioner_id)

    def generate_captions(self, request: CaptionRequest) -> list[str]:
        stored = self._captions.get(request.image_ref)
        if stored is None:
            raise NotFoundError(f"no precomputed captions for {request.image_ref!r}")
        if len(stored) < request.r:
            raise BackendError(
                f"{request.image_ref!r} has {len(stored)} precomputed captions, need r={request.r}"
            )
        return list(stored[: request.r])

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            if text == "":
                out.append(np.zeros(self._dim, dtype=np.float32))
                continue
            vector = self._embeddings.get(text)
            if vector is None:
                raise NotFoundError(f"no precomputed embedding for text {text[:80]!r}")
            out.append(vector)
        return out


def _load_caption_file(path: str | Path) -> dict[str, list[str]]:
    path = Path(path)
    if not path.exists():
        raise IoError(f"captions file not found: {path}")
    table: dict[str, list[str]] = {}
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
                or set(payload) != {"key", "captions"}
                or not isinstance(payload["key"], str)
                or not isinstance(payload["captions"], list)
                or not all(isinstance(c, str) for c in payload["captions"])
            ):
                raise ParseError(f'line {lineno}: expected {{"key": str, "captions": [str]}}')
            table[payload["key"]] = payload["captions"]
    return table


class ServiceBackend:
    """Client for a remote model server.

    Protocol (JSON over HTTP/1.1):
      GET  /info     -> {"dim": int, "encoder_id": str, "captioner_id": str}
      POST /caption  {"image", "r", "top_p", "min_len", "max_len", "seed"}
                     -> {"captions": [str; r]}
      POST /embed    {"texts": [str]} -> {"embeddings": [[float; dim]]}
    Non-200 responses carry {"error": str}.
    """

    def __init__(self, url: str, timeout: float = 60.0) -> None:
        import requests

        self._url = url.rstrip("/")
        self._timeout = timeout
        self._session = requests.Session()
        self._requests = requests
        self._info: BackendInfo | None = None

    def _request(self, method: str, route: str, payload: dict | None = None) -> dict:
        try:
            response = self._session.request(
                method, self._url + route, json=payload, timeout=self._timeout
            )
        except self._requests.RequestException as exc:
            raise TransportError(f"{route}: {exc}") from exc
        if response.status_code != 200:
            message = f"{route}: HTTP {response.status_code}"
            try:
                message = f"{message}: {response.json()['error']}"
            except Exception:
                pass
            if response.status_code == 404:
                raise NotFoundError(message)
            raise BackendError(message)
        try:
            body = response.json()
        except ValueError as exc:
            raise ProtocolError(f"{route}: response is not valid JSON") from exc
        if not isinstance(body, dict):
            raise ProtocolError(f"{route}: expected a JSON object")
        return body

    def info(self) -> BackendInfo:
        if self._info is None:
            body = self._request("GET", "/info")
            try:
                self._info = BackendInfo(
                    dim=int(body["dim"]),
                    encoder_id=str(body["encoder_id"]),
                    captioner_id=str(body["captioner_id"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolError(f"/info: malformed body {body!r}") from exc
        return self._info

    def generate_captions(self, request: CaptionRequest) -> list[str]:
        body = self._request(
            "POST",
            "/caption",
            {
                "image": request.image_ref,
                "r": request.r,
                "top_p": request.top_p,
                "min_len": request.min_len,
                "max_len": request.max_len,
                "seed": request.seed,
            },
        )
        captions = body.get("captions")
        if not isinstance(captions, list) or not all(isinstance(c, str) for c in captions):
            raise ProtocolError("/caption: body lacks a caption list")
        if len(captions) != request.r:
            raise ProtocolError(f"/caption: expected {request.r} captions, got {len(captions)}")
        return captions

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        body = self._request("POST", "/embed", {"texts": list(texts)})
        rows = body.get("embeddings")
        if not isinstance(rows, list) or len(rows) != len(texts):
            raise ProtocolError(f"/embed: expected {len(texts)} embeddings")
        dim = self.info().dim
        out = []
        for row in rows:
            vector = np.asarray(row, dtype=np.float32)
            if vector.shape != (dim,):
                raise ProtocolError(f"/embed: embedding of shape {vector.shape}, dim {dim} expected")
            if not np.all(np.isfinite(vector)):
                raise ProtocolError("/embed: non-finite embedding component")
            out.append(vector)
        return out


def resolve_service_url(flag_url: str | None, file_url: str | None) -> str | None:
    """Service URL precedence: environment, then CLI flag, then config file."""
    return os.environ.get(BACKEND_URL_ENV) or flag_url or file_url


_CHECK_REFS = (
    "mock://scene/red+cat+mat",
    "mock://scene/blue+sky+plane",
)


def check_backend(
    backend: Backend,
    image_refs: Iterable[str] = _CHECK_REFS,
    r: int = 3,
    seed: int = 11,
    require_deterministic: bool = True,
) -> dict[str, str]:
    """Black-box conformance suite all backends must pass.

    Checks determinism under a fixed seed (skippable for providers that
    declare themselves non-deterministic), caption arity, embedding dim
    consistency, and finiteness. Raises BackendError naming the first failed
    check; returns {check: "ok"} when all pass.
    """
    refs = list(image_refs)
    if not refs:
        raise ConfigError("check_backend needs at least one image_ref")
    report: dict[str, str] = {}

    def expect(condition: bool, check: str, detail: str) -> None:
        if not condition:
            raise BackendError(f"conformance check {check!r} failed: {detail}")
        report[check] = "ok"

    info = backend.info()
    expect(info.dim >= 1, "info", "dim must be positive")
    expect(bool(info.encoder_id) and bool(info.captioner_id), "info-ids", "empty identifier")

    request = CaptionRequest(image_ref=refs[0], r=r, seed=seed)
    first = backend.generate_captions(request)
    expect(len(first) == r, "caption-arity", f"expected {r} captions, got {len(first)}")
    expect(all(isinstance(c, str) for c in first), "caption-type", "captions must be strings")
    if require_deterministic:
        second = backend.generate_captions(request)
        expect(first == second, "caption-determinism", "same request produced different captions")

    texts = [""] + first + [
        backend.generate_captions(CaptionRequest(image_ref=ref, r=1, seed=seed))[0] for ref in refs
    ]
    embeddings = backend.embed_texts(texts)
    expect(len(embeddings) == len(texts), "embed-arity", "one vector per input text")
    expect(
        all(e.shape == (info.dim,) for e in embeddings),
        "embed-dim",
        f"vector shape differs from ({info.dim},)",
    )
    expect(
        all(np.all(np.isfinite(e)) for e in embeddings),
        "embed-finite",
        "non-finite embedding component",
    )
    again = backend.embed_texts(texts)
    expect(
        all(np.array_equal(a, b) for a, b in zip(embeddings, again)),
        "embed-determinism",
        "same texts produced different embeddings",
    )
    return report
