"""Medium-phrase masking applied to alt-text and generated captions before embedding.

Phrases like "a photo of" describe the medium rather than image content and
inflate sentence similarity between otherwise unrelated texts; they are deleted
at whitespace-token boundaries before encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "PhraseList",
    "default_phrase_list",
    "load_phrase_list",
    "mask_medium_phrases",
    "normalize_whitespace",
]

# Phrases naming the medium rather than the content. Article-prefixed variants
# are included so the dangling article is removed together with the phrase
# ("a photo of a cat" -> "a cat", not "a a cat").
_BARE_PHRASES = (
    "image of",
    "picture of",
    "photo of",
    "photograph of",
    "picture showing",
    "photo showing",
    "image showing",
)

_VOWELS = "aeiou"


def normalize_whitespace(text: str) -> str:
    """Collapse every run of Unicode whitespace to one ASCII space and trim."""
    return " ".join(text.split())


@dataclass(frozen=True)
class PhraseList:
    """Deduplicated phrases ordered longest-token-count first.

    Ordering makes longest-match-first deterministic: ties on token count are
    broken by descending character length, then lexicographically.
    """

    phrases: tuple[str, ...]
    _token_index: dict[str, list[tuple[str, ...]]] = field(
        init=False, repr=False, compare=False, hash=False, default_factory=dict
    )

    def __post_init__(self) -> None:
        normalized = []
        seen = set()
        for raw in self.phrases:
            phrase = normalize_whitespace(raw).lower()
            if not phrase or phrase in seen:
                continue
            seen.add(phrase)
            normalized.append(phrase)
        normalized.sort(key=lambda p: (-len(p.split()), -len(p), p))
        object.__setattr__(self, "phrases", tuple(normalized))
        index: dict[str, list[tuple[str, ...]]] = {}
        for phrase in self.phrases:
            tokens = tuple(phrase.split())
            index.setdefault(tokens[0], []).append(tokens)
        object.__setattr__(self, "_token_index", index)

    def __len__(self) -> int:
        return len(self.phrases)

    def __contains__(self, phrase: str) -> bool:
        return normalize_whitespace(phrase).lower() in self.phrases

    def match_length_at(self, lowered_tokens: list[str], start: int) -> int:
        """Token count of the longest phrase starting at `start`, else 0."""
        candidates = self._token_index.get(lowered_tokens[start])
        if not candidates:
            return 0
        for tokens in candidates:  # longest first by construction
            end = start + len(tokens)
            if end <= len(lowered_tokens) and tuple(lowered_tokens[start:end]) == tokens:
                return len(tokens)
        return 0


def default_phrase_list() -> PhraseList:
    """The shipped medium-phrase list: bare phrases plus article variants."""
    phrases = list(_BARE_PHRASES)
    for bare in _BARE_PHRASES:
        article = "an" if bare[0] in _VOWELS else "a"
        phrases.append(f"{article} {bare}")
        phrases.append(f"the {bare}")
    return PhraseList(tuple(phrases))


def load_phrase_list(path: str | Path) -> PhraseList:
    """Read a phrase list file: one phrase per line, `#` starts a comment."""
    phrases = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        stripped = line.split("#", 1)[0].strip()
        if stripped:
            phrases.append(stripped)
    return PhraseList(tuple(phrases))


def mask_medium_phrases(text: str, phrases: PhraseList | None = None) -> str:
    """Delete every listed phrase from `text` and canonicalize whitespace.

    Matching is case-insensitive over whitespace tokens, scanning left to
    right; at each position the longest listed phrase wins and the scan
    resumes after it (non-overlapping). Deleting a phrase can join its
    neighbours into a new occurrence, so passes repeat until stable; the
    result never contains a listed phrase at token boundaries.
    """
    if phrases is None:
        phrases = default_phrase_list()
    tokens = text.split()
    lowered = [t.lower() for t in tokens]
    changed = True
    while changed and tokens:
        changed = False
        kept: list[int] = []
        i = 0
        while i < len(tokens):
            span = phrases.match_length_at(lowered, i)
            if span:
                i += span
                changed = True
            else:
                kept.append(i)
                i += 1
        if changed:
            tokens = [tokens[j] for j in kept]
            lowered = [lowered[j] for j in kept]
    return " ".join(tokens)
