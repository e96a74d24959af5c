"""Service configuration and the captioner registry."""

from __future__ import annotations

from dataclasses import dataclass

CAPTIONER_REGISTRY = {
    "blip14m": "Salesforce/blip-image-captioning-base",
    "git10m": "microsoft/git-base",
}

DEFAULT_ENCODER = "sentence-transformers/all-MiniLM-L6-v2"


@dataclass(frozen=True)
class SidecarConfig:
    """How the service runs; model identity lives in the loaded wrappers.

    `deterministic` is advertised through /info. The default stack (seeded
    sampling, one model pass at a time) reproduces captions for a repeated
    request on a fixed model version and device; deployments that cannot
    promise that (some GPU kernels) should declare False so clients skip
    the repeat-call check.
    """

    captioner_id: str
    encoder_id: str = DEFAULT_ENCODER
    device: str = "cpu"
    max_batch: int = 64
    host: str = "127.0.0.1"
    port: int = 8080
    allow_url_fetch: bool = False
    deterministic: bool = True

    def __post_init__(self) -> None:
        if not self.captioner_id:
            raise ValueError("captioner_id must be non-empty")
        if not self.encoder_id:
            raise ValueError("encoder_id must be non-empty")
        if self.max_batch < 1:
            raise ValueError(f"max_batch must be positive, got {self.max_batch}")
        if not 0 <= self.port <= 65535:
            raise ValueError(f"port out of range: {self.port}")
