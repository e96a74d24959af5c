"""Model wrappers: seeded nucleus-sampling captioner, mean-pooled encoder.

The wrappers hold any image-to-text model that generates from pixel_values
(BLIP, GIT) and any encoder exposing last_hidden_state (MiniLM-class). The
registry loaders at the bottom fetch published checkpoints; tests construct
tiny random-weight models through the same wrappers instead.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np
import torch
from PIL import Image

from .config import CAPTIONER_REGISTRY


class Captioner(Protocol):
    captioner_id: str

    def generate(
        self, image: Image.Image, *, r: int, top_p: float, min_len: int, max_len: int, seed: int
    ) -> list[str]: ...


class Encoder(Protocol):
    encoder_id: str
    dim: int

    def encode(self, texts: list[str]) -> np.ndarray: ...


def _eos_ids(model) -> set[int]:
    eos = getattr(model.generation_config, "eos_token_id", None)
    if eos is None:
        return set()
    if isinstance(eos, int):
        return {eos}
    return set(eos)


class HfCaptioner:
    """Nucleus sampling around a pixel_values-conditioned language model.

    The torch RNG is seeded per request, so with access serialized by the
    caller a repeated request reproduces its captions exactly. Length bounds
    are enforced in model tokens via min/max_new_tokens; special tokens other
    than the terminator are suppressed during sampling so every caption
    decodes to plain text.
    """

    def __init__(self, model, processor, captioner_id: str) -> None:
        self._model = model.eval()
        self._processor = processor
        self.captioner_id = captioner_id
        specials = set(processor.tokenizer.all_special_ids)
        self._suppress = sorted(specials - _eos_ids(model)) or None

    def generate(
        self, image: Image.Image, *, r: int, top_p: float, min_len: int, max_len: int, seed: int
    ) -> list[str]:
        pixel_values = self._processor(images=image, return_tensors="pt").pixel_values
        pixel_values = pixel_values.to(self._model.device)
        torch.manual_seed(seed)
        with torch.no_grad():
            sequences = self._model.generate(
                pixel_values=pixel_values,
                do_sample=True,
                top_p=top_p,
                min_new_tokens=min_len,
                max_new_tokens=max_len,
                num_return_sequences=r,
                suppress_tokens=self._suppress,
            )
        captions = self._processor.batch_decode(sequences, skip_special_tokens=True)
        return [caption.strip() for caption in captions]


class MeanPoolEncoder:
    """Sentence embeddings: final hidden states mean-pooled over real tokens,
    l2-normalized. This is the standard pooling for MiniLM-class sentence
    transformers, so the advertised dim is the model's hidden size, read from
    the loaded model rather than assumed.
    """

    def __init__(self, model, tokenizer, encoder_id: str) -> None:
        self._model = model.eval()
        self._tokenizer = tokenizer
        self.encoder_id = encoder_id
        self.dim = int(model.config.hidden_size)
        self._max_tokens = int(model.config.max_position_embeddings)

    def encode(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.zeros((0, self.dim), dtype=np.float32)
        batch = self._tokenizer(
            list(texts),
            padding=True,
            truncation=True,
            max_length=self._max_tokens,
            return_tensors="pt",
        )
        batch = {key: value.to(self._model.device) for key, value in batch.items()}
        with torch.no_grad():
            hidden = self._model(**batch).last_hidden_state
        mask = batch["attention_mask"].unsqueeze(-1).to(hidden.dtype)
        pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1e-9)
        pooled = torch.nn.functional.normalize(pooled, dim=1)
        return pooled.cpu().numpy().astype(np.float32)


def load_captioner(name: str, device: str = "cpu") -> HfCaptioner:
    """Load a registry captioner ("blip14m", "git10m") or any hub id."""
    from transformers import AutoModelForImageTextToText, AutoProcessor

    model_id = CAPTIONER_REGISTRY.get(name, name)
    processor = AutoProcessor.from_pretrained(model_id)
    model = AutoModelForImageTextToText.from_pretrained(model_id).to(device)
    return HfCaptioner(model, processor, captioner_id=name)


def load_encoder(model_id: str, device: str = "cpu") -> MeanPoolEncoder:
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_id)
    model = AutoModel.from_pretrained(model_id).to(device)
    return MeanPoolEncoder(model, tokenizer, encoder_id=model_id)
