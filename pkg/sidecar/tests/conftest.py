"""Shared fixtures: tiny random-weight models, no checkpoint downloads.

The tiny BLIP and BERT go through the exact wrappers the registry models
use, so everything except from_pretrained itself is exercised hermetically.
"""

from __future__ import annotations

import base64
import io

import pytest
import torch
from PIL import Image
from transformers import (
    BertConfig,
    BertModel,
    BertTokenizer,
    BlipConfig,
    BlipForConditionalGeneration,
    BlipImageProcessor,
    BlipProcessor,
    BlipTextConfig,
    BlipVisionConfig,
)

from sieve_sidecar.config import SidecarConfig
from sieve_sidecar.models import HfCaptioner, MeanPoolEncoder

WORDS = ["cat", "mat", "red", "sky", "dog", "sun", "tree", "blue"]


@pytest.fixture(scope="session")
def tokenizer(tmp_path_factory) -> BertTokenizer:
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS
    path = tmp_path_factory.mktemp("vocab") / "vocab.txt"
    path.write_text("\n".join(vocab) + "\n", encoding="utf-8")
    return BertTokenizer(str(path))


@pytest.fixture(scope="session")
def captioner(tokenizer) -> HfCaptioner:
    text_config = BlipTextConfig(
        vocab_size=len(tokenizer),
        hidden_size=16,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        encoder_hidden_size=16,
        max_position_embeddings=64,
        bos_token_id=tokenizer.cls_token_id,
        eos_token_id=tokenizer.sep_token_id,
        sep_token_id=tokenizer.sep_token_id,
        pad_token_id=tokenizer.pad_token_id,
    )
    vision_config = BlipVisionConfig(
        hidden_size=16,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        image_size=24,
        patch_size=8,
    )
    config = BlipConfig(text_config=text_config.to_dict(), vision_config=vision_config.to_dict())
    torch.manual_seed(0)
    model = BlipForConditionalGeneration(config)
    processor = BlipProcessor(BlipImageProcessor(size={"height": 24, "width": 24}), tokenizer)
    return HfCaptioner(model, processor, captioner_id="blip-tiny")


@pytest.fixture(scope="session")
def encoder(tokenizer) -> MeanPoolEncoder:
    config = BertConfig(
        vocab_size=len(tokenizer),
        hidden_size=16,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
        pad_token_id=tokenizer.pad_token_id,
    )
    torch.manual_seed(1)
    return MeanPoolEncoder(BertModel(config), tokenizer, encoder_id="minilm-tiny")


@pytest.fixture(scope="session")
def config() -> SidecarConfig:
    return SidecarConfig(captioner_id="blip-tiny", encoder_id="minilm-tiny", max_batch=8, port=0)


def _data_uri(color: tuple[int, int, int]) -> str:
    image = Image.new("RGB", (32, 32), color)
    buffer = io.BytesIO()
    image.save(buffer, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buffer.getvalue()).decode("ascii")


@pytest.fixture(scope="session")
def red_image() -> str:
    return _data_uri((200, 30, 30))


@pytest.fixture(scope="session")
def blue_image() -> str:
    return _data_uri((30, 30, 200))
