import sys
from pathlib import Path

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizer
from transformers.utils import logging as hf_logging

sys.path.insert(0, str(Path(__file__).parent))

hf_logging.set_verbosity_error()

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "crane", "lift", "##ed", "flew", "over", "marsh",
    "beam", "big", "very", "tall", "bird", "machine",
]


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """A small randomly initialized encoder checkpoint, fully offline."""
    d = tmp_path_factory.mktemp("tiny-mlm")
    (d / "vocab.txt").write_text("\n".join(VOCAB) + "\n")
    tokenizer = BertTokenizer(str(d / "vocab.txt"), do_lower_case=True)
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=4,
        num_attention_heads=4,
        intermediate_size=64,
        max_position_embeddings=16,
    )
    torch.manual_seed(1234)
    model = BertModel(config)
    model.save_pretrained(d)
    tokenizer.save_pretrained(d)
    return str(d)


@pytest.fixture(scope="session")
def encoder(tiny_model_dir):
    from cwsd_provider.encoder import MlmEncoder

    return MlmEncoder(tiny_model_dir)


@pytest.fixture(scope="session")
def app(encoder):
    from cwsd_provider.server import create_app

    return create_app(encoder, max_batch=8)


@pytest.fixture(scope="session")
def client(app):
    from fastapi.testclient import TestClient

    return TestClient(app)
