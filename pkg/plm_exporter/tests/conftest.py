import os

# tests never touch the hub; the encoder is built locally below
os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")
os.environ.setdefault("TOKENIZERS_PARALLELISM", "false")

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizer

WORDS = [
    "graph", "node", "edge", "sphere", "tangent", "drift", "layer", "mean",
    "pool", "token", "text", "corpus", "vector", "angle", "arc", "metric",
]


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory):
    """A 2-layer BERT with a 21-word vocabulary, saved to a local directory."""
    path = tmp_path_factory.mktemp("encoder")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS
    (path / "vocab.txt").write_text("\n".join(vocab) + "\n")
    tokenizer = BertTokenizer(str(path / "vocab.txt"))
    tokenizer.save_pretrained(path)
    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=64,
    )
    BertModel(config).save_pretrained(path)
    return str(path)


def corpus_lines(n=50):
    """Deterministic word-salad corpus; lines 10 and 30 are duplicates."""
    lines = []
    for i in range(n):
        k = 3 + (i % 6)
        lines.append(" ".join(WORDS[(i * 7 + j * 3) % len(WORDS)] for j in range(k)))
    if n > 30:
        lines[30] = lines[10]
    return lines
