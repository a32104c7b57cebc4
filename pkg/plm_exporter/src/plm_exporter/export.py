"""Frozen-encoder corpus export.

Reads one document per line, mean-pools the encoder's last-layer token
states under the attention mask, and writes the embedding binary layout
the graph toolkit reads (24-byte header: magic "GEMB", u32 version 1,
u64 rows, u64 dim, little endian; then float32 rows). A JSON sidecar
records the encoder and pooling used.
"""

import dataclasses
import json
import logging
import os
import struct

import numpy as np
import torch

logger = logging.getLogger("plm_exporter")

MAGIC = b"GEMB"
VERSION = 1
HEADER = struct.Struct("<4sIQQ")

POOLINGS = ("mean", "cls")


class ExportError(Exception):
    """Bad spec or corpus; maps to CLI exit code 2."""


@dataclasses.dataclass(frozen=True)
class ExportSpec:
    texts: str
    encoder: str
    out: str
    pooling: str = "mean"
    max_tokens: int = 128
    batch_size: int = 32

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ExportError(
                f"pooling must be one of {list(POOLINGS)}, got {self.pooling!r}"
            )
        if self.max_tokens < 2:
            raise ExportError(f"max_tokens must be >= 2, got {self.max_tokens}")
        if self.batch_size < 1:
            raise ExportError(f"batch_size must be >= 1, got {self.batch_size}")


def read_corpus(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ExportError(f"corpus {path}: no lines")
    for i, line in enumerate(lines):
        if not line.strip():
            logger.warning("corpus line %d is empty; encoding the empty document", i)
    return lines


def _pool(last_hidden, attention_mask, pooling):
    if pooling == "cls":
        return last_hidden[:, 0]
    mask = attention_mask.unsqueeze(-1).to(last_hidden.dtype)
    counts = mask.sum(dim=1).clamp(min=1.0)
    return (last_hidden * mask).sum(dim=1) / counts


def write_embedding_file(rows, path):
    rows = np.ascontiguousarray(rows, dtype=np.float32)
    if rows.ndim != 2 or rows.size == 0:
        raise ExportError(f"need a non-empty 2-D matrix, got shape {rows.shape}")
    if not np.isfinite(rows).all():
        bad = int(np.nonzero(~np.isfinite(rows).all(axis=1))[0][0])
        raise ExportError(f"non-finite embedding at row {bad}")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, rows.shape[0], rows.shape[1]))
        fh.write(rows.tobytes())


def export_embeddings(spec):
    """Encode the corpus and write embeddings + sidecar; returns the sidecar dict.

    The encoder runs frozen in eval mode, so repeated exports of the same
    spec are bitwise identical.
    """
    from transformers import AutoModel, AutoTokenizer

    docs = read_corpus(spec.texts)
    tokenizer = AutoTokenizer.from_pretrained(spec.encoder)
    model = AutoModel.from_pretrained(spec.encoder)
    model.eval()

    pooled = []
    truncated = 0
    with torch.no_grad():
        for start in range(0, len(docs), spec.batch_size):
            batch = docs[start:start + spec.batch_size]
            full = tokenizer(batch, add_special_tokens=True)["input_ids"]
            truncated += sum(len(ids) > spec.max_tokens for ids in full)
            enc = tokenizer(
                batch,
                padding=True,
                truncation=True,
                max_length=spec.max_tokens,
                return_tensors="pt",
            )
            out = model(**enc)
            pooled.append(
                _pool(out.last_hidden_state, enc["attention_mask"], spec.pooling)
                .to(torch.float32)
                .numpy()
            )
    if truncated:
        logger.info("truncated %d of %d documents at %d tokens",
                    truncated, len(docs), spec.max_tokens)

    matrix = np.concatenate(pooled, axis=0)
    write_embedding_file(matrix, spec.out)

    sidecar = {
        "encoder": spec.encoder,
        "pooling": spec.pooling,
        "max_tokens": spec.max_tokens,
        "rows": matrix.shape[0],
        "dim": matrix.shape[1],
        "truncated": truncated,
    }
    sidecar_path = spec.out + ".json"
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("wrote %d x %d embeddings -> %s (+%s)",
                matrix.shape[0], matrix.shape[1], spec.out,
                os.path.basename(sidecar_path))
    return sidecar
