"""Batched frozen-model inference and mean pooling over token embeddings."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from . import DEFAULT_MODEL
from .corpus import load_corpus_keys
from .writer import write_nlaemb

logger = logging.getLogger("plm_export")


@dataclass
class ExportManifest:
    model_id: str = DEFAULT_MODEL
    batch_size: int = 16
    max_length: int | None = None
    device: str = "cpu"
    keys: list[str] = field(default_factory=list)


def pool_tokens(hidden: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
    """Mean over non-padding token embeddings (special tokens included)."""
    mask = attention_mask.unsqueeze(-1).to(hidden.dtype)
    return (hidden * mask).sum(dim=1) / mask.sum(dim=1)


def embed_texts(texts: list[str], model, tokenizer, batch_size: int = 16,
                max_length: int | None = None, device: str = "cpu") -> np.ndarray:
    """Frozen inference over a list of texts; rows follow input order.

    Texts longer than the effective max length are truncated; each batch
    logs how many of its texts were cut.
    """
    limit = max_length or tokenizer.model_max_length
    if limit is None or limit > 100_000:  # some tokenizers report a sentinel
        limit = 512
    model = model.to(device)
    model.eval()
    rows = []
    truncated_total = 0
    with torch.no_grad():
        for start in range(0, len(texts), batch_size):
            batch = texts[start:start + batch_size]
            lengths = [len(tokenizer(t, truncation=False)["input_ids"]) for t in batch]
            truncated = sum(1 for n in lengths if n > limit)
            if truncated:
                truncated_total += truncated
                logger.warning("truncated %d text(s) beyond %d tokens in batch at %d",
                               truncated, limit, start)
            enc = tokenizer(batch, padding=True, truncation=True, max_length=limit,
                            return_tensors="pt").to(device)
            out = model(**enc)
            pooled = pool_tokens(out.last_hidden_state, enc["attention_mask"])
            rows.append(pooled.cpu().numpy().astype(np.float32))
    if truncated_total:
        logger.warning("truncated %d text(s) in total", truncated_total)
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, model.config.hidden_size),
                                                              dtype=np.float32)


def export_embeddings(ehr_path: str | Path, vocab_paths: dict[str, str | Path],
                      out_path: str | Path, manifest: ExportManifest) -> ExportManifest:
    """Embed every distinct corpus text key and write the NLAEMB1 file."""
    keys = sorted(load_corpus_keys(ehr_path, vocab_paths))
    n_raw = len(keys)
    keys = [k for k in keys if k]  # empty text resolves to the zero vector downstream
    if len(keys) < n_raw:
        logger.info("skipped the empty text key")
    logger.info("embedding %d distinct text keys with %s", len(keys), manifest.model_id)

    tokenizer = AutoTokenizer.from_pretrained(manifest.model_id)
    model = AutoModel.from_pretrained(manifest.model_id)
    vectors = embed_texts(keys, model, tokenizer, batch_size=manifest.batch_size,
                          max_length=manifest.max_length, device=manifest.device)
    dim = int(model.config.hidden_size)
    write_nlaemb({k: v for k, v in zip(keys, vectors)}, dim, out_path)
    logger.info("wrote %d entries of dim %d -> %s", len(keys), dim, out_path)
    manifest.keys = keys
    return manifest
