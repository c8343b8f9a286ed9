"""Model checkpoints: a parameter blob plus a JSON manifest.

A checkpoint directory holds ``<kind>.pt``, ``<kind>.json`` and the two
vocabulary files shared by the parser and the segmenter.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import torch

from .dataset import SymbolTable, Vocabulary
from .errors import CheckpointError
from .parser import Seq2SeqParser
from .segmenter import SpanSegmenter

FORMAT_VERSION = 1
SOURCE_VOCAB = "source.vocab"
TARGET_VOCAB = "target.vocab"


def save_vocab(vocab: Vocabulary, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    vocab.source.save(d / SOURCE_VOCAB)
    vocab.target.save(d / TARGET_VOCAB)


def load_vocab(directory) -> Vocabulary:
    d = Path(directory)
    try:
        return Vocabulary(SymbolTable.load(d / SOURCE_VOCAB), SymbolTable.load(d / TARGET_VOCAB))
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read vocabulary in {d}: {e}") from e


def save_checkpoint(model, directory, kind: str):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_vocab(model.vocab, d)
    manifest = {"format_version": FORMAT_VERSION, "kind": kind,
                "model": "parser" if isinstance(model, Seq2SeqParser) else "segmenter",
                "vocab_hash": model.vocab.fingerprint(), "dims": model.dims,
                "seed": model.seed, "copy_enabled": bool(getattr(model, "copy", False))}
    if isinstance(model, Seq2SeqParser):
        manifest["max_len"] = model.max_len
    torch.save(model.state_dict(), d / f"{kind}.pt")
    (d / f"{kind}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_checkpoint(directory, kind: str, vocab: Optional[Vocabulary] = None):
    """Rebuild a parser or segmenter; refuses a vocabulary whose hash differs."""
    d = Path(directory)
    try:
        manifest = json.loads((d / f"{kind}.json").read_text())
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read manifest {d / (kind + '.json')}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')}")
    vocab = vocab or load_vocab(d)
    if vocab.fingerprint() != manifest["vocab_hash"]:
        raise CheckpointError(
            f"vocabulary hash {vocab.fingerprint()} does not match checkpoint {manifest['vocab_hash']}")
    dims = manifest["dims"]
    if manifest.get("model") == "parser":
        model = Seq2SeqParser(vocab, emb_dim=dims["emb_dim"], hidden=dims["hidden"],
                              copy=manifest["copy_enabled"], max_len=manifest.get("max_len", 60),
                              seed=manifest["seed"])
    else:
        model = SpanSegmenter(vocab, emb_dim=dims["emb_dim"], hidden=dims["hidden"],
                              bidirectional=dims.get("bidirectional", False), seed=manifest["seed"])
    try:
        state = torch.load(d / f"{kind}.pt", map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    except (OSError, RuntimeError) as e:
        raise CheckpointError(f"cannot load parameters from {d / (kind + '.pt')}: {e}") from e
    model.eval()
    return model
