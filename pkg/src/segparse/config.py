"""Run configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields


@dataclass
class TrainSettings:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    clip: float = 5.0
    seed: int = 0


@dataclass
class Config:
    # model dimensions
    emb_dim: int = 300
    parser_hidden: int = 512
    seg_hidden: int = 300
    dropout: float = 0.5
    copy: bool = True
    seg_bidirectional: bool = False
    init_scale: float = 0.08
    # optimisation
    batch_size: int = 64
    lr: float = 1e-3
    clip: float = 5.0
    pretrain_epochs: int = 100
    seg_epochs: int = 100
    finetune_epochs: int = 100
    # decoding and inference
    beam: int = 5
    derive_beam: int = 1
    max_decode_len: int = 60
    max_iters: int = 8
    recurse: bool = True
    eval_dev_each_stage: bool = True
    # data
    anonymize_mr: bool = True
    min_count: int = 1
    tokenizer: str = "whitespace"
    seed: int = 0
    # paths used by the command line
    train_path: str = ""
    dev_path: str = ""
    out_dir: str = ""

    def stage(self, epochs: int, seed_offset: int = 0) -> TrainSettings:
        return TrainSettings(epochs=epochs, batch_size=self.batch_size, lr=self.lr,
                             clip=self.clip, seed=self.seed + seed_offset)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(kind, raw: str, key: str):
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def parse_config(text: str, base: Config | None = None) -> Config:
    """Parse ``key = value`` lines; ``#`` starts a comment, quotes are optional."""
    cfg = base or Config()
    types = {f.name: f.type for f in fields(Config)}
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
            raw = raw[1:-1]
        changes[key] = _coerce(types[key], raw, key)
    return dataclasses.replace(cfg, **changes)


def load_config(path) -> Config:
    with open(path) as f:
        return parse_config(f.read())


def dump_config(cfg: Config) -> str:
    lines = []
    for f in fields(Config):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
