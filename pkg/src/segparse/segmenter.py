"""Span segmenter: a recurrent encoder with independent start and end heads.

The whole-utterance span doubles as the stop signal, so no separate class is
needed.  Spans are 1-based and inclusive.
"""

from __future__ import annotations

import logging
import random
from typing import Sequence

import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .config import TrainSettings
from .dataset import Vocabulary
from .errors import DivergenceError
from .spans import Span

log = logging.getLogger(__name__)


def best_pair(p_start: torch.Tensor, p_end: torch.Tensor) -> Span:
    """Argmax of p_start(i) * p_end(j) over i < j.

    Ties go to the smaller i, then the smaller j (first maximum in row-major
    order).  Lengths below 2 yield the whole span.
    """
    m = p_start.numel()
    if m < 2:
        return Span(1, max(m, 1))
    scores = p_start.double()[:, None] * p_end.double()[None, :]
    feasible = torch.ones(m, m, dtype=torch.bool).triu(1)
    scores = scores.masked_fill(~feasible, -1.0)
    flat = int(torch.argmax(scores.reshape(-1)))
    return Span(flat // m + 1, flat % m + 1)


class SpanSegmenter(nn.Module):

    def __init__(self, vocab: Vocabulary, emb_dim: int = 300, hidden: int = 300,
                 dropout: float = 0.5, bidirectional: bool = False,
                 init_scale: float = 0.08, seed: int = 0):
        super().__init__()
        self.vocab = vocab
        self.dims = {"emb_dim": emb_dim, "hidden": hidden, "bidirectional": bidirectional}
        self.seed = seed
        self.embed = nn.Embedding(len(vocab.source), emb_dim)
        self.rnn = nn.GRU(emb_dim, hidden, batch_first=True, bidirectional=bidirectional)
        u = hidden * (2 if bidirectional else 1)
        self.w_start = nn.Linear(u, 1, bias=False)
        self.w_end = nn.Linear(u, 1, bias=False)
        self.drop = nn.Dropout(dropout)
        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.uniform_(-init_scale, init_scale, generator=g)

    def _batch(self, token_lists: Sequence[Sequence[str]]):
        lengths = [len(t) for t in token_lists]
        if min(lengths) < 1:
            raise ValueError("cannot segment an empty utterance")
        ids = torch.zeros(len(token_lists), max(lengths), dtype=torch.long)
        for b, toks in enumerate(token_lists):
            ids[b, :len(toks)] = torch.tensor(self.vocab.source.encode(toks))
        lens = torch.tensor(lengths)
        mask = torch.arange(ids.size(1))[None, :] < lens[:, None]
        return ids, lens, mask

    def log_distributions(self, token_lists: Sequence[Sequence[str]]):
        """Masked log-softmax start and end scores, each B x L."""
        ids, lens, mask = self._batch(token_lists)
        emb = self.drop(self.embed(ids))
        packed = pack_padded_sequence(emb, lens, batch_first=True, enforce_sorted=False)
        out, _ = self.rnn(packed)
        u, _ = pad_packed_sequence(out, batch_first=True, total_length=ids.size(1))
        u = self.drop(u)
        s = self.w_start(u).squeeze(-1).masked_fill(~mask, float("-inf"))
        e = self.w_end(u).squeeze(-1).masked_fill(~mask, float("-inf"))
        return s.log_softmax(-1), e.log_softmax(-1), mask

    def span_distributions(self, tokens: Sequence[str]):
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                ls, le, _ = self.log_distributions([tokens])
        finally:
            self.train(was_training)
        return ls[0].exp(), le[0].exp()

    def span_log_prob(self, tokens: Sequence[str], span: Span) -> torch.Tensor:
        ls, le, _ = self.log_distributions([tokens])
        return ls[0, span.start - 1] + le[0, span.end - 1]

    def predict_span(self, tokens: Sequence[str]) -> Span:
        if len(tokens) < 2:
            return Span.whole(max(len(tokens), 1))
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                ls, le, _ = self.log_distributions([tokens])
        finally:
            self.train(was_training)
        return best_pair(ls[0].exp(), le[0].exp())

    def predict_spans(self, token_lists: Sequence[Sequence[str]], chunk: int = 256) -> list[Span]:
        was_training = self.training
        self.eval()
        out = []
        try:
            with torch.no_grad():
                for k in range(0, len(token_lists), chunk):
                    part = token_lists[k:k + chunk]
                    ls, le, _ = self.log_distributions(part)
                    for b, toks in enumerate(part):
                        n = len(toks)
                        if n < 2:
                            out.append(Span.whole(n))
                        else:
                            out.append(best_pair(ls[b, :n].exp(), le[b, :n].exp()))
        finally:
            self.train(was_training)
        return out

    def loss(self, signals: Sequence[tuple[Sequence[str], Span]]) -> torch.Tensor:
        """Per-signal negative log-likelihood, -[log p_start(i) + log p_end(j)]."""
        ls, le, _ = self.log_distributions([t for t, _ in signals])
        starts = torch.tensor([s.start - 1 for _, s in signals])
        ends = torch.tensor([s.end - 1 for _, s in signals])
        rows = torch.arange(len(signals))
        return -(ls[rows, starts] + le[rows, ends])


def build_segmenter(vocab: Vocabulary, cfg) -> SpanSegmenter:
    return SpanSegmenter(vocab, emb_dim=cfg.emb_dim, hidden=cfg.seg_hidden,
                         dropout=cfg.dropout, bidirectional=cfg.seg_bidirectional,
                         init_scale=cfg.init_scale, seed=cfg.seed)


def train_segmenter(signals: Sequence[tuple[Sequence[str], Span]], model: SpanSegmenter,
                    settings: TrainSettings, stage: str = "segmenter") -> list[float]:
    if not signals:
        raise ValueError("no segmentation signals")
    for toks, span in signals:
        if not span.is_valid(len(toks)):
            raise ValueError(f"span {span} invalid for a {len(toks)}-token utterance")
    torch.manual_seed(settings.seed)
    rng = random.Random(settings.seed)
    opt = torch.optim.Adam(model.parameters(), lr=settings.lr)
    order = list(range(len(signals)))
    history = []
    model.train()
    for epoch in range(settings.epochs):
        rng.shuffle(order)
        total = 0.0
        for k in range(0, len(order), settings.batch_size):
            nll = model.loss([signals[i] for i in order[k:k + settings.batch_size]])
            loss = nll.mean()
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}", stage)
            opt.zero_grad()
            loss.backward()
            if settings.clip:
                nn.utils.clip_grad_norm_(model.parameters(), settings.clip)
            opt.step()
            total += float(nll.detach().sum())
        history.append(total / len(signals))
        log.debug("%s epoch %d loss %.4f", stage, epoch + 1, history[-1])
    model.eval()
    return history
