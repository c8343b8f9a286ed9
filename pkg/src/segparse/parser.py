"""Sequence-to-sequence base parser.

Bidirectional GRU encoder, GRU decoder with general (bilinear) attention and
input feeding.  With the restricted copy enabled, symbols for value tokens
(numbers, dates, cell references, entity markers, placeholders) are never
generated from the output vocabulary; they can only be copied from input
positions the value recognizer accepts.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .config import TrainSettings
from .dataset import BOS, EOS, PAD, UNK, Vocabulary
from .decoding import DecodeResult, copy_symbol, is_value, is_value_symbol, result_from_symbols
from .errors import DivergenceError
from .funql import MrNode, mr_symbols

log = logging.getLogger(__name__)

NEG_INF = float("-inf")


@dataclass
class _Example:
    src: list[int]
    values: list[bool]
    copy_syms: list[str]
    tgt: Optional[list[int]] = None
    tgt_syms: Optional[list[str]] = None


@dataclass
class Batch:
    src: torch.Tensor          # B x S
    src_len: torch.Tensor      # B
    src_mask: torch.Tensor     # B x S
    value_mask: torch.Tensor   # B x S
    tgt_in: Optional[torch.Tensor] = None     # B x T
    tgt_out: Optional[torch.Tensor] = None    # B x T
    tgt_mask: Optional[torch.Tensor] = None   # B x T
    gen_ok: Optional[torch.Tensor] = None     # B x T
    copy_match: Optional[torch.Tensor] = None  # B x T x S


class Seq2SeqParser(nn.Module):

    def __init__(self, vocab: Vocabulary, emb_dim: int = 300, hidden: int = 512,
                 dropout: float = 0.5, copy: bool = True, max_len: int = 60,
                 init_scale: float = 0.08, seed: int = 0):
        super().__init__()
        self.vocab = vocab
        self.dims = {"emb_dim": emb_dim, "hidden": hidden}
        self.copy = copy
        self.max_len = max_len
        self.seed = seed
        n_in, n_out = len(vocab.source), len(vocab.target)
        self.src_embed = nn.Embedding(n_in, emb_dim)
        self.tgt_embed = nn.Embedding(n_out, emb_dim)
        self.encoder = nn.GRU(emb_dim, hidden, batch_first=True, bidirectional=True)
        self.bridge = nn.Linear(2 * hidden, hidden)
        self.decoder = nn.GRUCell(emb_dim + hidden, hidden)
        self.attn = nn.Linear(hidden, 2 * hidden, bias=False)
        self.combine = nn.Linear(3 * hidden, hidden)
        self.out = nn.Linear(hidden, n_out)
        if copy:
            self.copy_attn = nn.Linear(hidden, 2 * hidden, bias=False)
            self.copy_gate = nn.Linear(hidden, 1)
        self.drop = nn.Dropout(dropout)

        tgt = vocab.target
        generable = torch.ones(n_out, dtype=torch.bool)
        for tok in (PAD, UNK, BOS):
            generable[tgt.index(tok)] = False
        if copy:
            for i, sym in enumerate(tgt.itos):
                if is_value_symbol(sym):
                    generable[i] = False
        self.register_buffer("generable", generable, persistent=False)

        g = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for p in self.parameters():
                p.uniform_(-init_scale, init_scale, generator=g)

    # ------------------------------------------------------------------
    # data preparation

    def _prepare_source(self, tokens: Sequence[str]) -> _Example:
        values = [self.copy and is_value(t) for t in tokens]
        return _Example(self.vocab.source.encode(tokens), values,
                        [copy_symbol(t) if v else "" for t, v in zip(tokens, values)])

    def prepare(self, tokens: Sequence[str], mr: Optional[MrNode] = None) -> _Example:
        ex = self._prepare_source(tokens)
        if mr is not None:
            syms = mr_symbols(mr) + [EOS]
            ex.tgt = [self.vocab.target.index(s) for s in syms]
            ex.tgt_syms = syms
        return ex

    def learnable(self, ex: _Example) -> bool:
        """Whether every target symbol can be produced by generation or copy."""
        for sym, idx in zip(ex.tgt_syms, ex.tgt):
            gen = bool(self.generable[idx]) and self.vocab.target.token(idx) == sym
            if not gen and sym not in ex.copy_syms:
                return False
        return True

    def collate(self, examples: Sequence[_Example]) -> Batch:
        B = len(examples)
        S = max(len(e.src) for e in examples)
        dev = self.generable.device
        src = torch.zeros(B, S, dtype=torch.long)
        src_mask = torch.zeros(B, S, dtype=torch.bool)
        value_mask = torch.zeros(B, S, dtype=torch.bool)
        for b, e in enumerate(examples):
            n = len(e.src)
            src[b, :n] = torch.tensor(e.src)
            src_mask[b, :n] = True
            value_mask[b, :n] = torch.tensor(e.values, dtype=torch.bool)
        batch = Batch(src.to(dev), torch.tensor([len(e.src) for e in examples]),
                      src_mask.to(dev), value_mask.to(dev))
        if examples[0].tgt is None:
            return batch
        T = max(len(e.tgt) for e in examples)
        bos = self.vocab.target.index(BOS)
        tgt_in = torch.zeros(B, T, dtype=torch.long)
        tgt_out = torch.zeros(B, T, dtype=torch.long)
        tgt_mask = torch.zeros(B, T, dtype=torch.bool)
        gen_ok = torch.zeros(B, T, dtype=torch.bool)
        copy_match = torch.zeros(B, T, S, dtype=torch.bool)
        for b, e in enumerate(examples):
            n = len(e.tgt)
            tgt_out[b, :n] = torch.tensor(e.tgt)
            tgt_in[b, 0] = bos
            tgt_in[b, 1:n] = torch.tensor(e.tgt[:-1])
            tgt_mask[b, :n] = True
            for t, (sym, idx) in enumerate(zip(e.tgt_syms, e.tgt)):
                gen_ok[b, t] = bool(self.generable[idx]) and self.vocab.target.token(idx) == sym
                if self.copy:
                    for s, cs in enumerate(e.copy_syms):
                        if cs and cs == sym:
                            copy_match[b, t, s] = True
        batch.tgt_in, batch.tgt_out, batch.tgt_mask = tgt_in.to(dev), tgt_out.to(dev), tgt_mask.to(dev)
        batch.gen_ok, batch.copy_match = gen_ok.to(dev), copy_match.to(dev)
        return batch

    # ------------------------------------------------------------------
    # network

    def encode_batch(self, batch: Batch):
        emb = self.drop(self.src_embed(batch.src))
        packed = pack_padded_sequence(emb, batch.src_len, batch_first=True, enforce_sorted=False)
        out, h = self.encoder(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=batch.src.size(1))
        init = torch.tanh(self.bridge(torch.cat([h[0], h[1]], dim=-1)))
        return out, init

    def encode(self, tokens: Sequence[str]) -> torch.Tensor:
        """Annotation matrix (length x 2*hidden): forward and backward states per token."""
        if not tokens:
            raise ValueError("cannot encode an empty utterance")
        batch = self.collate([self._prepare_source(tokens)])
        return self.encode_batch(batch)[0][0]

    def initial_state(self, init: torch.Tensor):
        return init, init.new_zeros(init.shape)

    def decode_step(self, prev: torch.Tensor, state, enc: torch.Tensor,
                    src_mask: torch.Tensor, value_mask: torch.Tensor):
        """One decoder step.

        Returns ``(log_gen, log_copy, new_state, align)`` where ``log_gen`` is
        B x |V_out| and ``log_copy`` is B x S; together they are the log of one
        distribution over output symbols and copyable input positions.
        """
        h, feed = state
        x = torch.cat([self.drop(self.tgt_embed(prev)), feed], dim=-1)
        h = self.decoder(x, h)
        scores = torch.bmm(enc, self.attn(h).unsqueeze(2)).squeeze(2)
        align = torch.softmax(scores.masked_fill(~src_mask, NEG_INF), dim=-1)
        ctx = torch.bmm(align.unsqueeze(1), enc).squeeze(1)
        att_h = torch.tanh(self.combine(torch.cat([ctx, h], dim=-1)))
        att_d = self.drop(att_h)
        logits = self.out(att_d).masked_fill(~self.generable, NEG_INF)
        log_gen = torch.log_softmax(logits, dim=-1)
        if not self.copy:
            log_copy = enc.new_full(src_mask.shape, NEG_INF)
            return log_gen, log_copy, (h, att_h), align
        has_value = value_mask.any(dim=1)
        cscores = torch.bmm(enc, self.copy_attn(att_d).unsqueeze(2)).squeeze(2)
        cscores = cscores.masked_fill(~value_mask, NEG_INF)
        cscores = torch.where(has_value.unsqueeze(1), cscores, torch.zeros_like(cscores))
        log_copy = torch.log_softmax(cscores, dim=-1)
        gate = self.copy_gate(att_d).squeeze(1)
        log_g = torch.where(has_value, F.logsigmoid(gate), torch.full_like(gate, NEG_INF))
        log_1mg = torch.where(has_value, F.logsigmoid(-gate), torch.zeros_like(gate))
        log_gen = log_gen + log_1mg.unsqueeze(1)
        log_copy = torch.where(value_mask, log_copy + log_g.unsqueeze(1),
                               torch.full_like(log_copy, NEG_INF))
        return log_gen, log_copy, (h, att_h), align

    def step_distribution(self, tokens: Sequence[str], prefix: Sequence[str] = ()) -> torch.Tensor:
        """Probabilities over ``V_out`` followed by input positions after ``prefix``."""
        batch = self.collate([self._prepare_source(tokens)])
        enc, init = self.encode_batch(batch)
        state = self.initial_state(init)
        prev = torch.tensor([self.vocab.target.index(BOS)])
        for sym in prefix:
            _, _, state, _ = self.decode_step(prev, state, enc, batch.src_mask, batch.value_mask)
            prev = torch.tensor([self.vocab.target.index(sym)])
        log_gen, log_copy, _, _ = self.decode_step(prev, state, enc, batch.src_mask, batch.value_mask)
        return torch.cat([log_gen, log_copy], dim=-1)[0].exp()

    def sequence_log_probs(self, batch: Batch) -> torch.Tensor:
        """Teacher-forced log-likelihood of each target sequence (B)."""
        enc, init = self.encode_batch(batch)
        state = self.initial_state(init)
        total = enc.new_zeros(batch.src.size(0))
        for t in range(batch.tgt_in.size(1)):
            log_gen, log_copy, state, _ = self.decode_step(
                batch.tgt_in[:, t], state, enc, batch.src_mask, batch.value_mask)
            gen_t = log_gen.gather(1, batch.tgt_out[:, t:t + 1])
            gen_t = gen_t.masked_fill(~batch.gen_ok[:, t:t + 1], NEG_INF)
            copy_t = log_copy.masked_fill(~batch.copy_match[:, t], NEG_INF)
            lp = torch.logsumexp(torch.cat([gen_t, copy_t], dim=1), dim=1)
            total = total + torch.where(batch.tgt_mask[:, t], lp, torch.zeros_like(lp))
        return total

    def loss(self, pairs: Sequence[tuple[Sequence[str], MrNode]]) -> torch.Tensor:
        """Mean negative log-likelihood per sequence."""
        batch = self.collate([self.prepare(t, m) for t, m in pairs])
        return -self.sequence_log_probs(batch).mean()

    # ------------------------------------------------------------------
    # decoding

    def _extended_index(self, ex: _Example):
        """Map copyable positions to output-symbol ids (extra ids past V_out for OOV values)."""
        tgt = self.vocab.target
        extra: dict[str, int] = {}
        idx = []
        for sym in ex.copy_syms:
            if not sym:
                idx.append(0)
            elif sym in tgt:
                idx.append(tgt.index(sym))
            else:
                idx.append(extra.setdefault(sym, len(tgt) + len(extra)))
        names = {i: s for s, i in extra.items()}
        return idx, names

    def _symbol_log_probs(self, log_gen, log_copy, ext_idx, n_ext):
        probs = torch.zeros(log_gen.size(0), n_ext, dtype=log_gen.dtype)
        probs[:, :log_gen.size(1)] = log_gen.exp()
        probs.scatter_add_(1, ext_idx, log_copy.exp())
        return probs.log()

    def _symbol(self, i: int, names: dict) -> str:
        return self.vocab.target.token(i) if i < len(self.vocab.target) else names[i]

    def _next_input(self, ids: torch.Tensor) -> torch.Tensor:
        n = len(self.vocab.target)
        return torch.where(ids < n, ids, torch.full_like(ids, self.vocab.target.index(UNK)))

    @torch.no_grad()
    def greedy_batch(self, token_lists: Sequence[Sequence[str]]) -> list[DecodeResult]:
        examples = [self._prepare_source(t) for t in token_lists]
        batch = self.collate(examples)
        enc, init = self.encode_batch(batch)
        state = self.initial_state(init)
        B, S = batch.src.shape
        maps = [self._extended_index(e) for e in examples]
        ext_idx = torch.zeros(B, S, dtype=torch.long)
        for b, (idx, _) in enumerate(maps):
            ext_idx[b, :len(idx)] = torch.tensor(idx, dtype=torch.long)
        n_ext = len(self.vocab.target) + max(len(names) for _, names in maps)
        eos = self.vocab.target.index(EOS)
        prev = torch.full((B,), self.vocab.target.index(BOS), dtype=torch.long)
        done = torch.zeros(B, dtype=torch.bool)
        scores = torch.zeros(B, dtype=torch.float64)
        steps, step_aligns, live_masks = [], [], []
        for _ in range(self.max_len):
            log_gen, log_copy, state, align = self.decode_step(
                prev, state, enc, batch.src_mask, batch.value_mask)
            lp = self._symbol_log_probs(log_gen, log_copy, ext_idx, n_ext)
            best, ids = lp.max(dim=1)
            live = ~done
            scores += torch.where(live, best.double(), torch.zeros_like(scores))
            steps.append(ids)
            step_aligns.append(align)
            live_masks.append(live)
            done = done | (live & (ids == eos))
            if bool(done.all()):
                break
            prev = self._next_input(ids)
        ids_t = torch.stack(steps, 1).tolist()
        live_t = torch.stack(live_masks, 1).tolist()
        align_t = torch.stack(step_aligns, 1)
        results = []
        for b in range(B):
            n_src = len(examples[b].src)
            n_steps = sum(live_t[b])
            out = [i for i, on in zip(ids_t[b], live_t[b]) if on]
            finished = bool(done[b])
            if finished:
                out = out[:-1]
            syms = [self._symbol(i, maps[b][1]) for i in out]
            r = result_from_symbols(syms, float(scores[b]), align_t[b, :n_steps, :n_src].tolist())
            if not finished:
                r.mr = None
            results.append(r)
        return results

    @torch.no_grad()
    def beam_search(self, tokens: Sequence[str], beam: int) -> DecodeResult:
        ex = self._prepare_source(tokens)
        batch = self.collate([ex])
        enc, init = self.encode_batch(batch)
        idx, names = self._extended_index(ex)
        n_ext = len(self.vocab.target) + len(names)
        eos = self.vocab.target.index(EOS)
        # live hypotheses: (score, symbol ids, alignments)
        live = [(0.0, [], [])]
        h, feed = self.initial_state(init)
        prev = torch.tensor([self.vocab.target.index(BOS)])
        finished: list[tuple[float, list[int], list]] = []
        for _ in range(self.max_len):
            k = len(live)
            log_gen, log_copy, (h, feed), align = self.decode_step(
                prev, (h, feed), enc.expand(k, -1, -1),
                batch.src_mask.expand(k, -1), batch.value_mask.expand(k, -1))
            ext_idx = torch.tensor([idx], dtype=torch.long).expand(k, -1)
            lp = self._symbol_log_probs(log_gen, log_copy, ext_idx, n_ext).double()
            base = torch.tensor([s for s, _, _ in live], dtype=torch.float64)
            total = (base.unsqueeze(1) + lp).view(-1)
            n_take = min(beam, int(torch.isfinite(total).sum()))
            if n_take == 0:
                break
            top_scores, top_ids = total.topk(n_take)
            new_live, rows, next_ids = [], [], []
            for score, flat in zip(top_scores.tolist(), top_ids.tolist()):
                row, sym = divmod(flat, n_ext)
                _, ids, al = live[row]
                al = al + [align[row].tolist()]
                if sym == eos:
                    finished.append((score, ids, al))
                else:
                    new_live.append((score, ids + [sym], al))
                    rows.append(row)
                    next_ids.append(sym)
            if not new_live:
                break
            if finished and max(f[0] for f in finished) >= new_live[0][0]:
                break
            if len(finished) >= beam:
                break
            live = new_live
            sel = torch.tensor(rows)
            h, feed = h[sel], feed[sel]
            prev = self._next_input(torch.tensor(next_ids))
        if finished:
            score, ids, al = max(finished, key=lambda f: f[0])
            return result_from_symbols([self._symbol(i, names) for i in ids], score, al)
        score, ids, al = live[0]
        r = result_from_symbols([self._symbol(i, names) for i in ids], score, al)
        r.mr = None
        return r

    def parse_tokens(self, tokens: Sequence[str], beam: int = 1) -> DecodeResult:
        """Best complete hypothesis for ``tokens``; ``mr`` is None when it does not parse."""
        if not tokens:
            return DecodeResult([], NEG_INF, None)
        was_training = self.training
        self.eval()
        try:
            greedy = self.greedy_batch([tokens])[0]
            if beam <= 1:
                return greedy
            best = self.beam_search(tokens, beam)
            # the greedy path is itself a beam candidate; keep it if it scores higher
            if greedy.symbols and greedy.log_prob > best.log_prob and (greedy.mr is not None or best.mr is None):
                return greedy
            return best
        finally:
            self.train(was_training)

    def parse_batch(self, token_lists: Sequence[Sequence[str]], beam: int = 1,
                    chunk: int = 256) -> list[DecodeResult]:
        was_training = self.training
        self.eval()
        try:
            if beam > 1:
                return [self.parse_tokens(t, beam) for t in token_lists]
            out: list[Optional[DecodeResult]] = [None] * len(token_lists)
            order = sorted(range(len(token_lists)), key=lambda i: len(token_lists[i]))
            nonempty = [i for i in order if token_lists[i]]
            for i in order:
                if not token_lists[i]:
                    out[i] = DecodeResult([], NEG_INF, None)
            for k in range(0, len(nonempty), chunk):
                ids = nonempty[k:k + chunk]
                for i, r in zip(ids, self.greedy_batch([token_lists[i] for i in ids])):
                    out[i] = r
            return out
        finally:
            self.train(was_training)


def build_parser(vocab: Vocabulary, cfg) -> Seq2SeqParser:
    return Seq2SeqParser(vocab, emb_dim=cfg.emb_dim, hidden=cfg.parser_hidden,
                         dropout=cfg.dropout, copy=cfg.copy, max_len=cfg.max_decode_len,
                         init_scale=cfg.init_scale, seed=cfg.seed)


def train_parser(pairs: Sequence[tuple[Sequence[str], MrNode]], model: Seq2SeqParser,
                 settings: TrainSettings, stage: str = "parser") -> list[float]:
    """Mini-batch Adam on teacher-forced log-likelihood; returns per-epoch mean loss.

    Pairs whose target needs a value absent from the input (and so has zero
    probability under the restricted copy) are skipped with a warning.
    """
    if not pairs:
        raise ValueError("no training pairs")
    examples = [model.prepare(t, m) for t, m in pairs]
    keep = [e for e in examples if model.learnable(e)]
    if len(keep) < len(examples):
        log.warning("%s: skipping %d pair(s) with unreachable value symbols",
                    stage, len(examples) - len(keep))
    if not keep:
        raise ValueError("no learnable training pairs")
    torch.manual_seed(settings.seed)
    rng = random.Random(settings.seed)
    opt = torch.optim.Adam(model.parameters(), lr=settings.lr)
    order = list(range(len(keep)))
    history = []
    model.train()
    for epoch in range(settings.epochs):
        rng.shuffle(order)
        total, count = 0.0, 0
        for k in range(0, len(order), settings.batch_size):
            batch = model.collate([keep[i] for i in order[k:k + settings.batch_size]])
            nll = -model.sequence_log_probs(batch)
            loss = nll.mean()
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}", stage)
            opt.zero_grad()
            loss.backward()
            if settings.clip:
                nn.utils.clip_grad_norm_(model.parameters(), settings.clip)
            opt.step()
            total += float(nll.detach().sum())
            count += nll.numel()
        history.append(total / count)
        log.debug("%s epoch %d loss %.4f", stage, epoch + 1, history[-1])
    model.eval()
    return history
