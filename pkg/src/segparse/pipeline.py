"""Training stages and the segment, parse, reduce inference loop."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .config import Config
from .dataset import Instance, Vocabulary, build_vocab
from .errors import CompositionError
from .evaluate import evaluate
from .funql import FUNCTION, INSERTABLE_TAGS, MrNode, compose, serialize_mr, type_or_none
from .parser import Seq2SeqParser, build_parser, train_parser
from .pseudo import ParseCache, PseudoSignal, collect, derive_signals, has_ghost
from .segmenter import SpanSegmenter, build_segmenter, train_segmenter
from .spans import Span, reduce_utterance

__all__ = ["Iteration", "InferenceTrace", "infer", "infer_all", "parse_whole",
           "reduce_utterance", "run_training", "TrainingResult", "STOP_REASONS"]

log = logging.getLogger(__name__)

STOP_REASONS = ("whole_span", "fixpoint", "max_iters", "compose_error", "parse_failed")


@dataclass
class Iteration:
    utterance: list[str]
    span: Span
    partial: Optional[MrNode]
    reduced: list[str]

    def to_json(self) -> dict:
        return {"utterance": " ".join(self.utterance), "span": self.span.to_list(),
                "partial_mr": serialize_mr(self.partial) if self.partial is not None else None,
                "reduced_utterance": " ".join(self.reduced)}


@dataclass
class InferenceTrace:
    iterations: list[Iteration] = field(default_factory=list)
    final_mr: Optional[MrNode] = None
    stop_reason: str = "whole_span"

    @property
    def failed(self) -> bool:
        return self.final_mr is None

    @property
    def spans(self) -> list[Span]:
        return [it.span for it in self.iterations]

    def to_json(self) -> dict:
        return {"iterations": [it.to_json() for it in self.iterations],
                "final_mr": serialize_mr(self.final_mr) if self.final_mr is not None else None,
                "stop_reason": self.stop_reason}


def _finish(trace: InferenceTrace, partials: list[MrNode], tokens, parser, beam: int,
            reason: str) -> InferenceTrace:
    """Parse ``tokens`` whole, compose it with the collected partials and stop."""
    r = parser.parse_tokens(tokens, beam)
    trace.iterations.append(Iteration(list(tokens), Span.whole(len(tokens)), r.mr, list(tokens)))
    if r.mr is None:
        trace.stop_reason = "parse_failed"
        return trace
    try:
        trace.final_mr = compose(partials + [r.mr])
        trace.stop_reason = reason
    except CompositionError:
        trace.stop_reason = "compose_error"
    return trace


def infer(tokens: Sequence[str], segmenter, parser, config: Optional[Config] = None) -> InferenceTrace:
    """Segment, parse and reduce until the segmenter selects the whole utterance.

    A span parse that fails, has no insertable type or mentions ghosts ends the
    loop with a whole parse of the current utterance (``parse_failed``).  An
    invalid span from the segmenter does the same (``fixpoint``).  After
    ``max_iters`` reductions the remainder is parsed whole (``max_iters``).
    """
    cfg = config or Config()
    trace = InferenceTrace()
    partials: list[MrNode] = []
    x = list(tokens)
    for _ in range(cfg.max_iters):
        span = segmenter.predict_span(x)
        if span.is_whole(len(x)):
            return _finish(trace, partials, x, parser, cfg.beam, "whole_span")
        if not span.is_valid(len(x)):
            return _finish(trace, partials, x, parser, cfg.beam, "fixpoint")
        piece = span.slice(x)
        mr = parser.parse_tokens(piece, cfg.beam).mr
        tag = type_or_none(mr) if mr is not None else None
        if mr is None or mr.kind != FUNCTION or tag not in INSERTABLE_TAGS or has_ghost(mr, piece):
            trace.iterations.append(Iteration(list(x), span, mr, list(x)))
            return _finish(trace, partials, x, parser, cfg.beam, "parse_failed")
        reduced = reduce_utterance(x, span, tag)
        trace.iterations.append(Iteration(list(x), span, mr, reduced))
        partials.append(mr)
        x = reduced
    return _finish(trace, partials, x, parser, cfg.beam, "max_iters")


def infer_all(dataset: Sequence, segmenter, parser, config: Optional[Config] = None) -> list[InferenceTrace]:
    return [infer(inst.utterance, segmenter, parser, config) for inst in dataset]


def parse_whole(dataset: Sequence, parser, beam: int) -> list[Optional[MrNode]]:
    return [r.mr for r in parser.parse_batch([inst.utterance for inst in dataset], beam=beam)]


@dataclass
class TrainingResult:
    vocab: Vocabulary
    preliminary: Seq2SeqParser
    parser: Seq2SeqParser
    segmenter: SpanSegmenter
    signals: list[list[PseudoSignal]]
    report: dict


def _round(xs: Sequence[float]) -> list[float]:
    return [round(float(x), 6) for x in xs]


def _scores(predictions, dev, spans=None) -> dict:
    rep = evaluate(predictions, dev, predicted_spans=spans).to_json()
    rep.pop("traces_path")
    return rep


def run_training(train: Sequence[Instance], dev: Sequence[Instance], config: Config) -> TrainingResult:
    """Pre-train, derive pseudo supervision, train the segmenter, fine-tune.

    The report holds only quantities that are deterministic given the seed.
    """
    if not train:
        raise ValueError("empty training set")
    cfg = config
    vocab = build_vocab(train, cfg.min_count)
    pairs = [(inst.utterance, inst.mr) for inst in train]

    log.info("pre-training the parser on %d pairs", len(pairs))
    preliminary = build_parser(vocab, cfg)
    pre_hist = train_parser(pairs, preliminary, cfg.stage(cfg.pretrain_epochs, 0),
                              stage="pretrain")

    log.info("deriving pseudo supervision")
    chains = derive_signals(train, preliminary, cfg.derive_beam, cfg.recurse,
                            ParseCache(preliminary, cfg.derive_beam))
    signals, derived = collect(chains)
    whole = sum(s.is_whole(len(t)) for t, s in signals)

    log.info("training the segmenter on %d signals", len(signals))
    segmenter = build_segmenter(vocab, cfg.replace(seed=cfg.seed + 1))
    seg_hist = train_segmenter(signals, segmenter, cfg.stage(cfg.seg_epochs, 1),
                               stage="segmenter")

    log.info("fine-tuning the parser on %d + %d pairs", len(pairs), len(derived))
    parser = copy.deepcopy(preliminary)
    seen = {(tuple(t), m) for t, m in pairs}
    union = list(pairs) + [(t, m) for t, m in derived if (tuple(t), m) not in seen]
    ft_hist = train_parser(union, parser, cfg.stage(cfg.finetune_epochs, 2),
                           stage="finetune")

    report = {
        "vocab_hash": vocab.fingerprint(),
        "sizes": {"train": len(train), "dev": len(dev), "signals": len(signals),
                  "derived": len(derived), "finetune_pairs": len(union),
                  "whole_fraction": round(whole / len(signals), 6)},
        "losses": {"pretrain": _round(pre_hist), "segmenter": _round(seg_hist),
                   "finetune": _round(ft_hist)},
        "dev": {},
    }
    if dev:
        log.info("evaluating on %d dev instances", len(dev))
        dev_eval = report["dev"]
        dev_eval["baseline"] = _scores(parse_whole(dev, preliminary, cfg.beam), dev)
        if cfg.eval_dev_each_stage:
            traces = infer_all(dev, segmenter, preliminary, cfg)
            dev_eval["pde_preliminary"] = _scores([t.final_mr for t in traces], dev,
                                                  [t.spans for t in traces])
            dev_eval["only_da"] = _scores(parse_whole(dev, parser, cfg.beam), dev)
        traces = infer_all(dev, segmenter, parser, cfg)
        dev_eval["pde"] = _scores([t.final_mr for t in traces], dev, [t.spans for t in traces])
        dev_eval["pde"]["stop_reasons"] = {r: sum(t.stop_reason == r for t in traces)
                                           for r in STOP_REASONS}
    return TrainingResult(vocab, preliminary, parser, segmenter, chains, report)
