"""Semantic parsing by repeated segment, parse and reduce steps.

A span segmenter picks the innermost sub-utterance, a sequence-to-sequence
parser maps it to a partial FunQL tree, and the span is replaced by a typed
placeholder until the segmenter selects the whole utterance.  The segmenter is
trained on spans derived from a preliminary parser (pseudo supervision).
"""

from .config import Config, TrainSettings, load_config
from .dataset import Instance, Vocabulary, build_vocab, load_dataset, save_dataset
from .errors import SegparseError
from .evaluate import EvalReport, evaluate
from .funql import (MrNode, compose, denotation_type, is_part_of, parse_mr, serialize_mr,
                    substitute_mr)
from .parser import Seq2SeqParser, train_parser
from .pipeline import InferenceTrace, infer, run_training
from .pseudo import PseudoSignal, best_span, derive_all
from .segmenter import SpanSegmenter, train_segmenter
from .spans import Span, reduce_utterance

__version__ = "0.1.0"
