"""Command line: gen-synth, train, derive-pseudo, infer, eval, compare.

Exit status is 0 on success, 1 for invalid input and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import torch

from . import synth
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, dump_config, load_config
from .dataset import from_synth, load_dataset, read_jsonl, save_dataset
from .errors import DivergenceError, SegparseError
from .evaluate import evaluate
from .funql import parse_mr, serialize_mr
from .pipeline import infer_all, parse_whole, run_training
from .pseudo import derive_signals, save_signals
from .spans import Span

log = logging.getLogger("segparse")


class UsageError(Exception):
    pass


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read_rules(path) -> list[synth.GrammarRule]:
    rules = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected result<TAB>surface<TAB>mr")
            rules.append(synth.GrammarRule.from_strings(*parts))
    return rules


def cmd_gen_synth(args) -> int:
    rules = _read_rules(args.rules) if args.rules else synth.default_rules()
    raw = synth.generate(rules, args.n, args.depth, args.seed)
    if args.held_out is None:
        save_dataset([from_synth(i) for i in raw], args.out)
        print(f"wrote {len(raw)} instances to {args.out}")
        return 0
    mode = "standard" if args.standard else "compositional"
    train, test = synth.compositional_split(raw, args.held_out, args.seed, mode=mode)
    data = [from_synth(i, "train") for i in train] + [from_synth(i, "test") for i in test]
    save_dataset(data, args.out)
    if args.train_out:
        save_dataset(data[:len(train)], args.train_out)
    if args.test_out:
        save_dataset(data[len(train):], args.test_out)
    print(f"wrote {len(train)} train and {len(test)} test instances to {args.out}")
    return 0


def _load(path, cfg: Config):
    return load_dataset(path, tokenizer=cfg.tokenizer, anonymize=cfg.anonymize_mr)


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else Config()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.train:
        cfg = cfg.replace(train_path=args.train)
    if args.dev:
        cfg = cfg.replace(dev_path=args.dev)
    if args.out_dir:
        cfg = cfg.replace(out_dir=args.out_dir)
    if not cfg.train_path or not cfg.out_dir:
        raise UsageError("train: train_path and out_dir are required")
    torch.manual_seed(cfg.seed)
    data = _load(cfg.train_path, cfg)
    if cfg.dev_path:
        train, dev = data, _load(cfg.dev_path, cfg)
    else:
        # a single labelled file from gen-synth --held-out
        train = [i for i in data if i.label != "test"]
        dev = [i for i in data if i.label == "test"]
    result = run_training(train, dev, cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.preliminary, out, "preliminary")
    save_checkpoint(result.parser, out, "parser")
    save_checkpoint(result.segmenter, out, "segmenter")
    save_signals(result.signals, out / "pseudo.jsonl")
    (out / "config.txt").write_text(dump_config(cfg))
    (out / "report.json").write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n")
    print(f"wrote checkpoints and report to {out}")
    return 0


def cmd_derive(args) -> int:
    cfg = Config()
    data = _load(args.data, cfg)
    parser = load_checkpoint(args.checkpoint, args.kind)
    chains = derive_signals(data, parser, args.beam, not args.no_recurse)
    save_signals(chains, args.out)
    n = sum(len(c) for c in chains)
    print(f"wrote {n} signals for {len(chains)} instances to {args.out}")
    return 0


def cmd_infer(args) -> int:
    cfg = Config(beam=args.beam, max_iters=args.max_iters)
    data = _load(args.data, cfg)
    parser = load_checkpoint(args.checkpoint, args.kind)
    if args.whole:
        preds = parse_whole(data, parser, cfg.beam)
        rows = [{"mr": serialize_mr(m) if m is not None else None} for m in preds]
    else:
        segmenter = load_checkpoint(args.checkpoint, "segmenter", parser.vocab)
        traces = infer_all(data, segmenter, parser, cfg)
        rows = [{"mr": t.to_json()["final_mr"], "spans": [s.to_list() for s in t.spans]}
                for t in traces]
        if args.traces:
            with open(args.traces, "w", encoding="utf-8") as f:
                for i, t in enumerate(traces):
                    f.write(json.dumps({"index": i, **t.to_json()}, sort_keys=True) + "\n")
    with open(args.out, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} predictions to {args.out}")
    return 0


def cmd_eval(args) -> int:
    gold = load_dataset(args.gold)
    rows = read_jsonl(args.predictions)
    preds = [parse_mr(r["mr"]) if r.get("mr") else None for r in rows]
    spans = None
    if rows and all("spans" in r for r in rows):
        spans = [[Span(*s) for s in r["spans"]] for r in rows]
    report = evaluate(preds, gold, predicted_spans=spans, traces_path=args.traces)
    text = json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def accuracy_table(report: dict) -> dict[str, float]:
    """Flatten an eval report or a training report into ``name -> accuracy``."""
    if "exact_match_accuracy" in report:
        systems = {"": report}
    elif "dev" in report:
        systems = {f"{k}/": v for k, v in report["dev"].items()}
    else:
        raise ValueError("not an evaluation or training report")
    table = {}
    for prefix, rep in systems.items():
        table[f"{prefix}overall"] = rep["exact_match_accuracy"]
        for split, acc in rep.get("by_split", {}).items():
            table[f"{prefix}split={split}"] = acc
        for depth, acc in rep.get("by_depth", {}).items():
            table[f"{prefix}depth={depth}"] = acc
    return table


def compare_reports(a: dict, b: dict) -> list[dict]:
    ta, tb = accuracy_table(a), accuracy_table(b)
    keys = list(ta) + [k for k in tb if k not in ta]
    rows = []
    for k in keys:
        va, vb = ta.get(k), tb.get(k)
        delta = vb - va if va is not None and vb is not None else None
        rows.append({"metric": k, "a": va, "b": vb, "delta": delta})
    return rows


def format_table(rows: Sequence[dict], name_a: str, name_b: str) -> str:
    def cell(v):
        return f"{v:>10.4f}" if v is not None else f"{'-':>10}"
    width = max([len("metric")] + [len(r["metric"]) for r in rows])
    head = f"{'metric':<{width}}  {name_a[:10]:>10}  {name_b[:10]:>10}  {'delta':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r['metric']:<{width}}  {cell(r['a'])}  {cell(r['b'])}  {cell(r['delta'])}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    a = json.loads(Path(args.a).read_text())
    b = json.loads(Path(args.b).read_text())
    rows = compare_reports(a, b)
    print(format_table(rows, Path(args.a).stem, Path(args.b).stem))
    if args.out:
        Path(args.out).write_text(json.dumps({"a": args.a, "b": args.b, "rows": rows},
                                             indent=2) + "\n")
    return 0


def build_arg_parser() -> argparse.ArgumentParser:
    p = _ArgumentParser(prog="segparse", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_ArgumentParser)

    g = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    g.add_argument("--rules", help="rule file: result<TAB>surface<TAB>mr per line")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--depth", type=int, default=3)
    g.add_argument("--out", required=True)
    g.add_argument("--held-out", type=float, default=None,
                   help="fraction of skeletons to hold out; labels instances train/test")
    g.add_argument("--standard", action="store_true", help="utterance-disjoint split only")
    g.add_argument("--train-out")
    g.add_argument("--test-out")
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="run all training stages")
    t.add_argument("--config")
    t.add_argument("--train")
    t.add_argument("--dev")
    t.add_argument("--out-dir")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("derive-pseudo", help="derive pseudo supervision with a parser")
    d.add_argument("--data", required=True)
    d.add_argument("--checkpoint", required=True, help="checkpoint directory")
    d.add_argument("--kind", default="preliminary")
    d.add_argument("--beam", type=int, default=1)
    d.add_argument("--no-recurse", action="store_true")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_derive)

    i = sub.add_parser("infer", help="parse a dataset")
    i.add_argument("--data", required=True)
    i.add_argument("--checkpoint", required=True, help="checkpoint directory")
    i.add_argument("--kind", default="parser")
    i.add_argument("--beam", type=int, default=5)
    i.add_argument("--max-iters", type=int, default=8)
    i.add_argument("--whole", action="store_true", help="parse without segmentation")
    i.add_argument("--traces")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against gold")
    e.add_argument("--predictions", required=True)
    e.add_argument("--gold", required=True)
    e.add_argument("--traces")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="accuracy deltas between two reports")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_arg_parser().parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None:
        torch.manual_seed(args.seed)
    elif args.command == "gen-synth":
        args.seed = 0
    try:
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except DivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SegparseError, ValueError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
