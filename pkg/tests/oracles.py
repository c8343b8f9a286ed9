"""Independent reference implementations used as test oracles.

Nothing here calls the package's tree algebra; the signature table is re-read
from the shipped data file with the csv module.
"""

import csv
import random
from importlib import resources

from segparse.funql import DEFAULT_SIGNATURES, MrNode, fn, lit

# Running example used across tests: "how many rivers run through the states
# bordering colorado" and its three-level decomposition.
TABLE_M = "count(river(traverse_2(state(next_to_2(stateid('colorado'))))))"
TABLE_M1 = "state(next_to_2(stateid('colorado')))"
TABLE_M2 = "river(traverse_2($state$))"
TABLE_M3 = "count($river$)"
TABLE_Q = "how many rivers run through the states bordering colorado".split()


_MARKERS = {"$state$": "state_0", "$city$": "city_0", "$river$": "river_0",
            "$place$": "place_0", "$mountain$": "mountain_0", "$lake$": "lake_0"}
_LEAVES = {"$state$": [lambda r: fn("stateid", lit(r.choice(["texas", "ohio", "new york"]))),
                       lambda r: lit("state_" + str(r.randint(0, 2)))],
           "$city$": [lambda r: fn("cityid", lit(r.choice(["austin", "dallas"])), lit("_")),
                      lambda r: lit("city_0")],
           "$river$": [lambda r: fn("riverid", lit("mississippi")), lambda r: lit("river_1")],
           "$place$": [lambda r: fn("placeid", lit("mount whitney")), lambda r: fn("all")],
           "$mountain$": [lambda r: lit("mountain_0")],
           "$lake$": [lambda r: lit("lake_0")],
           "$num$": [lambda r: lit(str(r.randint(0, 9000)))]}


def random_mr(rng: random.Random, max_nodes: int = 12, want: str | None = None) -> MrNode:
    """Random well-typed GEO tree with at most ``max_nodes`` nodes."""
    sigs = [s for s in DEFAULT_SIGNATURES.values()
            if "lit" not in s.arg_types and s.arity > 0]

    def returns(sig, arg_types):
        return arg_types[0] if sig.return_type == "=" else sig.return_type

    def build(budget: int, target: str | None) -> MrNode:
        if budget >= 2 and rng.random() < 0.9:
            options = []
            for s in sigs:
                if s.arity > budget - 1:
                    continue
                if target is None or s.return_type in (target, "="):
                    options.append(s)
            if options:
                s = rng.choice(options)
                kids = []
                left = budget - 1
                for i, t in enumerate(s.arg_types):
                    if t == "*":
                        t = target if (i == 0 and s.return_type == "=" and target) else None
                    share = max(1, left // (s.arity - i))
                    kid = build(share, t)
                    left -= kid.size()
                    kids.append(kid)
                node = fn(s.name, *kids)
                if target is None or _type(node) == target:
                    return node
        tags = [target] if target else list(_LEAVES)
        tag = rng.choice(tags)
        leaf = rng.choice(_LEAVES[tag])(rng)
        if leaf.size() > budget:
            return lit(_MARKERS.get(tag, "1")) if tag != "$num$" else lit("1")
        return leaf

    while True:
        m = build(max_nodes, want)
        if m.size() <= max_nodes and _type(m) is not None:
            return m


def _type(m):
    return oracle_type(m)


# --------------------------------------------------------------------------
# tree algebra oracles

def signature_rows():
    text = resources.files("segparse").joinpath("data/geo_signatures.tsv").read_text()
    rows = {}
    for row in csv.reader(text.splitlines(), delimiter="\t"):
        if not row or row[0].startswith("#"):
            continue
        name, args, ret = row
        rows[name] = ([a for a in args.split(",") if a], ret)
    return rows


_ROWS = signature_rows()
_MARKER_TAG = {"state": "$state$", "city": "$city$", "river": "$river$", "place": "$place$",
               "mountain": "$mountain$", "lake": "$lake$", "country": "$place$", "num": "$num$"}


def oracle_type(m):
    """Reference denotation type, or None when ``m`` is ill-typed."""
    if m.kind == "placeholder":
        return m.name
    if m.kind == "literal":
        prefix, _, digits = m.name.rpartition("_")
        if prefix in _MARKER_TAG and digits.isdigit():
            return _MARKER_TAG[prefix]
        try:
            float(m.name)
            return "$num$"
        except ValueError:
            return None
    if m.name not in _ROWS:
        return None
    args, ret = _ROWS[m.name]
    if len(args) != len(m.children):
        return None
    got = []
    for want, child in zip(args, m.children):
        if want == "lit":
            if child.kind != "literal":
                return None
            got.append(None)
            continue
        t = oracle_type(child)
        if t is None or (want != "*" and t != want):
            return None
        got.append(t)
    if ret == "=":
        return got[0]
    return ret


def all_subtrees(m):
    """Pre-order list of (path, subtree) built with an explicit stack."""
    out, stack = [], [((), m)]
    while stack:
        path, node = stack.pop()
        out.append((path, node))
        for i in reversed(range(len(node.children))):
            stack.append((path + (i,), node.children[i]))
    return out


def oracle_match(part, node):
    if part.kind == "placeholder":
        if node.kind == "placeholder":
            return part.name == node.name
        return oracle_type(node) == part.name
    return (part.kind == node.kind and part.name == node.name
            and len(part.children) == len(node.children)
            and all(oracle_match(p, n) for p, n in zip(part.children, node.children)))


def oracle_part_of(part, whole):
    return any(oracle_match(part, node) for _, node in all_subtrees(whole))


def rebuild(m, path, replacement):
    if not path:
        return replacement
    kids = list(m.children)
    kids[path[0]] = rebuild(kids[path[0]], path[1:], replacement)
    return MrNode(m.kind, m.name, tuple(kids))


def oracle_substitute(whole, target, replacement):
    for path, node in all_subtrees(whole):
        if node == target:
            return rebuild(whole, path, replacement)
    return None


def oracle_compose(partials):
    """Chain composition: each partial fills the leftmost slot of its type in the next."""
    acc = partials[0]
    for p in partials[1:]:
        tag = oracle_type(acc)
        slot = next(path for path, n in all_subtrees(p) if n.kind == "placeholder" and n.name == tag)
        acc = rebuild(p, slot, acc)
    return acc


# --------------------------------------------------------------------------
# span selection oracles

def oracle_pair_argmax(p_start, p_end):
    """Exhaustive scan over i < j (1-based); ties go to smaller i then smaller j."""
    m = len(p_start)
    if m < 2:
        return (1, max(m, 1))
    best, arg = None, None
    for i in range(1, m + 1):
        for j in range(i + 1, m + 1):
            score = float(p_start[i - 1]) * float(p_end[j - 1])
            if best is None or score > best:
                best, arg = score, (i, j)
    return arg
