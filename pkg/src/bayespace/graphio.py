"""Line-oriented text serialization for factor graphs.

Format, one record per line ('#' starts a comment):

    VAR <num_vars>
    FACTOR <type> <idx...> <params...>

Built-in types and their fields:

    FACTOR prior  i  mean var
    FACTOR odom   i j  u var
    FACTOR range  i j  z var offset
    FACTOR stereo i  z f b var

Additional types may be registered with :func:`register_factor_type` and are
serialized under their registered id.
"""

from __future__ import annotations

from typing import Callable, Dict, Sequence, Tuple

from .gvi import Factor, FactorGraph, odom_factor, prior_factor, range_factor, stereo_factor

_Builder = Callable[[Sequence[int], Sequence[float]], Factor]

_REGISTRY: Dict[str, Tuple[int, int, _Builder]] = {}


def register_factor_type(kind: str, arity: int, nparams: int, builder: _Builder):
    """Register a factor type id for text round-tripping."""
    if " " in kind:
        raise ValueError("factor type ids cannot contain spaces")
    _REGISTRY[kind] = (arity, nparams, builder)


register_factor_type("prior", 1, 2, lambda idx, p: prior_factor(idx[0], *p))
register_factor_type("odom", 2, 2, lambda idx, p: odom_factor(idx[0], idx[1], *p))
register_factor_type("range", 2, 3, lambda idx, p: range_factor(idx[0], idx[1], *p))
register_factor_type("stereo", 1, 4, lambda idx, p: stereo_factor(idx[0], *p))


def dumps_graph(graph: FactorGraph) -> str:
    lines = [f"VAR {graph.num_vars}"]
    for f in graph.factors:
        if f.kind not in _REGISTRY:
            raise ValueError(f"factor kind {f.kind!r} is not registered for serialization")
        fields = [str(i) for i in f.indices] + [repr(float(p)) for p in f.params]
        lines.append("FACTOR " + " ".join([f.kind, *fields]))
    return "\n".join(lines) + "\n"


def loads_graph(text: str) -> FactorGraph:
    num_vars = None
    factors = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        tag = tokens[0].upper()
        if tag == "VAR":
            if num_vars is not None:
                raise ValueError(f"line {lineno}: duplicate VAR record")
            num_vars = int(tokens[1])
        elif tag == "FACTOR":
            kind = tokens[1]
            if kind not in _REGISTRY:
                raise ValueError(f"line {lineno}: unknown factor type {kind!r}")
            arity, nparams, builder = _REGISTRY[kind]
            fields = tokens[2:]
            if len(fields) != arity + nparams:
                raise ValueError(f"line {lineno}: {kind} expects {arity} indices and "
                                 f"{nparams} params, got {len(fields)} fields")
            idx = [int(t) for t in fields[:arity]]
            params = [float(t) for t in fields[arity:]]
            factors.append(builder(idx, params))
        else:
            raise ValueError(f"line {lineno}: unknown record {tokens[0]!r}")
    if num_vars is None:
        raise ValueError("missing VAR record")
    return FactorGraph(num_vars=num_vars, factors=tuple(factors))


def dump_graph(graph: FactorGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_graph(graph))


def load_graph(path) -> FactorGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_graph(fh.read())
