"""Graphviz DOT emission.

Hidden nodes are dashed, deterministic edges are drawn as double lines and
the inner plate of a hierarchical graph becomes a dashed cluster.
"""

from __future__ import annotations

from .graph import Admg, FlatGraph, HierGraph

__all__ = ["hier_to_dot", "flat_to_dot", "admg_to_dot", "to_dot"]

_DOUBLE = 'color="black:invis:black"'


def _q(name: str) -> str:
    return '"' + name.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _node(name: str, hidden: bool) -> str:
    style = ', style=dashed' if hidden else ''
    return f"  {_q(name)} [shape=circle{style}];"


def hier_to_dot(graph: HierGraph) -> str:
    lines = [f"digraph {_q(graph.name)} {{"]
    for v in graph.variables:
        if v.is_unit:
            lines.append(_node(v.name, not v.observed))
    lines.append('  subgraph "cluster_subunit" {')
    lines.append('    style=dashed; label="j = 1..m";')
    for v in graph.variables:
        if v.is_subunit:
            lines.append("  " + _node(v.name, not v.observed))
    lines.append("  }")
    pos = {v.id: i for i, v in enumerate(graph.variables)}
    for a, b in sorted(graph.edges, key=lambda e: (pos[e[0]], pos[e[1]])):
        lines.append(f"  {_q(graph.name_of(a))} -> {_q(graph.name_of(b))};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def flat_to_dot(flat: FlatGraph, name: str = "collapsed") -> str:
    lines = [f"digraph {_q(name)} {{"]
    for n in flat.nodes:
        lines.append(_node(n, n in flat.hidden))
    pos = {n: i for i, n in enumerate(flat.nodes)}
    for a, b in sorted(flat.edges, key=lambda e: (pos[e[0]], pos[e[1]])):
        extra = f" [{_DOUBLE}]" if b in flat.deterministic else ""
        lines.append(f"  {_q(a)} -> {_q(b)}{extra};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def admg_to_dot(admg: Admg, name: str = "projection") -> str:
    lines = [f"digraph {_q(name)} {{"]
    for n in admg.nodes:
        lines.append(_node(n, False))
    pos = {n: i for i, n in enumerate(admg.nodes)}
    for a, b in sorted(admg.directed, key=lambda e: (pos[e[0]], pos[e[1]])):
        lines.append(f"  {_q(a)} -> {_q(b)};")
    for pair in sorted(admg.bidirected, key=lambda e: sorted(pos[x] for x in e)):
        a, b = sorted(pair, key=pos.get)
        lines.append(f"  {_q(a)} -> {_q(b)} [dir=both, style=dashed];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_dot(obj, name: str | None = None) -> str:
    if isinstance(obj, HierGraph):
        return hier_to_dot(obj)
    if isinstance(obj, FlatGraph):
        return flat_to_dot(obj, name or "collapsed")
    if isinstance(obj, Admg):
        return admg_to_dot(obj, name or "projection")
    flat = getattr(obj, "flat", None)
    if isinstance(flat, FlatGraph):
        return flat_to_dot(flat, name or "collapsed")
    raise TypeError(f"cannot render {type(obj).__name__} as DOT")
