"""Hierarchical and flat causal graphs.

A :class:`HierGraph` holds unit and subunit variables joined by directed
edges; the inner plate is implicit in the ``level`` of each variable.
:class:`FlatGraph` is the ordinary causal DAG that the transform passes
produce, and :class:`Admg` is its latent projection onto observed nodes.

Hierarchical graphs are keyed by integer ids assigned in declaration order.
Flat graphs are keyed by node name, since their nodes (Q variables) are
synthesised and only ever referred to by name.
"""

from __future__ import annotations

import enum
import heapq
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

__all__ = [
    "Level",
    "Variable",
    "HierGraph",
    "FlatGraph",
    "Admg",
    "GraphError",
    "CycleDetected",
    "DuplicateName",
    "UnknownVariable",
    "NotSubunit",
    "IllegalMarginalization",
    "MarginalizationRule",
    "MarginalizationCheck",
    "ValidationReport",
    "validate_hcm",
    "direct_subunit_ancestors",
    "direct_unit_descendants",
    "can_marginalize",
    "can_marginalize_flat",
    "marginalize_endogenous",
    "latent_projection",
    "bidirected_path_exists",
    "topological_sort",
]


class Level(str, enum.Enum):
    UNIT = "unit"
    SUBUNIT = "subunit"


class GraphError(Exception):
    """Base class for structural errors."""


class CycleDetected(GraphError):
    def __init__(self, path: list[str]):
        self.path = path
        super().__init__("cycle detected: " + " -> ".join(path))


class DuplicateName(GraphError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"duplicate variable name {name!r}")


class UnknownVariable(GraphError, KeyError):
    def __init__(self, ref):
        self.ref = ref
        super().__init__(f"unknown variable {ref!r}")

    def __str__(self) -> str:
        return self.args[0]


class NotSubunit(GraphError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"{name!r} is not a subunit variable")


class MarginalizationRule(str, enum.Enum):
    OK = "ok"
    CONFOUNDER = "confounder"
    INTERFERER = "interferer"


class IllegalMarginalization(GraphError):
    def __init__(self, name: str, reason: MarginalizationRule):
        self.name = name
        self.reason = reason
        super().__init__(f"cannot marginalize {name!r}: {reason.value}")


@dataclass(frozen=True)
class Variable:
    id: int
    name: str
    level: Level
    observed: bool = True

    @property
    def is_unit(self) -> bool:
        return self.level is Level.UNIT

    @property
    def is_subunit(self) -> bool:
        return self.level is Level.SUBUNIT


def topological_sort(nodes: Iterable, edges: Iterable[tuple]) -> list:
    """Kahn's algorithm with ties broken by the order of ``nodes``.

    Raises :class:`CycleDetected` with one offending cycle when the graph is
    not acyclic.
    """
    nodes = list(nodes)
    rank = {v: i for i, v in enumerate(nodes)}
    indeg = {v: 0 for v in nodes}
    children: dict = {v: [] for v in nodes}
    for a, b in edges:
        children[a].append(b)
        indeg[b] += 1
    heap = [rank[v] for v in nodes if indeg[v] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        v = nodes[heapq.heappop(heap)]
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                heapq.heappush(heap, rank[c])
    if len(order) != len(nodes):
        raise CycleDetected([str(v) for v in _find_cycle(nodes, children)])
    return order


def _find_cycle(nodes, children) -> list:
    color = {v: 0 for v in nodes}
    stack: list = []

    def visit(v):
        color[v] = 1
        stack.append(v)
        for c in children[v]:
            if color[c] == 1:
                return stack[stack.index(c):] + [c]
            if color[c] == 0:
                found = visit(c)
                if found:
                    return found
        stack.pop()
        color[v] = 2
        return None

    for v in nodes:
        if color[v] == 0:
            found = visit(v)
            if found:
                return found
    return []


def _reach(start: Iterable, step: Mapping) -> set:
    seen: set = set()
    todo = list(start)
    while todo:
        v = todo.pop()
        for w in step.get(v, ()):
            if w not in seen:
                seen.add(w)
                todo.append(w)
    return seen


@dataclass(frozen=True)
class HierGraph:
    """Variables with levels and observability plus a directed edge set.

    Construction does not validate; call :func:`validate_hcm` (the parser
    does so for you).
    """

    name: str = "model"
    variables: tuple[Variable, ...] = ()
    edges: frozenset[tuple[int, int]] = frozenset()

    @classmethod
    def build(
        cls,
        variables: Iterable[tuple[str, Level | str, bool]],
        edges: Iterable[tuple[str, str]] = (),
        name: str = "model",
    ) -> "HierGraph":
        """Build from ``(name, level, observed)`` triples and name pairs."""
        vs = []
        ids: dict[str, int] = {}
        for i, (vname, level, observed) in enumerate(variables):
            if vname in ids:
                raise DuplicateName(vname)
            ids[vname] = i
            vs.append(Variable(i, vname, Level(level), bool(observed)))
        es = set()
        for a, b in edges:
            for end in (a, b):
                if end not in ids:
                    raise UnknownVariable(end)
            es.add((ids[a], ids[b]))
        return cls(name, tuple(vs), frozenset(es))

    # lookups

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {v.id: v for v in self.variables})
        object.__setattr__(self, "_by_name", {v.name: v for v in self.variables})
        pa: dict[int, list[int]] = {v.id: [] for v in self.variables}
        ch: dict[int, list[int]] = {v.id: [] for v in self.variables}
        pos = {v.id: i for i, v in enumerate(self.variables)}
        for a, b in sorted(self.edges, key=lambda e: (pos.get(e[0], -1), pos.get(e[1], -1))):
            if a in pa and b in pa:
                ch[a].append(b)
                pa[b].append(a)
        object.__setattr__(self, "_pa", pa)
        object.__setattr__(self, "_ch", ch)

    def var(self, ref: int | str) -> Variable:
        table = self._by_name if isinstance(ref, str) else self._by_id
        try:
            return table[ref]
        except KeyError:
            raise UnknownVariable(ref) from None

    def id_of(self, ref: int | str) -> int:
        return self.var(ref).id

    def name_of(self, vid: int) -> str:
        return self.var(vid).name

    def names(self, ids: Iterable[int]) -> set[str]:
        return {self.name_of(i) for i in ids}

    def __contains__(self, ref) -> bool:
        return ref in (self._by_name if isinstance(ref, str) else self._by_id)

    def parents(self, ref) -> list[int]:
        return list(self._pa[self.id_of(ref)])

    def children(self, ref) -> list[int]:
        return list(self._ch[self.id_of(ref)])

    def subunit_parents(self, ref) -> list[int]:
        return [p for p in self.parents(ref) if self.var(p).is_subunit]

    def unit_parents(self, ref) -> list[int]:
        return [p for p in self.parents(ref) if self.var(p).is_unit]

    def ancestors(self, ref) -> set[int]:
        return _reach([self.id_of(ref)], self._pa)

    def descendants(self, ref) -> set[int]:
        return _reach([self.id_of(ref)], self._ch)

    @property
    def subunit_ids(self) -> list[int]:
        return [v.id for v in self.variables if v.is_subunit]

    @property
    def unit_ids(self) -> list[int]:
        return [v.id for v in self.variables if v.is_unit]

    def topological_order(self) -> list[int]:
        return topological_sort([v.id for v in self.variables], self.edges)

    def subgraph(self, keep: Iterable[int]) -> "HierGraph":
        keep = set(keep)
        vs = tuple(v for v in self.variables if v.id in keep)
        es = frozenset((a, b) for a, b in self.edges if a in keep and b in keep)
        return HierGraph(self.name, vs, es)

    def structure(self) -> tuple:
        """Name-level structure, independent of ids; used for equality tests."""
        vs = tuple((v.name, v.level.value, v.observed) for v in self.variables)
        es = frozenset((self.name_of(a), self.name_of(b)) for a, b in self.edges)
        return (self.name, vs, es)


@dataclass
class ValidationReport:
    valid: bool
    violations: list[GraphError] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.valid


def validate_hcm(graph: HierGraph, strict: bool = True) -> ValidationReport:
    """Check that ``graph`` is a DAG with unique names and no self-edges.

    Every combination of unit/subunit endpoints is allowed on an edge. With
    ``strict`` the first violation is raised, otherwise all are reported.
    """
    problems: list[GraphError] = []
    seen: set[str] = set()
    for v in graph.variables:
        if v.name in seen:
            problems.append(DuplicateName(v.name))
        seen.add(v.name)
    ids = {v.id for v in graph.variables}
    for a, b in sorted(graph.edges):
        if a not in ids or b not in ids:
            problems.append(UnknownVariable(a if a not in ids else b))
        elif a == b:
            problems.append(CycleDetected([graph.name_of(a), graph.name_of(a)]))
    if not problems:
        try:
            graph.topological_order()
        except CycleDetected as exc:
            problems.append(CycleDetected([graph.name_of(int(i)) for i in exc.path]))
    if strict and problems:
        raise problems[0]
    return ValidationReport(not problems, problems)


def direct_subunit_ancestors(graph: HierGraph, w) -> set[int]:
    """Subunit variables with a directed path into ``w`` through subunit nodes only."""
    wid = graph.id_of(w)
    found: set[int] = set()
    todo = [p for p in graph.parents(wid) if graph.var(p).is_subunit]
    while todo:
        v = todo.pop()
        if v in found:
            continue
        found.add(v)
        todo.extend(p for p in graph.parents(v) if graph.var(p).is_subunit)
    return found


def direct_unit_descendants(graph: HierGraph, v) -> set[int]:
    """Unit variables that have ``v`` among their direct subunit ancestors."""
    var = graph.var(v)
    if not var.is_subunit:
        raise NotSubunit(var.name)
    out: set[int] = set()
    todo, seen = [var.id], {var.id}
    while todo:
        x = todo.pop()
        for c in graph.children(x):
            if graph.var(c).is_unit:
                out.add(c)
            elif c not in seen:
                seen.add(c)
                todo.append(c)
    return out


@dataclass(frozen=True)
class MarginalizationCheck:
    allowed: bool
    reason: MarginalizationRule

    def __bool__(self) -> bool:
        return self.allowed


def can_marginalize(graph: HierGraph, v) -> MarginalizationCheck:
    """Legality of marginalizing ``v`` out of an HCM.

    Two or more children make ``v`` a confounder. A unit variable with a
    subunit child and a subunit parent is an interferer and can never go.
    """
    var = graph.var(v)
    children = graph.children(var.id)
    if len(children) > 1:
        return MarginalizationCheck(False, MarginalizationRule.CONFOUNDER)
    if var.is_unit and children and graph.var(children[0]).is_subunit:
        if graph.subunit_parents(var.id):
            return MarginalizationCheck(False, MarginalizationRule.INTERFERER)
    return MarginalizationCheck(True, MarginalizationRule.OK)


def marginalize_endogenous(graph: HierGraph, v) -> HierGraph:
    """Remove ``v`` and wire each of its parents to its child."""
    var = graph.var(v)
    check = can_marginalize(graph, var.id)
    if not check:
        raise IllegalMarginalization(var.name, check.reason)
    children = graph.children(var.id)
    edges = {(a, b) for a, b in graph.edges if var.id not in (a, b)}
    for c in children:
        for p in graph.parents(var.id):
            edges.add((p, c))
    variables = tuple(x for x in graph.variables if x.id != var.id)
    return HierGraph(graph.name, variables, frozenset(edges))


@dataclass(frozen=True)
class FlatGraph:
    """A causal DAG keyed by node name.

    ``deterministic`` lists nodes whose mechanism is a fixed function of
    their parents (the double arrows of augmented models).
    """

    nodes: tuple[str, ...] = ()
    edges: frozenset[tuple[str, str]] = frozenset()
    hidden: frozenset[str] = frozenset()
    deterministic: frozenset[str] = frozenset()

    def __post_init__(self):
        known = set(self.nodes)
        if len(known) != len(self.nodes):
            dup = next(n for n in self.nodes if list(self.nodes).count(n) > 1)
            raise DuplicateName(dup)
        for a, b in self.edges:
            for end in (a, b):
                if end not in known:
                    raise UnknownVariable(end)
        pa: dict[str, list[str]] = {n: [] for n in self.nodes}
        ch: dict[str, list[str]] = {n: [] for n in self.nodes}
        pos = {n: i for i, n in enumerate(self.nodes)}
        for a, b in sorted(self.edges, key=lambda e: (pos[e[0]], pos[e[1]])):
            pa[b].append(a)
            ch[a].append(b)
        object.__setattr__(self, "_pa", pa)
        object.__setattr__(self, "_ch", ch)
        for d in self.deterministic:
            if d not in known:
                raise UnknownVariable(d)

    def parents(self, n: str) -> list[str]:
        if n not in self._pa:
            raise UnknownVariable(n)
        return list(self._pa[n])

    def children(self, n: str) -> list[str]:
        if n not in self._ch:
            raise UnknownVariable(n)
        return list(self._ch[n])

    def observed(self) -> list[str]:
        return [n for n in self.nodes if n not in self.hidden]

    def is_observed(self, n: str) -> bool:
        return n not in self.hidden

    def ancestors(self, n: str) -> set[str]:
        return _reach([n], self._pa)

    def descendants(self, n: str) -> set[str]:
        return _reach([n], self._ch)

    def topological_order(self) -> list[str]:
        return topological_sort(self.nodes, self.edges)

    def validate(self) -> None:
        self.topological_order()
        for d in self.deterministic:
            if not self._pa[d]:
                raise GraphError(f"deterministic node {d!r} has no parents")

    def replace(self, **changes) -> "FlatGraph":
        fields = dict(nodes=self.nodes, edges=self.edges, hidden=self.hidden,
                      deterministic=self.deterministic)
        fields.update(changes)
        fields["nodes"] = tuple(fields["nodes"])
        for k in ("edges", "hidden", "deterministic"):
            fields[k] = frozenset(fields[k])
        return FlatGraph(**fields)

    def without(self, n: str) -> "FlatGraph":
        return self.replace(
            nodes=[x for x in self.nodes if x != n],
            edges={e for e in self.edges if n not in e},
            hidden=self.hidden - {n},
            deterministic=self.deterministic - {n},
        )

    def structure(self) -> tuple:
        """Order-free signature for isomorphism-by-name comparisons."""
        return (
            frozenset(self.nodes),
            self.edges,
            self.hidden,
            self.deterministic,
        )


def can_marginalize_flat(flat: FlatGraph, n: str) -> MarginalizationCheck:
    """In a flat model a variable can be marginalized iff it has at most one child."""
    if len(flat.children(n)) > 1:
        return MarginalizationCheck(False, MarginalizationRule.CONFOUNDER)
    return MarginalizationCheck(True, MarginalizationRule.OK)


@dataclass(frozen=True)
class Admg:
    """Acyclic directed mixed graph over observed nodes.

    ``nodes`` is kept in a topological order of the directed part.
    Bidirected edges are stored as two-element frozensets.
    """

    nodes: tuple[str, ...]
    directed: frozenset[tuple[str, str]]
    bidirected: frozenset[frozenset[str]]
    deterministic: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def parents(self, n: str) -> list[str]:
        return [a for a in self.nodes if (a, n) in self.directed]

    def children(self, n: str) -> list[str]:
        return [b for b in self.nodes if (n, b) in self.directed]

    def siblings(self, n: str) -> list[str]:
        return [b for b in self.nodes if b != n and frozenset((n, b)) in self.bidirected]

    def subgraph(self, keep: Iterable[str]) -> "Admg":
        keep = set(keep)
        return Admg(
            tuple(n for n in self.nodes if n in keep),
            frozenset(e for e in self.directed if e[0] in keep and e[1] in keep),
            frozenset(e for e in self.bidirected if e <= keep),
            {k: v for k, v in self.deterministic.items() if k in keep},
        )

    def ancestors_of(self, targets: Iterable[str]) -> set[str]:
        """Ancestors including the targets themselves."""
        pa: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in self.directed:
            pa[b].append(a)
        targets = set(targets)
        return targets | _reach(targets, pa)

    def districts(self) -> list[frozenset[str]]:
        """C-components, each listed in node order of its first member."""
        out = []
        seen: set[str] = set()
        for n in self.nodes:
            if n in seen:
                continue
            comp = {n}
            todo = [n]
            while todo:
                x = todo.pop()
                for s in self.siblings(x):
                    if s not in comp:
                        comp.add(s)
                        todo.append(s)
            seen |= comp
            out.append(frozenset(comp))
        return out

    def district_of(self, n: str) -> frozenset[str]:
        for d in self.districts():
            if n in d:
                return d
        raise UnknownVariable(n)


def latent_projection(flat: FlatGraph) -> Admg:
    """Project hidden nodes out of ``flat``.

    ``a -> b`` survives when some directed path from a to b has only hidden
    intermediates; ``a <-> b`` appears when a hidden node reaches both along
    hidden-only paths.
    """
    order = flat.topological_order()
    hidden = flat.hidden

    def observed_reach(start: str) -> set[str]:
        out, seen, todo = set(), set(), [start]
        while todo:
            x = todo.pop()
            for c in flat.children(x):
                if c in hidden:
                    if c not in seen:
                        seen.add(c)
                        todo.append(c)
                else:
                    out.add(c)
        return out

    obs = [n for n in order if n not in hidden]
    directed = {(a, b) for a in obs for b in observed_reach(a)}
    bidirected = set()
    for h in order:
        if h not in hidden:
            continue
        reached = sorted(observed_reach(h), key=order.index)
        for i, a in enumerate(reached):
            for b in reached[i + 1:]:
                bidirected.add(frozenset((a, b)))
    det = {n: tuple(flat.parents(n)) for n in flat.deterministic if n not in hidden}
    return Admg(tuple(obs), frozenset(directed), frozenset(bidirected), det)


def bidirected_path_exists(admg: Admg, a: str, targets: Iterable[str]) -> bool:
    """True iff a path of bidirected edges joins ``a`` to some target."""
    targets = set(targets)
    for n in {a} | targets:
        if n not in admg.nodes:
            raise UnknownVariable(n)
    comp = admg.district_of(a)
    return any(t in comp and t != a for t in targets)
