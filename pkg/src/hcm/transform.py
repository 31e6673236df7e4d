"""Collapse, augment and marginalize passes over hierarchical graphs.

Collapsing replaces every subunit variable ``v`` by the unit-level random
distribution ``Q^{v|pa_S(v)}``. Each unit variable ``w`` reads its subunit
ancestors through one within-unit functional,

    q(x^{pa_S(w)}) = ∫ ∏_{v ∈ da_S(w)} q^{v|pa_S(v)} dx^{da_S(w) \\ pa_S(w)},

which is tracked as a :class:`Functional` (factor set plus integrated set).
Augmentation variables are functionals of the same shape, so deciding which
edges an augmentation can take over is a comparison of factor sets rather
than guesswork on the graph alone.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace

from .dsl import InterventionKind, QuerySpec
from .graph import (
    FlatGraph,
    GraphError,
    HierGraph,
    direct_subunit_ancestors,
)

__all__ = [
    "QKind",
    "QVar",
    "Functional",
    "CollapsedModel",
    "Intervention",
    "InvalidAugmentation",
    "IllegalDrop",
    "LevelViolation",
    "q_name",
    "collapse",
    "augmentation_functional",
    "q_functional_observable",
    "augment",
    "marginalize_aug",
    "droppable_parents",
    "map_intervention",
    "intervention_matches",
]


class InvalidAugmentation(GraphError):
    pass


class IllegalDrop(GraphError):
    pass


class LevelViolation(GraphError):
    pass


class QKind(str, enum.Enum):
    ORIGINAL = "original"
    AUGMENTATION = "augmentation"


@dataclass(frozen=True)
class Functional:
    """∫ ∏_{v ∈ factors} q^{v|pa_S(v)} d x^{integrated}."""

    factors: frozenset[int]
    integrated: frozenset[int] = frozenset()


@dataclass(frozen=True)
class QVar:
    name: str
    subject: frozenset[int]
    conditioning: frozenset[int]
    observed: bool
    kind: QKind
    functional: Functional


def _fmt(graph: HierGraph, ids: Iterable[int]) -> str:
    order = {v.id: i for i, v in enumerate(graph.variables)}
    return ",".join(graph.name_of(i) for i in sorted(ids, key=order.get))


def q_name(graph: HierGraph, subject: Iterable[int], conditioning: Iterable[int] = ()) -> str:
    subject, conditioning = list(subject), list(conditioning)
    if conditioning:
        return f"Q^{{{_fmt(graph, subject)}|{_fmt(graph, conditioning)}}}"
    return f"Q^{{{_fmt(graph, subject)}}}"


@dataclass(frozen=True)
class CollapsedModel:
    """A flat model over unit variables and Q variables.

    ``functionals`` records what each consumer (a unit variable with subunit
    ancestors, or an augmentation variable) reads, and ``providers`` the Q
    nodes it currently reads it through. Marginalized augmentation variables
    are no longer deterministic and drop out of ``providers``.
    """

    hcm: HierGraph
    flat: FlatGraph
    qvars: Mapping[str, QVar]
    functionals: Mapping[str, Functional] = field(default_factory=dict)
    providers: Mapping[str, frozenset[str]] = field(default_factory=dict)
    augmentations: tuple[str, ...] = ()
    marginalized: Mapping[str, frozenset[str]] = field(default_factory=dict)
    log: tuple[str, ...] = ()

    def q_for(self, v) -> str:
        """Name of the original Q variable of subunit variable ``v``."""
        vid = self.hcm.id_of(v)
        return q_name(self.hcm, [vid], self.hcm.subunit_parents(vid))

    def node_functional(self, node: str) -> Functional | None:
        if node in self.qvars:
            return self.qvars[node].functional
        return self.functionals.get(node)

    @property
    def chained(self) -> bool:
        return len(self.augmentations) > 1


def _sub_parents(graph: HierGraph) -> dict[int, set[int]]:
    return {v: set(graph.subunit_parents(v)) for v in graph.subunit_ids}


def collapse(hcm: HierGraph) -> CollapsedModel:
    """Flatten the inner plate into Q variables."""
    nodes: list[str] = []
    hidden: set[str] = set()
    edges: set[tuple[str, str]] = set()
    qvars: dict[str, QVar] = {}
    functionals: dict[str, Functional] = {}
    providers: dict[str, frozenset[str]] = {}
    qname = {}
    for v in hcm.variables:
        if v.is_subunit:
            pa = hcm.subunit_parents(v.id)
            name = q_name(hcm, [v.id], pa)
            qname[v.id] = name
            observed = v.observed and all(hcm.var(p).observed for p in pa)
            qvars[name] = QVar(name, frozenset({v.id}), frozenset(pa), observed,
                               QKind.ORIGINAL, Functional(frozenset({v.id})))
            nodes.append(name)
            if not observed:
                hidden.add(name)
        else:
            nodes.append(v.name)
            if not v.observed:
                hidden.add(v.name)
    for v in hcm.variables:
        target = qname[v.id] if v.is_subunit else v.name
        for u in hcm.unit_parents(v.id):
            edges.add((hcm.name_of(u), target))
        if v.is_unit:
            da = direct_subunit_ancestors(hcm, v.id)
            if da:
                pa_s = set(hcm.subunit_parents(v.id))
                functionals[v.name] = Functional(frozenset(da), frozenset(da - pa_s))
                providers[v.name] = frozenset(qname[s] for s in da)
                for s in da:
                    edges.add((qname[s], v.name))
    flat = FlatGraph(tuple(nodes), frozenset(edges), frozenset(hidden))
    flat.validate()
    return CollapsedModel(hcm, flat, qvars, functionals, providers, log=("collapse",))


def augmentation_functional(hcm: HierGraph, L: Iterable, R: Iterable = ()) -> Functional:
    """Factor and integration sets of Q^{L|R}.

    Factors are L plus the subunit ancestors of L reachable without passing
    through R; R itself is held fixed, which is the truncated factorization
    of p(x^L; do(x^R)) within a unit.
    """
    L = {hcm.id_of(v) for v in L}
    R = {hcm.id_of(v) for v in R}
    for v in L | R:
        if not hcm.var(v).is_subunit:
            raise LevelViolation(f"{hcm.name_of(v)} is not subunit-level")
    if not L:
        raise InvalidAugmentation("empty subject set")
    if L & R:
        raise InvalidAugmentation("subject and conditioning sets overlap")
    pa = _sub_parents(hcm)
    factors = set(L)
    todo = list(L)
    while todo:
        v = todo.pop()
        for p in pa[v]:
            if p not in R and p not in factors:
                factors.add(p)
                todo.append(p)
    return Functional(frozenset(factors), frozenset(factors - L))


def q_functional_observable(hcm: HierGraph, L: Iterable, R: Iterable = ()) -> bool:
    """Whether p(x^L; do(x^R)) is identified from the observed subunit joint.

    Works on the inner plate alone: unit variables and the outer plate are
    ignored and hidden subunit variables stay hidden.
    """
    from .identify import IdFailure, id_algorithm
    from .graph import latent_projection

    L = {hcm.id_of(v) for v in L}
    R = {hcm.id_of(v) for v in R}
    for v in L | R:
        if not hcm.var(v).is_subunit:
            raise LevelViolation(f"{hcm.name_of(v)} is not subunit-level")
    if any(not hcm.var(v).observed for v in L | R):
        return False
    sub = hcm.subgraph(hcm.subunit_ids)
    flat = FlatGraph(
        tuple(v.name for v in sub.variables),
        frozenset((sub.name_of(a), sub.name_of(b)) for a, b in sub.edges),
        frozenset(v.name for v in sub.variables if not v.observed),
    )
    result = id_algorithm(latent_projection(flat), hcm.names(R), hcm.names(L))
    return not isinstance(result, IdFailure)


def _rewrite(model: CollapsedModel, consumer: str, new: str, fn: Functional,
             providers: Mapping[str, frozenset[str]], pa: Mapping[int, set[int]]) -> frozenset[str] | None:
    """Providers of ``consumer`` once ``new`` (with functional ``fn``) takes over, or None."""
    target = model.functionals[consumer]
    if not (fn.factors <= target.factors and fn.integrated <= target.integrated):
        return None
    for v in target.factors - fn.factors:
        if pa[v] & fn.integrated:
            return None
    current = providers[consumer]
    covered = set()
    taken = set()
    for p in current:
        f = model.node_functional(p)
        if f is None:
            return None
        if f.factors <= fn.factors:
            covered |= f.factors
            taken.add(p)
        elif f.factors & fn.factors:
            return None
    if covered != set(fn.factors):
        return None
    return frozenset((current - taken) | {new})


def augment(model: CollapsedModel, L: Iterable, R: Iterable = ()) -> CollapsedModel:
    """Add the deterministic augmentation variable Q^{L|R}.

    Its parents are the Q nodes that already provide its factors (earlier
    augmentations are reused where they fit). Every consumer whose functional
    factors through the new node is rewired to read it instead.
    """
    hcm = model.hcm
    L = frozenset(hcm.id_of(v) for v in L)
    R = frozenset(hcm.id_of(v) for v in R)
    fn = augmentation_functional(hcm, L, R)
    for name in model.flat.nodes:
        existing = model.node_functional(name)
        if existing == fn and (name in model.qvars or name in model.augmentations):
            raise InvalidAugmentation(f"duplicate of existing node {name}")
    name = q_name(hcm, L, R)
    if name in model.flat.nodes:
        raise InvalidAugmentation(f"duplicate of existing node {name}")

    pa = _sub_parents(hcm)
    originals = {}
    for q in model.qvars.values():
        if q.kind is QKind.ORIGINAL:
            (v,) = q.subject
            originals[v] = q.name
    missing = [v for v in fn.factors if v not in originals or originals[v] not in model.flat.nodes]
    if missing:
        raise InvalidAugmentation(
            "functional not expressible over existing QVars: "
            + ", ".join(hcm.name_of(v) for v in sorted(missing))
        )

    functionals = dict(model.functionals)
    providers = dict(model.providers)
    functionals[name] = fn
    providers[name] = frozenset(originals[v] for v in fn.factors)
    for aug in model.augmentations:
        if aug in providers and aug not in model.marginalized:
            probe = replace(model, functionals=functionals)
            better = _rewrite(probe, name, aug, model.qvars[aug].functional, providers, pa)
            if better is not None:
                providers[name] = better

    qv = QVar(name, L, R, q_functional_observable(hcm, L, R), QKind.AUGMENTATION, fn)
    qvars = dict(model.qvars)
    qvars[name] = qv
    probe = replace(model, qvars=qvars, functionals=functionals)
    rerouted = []
    for consumer in list(providers):
        if consumer == name or consumer in model.marginalized:
            continue
        better = _rewrite(probe, consumer, name, fn, providers, pa)
        if better is not None and better != providers[consumer]:
            providers[consumer] = better
            rerouted.append(consumer)

    edges = {e for e in model.flat.edges if not (e[0] in model.providers.get(e[1], ()) and e[1] in providers)}
    for consumer, provs in providers.items():
        for p in provs:
            edges.add((p, consumer))
    # keep provider edges of consumers that were not touched
    for consumer, provs in model.providers.items():
        if consumer in providers and providers[consumer] == provs:
            for p in provs:
                edges.add((p, consumer))
    hidden = set(model.flat.hidden)
    if not qv.observed:
        hidden.add(name)
    flat = model.flat.replace(
        nodes=list(model.flat.nodes) + [name],
        edges=edges,
        hidden=hidden,
        deterministic=set(model.flat.deterministic) | {name},
    )
    flat.validate()
    note = f"augment {name}" + (f" rerouting {', '.join(rerouted)}" if rerouted else "")
    return replace(
        model,
        flat=flat,
        qvars=qvars,
        functionals=functionals,
        providers=providers,
        augmentations=model.augmentations + (name,),
        log=model.log + (note,),
    )


def droppable_parents(model: CollapsedModel, aug: str) -> list[str]:
    """Parents of ``aug`` whose only child is ``aug``, in node order."""
    flat = model.flat
    return [p for p in flat.parents(aug) if flat.children(p) == [aug]]


def marginalize_aug(model: CollapsedModel, aug: str, drop: Iterable[str]) -> CollapsedModel:
    """Marginalize exclusive parents of an augmentation variable.

    Each dropped parent's own parents are wired into ``aug``, which then
    becomes a stochastic node.
    """
    drop = list(dict.fromkeys(drop))
    flat = model.flat
    if aug not in model.augmentations:
        raise IllegalDrop(f"{aug} is not an augmentation variable")
    for d in drop:
        if d not in flat.parents(aug):
            raise IllegalDrop(f"{d} is not a parent of {aug}")
        others = [c for c in flat.children(d) if c != aug]
        if others:
            raise IllegalDrop(f"{d} also feeds {', '.join(others)}")
    if not drop:
        return model
    edges = set(flat.edges)
    for d in drop:
        for p in flat.parents(d):
            edges.add((p, aug))
    edges = {e for e in edges if e[0] not in drop and e[1] not in drop}
    nodes = [n for n in flat.nodes if n not in drop]
    new_flat = flat.replace(
        nodes=nodes,
        edges=edges,
        hidden=flat.hidden - set(drop),
        deterministic=flat.deterministic - {aug} - set(drop),
    )
    new_flat.validate()
    qvars = {k: v for k, v in model.qvars.items() if k not in drop}
    providers = {k: v for k, v in model.providers.items() if k not in drop and k != aug}
    functionals = {k: v for k, v in model.functionals.items() if k not in drop}
    marginalized = dict(model.marginalized)
    marginalized[aug] = marginalized.get(aug, frozenset()) | frozenset(drop)
    return replace(
        model,
        flat=new_flat,
        qvars=qvars,
        providers=providers,
        functionals=functionals,
        augmentations=tuple(a for a in model.augmentations if a not in drop),
        marginalized=marginalized,
        log=model.log + (f"marginalize {', '.join(drop)} into {aug}",),
    )


@dataclass(frozen=True)
class Intervention:
    """A hard intervention on a node of the collapsed model."""

    target: str
    label: str
    hard_unit: bool
    original_target: str
    via_augmentation: bool = False


def intervention_matches(model: CollapsedModel, target: str, original: str, outcome: str) -> bool:
    """Whether intervening on ``target`` stands in for intervening on ``original``.

    Holds when the original Q variable is gone from the model, or when every
    directed path from it to the outcome passes through ``target``.
    """
    flat = model.flat
    if original == target or original not in flat.nodes:
        return True
    pruned = flat.without(target)
    return outcome not in pruned.descendants(original) and outcome != original


def map_intervention(hcm: HierGraph, query: QuerySpec, model: CollapsedModel | None = None,
                     outcome: str | None = None) -> Intervention:
    """Translate a query's intervention into a hard do on a collapsed-model node.

    Hard unit interventions pass through unchanged. A soft intervention on
    subunit ``A`` becomes a do on ``Q^{A|pa_S(A)}``, or on an augmentation
    ``Q^{A|R}`` present in ``model`` when it satisfies the path condition.
    """
    a = hcm.var(query.treatment)
    if query.kind is InterventionKind.HARD_UNIT:
        return Intervention(a.name, query.label, True, a.name)
    original = q_name(hcm, [a.id], hcm.subunit_parents(a.id))
    if model is not None:
        for aug in model.augmentations + tuple(model.marginalized):
            q = model.qvars.get(aug)
            if q is None or q.subject != frozenset({a.id}):
                continue
            if not query.conditioning <= q.conditioning:
                continue
            if outcome is None or intervention_matches(model, aug, original, outcome):
                return Intervention(aug, query.label, False, original, True)
    return Intervention(original, query.label, False, original)
