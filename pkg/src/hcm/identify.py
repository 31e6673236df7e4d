"""Identification: the flat ID recursion and the hierarchical pipeline.

:func:`id_algorithm` is the complete c-component recursion over an ADMG.
:func:`identify_hcm` collapses a hierarchical model, searches a bounded set
of augment/marginalize candidates and runs the recursion on each.
Negative verdicts are relative to that search, never absolute.
"""

from __future__ import annotations

import enum
import itertools
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

from .dsl import InterventionKind, QuerySpec
from .estimand import (
    Estimand,
    Expr,
    ExpectationWrapper,
    Fraction,
    InnerExpectation,
    Prob,
    free_vars,
    integrate,
    product,
    simplify,
    simplify_estimand,
)
from .graph import (
    Admg,
    FlatGraph,
    HierGraph,
    UnknownVariable,
    bidirected_path_exists,
    direct_unit_descendants,
    latent_projection,
)
from .transform import (
    CollapsedModel,
    IllegalDrop,
    InvalidAugmentation,
    augment,
    augmentation_functional,
    collapse,
    droppable_parents,
    intervention_matches,
    marginalize_aug,
    q_name,
)

__all__ = [
    "IdFailure",
    "Assumption",
    "Identified",
    "NotIdentifiedByMethod",
    "InvalidQuery",
    "Verdict",
    "SufficientVerdict",
    "id_algorithm",
    "identify_hcm",
    "sufficient_id_check",
    "simplify_estimand",
    "MAX_CANDIDATES",
]

MAX_CANDIDATES = 32


class InvalidQuery(ValueError):
    pass


# ------------------------------------------------------------ flat recursion


@dataclass(frozen=True)
class IdFailure:
    """A hedge: ``F`` and ``F_prime`` are c-forests rooted in the same set."""

    F: frozenset[str]
    F_prime: frozenset[str]

    def describe(self) -> str:
        return (
            "hedge: district {" + ", ".join(sorted(self.F)) + "} "
            "contains treatment-free district {" + ", ".join(sorted(self.F_prime)) + "}"
        )


class _Fail(Exception):
    def __init__(self, failure: IdFailure):
        self.failure = failure


class _Observational:
    """P(V) for an ancestral set V of the original graph."""

    def __init__(self, nodes: Sequence[str]):
        self.nodes = list(nodes)

    def restrict(self, keep):
        return _Observational(keep)

    def marginal(self, y) -> Expr:
        return Prob(tuple(v for v in self.nodes if v in y))

    def conditional(self, v: str, preds: list[str], g: Admg) -> Expr:
        # Tian's reduction: v depends on its prefix only through its district and their parents
        sub = g.subgraph(preds + [v])
        district = sub.district_of(v)
        cond = set(district)
        for t in district:
            cond |= set(sub.parents(t))
        cond.discard(v)
        return Prob((v,), tuple(p for p in preds if p in cond))


def _sum_out(nodes: list[str], factors: dict[str, Expr], drop: set[str]):
    """Remove normalised factors of ``drop`` nobody else reads; report the rest."""
    factors = dict(factors)
    left = set(drop)
    changed = True
    while changed:
        changed = False
        for v in [n for n in reversed(nodes) if n in left]:
            if not any(v in free_vars(f) for k, f in factors.items() if k != v):
                del factors[v]
                left.discard(v)
                changed = True
    return factors, left


class _Factorized:
    """∏ f_v over ``nodes`` in order, f_v being P(v | predecessors)."""

    def __init__(self, nodes: Sequence[str], factors: dict[str, Expr]):
        self.nodes = list(nodes)
        self.factors = factors

    def _expr(self, keep) -> Expr:
        factors, left = _sum_out(self.nodes, self.factors, set(self.nodes) - set(keep))
        body = product(factors[v] for v in self.nodes if v in factors)
        return integrate(body, [v for v in self.nodes if v in left])

    def restrict(self, keep):
        factors, left = _sum_out(self.nodes, self.factors, set(self.nodes) - set(keep))
        if not left:
            return _Factorized(keep, factors)
        return _Generic(keep, self._expr(keep))

    def marginal(self, y) -> Expr:
        return self._expr(y)

    def conditional(self, v, preds, g) -> Expr:
        return self.factors[v]


class _Generic:
    """An arbitrary expression for the joint over ``nodes``."""

    def __init__(self, nodes: Sequence[str], expr: Expr):
        self.nodes = list(nodes)
        self.expr = expr

    def restrict(self, keep):
        return _Generic(keep, self.marginal(keep))

    def marginal(self, y) -> Expr:
        return integrate(self.expr, [v for v in self.nodes if v not in y])

    def conditional(self, v, preds, g) -> Expr:
        return Fraction(self.marginal(set(preds) | {v}), self.marginal(set(preds)))


def _cut_incoming(g: Admg, x: set[str]) -> Admg:
    return Admg(
        g.nodes,
        frozenset(e for e in g.directed if e[1] not in x),
        frozenset(e for e in g.bidirected if not (e & x)),
        g.deterministic,
    )


def _id(y: set, x: set, P, g: Admg, extra: set) -> Expr:
    V = list(g.nodes)
    if not x:
        return P.marginal(y)
    an = g.ancestors_of(y)
    if an != set(V):
        keep = [v for v in V if v in an]
        return _id(y, x & an, P.restrict(keep), g.subgraph(keep), extra)
    w = (set(V) - x) - _cut_incoming(g, x).ancestors_of(y)
    if w:
        extra |= w
        return _id(y, x | w, P, g, extra)
    comps = g.subgraph([v for v in V if v not in x]).districts()
    if len(comps) > 1:
        parts = [_id(set(s), set(V) - s, P, g, extra) for s in comps]
        return integrate(product(parts), [v for v in V if v not in y | x])
    S = comps[0]
    districts = g.districts()
    if len(districts) == 1:
        raise _Fail(IdFailure(frozenset(V), frozenset(S)))
    if S in districts:
        terms = [P.conditional(v, V[:i], g) for i, v in enumerate(V) if v in S]
        return integrate(product(terms), [v for v in V if v in S and v not in y])
    big = next(d for d in districts if S < d)
    keep = [v for v in V if v in big]
    factors = {v: P.conditional(v, V[:i], g) for i, v in enumerate(V) if v in big}
    return _id(y, x & big, _Factorized(keep, factors), g.subgraph(keep), extra)


def id_algorithm(admg: Admg, X: Iterable[str], Y: Iterable[str]) -> Estimand | IdFailure:
    """P(Y | do(X)) as an observational estimand, or the hedge blocking it.

    Treatments left free in the result denote their intervention values.
    Non-ancestors of Y that the recursion adds to the intervention set may
    also appear free; the value is immaterial and they are listed with the
    treatments.
    """
    X, Y = set(X), set(Y)
    for n in X | Y:
        if n not in admg.nodes:
            raise UnknownVariable(n)
    if X & Y:
        raise ValueError("treatment and outcome sets overlap")
    if not Y:
        raise ValueError("empty outcome set")
    extra: set[str] = set()
    try:
        expr = _id(Y, X, _Observational(admg.nodes), admg, extra)
    except _Fail as f:
        return f.failure
    order = list(admg.nodes)
    treatments = tuple(n for n in order if n in X | extra)
    return Estimand(
        simplify(expr),
        treatments,
        tuple(n for n in order if n in Y),
        dict(admg.deterministic),
    )


# ---------------------------------------------------------- hierarchical ID


class Assumption(str, enum.Enum):
    SUBUNIT_POSITIVITY = "subunit_positivity"
    UNIT_POSITIVITY = "unit_positivity"
    INSTRUMENT_SOLVABILITY = "instrument_solvability"
    MECHANISM_CONVERGENCE = "mechanism_convergence"


@dataclass(frozen=True)
class Identified:
    estimand: Estimand
    assumptions: tuple[Assumption, ...]
    model: CollapsedModel
    intervention: str
    outcome_node: str
    chained: bool = False
    raw: Estimand | None = None
    steps: tuple[str, ...] = ()

    identified = True


@dataclass(frozen=True)
class NotIdentifiedByMethod:
    witness: IdFailure | str
    model: CollapsedModel | None = None
    candidates_tried: int = 0

    identified = False

    def describe(self) -> str:
        w = self.witness
        return w.describe() if isinstance(w, IdFailure) else str(w)


def _check_query(hcm: HierGraph, query: QuerySpec) -> None:
    try:
        a = hcm.var(query.treatment)
        y = hcm.var(query.outcome)
        cond = [hcm.var(c) for c in query.conditioning]
    except UnknownVariable as exc:
        raise InvalidQuery(str(exc)) from None
    if a.id == y.id:
        raise InvalidQuery("treatment and outcome coincide")
    if query.kind is InterventionKind.HARD_UNIT:
        if not a.is_unit:
            raise InvalidQuery(f"hard intervention on subunit variable {a.name}")
        if cond:
            raise InvalidQuery("hard interventions take no conditioning set")
    else:
        if not a.is_subunit:
            raise InvalidQuery(f"soft intervention on unit variable {a.name}")
        pa = set(hcm.subunit_parents(a.id))
        if not {c.id for c in cond} <= pa:
            raise InvalidQuery("conditioning set must be subunit parents of the treatment")
    if not a.observed:
        raise InvalidQuery(f"treatment {a.name} is hidden")
    if not y.observed:
        raise InvalidQuery(f"outcome {y.name} is hidden")


@dataclass(frozen=True)
class _Aug:
    L: frozenset[int]
    R: frozenset[int]
    role: str  # outcome | treatment | mediator


@dataclass(frozen=True)
class _Plan:
    augs: tuple[_Aug, ...]
    outcome_R: frozenset[int] | None  # None: unit outcome


def _subsets_desc(items: Sequence, lo: int = 0, hi: int | None = None):
    hi = len(items) if hi is None else hi
    for k in range(hi, lo - 1, -1):
        yield from itertools.combinations(items, k)


def _plans(hcm: HierGraph, query: QuerySpec) -> list[_Plan]:
    a = hcm.var(query.treatment)
    y = hcm.var(query.outcome)
    marginal_soft = query.kind is not InterventionKind.HARD_UNIT and not query.conditioning

    if y.is_unit:
        outcome_opts: list[frozenset[int] | None] = [None]
    else:
        outcome_opts = [frozenset()]
        if a.is_subunit and marginal_soft:
            outcome_opts.append(frozenset({a.id}))

    treat_opts: list[frozenset[int] | None] = []
    if a.is_subunit:
        pa = hcm.subunit_parents(a.id)
        if set(query.conditioning) == set(pa):
            treat_opts.append(None)
        else:
            free = [p for p in pa if p not in query.conditioning]
            for extra in _subsets_desc(free, 0, len(free) - 1):
                treat_opts.append(frozenset(query.conditioning) | frozenset(extra))
    else:
        treat_opts.append(None)

    mediators = [
        v for v in hcm.subunit_ids
        if v not in (a.id, y.id) and direct_unit_descendants(hcm, v)
    ]
    med_opts: list[tuple[int, ...]] = [()] + [(v,) for v in mediators]

    plans = []
    for med in med_opts:
        for o in outcome_opts:
            for t in treat_opts:
                augs = []
                if o is not None:
                    augs.append(_Aug(frozenset({y.id}), o, "outcome"))
                if t is not None:
                    augs.append(_Aug(frozenset({a.id}), t, "treatment"))
                for v in med:
                    augs.append(_Aug(frozenset({v}), frozenset(), "mediator"))
                plans.append(_Plan(tuple(augs), o))
    return plans[:MAX_CANDIDATES]


def _existing(model: CollapsedModel, hcm: HierGraph, aug: _Aug) -> str | None:
    """Name of a node already carrying the functional of ``aug``."""
    fn = augmentation_functional(hcm, aug.L, aug.R)
    for name, q in model.qvars.items():
        if q.functional == fn and name in model.flat.nodes:
            return name
    return None


def _realize(base: CollapsedModel, hcm: HierGraph, plan: _Plan, protect: set[str]):
    """Yield (model, names of the plan's nodes) for every admissible drop choice."""
    model = base
    names: list[str] = []
    fresh: list[bool] = []
    for aug in plan.augs:
        hit = _existing(model, hcm, aug)
        if hit is not None:
            if aug.role != "outcome":
                return
            names.append(hit)
            fresh.append(False)
            continue
        try:
            model = augment(model, aug.L, aug.R)
        except InvalidAugmentation:
            return
        names.append(model.augmentations[-1])
        fresh.append(True)

    keep = set(protect) | set(names)
    yielded = 0

    def walk(m: CollapsedModel, i: int):
        nonlocal yielded
        if yielded >= MAX_CANDIDATES:
            return
        if i == len(plan.augs):
            yielded += 1
            yield m
            return
        if not fresh[i]:
            yield from walk(m, i + 1)
            return
        aug = names[i]
        options = [p for p in droppable_parents(m, aug) if p not in keep]
        lo = 0 if plan.augs[i].role == "outcome" else 1
        for drop in _subsets_desc(options, lo):
            try:
                nxt = marginalize_aug(m, aug, drop)
            except IllegalDrop:
                continue
            yield from walk(nxt, i + 1)

    for m in walk(model, 0):
        yield m, names


def _compose(est: Estimand, outcome_node: str, y_name: str, subunit_outcome: bool,
             mixing: str | None) -> Estimand:
    if not subunit_outcome:
        return est
    inner = InnerExpectation(y_name, outcome_node, mixing)
    return Estimand(
        ExpectationWrapper(outcome_node, est.expr, inner),
        est.treatments,
        (y_name,),
        est.deterministic,
    )


def identify_hcm(hcm: HierGraph, query: QuerySpec) -> Identified | NotIdentifiedByMethod:
    """Collapse, augment, marginalize and identify.

    Candidates are tried in a fixed order and the first identified one is
    returned. The witness of a failure comes from the first candidate.
    """
    _check_query(hcm, query)
    base = collapse(hcm)
    a = hcm.var(query.treatment)
    y = hcm.var(query.outcome)
    hard = query.kind is InterventionKind.HARD_UNIT
    original_a = a.name if hard else q_name(hcm, [a.id], hcm.subunit_parents(a.id))

    witness: IdFailure | str | None = None
    tried = 0
    for plan in _plans(hcm, query):
        roles = [g.role for g in plan.augs]
        for model, names in _realize(base, hcm, plan, {a.name, y.name}):
            tried += 1
            if "treatment" in roles:
                target = names[roles.index("treatment")]
            else:
                target = original_a
            if plan.outcome_R is None:
                outcome_node = y.name
            else:
                outcome_node = names[roles.index("outcome")]
            if target not in model.flat.nodes or outcome_node not in model.flat.nodes:
                continue
            if not model.flat.is_observed(target) or not model.flat.is_observed(outcome_node):
                if witness is None:
                    witness = f"{target if not model.flat.is_observed(target) else outcome_node} is not observed"
                continue
            if not hard and not intervention_matches(model, target, original_a, outcome_node):
                continue
            if any(n in model.flat.deterministic for n in model.augmentations if n != outcome_node):
                continue
            result = id_algorithm(latent_projection(model.flat), {target}, {outcome_node})
            if isinstance(result, IdFailure):
                if witness is None:
                    witness = result
                continue
            mixing = query.label if plan.outcome_R else None
            raw = _compose(result, outcome_node, y.name, y.is_subunit, mixing)
            assumptions = [Assumption.SUBUNIT_POSITIVITY, Assumption.UNIT_POSITIVITY,
                           Assumption.MECHANISM_CONVERGENCE]
            if "treatment" in roles or "mediator" in roles:
                assumptions.append(Assumption.INSTRUMENT_SOLVABILITY)
            return Identified(
                simplify_estimand(raw),
                tuple(assumptions),
                model,
                target,
                outcome_node,
                chained=len(model.augmentations) + len(model.marginalized) > 1,
                raw=raw,
                steps=model.log,
            )
    if witness is None:
        witness = "no admissible candidate"
    return NotIdentifiedByMethod(witness, base, tried)


# ------------------------------------------------------- structural shortcut


class Verdict(str, enum.Enum):
    IDENTIFIABLE = "identifiable"
    NOT_IDENTIFIABLE = "not_identifiable"


@dataclass(frozen=True)
class SufficientVerdict:
    verdict: Verdict
    reason: str
    details: dict = field(default_factory=dict)


def _erase_plate(hcm: HierGraph) -> FlatGraph:
    return FlatGraph(
        tuple(v.name for v in hcm.variables),
        frozenset((hcm.name_of(a), hcm.name_of(b)) for a, b in hcm.edges),
        frozenset(v.name for v in hcm.variables if not v.observed),
    )


def sufficient_id_check(hcm: HierGraph, query: QuerySpec) -> SufficientVerdict | None:
    """Cheap graphical verdicts that skip the search when they apply.

    Only models without hidden subunit variables qualify.
    """
    if any(not hcm.var(v).observed for v in hcm.subunit_ids):
        return None
    a = hcm.var(query.treatment)
    y = hcm.var(query.outcome)
    if a.is_unit:
        admg = latent_projection(_erase_plate(hcm))
        children = [c for c in admg.children(a.name)]
        if children and bidirected_path_exists(admg, a.name, children):
            return SufficientVerdict(
                Verdict.NOT_IDENTIFIABLE,
                "unit treatment confounded with one of its children; the plate does not help",
                {"children": children},
            )
        return None
    keep = hcm.ancestors(y.id) | {y.id}
    if a.id not in keep:
        return None
    g = hcm.subgraph(keep)
    for z in g.subunit_ids:
        if z != a.id and g.children(z) == [a.id] and not g.parents(z):
            return SufficientVerdict(Verdict.IDENTIFIABLE, "subunit instrument",
                                     {"instrument": g.name_of(z)})
    model = collapse(g)
    admg = latent_projection(model.flat)
    qa = model.q_for(a.id)
    desc = [g.name_of(w) for w in sorted(direct_unit_descendants(g, a.id))]
    desc = [d for d in desc if d in admg.nodes]
    if qa in admg.nodes and not (desc and bidirected_path_exists(admg, qa, desc)):
        return SufficientVerdict(Verdict.IDENTIFIABLE,
                                 "no bidirected path to a direct unit descendant",
                                 {"descendants": desc})
    return None
