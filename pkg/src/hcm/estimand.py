"""Symbolic estimands.

Expressions are immutable trees. Variables are referred to by name and bound
lexically by :class:`Integral`; a treatment name that occurs free stands for
its intervention value, and is rendered with a star.

``Integral`` covers both sums (discrete evaluation) and integrals (the
continuous reading used when printing).
"""

from __future__ import annotations

import itertools
import json
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field, replace

__all__ = [
    "Expr",
    "One",
    "Prob",
    "Integral",
    "Product",
    "Sum",
    "Fraction",
    "Functional",
    "DeltaSubstitute",
    "InnerExpectation",
    "ExpectationWrapper",
    "Estimand",
    "integrate",
    "product",
    "free_vars",
    "simplify",
    "simplify_estimand",
    "to_text",
    "to_latex",
    "to_json",
    "from_json",
    "evaluate",
    "canonical",
]


class Expr:
    """Base class for estimand nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class One(Expr):
    pass


ONE = One()


@dataclass(frozen=True)
class Prob(Expr):
    targets: tuple[str, ...]
    given: tuple[str, ...] = ()
    regime: tuple[str, ...] = ()


@dataclass(frozen=True)
class Integral(Expr):
    var: str
    body: Expr


@dataclass(frozen=True)
class Product(Expr):
    children: tuple[Expr, ...]


@dataclass(frozen=True)
class Sum(Expr):
    children: tuple[Expr, ...]


@dataclass(frozen=True)
class Fraction(Expr):
    num: Expr
    den: Expr


@dataclass(frozen=True)
class Functional(Expr):
    """Value of the deterministic mechanism of node ``name`` at ``args``."""

    name: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class DeltaSubstitute(Expr):
    """Point mass: ``var`` equals ``functional``."""

    var: str
    functional: Functional


@dataclass(frozen=True)
class InnerExpectation(Expr):
    """Within-unit expectation of ``outcome`` under the distribution ``of``.

    ``of`` is a Q-variable name or a :class:`Functional` producing one.
    ``mixing`` names a soft intervention distribution that is averaged over
    when ``of`` is an interventional conditional.
    """

    outcome: str
    of: str | Functional
    mixing: str | None = None


@dataclass(frozen=True)
class ExpectationWrapper(Expr):
    """Population expectation of an inner expectation: E_p[E_{var}[outcome]]."""

    var: str
    dist: Expr
    inner: InnerExpectation


def product(children: Iterable[Expr]) -> Expr:
    flat: list[Expr] = []
    for c in children:
        if isinstance(c, Product):
            flat.extend(k for k in c.children if not isinstance(k, One))
        elif not isinstance(c, One):
            flat.append(c)
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    return Product(tuple(flat))


def integrate(body: Expr, variables: Iterable[str]) -> Expr:
    """Integrate ``body`` over ``variables``; the first listed is outermost."""
    for v in reversed(list(variables)):
        body = Integral(v, body)
    return body


def free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, One):
        return frozenset()
    if isinstance(e, Prob):
        return frozenset(e.targets) | frozenset(e.given)
    if isinstance(e, Integral):
        return free_vars(e.body) - {e.var}
    if isinstance(e, (Product, Sum)):
        out: frozenset[str] = frozenset()
        for c in e.children:
            out |= free_vars(c)
        return out
    if isinstance(e, Fraction):
        return free_vars(e.num) | free_vars(e.den)
    if isinstance(e, Functional):
        return frozenset(e.args)
    if isinstance(e, DeltaSubstitute):
        return frozenset({e.var}) | free_vars(e.functional)
    if isinstance(e, InnerExpectation):
        return free_vars(e.of) if isinstance(e.of, Functional) else frozenset({e.of})
    if isinstance(e, ExpectationWrapper):
        return (free_vars(e.dist) | free_vars(e.inner)) - {e.var}
    raise TypeError(type(e).__name__)


# ---------------------------------------------------------------- rewriting


def _rename_free(e: Expr, old: str, new: Functional) -> Expr | None:
    """Substitute ``old := new`` where ``old`` occurs only as an expectation index.

    Returns None when ``old`` is used anywhere a value substitution would not
    be representable (inside a probability term, say).
    """
    if old not in free_vars(e):
        return e
    if isinstance(e, InnerExpectation) and e.of == old:
        return replace(e, of=new)
    if isinstance(e, Functional):
        return None
    if isinstance(e, Product):
        out = []
        for c in e.children:
            r = _rename_free(c, old, new)
            if r is None:
                return None
            out.append(r)
        return Product(tuple(out))
    if isinstance(e, Integral):
        if e.var in new.args:
            return None
        body = _rename_free(e.body, old, new)
        return None if body is None else Integral(e.var, body)
    return None


def _collapse_delta(var: str, body: Expr) -> Expr | None:
    """Rewrite ∫ A(var) · K dvar where K holds δ(var = f) under integrals.

    ``A`` may use ``var`` only as an expectation index. The result is K with
    the delta replaced by A(f).
    """
    children = list(body.children) if isinstance(body, Product) else [body]
    carriers = [i for i, c in enumerate(children) if _holds_delta(c, var)]
    if len(carriers) != 1:
        return None
    k = children[carriers[0]]
    rest = [c for i, c in enumerate(children) if i != carriers[0]]

    def plug(node: Expr, bound: frozenset[str]) -> Expr | None:
        if isinstance(node, DeltaSubstitute) and node.var == var:
            moved = []
            for c in rest:
                if free_vars(c) & bound:
                    return None
                r = _rename_free(c, var, node.functional)
                if r is None:
                    return None
                moved.append(r)
            return product(moved)
        if isinstance(node, Integral):
            inner = plug(node.body, bound | {node.var})
            return None if inner is None else Integral(node.var, inner)
        if isinstance(node, Product):
            out = []
            hit = False
            for c in node.children:
                if not hit and _holds_delta(c, var):
                    r = plug(c, bound)
                    if r is None:
                        return None
                    out.append(r)
                    hit = True
                else:
                    if var in free_vars(c):
                        return None
                    out.append(c)
            return product(out)
        return None

    return plug(k, frozenset())


def _holds_delta(e: Expr, var: str) -> bool:
    if isinstance(e, DeltaSubstitute):
        return e.var == var
    if isinstance(e, Integral):
        return e.var != var and _holds_delta(e.body, var)
    if isinstance(e, Product):
        return any(_holds_delta(c, var) for c in e.children)
    return False


def _simplify_integral(e: Integral, det: Mapping[str, tuple[str, ...]]) -> Expr:
    v = e.var
    body = e.body
    if v not in free_vars(body):
        return e
    if isinstance(body, Prob) and v in body.targets and v not in body.given:
        rest = tuple(t for t in body.targets if t != v)
        return Prob(rest, body.given, body.regime) if rest else ONE
    if isinstance(body, DeltaSubstitute) and body.var == v:
        return ONE
    if isinstance(body, Product):
        inside = [c for c in body.children if v in free_vars(c)]
        outside = [c for c in body.children if v not in free_vars(c)]
        if outside:
            return product(outside + [Integral(v, product(inside))])
        for i, c in enumerate(inside):
            if isinstance(c, Prob) and v in c.targets and v not in c.given:
                others = inside[:i] + inside[i + 1:]
                if all(v not in free_vars(o) for o in others):
                    rest = tuple(t for t in c.targets if t != v)
                    kept = Prob(rest, c.given, c.regime) if rest else ONE
                    return product(others[:i] + [kept] + others[i:])
            if isinstance(c, DeltaSubstitute) and c.var == v:
                others = inside[:i] + inside[i + 1:]
                if all(v not in free_vars(o) for o in others):
                    return product(others)
    collapsed = _collapse_delta(v, body)
    if collapsed is not None:
        return collapsed
    return e


def _step(e: Expr, det: Mapping[str, tuple[str, ...]]) -> Expr:
    if isinstance(e, Prob):
        if len(e.targets) == 1 and e.targets[0] in det and not e.regime:
            t = e.targets[0]
            parents = det[t]
            if set(parents) <= set(e.given):
                return DeltaSubstitute(t, Functional(t, tuple(parents)))
        return e
    if isinstance(e, Product):
        return product(_step(c, det) for c in e.children)
    if isinstance(e, Sum):
        kids = [_step(c, det) for c in e.children]
        return kids[0] if len(kids) == 1 else Sum(tuple(kids))
    if isinstance(e, Fraction):
        num, den = _step(e.num, det), _step(e.den, det)
        if isinstance(den, One):
            return num
        if num == den:
            return ONE
        return Fraction(num, den)
    if isinstance(e, Integral):
        inner = Integral(e.var, _step(e.body, det))
        return _simplify_integral(inner, det)
    if isinstance(e, ExpectationWrapper):
        dist = _step(e.dist, det)
        joined = _collapse_delta(e.var, product([dist, e.inner]))
        if joined is not None:
            return joined
        return ExpectationWrapper(e.var, dist, e.inner)
    return e


def simplify(e: Expr, deterministic: Mapping[str, Iterable[str]] | None = None) -> Expr:
    """Rewrite to a fixed point.

    Rules: single-variable probability terms over deterministic nodes become
    point masses; integrals of normalised factors vanish; factors that do
    not depend on an integration variable move outside it; an integral over
    a point mass is resolved by substitution; nested products flatten.
    """
    det = {k: tuple(v) for k, v in (deterministic or {}).items()}
    for _ in range(200):
        nxt = _step(e, det)
        if nxt == e:
            return e
        e = nxt
    return e


# ----------------------------------------------------------------- wrapper


@dataclass(frozen=True)
class Estimand:
    """An expression plus the context needed to read it.

    ``treatments`` occurring free denote the intervention values;
    ``deterministic`` maps deterministic nodes to their parents.
    """

    expr: Expr
    treatments: tuple[str, ...] = ()
    outcomes: tuple[str, ...] = ()
    deterministic: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def text(self) -> str:
        return to_text(self.expr, self.treatments)

    def latex(self) -> str:
        return to_latex(self.expr, self.treatments)

    def to_json(self) -> dict:
        return {
            "expr": to_json(self.expr),
            "treatments": list(self.treatments),
            "outcomes": list(self.outcomes),
            "deterministic": {k: list(v) for k, v in self.deterministic.items()},
            "text": self.text(),
        }

    def has_do(self) -> bool:
        return _any(self.expr, lambda n: isinstance(n, Prob) and bool(n.regime))


def simplify_estimand(e: Estimand) -> Estimand:
    return replace(e, expr=simplify(e.expr, e.deterministic))


def _any(e: Expr, pred: Callable[[Expr], bool]) -> bool:
    if pred(e):
        return True
    for c in _kids(e):
        if _any(c, pred):
            return True
    return False


def _kids(e: Expr) -> list[Expr]:
    if isinstance(e, (Product, Sum)):
        return list(e.children)
    if isinstance(e, Integral):
        return [e.body]
    if isinstance(e, Fraction):
        return [e.num, e.den]
    if isinstance(e, DeltaSubstitute):
        return [e.functional]
    if isinstance(e, ExpectationWrapper):
        return [e.dist, e.inner]
    if isinstance(e, InnerExpectation) and isinstance(e.of, Functional):
        return [e.of]
    return []


# ---------------------------------------------------------------- rendering


def _name(v: str, bound: frozenset[str], stars: frozenset[str], latex: bool) -> str:
    if v in stars and v not in bound:
        return v + ("_{\\star}" if latex else "⋆")
    return v


def _render(e: Expr, bound: frozenset[str], stars: frozenset[str], latex: bool) -> str:
    nm = lambda v: _name(v, bound, stars, latex)  # noqa: E731
    if isinstance(e, One):
        return "1"
    if isinstance(e, Prob):
        t = ", ".join(nm(x) for x in e.targets)
        g = ", ".join(nm(x) for x in e.given)
        if e.regime:
            g = (g + "; " if g else "; ") + "do(" + ", ".join(nm(x) for x in e.regime) + ")"
        bar = (" \\mid " if latex else " | ") if e.given else ""
        return f"p({t}{bar}{g})" if e.given else f"p({t}{g})"
    if isinstance(e, Integral):
        body = _render(e.body, bound | {e.var}, stars, latex)
        if latex:
            return f"\\int {body} \\, d{e.var}"
        return f"∫ {body} d{e.var}"
    if isinstance(e, Product):
        parts = []
        for c in e.children:
            s = _render(c, bound, stars, latex)
            if isinstance(c, (Integral, Sum)):
                s = f"({s})" if not latex else f"\\left({s}\\right)"
            parts.append(s)
        return " ".join(parts)
    if isinstance(e, Sum):
        return " + ".join(_render(c, bound, stars, latex) for c in e.children)
    if isinstance(e, Fraction):
        n = _render(e.num, bound, stars, latex)
        d = _render(e.den, bound, stars, latex)
        return f"\\frac{{{n}}}{{{d}}}" if latex else f"[{n}] / [{d}]"
    if isinstance(e, Functional):
        return f"m_{{{e.name}}}(" + ", ".join(nm(a) for a in e.args) + ")"
    if isinstance(e, DeltaSubstitute):
        f = _render(e.functional, bound, stars, latex)
        return f"\\delta({nm(e.var)} = {f})" if latex else f"δ({nm(e.var)} = {f})"
    if isinstance(e, InnerExpectation):
        of = _render(e.of, bound, stars, latex) if isinstance(e.of, Functional) else nm(e.of)
        if e.mixing:
            of = f"{e.mixing} ∘ {of}" if not latex else f"{e.mixing} \\circ {of}"
        return f"\\mathbb{{E}}_{{{of}}}[{e.outcome}]" if latex else f"E_{{{of}}}[{e.outcome}]"
    if isinstance(e, ExpectationWrapper):
        d = _render(e.dist, bound | {e.var}, stars, latex)
        i = _render(e.inner, bound | {e.var}, stars, latex)
        if latex:
            return f"\\mathbb{{E}}_{{{e.var} \\sim {d}}}\\left[{i}\\right]"
        return f"E_{{{e.var} ~ {d}}}[{i}]"
    raise TypeError(type(e).__name__)


def to_text(e: Expr, treatments: Iterable[str] = ()) -> str:
    return _render(e, frozenset(), frozenset(treatments), latex=False)


def to_latex(e: Expr, treatments: Iterable[str] = ()) -> str:
    return _render(e, frozenset(), frozenset(treatments), latex=True)


def to_json(e: Expr) -> dict:
    if isinstance(e, One):
        return {"kind": "One"}
    if isinstance(e, Prob):
        return {"kind": "ProbTerm", "targets": list(e.targets), "given": list(e.given),
                "regime": list(e.regime)}
    if isinstance(e, Integral):
        return {"kind": "Integral", "var": e.var, "body": to_json(e.body)}
    if isinstance(e, (Product, Sum)):
        return {"kind": type(e).__name__, "children": [to_json(c) for c in e.children]}
    if isinstance(e, Fraction):
        return {"kind": "Fraction", "num": to_json(e.num), "den": to_json(e.den)}
    if isinstance(e, Functional):
        return {"kind": "Functional", "name": e.name, "args": list(e.args)}
    if isinstance(e, DeltaSubstitute):
        return {"kind": "DeltaSubstitute", "var": e.var, "functional": to_json(e.functional)}
    if isinstance(e, InnerExpectation):
        of = to_json(e.of) if isinstance(e.of, Functional) else e.of
        return {"kind": "InnerExpectation", "outcome": e.outcome, "of": of, "mixing": e.mixing}
    if isinstance(e, ExpectationWrapper):
        return {"kind": "ExpectationWrapper", "var": e.var, "dist": to_json(e.dist),
                "inner": to_json(e.inner)}
    raise TypeError(type(e).__name__)


def from_json(d: dict | str) -> Expr:
    if isinstance(d, str):
        d = json.loads(d)
    k = d["kind"]
    if k == "One":
        return ONE
    if k == "ProbTerm":
        return Prob(tuple(d["targets"]), tuple(d["given"]), tuple(d.get("regime", ())))
    if k == "Integral":
        return Integral(d["var"], from_json(d["body"]))
    if k == "Product":
        return Product(tuple(from_json(c) for c in d["children"]))
    if k == "Sum":
        return Sum(tuple(from_json(c) for c in d["children"]))
    if k == "Fraction":
        return Fraction(from_json(d["num"]), from_json(d["den"]))
    if k == "Functional":
        return Functional(d["name"], tuple(d["args"]))
    if k == "DeltaSubstitute":
        return DeltaSubstitute(d["var"], from_json(d["functional"]))
    if k == "InnerExpectation":
        of = d["of"] if isinstance(d["of"], str) else from_json(d["of"])
        return InnerExpectation(d["outcome"], of, d.get("mixing"))
    if k == "ExpectationWrapper":
        return ExpectationWrapper(d["var"], from_json(d["dist"]), from_json(d["inner"]))
    raise ValueError(f"unknown node kind {k!r}")


def canonical(e: Expr) -> Expr:
    """Order-insensitive normal form: product children and conditioning sets sorted.

    Bound variables keep their names, so two expressions are canonically
    equal iff they agree up to commutativity.
    """
    if isinstance(e, Prob):
        return Prob(tuple(sorted(e.targets)), tuple(sorted(e.given)), tuple(sorted(e.regime)))
    if isinstance(e, (Product, Sum)):
        kids = [canonical(c) for c in e.children]
        return type(e)(tuple(sorted(kids, key=repr)))
    if isinstance(e, Integral):
        return Integral(e.var, canonical(e.body))
    if isinstance(e, Fraction):
        return Fraction(canonical(e.num), canonical(e.den))
    if isinstance(e, ExpectationWrapper):
        return ExpectationWrapper(e.var, canonical(e.dist), e.inner)
    return e


# --------------------------------------------------------------- evaluation


def evaluate(
    e: Expr,
    env: Mapping[str, object],
    prob: Callable[[Mapping[str, object]], float],
    support: Mapping[str, Iterable],
    functions: Mapping[str, Callable[..., object]] | None = None,
    inner: Callable[[str, object], float] | None = None,
) -> float:
    """Numerically evaluate over discrete variables.

    ``prob(assignment)`` returns the observational marginal probability of a
    partial assignment; ``support`` lists each variable's values;
    ``functions`` gives deterministic mechanisms by node name.
    """
    functions = functions or {}
    cache: dict = {}

    def p(assign: dict) -> float:
        key = tuple(sorted(assign.items(), key=lambda kv: kv[0]))
        if key not in cache:
            cache[key] = prob(dict(key))
        return cache[key]

    def fval(f: Functional, env):
        return functions[f.name](*(env[a] for a in f.args))

    def ev(x: Expr, env) -> float:
        if isinstance(x, One):
            return 1.0
        if isinstance(x, Prob):
            if x.regime:
                raise ValueError("cannot evaluate an interventional term")
            joint = {v: env[v] for v in x.targets + x.given}
            if any(joint[v] != env[v] for v in joint):
                return 0.0
            num = p(joint)
            if not x.given:
                return num
            den = p({v: env[v] for v in x.given})
            return num / den if den > 0 else float("nan")
        if isinstance(x, Integral):
            total = 0.0
            for val in support[x.var]:
                total += ev(x.body, {**env, x.var: val})
            return total
        if isinstance(x, Product):
            out = 1.0
            for c in x.children:
                out *= ev(c, env)
                if out == 0.0:
                    return 0.0
            return out
        if isinstance(x, Sum):
            return sum(ev(c, env) for c in x.children)
        if isinstance(x, Fraction):
            num = ev(x.num, env)
            den = ev(x.den, env)
            if den == 0:
                return 0.0 if num == 0 else float("nan")
            return num / den
        if isinstance(x, DeltaSubstitute):
            return 1.0 if env[x.var] == fval(x.functional, env) else 0.0
        if isinstance(x, InnerExpectation):
            if inner is None:
                raise ValueError("inner expectation needs an evaluator")
            of = fval(x.of, env) if isinstance(x.of, Functional) else env[x.of]
            return inner(x.outcome, of)
        if isinstance(x, ExpectationWrapper):
            total = 0.0
            for val in support[x.var]:
                e2 = {**env, x.var: val}
                total += ev(x.dist, e2) * ev(x.inner, e2)
            return total
        raise TypeError(type(x).__name__)

    return ev(e, dict(env))


def assignments(variables: list[str], support: Mapping[str, Iterable]):
    """All joint assignments of ``variables`` as dicts."""
    for vals in itertools.product(*(list(support[v]) for v in variables)):
        yield dict(zip(variables, vals))
