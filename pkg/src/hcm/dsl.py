"""Reader and writer for the ``.hcm`` text format.

Example::

    hcm Confounder {
      unit hidden U
      subunit observed A
      subunit observed Y
      U -> A
      U -> Y
      A -> Y
    }
    query {
      intervene A ~ soft
      outcome Y
    }

Statements are line oriented, ``;`` may also separate statements and ``#``
starts a comment. ``intervene A ~ soft | X, Z`` requests an intervention
conditional on subunit parents, ``intervene W = hard`` a hard unit-level
intervention.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from .graph import (
    CycleDetected,
    DuplicateName,
    HierGraph,
    Level,
    Variable,
    validate_hcm,
)

__all__ = [
    "InterventionKind",
    "OutcomeForm",
    "QuerySpec",
    "SourceLocation",
    "HcmSyntaxError",
    "SemanticError",
    "parse_hcm",
    "serialize_hcm",
    "load_hcm",
]


class InterventionKind(str, enum.Enum):
    HARD_UNIT = "hard"
    SOFT_SUBUNIT = "soft"
    CONDITIONAL_SOFT_SUBUNIT = "conditional-soft"


class OutcomeForm(str, enum.Enum):
    UNIT_VALUE = "unit-value"
    SUBUNIT_MARGINAL = "subunit-marginal"


@dataclass(frozen=True)
class SourceLocation:
    line: int
    col: int


@dataclass(frozen=True)
class QuerySpec:
    """An interventional query on an HCM.

    ``conditioning`` is non-empty only for conditional soft interventions,
    and ``label`` names the intervention value or distribution symbolically.
    """

    treatment: int
    kind: InterventionKind
    outcome: int
    outcome_form: OutcomeForm
    conditioning: frozenset[int] = frozenset()
    label: str = "q*"

    def structure(self, graph: HierGraph) -> tuple:
        return (
            graph.name_of(self.treatment),
            self.kind.value,
            graph.name_of(self.outcome),
            self.outcome_form.value,
            frozenset(graph.names(self.conditioning)),
        )


class HcmSyntaxError(SyntaxError):
    """Malformed input; ``line`` and ``col`` are 1-based."""

    def __init__(self, line: int, col: int, expected: str, found: str = ""):
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found
        got = f", found {found!r}" if found else ""
        super().__init__(f"{line}:{col}: expected {expected}{got}")

    def __str__(self) -> str:
        return self.msg


class SemanticError(ValueError):
    def __init__(self, message: str, location: SourceLocation | None = None):
        self.location = location
        prefix = f"{location.line}:{location.col}: " if location else ""
        super().__init__(prefix + message)


_TOKEN = re.compile(r"\s*(?:(->)|([A-Za-z_][A-Za-z0-9_']*)|([{}~=|,;])|(\S))")


@dataclass
class _Tok:
    text: str
    line: int
    col: int

    @property
    def loc(self) -> SourceLocation:
        return SourceLocation(self.line, self.col)


def _tokenize(text: str) -> list[list[_Tok]]:
    """Split into statements; each statement is a list of tokens."""
    statements: list[list[_Tok]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        current: list[_Tok] = []
        pos = 0
        while pos < len(line):
            m = _TOKEN.match(line, pos)
            if m is None or m.end() == pos:
                break
            if m.group(4):
                col = m.start(4) + 1
                raise HcmSyntaxError(lineno, col, "identifier or punctuation", m.group(4))
            tok = m.group(1) or m.group(2) or m.group(3)
            start = m.start(m.lastindex) + 1
            pos = m.end()
            if tok == ";":
                if current:
                    statements.append(current)
                current = []
                continue
            if tok in "{}" and current:
                # braces always stand alone so that `hcm X {` splits cleanly
                if tok == "{":
                    current.append(_Tok(tok, lineno, start))
                    statements.append(current)
                    current = []
                    continue
                statements.append(current)
                current = []
            current.append(_Tok(tok, lineno, start))
            if tok == "}":
                statements.append(current)
                current = []
        if current:
            statements.append(current)
    return statements


@dataclass
class _Parsed:
    name: str
    decls: list[tuple[str, Level, bool, SourceLocation]] = field(default_factory=list)
    edges: list[tuple[_Tok, _Tok]] = field(default_factory=list)
    query: dict | None = None


def _expect(tokens: list[_Tok], i: int, what: str, ok, last: _Tok) -> _Tok:
    if i >= len(tokens):
        raise HcmSyntaxError(last.line, last.col + len(last.text), what)
    tok = tokens[i]
    if not ok(tok.text):
        raise HcmSyntaxError(tok.line, tok.col, what, tok.text)
    return tok


def _is_ident(s: str) -> bool:
    return re.fullmatch(r"[A-Za-z_][A-Za-z0-9_']*", s) is not None


_KEYWORDS = {"hcm", "unit", "subunit", "observed", "hidden", "query", "intervene",
             "outcome", "soft", "hard"}


def _name(s: str) -> bool:
    return _is_ident(s) and s not in _KEYWORDS


def _parse_statements(stmts: list[list[_Tok]]) -> _Parsed:
    if not stmts:
        raise HcmSyntaxError(1, 1, "'hcm'")
    it = iter(stmts)
    head = next(it)
    _expect(head, 0, "'hcm'", lambda s: s == "hcm", head[0])
    name = _expect(head, 1, "model name", _name, head[0])
    _expect(head, 2, "'{'", lambda s: s == "{", name)
    if len(head) > 3:
        t = head[3]
        raise HcmSyntaxError(t.line, t.col, "end of line", t.text)
    parsed = _Parsed(name.text)

    state = "graph"
    for st in it:
        first = st[0]
        if state == "done":
            if first.text == "query":
                _expect(st, 1, "'{'", lambda s: s == "{", first)
                parsed.query = {"loc": first.loc}
                state = "query"
                continue
            raise HcmSyntaxError(first.line, first.col, "'query' or end of file", first.text)
        if first.text == "}":
            if len(st) > 1:
                raise HcmSyntaxError(st[1].line, st[1].col, "end of line", st[1].text)
            if state == "graph":
                state = "done"
            elif state == "query":
                state = "after-query"
            continue
        if state == "after-query":
            raise HcmSyntaxError(first.line, first.col, "end of file", first.text)
        if state == "graph":
            _graph_statement(st, parsed)
        else:
            _query_statement(st, parsed)
    if state == "graph":
        last = stmts[-1][-1]
        raise HcmSyntaxError(last.line, last.col + len(last.text), "'}'")
    if state == "query":
        last = stmts[-1][-1]
        raise HcmSyntaxError(last.line, last.col + len(last.text), "'}' closing query")
    return parsed


def _graph_statement(st: list[_Tok], parsed: _Parsed) -> None:
    first = st[0]
    if first.text in ("unit", "subunit"):
        obs = _expect(st, 1, "'observed' or 'hidden'", lambda s: s in ("observed", "hidden"), first)
        nm = _expect(st, 2, "variable name", _name, obs)
        if len(st) > 3:
            raise HcmSyntaxError(st[3].line, st[3].col, "end of statement", st[3].text)
        parsed.decls.append((nm.text, Level(first.text), obs.text == "observed", nm.loc))
        return
    if _name(first.text):
        _expect(st, 1, "'->'", lambda s: s == "->", first)
        dst = _expect(st, 2, "variable name", _name, st[1])
        if len(st) > 3:
            raise HcmSyntaxError(st[3].line, st[3].col, "end of statement", st[3].text)
        parsed.edges.append((first, dst))
        return
    raise HcmSyntaxError(first.line, first.col, "declaration or edge", first.text)


def _query_statement(st: list[_Tok], parsed: _Parsed) -> None:
    q = parsed.query
    first = st[0]
    if first.text == "intervene":
        if "treatment" in q:
            raise HcmSyntaxError(first.line, first.col, "a single 'intervene'", first.text)
        v = _expect(st, 1, "variable name", _name, first)
        op = _expect(st, 2, "'~' or '='", lambda s: s in ("~", "="), v)
        if op.text == "=":
            _expect(st, 3, "'hard'", lambda s: s == "hard", op)
            rest = st[4:]
            if rest:
                raise HcmSyntaxError(rest[0].line, rest[0].col, "end of statement", rest[0].text)
            q.update(treatment=v, kind=InterventionKind.HARD_UNIT, cond=[])
            return
        _expect(st, 3, "'soft'", lambda s: s == "soft", op)
        cond: list[_Tok] = []
        if len(st) > 4:
            _expect(st, 4, "'|'", lambda s: s == "|", st[3])
            i = 5
            while True:
                c = _expect(st, i, "variable name", _name, st[i - 1])
                cond.append(c)
                i += 1
                if i >= len(st):
                    break
                _expect(st, i, "','", lambda s: s == ",", c)
                i += 1
        kind = InterventionKind.CONDITIONAL_SOFT_SUBUNIT if cond else InterventionKind.SOFT_SUBUNIT
        q.update(treatment=v, kind=kind, cond=cond)
        return
    if first.text == "outcome":
        if "outcome" in q:
            raise HcmSyntaxError(first.line, first.col, "a single 'outcome'", first.text)
        y = _expect(st, 1, "variable name", _name, first)
        if len(st) > 2:
            raise HcmSyntaxError(st[2].line, st[2].col, "end of statement", st[2].text)
        q["outcome"] = y
        return
    raise HcmSyntaxError(first.line, first.col, "'intervene' or 'outcome'", first.text)


def parse_hcm(text: str) -> tuple[HierGraph, QuerySpec | None]:
    """Parse ``.hcm`` text into a validated graph and an optional query."""
    parsed = _parse_statements(_tokenize(text))
    ids: dict[str, int] = {}
    variables = []
    locations: dict[str, SourceLocation] = {}
    for vname, level, obs, loc in parsed.decls:
        if vname in ids:
            raise SemanticError(str(DuplicateName(vname)), loc)
        ids[vname] = len(variables)
        locations[vname] = loc
        variables.append(Variable(ids[vname], vname, level, obs))
    edges = set()
    for a, b in parsed.edges:
        for tok in (a, b):
            if tok.text not in ids:
                raise SemanticError(f"unknown variable {tok.text!r}", tok.loc)
        if (ids[a.text], ids[b.text]) in edges:
            raise SemanticError(f"duplicate edge {a.text} -> {b.text}", a.loc)
        edges.add((ids[a.text], ids[b.text]))
    graph = HierGraph(parsed.name, tuple(variables), frozenset(edges))
    try:
        validate_hcm(graph)
    except CycleDetected as exc:
        raise SemanticError(str(exc), locations.get(exc.path[0])) from exc
    object.__setattr__(graph, "locations", locations)
    query = None
    if parsed.query is not None:
        query = _build_query(graph, parsed.query)
    return graph, query


def _build_query(graph: HierGraph, q: dict) -> QuerySpec:
    if "treatment" not in q or "outcome" not in q:
        loc = q["loc"]
        missing = "intervene" if "treatment" not in q else "outcome"
        raise SemanticError(f"query is missing an '{missing}' statement", loc)

    def lookup(tok: _Tok) -> Variable:
        if tok.text not in graph:
            raise SemanticError(f"unknown variable {tok.text!r}", tok.loc)
        return graph.var(tok.text)

    a = lookup(q["treatment"])
    y = lookup(q["outcome"])
    kind = q["kind"]
    if kind is InterventionKind.HARD_UNIT and not a.is_unit:
        raise SemanticError(f"hard interventions apply to unit variables; {a.name} is subunit",
                            q["treatment"].loc)
    if kind is not InterventionKind.HARD_UNIT and not a.is_subunit:
        raise SemanticError(f"soft interventions apply to subunit variables; {a.name} is unit",
                            q["treatment"].loc)
    cond = set()
    pa_s = set(graph.subunit_parents(a.id))
    for tok in q["cond"]:
        c = lookup(tok)
        if c.id not in pa_s:
            raise SemanticError(f"{c.name} is not a subunit parent of {a.name}", tok.loc)
        cond.add(c.id)
    if a.id == y.id:
        raise SemanticError("treatment and outcome must differ", q["outcome"].loc)
    form = OutcomeForm.UNIT_VALUE if y.is_unit else OutcomeForm.SUBUNIT_MARGINAL
    return QuerySpec(a.id, kind, y.id, form, frozenset(cond))


def serialize_hcm(graph: HierGraph, query: QuerySpec | None = None) -> str:
    lines = [f"hcm {graph.name} {{"]
    for v in graph.variables:
        lines.append(f"  {v.level.value} {'observed' if v.observed else 'hidden'} {v.name}")
    pos = {v.id: i for i, v in enumerate(graph.variables)}
    for a, b in sorted(graph.edges, key=lambda e: (pos[e[0]], pos[e[1]])):
        lines.append(f"  {graph.name_of(a)} -> {graph.name_of(b)}")
    lines.append("}")
    if query is not None:
        lines.append("query {")
        a = graph.name_of(query.treatment)
        if query.kind is InterventionKind.HARD_UNIT:
            lines.append(f"  intervene {a} = hard")
        elif query.conditioning:
            cond = sorted(query.conditioning, key=pos.get)
            lines.append(f"  intervene {a} ~ soft | " + ", ".join(graph.name_of(c) for c in cond))
        else:
            lines.append(f"  intervene {a} ~ soft")
        lines.append(f"  outcome {graph.name_of(query.outcome)}")
        lines.append("}")
    return "\n".join(lines) + "\n"


def load_hcm(path) -> tuple[HierGraph, QuerySpec | None]:
    with open(path, encoding="utf-8") as fh:
        return parse_hcm(fh.read())
