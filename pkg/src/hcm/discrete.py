"""Small discrete models for checking estimands against brute force.

Each node takes values ``0..card-1``. The joint is held as a dense array
(axes in node order) so observational marginals and truncated
factorizations are cheap for the handful of nodes used in tests.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np

from .estimand import Estimand, evaluate
from .graph import FlatGraph

__all__ = ["DiscreteModel", "random_dag", "random_model", "estimand_error"]


@dataclass
class DiscreteModel:
    """CPTs over a flat graph.

    ``cpts[v]`` has one axis per parent (in ``flat.parents(v)`` order) and a
    last axis over v. Deterministic nodes carry one-hot tables plus the
    function in ``functions``.
    """

    flat: FlatGraph
    card: dict[str, int]
    cpts: dict[str, np.ndarray]
    functions: dict[str, Callable[..., int]] = field(default_factory=dict)

    def __post_init__(self):
        self._axis = {n: i for i, n in enumerate(self.flat.nodes)}
        self._obs = None

    @property
    def support(self) -> dict[str, range]:
        return {n: range(self.card[n]) for n in self.flat.nodes}

    def joint(self, do: Mapping[str, int] | None = None) -> np.ndarray:
        """Full joint, or the truncated factorization under ``do``."""
        do = dict(do or {})
        nodes = self.flat.nodes
        shape = tuple(self.card[n] for n in nodes)
        out = np.ones(shape)
        for v in nodes:
            if v in do:
                table = np.zeros(self.card[v])
                table[do[v]] = 1.0
                parents: list[str] = []
            else:
                table = self.cpts[v]
                parents = self.flat.parents(v)
            axes = [self._axis[p] for p in parents] + [self._axis[v]]
            view = [1] * len(nodes)
            order = np.argsort(axes)
            t = np.transpose(table, order)
            for k, ax in enumerate(sorted(axes)):
                view[ax] = t.shape[k]
            out = out * t.reshape(view)
        return out

    def marginal(self, assign: Mapping[str, int], do: Mapping[str, int] | None = None) -> float:
        if do is None:
            if self._obs is None:
                self._obs = self.joint()
            j = self._obs
        else:
            j = self.joint(do)
        idx = tuple(assign[n] if n in assign else slice(None) for n in self.flat.nodes)
        return float(np.sum(j[idx]))

    def prob(self, assign: Mapping[str, int]) -> float:
        """Observational marginal over observed nodes; hidden names are rejected."""
        for n in assign:
            if n in self.flat.hidden:
                raise KeyError(f"{n} is hidden")
        return self.marginal(assign)


def random_dag(rng: np.random.Generator, n_nodes: int, p_edge: float = 0.5,
               n_hidden: int = 1, deterministic_sink: bool = False) -> FlatGraph:
    """Random DAG on ``V0..V{n-1}`` (declaration order is topological).

    The first ``n_hidden`` nodes are hidden roots with at least two children
    when possible, so they act as confounders. A deterministic sink reads all
    observed nodes before it.
    """
    names = [f"V{i}" for i in range(n_nodes)]
    edges = set()
    hidden = set(names[:n_hidden])
    for j in range(n_nodes):
        for i in range(j):
            if names[j] in hidden:
                continue
            if rng.random() < p_edge:
                edges.add((names[i], names[j]))
    for h in hidden:
        kids = [b for a, b in edges if a == h]
        pool = [n for n in names if n not in hidden]
        while len(kids) < 2 and len(pool) >= 2:
            c = pool[int(rng.integers(len(pool)))]
            if c not in kids:
                edges.add((h, c))
                kids.append(c)
    det = set()
    if deterministic_sink and n_nodes - n_hidden >= 3:
        sink = names[-1]
        edges = {e for e in edges if e[1] != sink}
        pa = [n for n in names[:-1] if n not in hidden]
        k = int(rng.integers(1, min(3, len(pa)) + 1))
        for p in rng.choice(pa, size=k, replace=False):
            edges.add((str(p), sink))
        det.add(sink)
    return FlatGraph(tuple(names), frozenset(edges), frozenset(hidden), frozenset(det))


def random_model(flat: FlatGraph, rng: np.random.Generator, max_card: int = 3,
                 alpha: float = 1.0, card: Mapping[str, int] | None = None) -> DiscreteModel:
    """Dirichlet CPTs with strictly positive entries; random tables for deterministic nodes."""
    card = dict(card or {})
    for n in flat.nodes:
        card.setdefault(n, int(rng.integers(2, max_card + 1)))
    cpts: dict[str, np.ndarray] = {}
    functions: dict[str, Callable[..., int]] = {}
    for v in flat.nodes:
        pa = flat.parents(v)
        pshape = tuple(card[p] for p in pa)
        if v in flat.deterministic:
            table = rng.integers(0, card[v], size=pshape)
            onehot = np.zeros(pshape + (card[v],))
            for idx in np.ndindex(*pshape):
                onehot[idx + (int(table[idx]),)] = 1.0
            cpts[v] = onehot
            functions[v] = (lambda t: (lambda *args: int(t[tuple(int(a) for a in args)])))(table)
        else:
            draws = rng.dirichlet(np.full(card[v], alpha), size=int(np.prod(pshape, dtype=int)))
            draws = np.clip(draws, 1e-3, None)
            draws /= draws.sum(axis=1, keepdims=True)
            cpts[v] = draws.reshape(pshape + (card[v],))
    return DiscreteModel(flat, card, cpts, functions)


def estimand_error(model: DiscreteModel, est: Estimand, do: Mapping[str, int],
                   outcome: list[str], inner: Callable[[str, object], float] | None = None,
                   wrapper_fn: Callable[[object], float] | None = None) -> float:
    """Largest gap between ``est`` and brute force over all outcome values.

    Free non-treatment constants (non-ancestors added by the recursion) are
    pinned to 0. With ``wrapper_fn`` the target is E[wrapper_fn(outcome) | do]
    and ``est`` is evaluated as a single number.
    """
    env = {n: 0 for n in est.treatments}
    env.update(do)
    funcs = dict(model.functions)
    det_args = {k: tuple(v) for k, v in est.deterministic.items()}
    for k in list(funcs):
        if k in det_args and tuple(model.flat.parents(k)) != det_args[k]:
            raise ValueError(f"parent order mismatch for {k}")
    if wrapper_fn is not None:
        (y,) = outcome
        truth = sum(model.marginal({y: val}, do) * wrapper_fn(val) for val in range(model.card[y]))
        got = evaluate(est.expr, env, model.prob, model.support, funcs, inner)
        return abs(got - truth)
    worst = 0.0
    grids = np.ndindex(*(model.card[y] for y in outcome))
    for vals in grids:
        assign = dict(zip(outcome, (int(v) for v in vals)))
        truth = model.marginal(assign, do)
        got = evaluate(est.expr, {**env, **assign}, model.prob, model.support, funcs, inner)
        worst = max(worst, abs(got - truth))
    return worst
