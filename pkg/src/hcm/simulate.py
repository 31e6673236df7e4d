"""Seeded sampling from hierarchical models, plus true-effect oracles.

A model is a list of :class:`VariableSpec` in topological order. Unit
variables draw once per unit. A subunit variable first draws, per unit, one
latent parameter for every configuration of its (binary) subunit parents;
that is its Q variable. The m subunit values are then Bernoulli draws from
the configuration each row falls in. Unit variables see subunit variables
only through declared aggregates.

Unit ``i`` draws from its own stream ``SeedSequence(seed, spawn_key=(i,))``
so any subset of units can be regenerated independently.
"""

from __future__ import annotations

import csv
import enum
import itertools
import json
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Family",
    "Link",
    "Affine",
    "Draw",
    "Aggregate",
    "VariableSpec",
    "MechanismSpec",
    "HierDataset",
    "InvalidSpec",
    "DomainError",
    "sample_hcgm",
    "sample_latents",
    "unit_rng",
    "confounder_spec",
    "interference_spec",
    "instrument_spec",
    "spec_for",
    "true_effect_confounder",
    "true_effect_interference",
    "true_effect_instrument",
    "true_ate",
    "interference_integral",
    "LOGIT_EPS",
]

LOGIT_EPS = 1e-6


class InvalidSpec(ValueError):
    pass


class DomainError(ValueError):
    pass


class Family(str, enum.Enum):
    BERNOULLI = "bernoulli"
    BETA = "beta"
    NORMAL = "normal"
    HALF_CAUCHY = "half_cauchy"
    POINT_MASS = "point_mass"


_ARITY = {
    Family.BERNOULLI: 1,
    Family.BETA: 2,
    Family.NORMAL: 2,
    Family.HALF_CAUCHY: 1,
    Family.POINT_MASS: 1,
}


class Link(str, enum.Enum):
    IDENTITY = "identity"
    LOGISTIC = "logistic"
    LOGIT = "logit"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.clip(p, LOGIT_EPS, 1 - LOGIT_EPS)
    return np.log(p / (1 - p))


def _apply(link: Link, x):
    if link is Link.LOGISTIC:
        return _sigmoid(x)
    if link is Link.LOGIT:
        return _logit(x)
    return x


@dataclass(frozen=True)
class Affine:
    """``link(const + Σ coef · ∏ inputs)``; an empty input tuple is a constant term."""

    const: float = 0.0
    terms: tuple[tuple[float, tuple[str, ...]], ...] = ()
    link: Link = Link.IDENTITY

    def __call__(self, env: Mapping[str, float]) -> float:
        total = self.const
        for coef, names in self.terms:
            v = coef
            for n in names:
                v = v * env[n]
            total = total + v
        return float(_apply(self.link, total))

    def inputs(self) -> set[str]:
        return {n for _, names in self.terms for n in names}

    def to_json(self) -> dict:
        return {"const": self.const, "terms": [[c, list(n)] for c, n in self.terms],
                "link": self.link.value}


def const(c: float) -> Affine:
    return Affine(float(c))


@dataclass(frozen=True)
class Draw:
    family: Family
    params: tuple[Affine, ...]

    def __post_init__(self):
        if len(self.params) != _ARITY[self.family]:
            raise InvalidSpec(f"{self.family.value} takes {_ARITY[self.family]} parameter(s)")

    def evaluate(self, env: Mapping[str, float]) -> tuple[float, ...]:
        vals = tuple(p(env) for p in self.params)
        _check_domain(self.family, vals)
        return vals

    def sample(self, rng: np.random.Generator, env: Mapping[str, float]) -> float:
        vals = self.evaluate(env)
        f = self.family
        if f is Family.BERNOULLI:
            return float(rng.random() < vals[0])
        if f is Family.BETA:
            return float(rng.beta(vals[0], vals[1]))
        if f is Family.NORMAL:
            return float(rng.normal(vals[0], vals[1]))
        if f is Family.HALF_CAUCHY:
            return float(abs(rng.standard_cauchy()) * vals[0])
        return float(vals[0])

    def to_json(self) -> dict:
        return {"family": self.family.value, "params": [p.to_json() for p in self.params]}


def _check_domain(family: Family, vals: tuple[float, ...]) -> None:
    if any(not math.isfinite(v) for v in vals):
        raise InvalidSpec(f"non-finite {family.value} parameter {vals}")
    if family is Family.BERNOULLI and not 0.0 <= vals[0] <= 1.0:
        raise InvalidSpec(f"Bernoulli mean {vals[0]} outside [0, 1]")
    if family is Family.BETA and (vals[0] <= 0 or vals[1] <= 0):
        raise InvalidSpec(f"Beta parameters must be positive, got {vals}")
    if family in (Family.NORMAL, Family.HALF_CAUCHY) and vals[-1] <= 0:
        raise InvalidSpec(f"{family.value} scale must be positive, got {vals[-1]}")


@dataclass(frozen=True)
class Aggregate:
    """``post(mean of source over the unit's subunits)``, exposed to unit mechanisms as ``name``."""

    name: str
    source: str
    post: Link = Link.IDENTITY


@dataclass(frozen=True)
class VariableSpec:
    """Mechanism of one variable.

    Unit variables use ``draw`` over unit values and ``aggregates``.
    Subunit variables use ``latent`` (one draw per unit and parent
    configuration, seeing unit values and the configuration) and ``mean``,
    which maps ``latent`` and the configuration to a Bernoulli mean.
    """

    name: str
    level: str
    observed: bool = True
    draw: Draw | None = None
    aggregates: tuple[Aggregate, ...] = ()
    subunit_parents: tuple[str, ...] = ()
    latent: Draw | None = None
    mean: Affine = Affine(0.0, ((1.0, ("latent",)),))

    @property
    def is_unit(self) -> bool:
        return self.level == "unit"


@dataclass(frozen=True)
class MechanismSpec:
    name: str
    variables: tuple[VariableSpec, ...]
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        seen: dict[str, VariableSpec] = {}
        for v in self.variables:
            if v.name in seen:
                raise InvalidSpec(f"duplicate variable {v.name}")
            if v.is_unit:
                if v.draw is None:
                    raise InvalidSpec(f"unit variable {v.name} needs a draw")
                for a in v.aggregates:
                    src = seen.get(a.source)
                    if src is None or src.is_unit:
                        raise InvalidSpec(f"aggregate {a.name} needs an earlier subunit source")
                known = {k for k, s in seen.items() if s.is_unit} | {a.name for a in v.aggregates}
                missing = {n for p in v.draw.params for n in p.inputs()} - known
            else:
                if v.latent is None:
                    raise InvalidSpec(f"subunit variable {v.name} needs a latent draw")
                for p in v.subunit_parents:
                    if p not in seen or seen[p].is_unit:
                        raise InvalidSpec(f"{p} is not an earlier subunit variable")
                units = {k for k, s in seen.items() if s.is_unit}
                missing = {n for p in v.latent.params for n in p.inputs()} - units - set(v.subunit_parents)
                missing |= v.mean.inputs() - {"latent"} - set(v.subunit_parents)
            if missing:
                raise InvalidSpec(f"{v.name} reads undefined inputs {sorted(missing)}")
            seen[v.name] = v

    def var(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def configs(self, name: str) -> list[tuple[int, ...]]:
        """Parent configurations of a subunit variable, in latent-column order."""
        k = len(self.var(name).subunit_parents)
        return [tuple(reversed(c)) for c in itertools.product((0, 1), repeat=k)]

    def to_json(self) -> dict:
        out = []
        for v in self.variables:
            d: dict = {"name": v.name, "level": v.level, "observed": v.observed}
            if v.draw is not None:
                d["draw"] = v.draw.to_json()
            if v.aggregates:
                d["aggregates"] = [{"name": a.name, "source": a.source, "post": a.post.value}
                                   for a in v.aggregates]
            if v.latent is not None:
                d["subunit_parents"] = list(v.subunit_parents)
                d["latent"] = v.latent.to_json()
                d["mean"] = v.mean.to_json()
            out.append(d)
        return {"name": self.name, "params": dict(self.params), "variables": out}


@dataclass
class HierDataset:
    """``unit[name]`` has shape (n,), ``subunit[name]`` (n, m).

    ``latents`` keeps hidden unit values and each subunit variable's
    per-configuration Bernoulli means, shape (n, configs).
    """

    n: int
    m: int
    unit: dict[str, np.ndarray]
    subunit: dict[str, np.ndarray]
    latents: dict[str, np.ndarray]
    seed: int
    spec: MechanismSpec | None = None

    def subset(self, n: int, m: int) -> "HierDataset":
        if n > self.n or m > self.m:
            raise ValueError(f"subset ({n}, {m}) exceeds ({self.n}, {self.m})")
        return HierDataset(
            n, m,
            {k: v[:n] for k, v in self.unit.items()},
            {k: v[:n, :m] for k, v in self.subunit.items()},
            {k: v[:n] for k, v in self.latents.items()},
            self.seed, self.spec,
        )

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "n": self.n,
            "m": self.m,
            "unit_columns": list(self.unit),
            "subunit_columns": list(self.subunit),
            "spec": self.spec.to_json() if self.spec else None,
        }

    def to_csv(self, path: str | Path) -> tuple[Path, Path]:
        """One row per subunit; unit values are repeated. Writes ``<path>.json`` too."""
        path = Path(path)
        cols = list(self.subunit) + list(self.unit)
        unit_idx = np.repeat(np.arange(self.n), self.m)
        sub_idx = np.tile(np.arange(self.m), self.n)
        data = [unit_idx, sub_idx]
        data += [self.subunit[c].reshape(-1) for c in self.subunit]
        data += [np.repeat(self.unit[c], self.m) for c in self.unit]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(",".join(["unit", "subunit"] + cols) + "\n")
            table = np.column_stack(data)
            fmt = ["%d", "%d"] + [_fmt(self.subunit[c]) for c in self.subunit] + \
                  [_fmt(self.unit[c]) for c in self.unit]
            np.savetxt(fh, table, fmt=fmt, delimiter=",")
        side = path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path, side

    @classmethod
    def from_csv(cls, path: str | Path) -> "HierDataset":
        path = Path(path)
        side_path = path.with_suffix(path.suffix + ".json")
        side = json.loads(side_path.read_text(encoding="utf-8")) if side_path.exists() else {}
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh))
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        units = table[:, 0].astype(int)
        subs = table[:, 1].astype(int)
        n, m = int(units.max()) + 1, int(subs.max()) + 1
        if len(table) != n * m:
            raise ValueError("dataset is not rectangular")
        order = np.lexsort((subs, units))
        table = table[order]
        unit_cols = side.get("unit_columns")
        sub_cols = side.get("subunit_columns")
        if unit_cols is None:
            sub_cols, unit_cols = [], []
            for j, c in enumerate(header[2:], start=2):
                col = table[:, j].reshape(n, m)
                (unit_cols if np.all(col == col[:, :1]) else sub_cols).append(c)
        unit, subunit = {}, {}
        for j, c in enumerate(header[2:], start=2):
            col = table[:, j].reshape(n, m)
            if c in unit_cols:
                unit[c] = _cast(col[:, 0])
            else:
                subunit[c] = _cast(col)
        return cls(n, m, unit, subunit, {}, int(side.get("seed", 0)))


def _fmt(a: np.ndarray) -> str:
    return "%d" if np.issubdtype(a.dtype, np.integer) else "%.17g"


def _cast(a: np.ndarray) -> np.ndarray:
    return a.astype(np.int8) if np.all(np.isin(a, (0, 1))) else a


def unit_rng(seed: int, unit: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for one unit; ``stream`` separates independent uses."""
    key = (unit,) if stream == 0 else (unit, stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _expected_mean(spec: MechanismSpec, means: Mapping[str, np.ndarray], source: str) -> float:
    """Within-unit mean of ``source`` under the unit's Q variables (the m → ∞ aggregate)."""
    names = list(means)
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(names)):
        cell = dict(zip(names, bits))
        p = 1.0
        for name in names:
            idx = sum(cell[q] << b for b, q in enumerate(spec.var(name).subunit_parents))
            mu = means[name][idx]
            p *= mu if cell[name] else 1.0 - mu
        total += p * cell[source]
    return total


def _sample_unit(spec: MechanismSpec, rng: np.random.Generator, m: int, with_subunits: bool):
    env: dict[str, float] = {}
    subs: dict[str, np.ndarray] = {}
    means: dict[str, np.ndarray] = {}
    for v in spec.variables:
        if v.is_unit:
            local = dict(env)
            for a in v.aggregates:
                raw = float(subs[a.source].mean()) if with_subunits else _expected_mean(spec, means, a.source)
                local[a.name] = float(_apply(a.post, raw))
            env[v.name] = v.draw.sample(rng, local)
            continue
        k = len(v.subunit_parents)
        mu = np.empty(2 ** k)
        for c, cfg in enumerate(spec.configs(v.name)):
            local = dict(env)
            local.update(zip(v.subunit_parents, cfg))
            lat = v.latent.sample(rng, local)
            local["latent"] = lat
            mu[c] = v.mean(local)
            if not 0.0 <= mu[c] <= 1.0:
                raise InvalidSpec(f"{v.name} mean {mu[c]} outside [0, 1]")
        means[v.name] = mu
        if with_subunits:
            idx = np.zeros(m, dtype=np.int64)
            for b, p in enumerate(v.subunit_parents):
                idx += subs[p].astype(np.int64) << b
            subs[v.name] = (rng.random(m) < mu[idx]).astype(np.int8)
    return env, subs, means


def sample_hcgm(spec: MechanismSpec, n: int, m: int, seed: int) -> HierDataset:
    """Draw ``n`` units of ``m`` subunits each. Bitwise reproducible given ``seed``."""
    if n < 1 or m < 1:
        raise DomainError("n and m must be positive")
    unit_vals = {v.name: np.empty(n) for v in spec.variables if v.is_unit}
    sub_vals = {v.name: np.empty((n, m), dtype=np.int8) for v in spec.variables if not v.is_unit}
    lat = {v.name: np.empty((n, 2 ** len(v.subunit_parents)))
           for v in spec.variables if not v.is_unit}
    for i in range(n):
        env, subs, means = _sample_unit(spec, unit_rng(seed, i), m, True)
        for k, val in env.items():
            unit_vals[k][i] = val
        for k, arr in subs.items():
            sub_vals[k][i] = arr
        for k, mu in means.items():
            lat[k][i] = mu
    unit, latents = {}, {}
    for v in spec.variables:
        if v.is_unit:
            arr = unit_vals[v.name]
            if v.draw.family is Family.BERNOULLI:
                arr = arr.astype(np.int8)
            (unit if v.observed else latents)[v.name] = arr
        else:
            latents[v.name] = lat[v.name]
    subunit = {v.name: sub_vals[v.name] for v in spec.variables if not v.is_unit and v.observed}
    return HierDataset(n, m, unit, subunit, latents, seed, spec)


def sample_latents(spec: MechanismSpec, n: int, seed: int) -> dict[str, np.ndarray]:
    """Draws from the collapsed model: Q parameters and unit values, no subunits.

    Aggregates take their infinite-subunit values, the mean implied by the
    unit's Q variables.
    """
    out: dict[str, list] = {}
    for i in range(n):
        env, _, means = _sample_unit(spec, unit_rng(seed, i, stream=7), 0, False)
        for k, val in env.items():
            out.setdefault(k, []).append(val)
        for k, mu in means.items():
            out.setdefault(k, []).append(mu)
    return {k: np.asarray(v) for k, v in out.items()}


# ------------------------------------------------------------ the three models


def _unit_interval(name: str, x: float) -> float:
    if not (isinstance(x, (int, float)) and 0.0 <= float(x) <= 1.0):
        raise DomainError(f"{name} must lie in [0, 1], got {x!r}")
    return float(x)


def _open_interval(name: str, x: float) -> float:
    if not (isinstance(x, (int, float)) and 0.0 < float(x) < 1.0):
        raise DomainError(f"{name} must lie in (0, 1), got {x!r}")
    return float(x)


# α^a(u) and α^{y|a}(a, u) written as affine maps of the binary inputs
CONFOUNDER_ALPHA_A = Affine(0.5, ((3.5, ("U",)),))
CONFOUNDER_ALPHA_Y = Affine(0.5, ((1.5, ("A",)), (0.5, ("U",)), (1.5, ("A", "U"))))
CONFOUNDER_BETA_A = 1.0
CONFOUNDER_BETA_Y = 2.0


def confounder_spec(omega: float) -> MechanismSpec:
    omega = _unit_interval("omega", omega)
    return MechanismSpec(
        "confounder",
        (
            VariableSpec("U", "unit", False, Draw(Family.BERNOULLI, (const(omega),))),
            VariableSpec("A", "subunit",
                         latent=Draw(Family.BETA, (CONFOUNDER_ALPHA_A, const(CONFOUNDER_BETA_A)))),
            VariableSpec("Y", "subunit", subunit_parents=("A",),
                         latent=Draw(Family.BETA, (CONFOUNDER_ALPHA_Y, const(CONFOUNDER_BETA_Y)))),
        ),
        {"omega": omega},
    )


def interference_spec(rho: float) -> MechanismSpec:
    if not (isinstance(rho, (int, float)) and math.isfinite(rho)):
        raise DomainError(f"rho must be finite, got {rho!r}")
    rho = float(rho)
    logistic_latent = Affine(0.0, ((1.0, ("latent",)),), Link.LOGISTIC)
    return MechanismSpec(
        "interference",
        (
            VariableSpec("U", "unit", False, Draw(Family.NORMAL, (const(0.0), const(1.0)))),
            VariableSpec("A", "subunit",
                         latent=Draw(Family.NORMAL, (Affine(0.0, ((0.5, ("U",)),)), const(1.0))),
                         mean=logistic_latent),
            VariableSpec("Z", "unit", True,
                         Draw(Family.BERNOULLI, (Affine(-0.8, ((2.0, ("logit_abar",)),), Link.LOGISTIC),)),
                         aggregates=(Aggregate("logit_abar", "A", Link.LOGIT),)),
            VariableSpec("Y", "subunit", subunit_parents=("A",),
                         latent=Draw(Family.NORMAL, (
                             Affine(-rho, ((0.5, ("A",)), (2.0 * rho, ("Z",)), (0.5, ("U",)))),
                             const(0.1),
                         )),
                         mean=logistic_latent),
        ),
        {"rho": rho},
    )


def instrument_spec(omega: float) -> MechanismSpec:
    omega = _unit_interval("omega", omega)
    return MechanismSpec(
        "instrument",
        (
            VariableSpec("U", "unit", False, Draw(Family.BERNOULLI, (const(omega),))),
            VariableSpec("Z", "subunit", latent=Draw(Family.BETA, (const(2.0), const(2.0)))),
            VariableSpec("A", "subunit", subunit_parents=("Z",),
                         latent=Draw(Family.BETA, (Affine(2.0, ((-1.8, ("U",)),)),
                                                   Affine(0.2, ((1.8, ("U",)),)))),
                         mean=Affine(0.0, ((0.8, ("Z",)), (0.2, ("latent",))))),
            VariableSpec("Y", "unit", True,
                         Draw(Family.BERNOULLI, (Affine(0.45, ((-0.4, ("U",)), (0.5, ("abar",)))),)),
                         aggregates=(Aggregate("abar", "A"),)),
        ),
        {"omega": omega},
    )


def spec_for(motif: str, omega: float = 0.0, rho: float = 0.0) -> MechanismSpec:
    if motif == "confounder":
        return confounder_spec(omega)
    if motif == "interference":
        return interference_spec(rho)
    if motif == "instrument":
        return instrument_spec(omega)
    raise DomainError(f"unknown motif {motif!r}")


# ------------------------------------------------------------------ oracles


def true_effect_confounder(omega: float, a_star: int) -> float:
    """E[E_Q[Y]] under do(q^a = point mass at a_star)."""
    omega = _unit_interval("omega", omega)
    if a_star not in (0, 1):
        raise DomainError(f"a_star must be 0 or 1, got {a_star!r}")
    total = 0.0
    for u, w in ((0, 1.0 - omega), (1, omega)):
        alpha = CONFOUNDER_ALPHA_Y({"A": a_star, "U": u})
        total += w * alpha / (alpha + CONFOUNDER_BETA_Y)
    return total


def _trapezoid(f, lo: float = -8.0, hi: float = 8.0, points: int = 201) -> float:
    x = np.linspace(lo, hi, points)
    y = f(x) * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    h = x[1] - x[0]
    return float(h * (y.sum() - 0.5 * (y[0] + y[-1])))


def _gauss_hermite(f, nodes: int = 64) -> float:
    x, w = np.polynomial.hermite_e.hermegauss(nodes)
    return float(np.sum(w * f(x)) / math.sqrt(2 * math.pi))


INTERFERENCE_SCALE = math.sqrt(0.5 ** 2 + 0.1 ** 2)


def interference_integral(a: int, z: int, rho: float, rule: str = "trapezoid") -> float:
    """∫ N(x | 0, 1) σ(0.5 a + ρ(2z − 1) + s·x) dx with s = √(0.5² + 0.1²)."""
    shift = 0.5 * a + rho * (2 * z - 1)

    def f(x):
        return _sigmoid(shift + INTERFERENCE_SCALE * x)

    return _trapezoid(f) if rule == "trapezoid" else _gauss_hermite(f)


def true_effect_interference(rho: float, mu_star: float, rule: str = "trapezoid") -> float:
    """E[E_Q[Y]] under do(q^a = Bernoulli(mu_star)) as m → ∞."""
    mu_star = _open_interval("mu_star", mu_star)
    if not math.isfinite(rho):
        raise DomainError("rho must be finite")
    pz = float(_sigmoid(2 * _logit(mu_star) - 0.8))
    total = 0.0
    for a in (0, 1):
        wa = mu_star if a else 1 - mu_star
        for z in (0, 1):
            wz = pz if z else 1 - pz
            total += wa * wz * interference_integral(a, z, rho, rule)
    return total


def true_effect_instrument(omega: float, mu_star: float) -> float:
    """E[Y] under do(q^a = Bernoulli(mu_star)) as m → ∞."""
    omega = _unit_interval("omega", omega)
    mu_star = _unit_interval("mu_star", mu_star)
    return 0.45 - 0.4 * omega + 0.5 * mu_star


def true_ate(motif: str, omega: float = 0.0, rho: float = 0.0,
             hi: float = 0.75, lo: float = 0.25) -> float:
    """Contrast each experiment reports: a⋆ = 1 vs 0, or Bern(hi) vs Bern(lo)."""
    if motif == "confounder":
        return true_effect_confounder(omega, 1) - true_effect_confounder(omega, 0)
    if motif == "interference":
        return true_effect_interference(rho, hi) - true_effect_interference(rho, lo)
    if motif == "instrument":
        return true_effect_instrument(omega, hi) - true_effect_instrument(omega, lo)
    raise DomainError(f"unknown motif {motif!r}")
