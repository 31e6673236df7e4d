"""Hierarchical normal model and an adaptive random-walk Metropolis sampler.

Model::

    ν ~ Normal(0, 5)          τ ~ HalfCauchy(5)
    μ_i ~ Normal(ν, τ)        μ̂_i ~ Normal(μ_i, σ_i)

The sampler works on (ν, log τ, μ_1..μ_n). Each sweep updates ν, then
log τ, then every μ_i; the μ_i are conditionally independent given (ν, τ),
so their proposals are accepted or rejected coordinate by coordinate in one
vectorized step. Chains are vectorized too. Step sizes adapt during burn-in
towards 30% acceptance and are frozen afterwards.
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

__all__ = [
    "SchoolSummary",
    "HierNormalModel",
    "Chains",
    "DivergentChain",
    "NotConverged",
    "load_schools",
    "log_posterior",
    "mh_sample",
    "rhat",
    "posterior_ate",
]


class DivergentChain(RuntimeError):
    def __init__(self, rhats: dict[str, float]):
        self.rhats = rhats
        worst = max(rhats, key=rhats.get)
        super().__init__(f"chains disagree: R-hat({worst}) = {rhats[worst]:.3f}")


class NotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SchoolSummary:
    name: str
    mu_hat: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"school {self.name}: sigma must be positive")


def load_schools(path: str | Path | None = None) -> list[SchoolSummary]:
    """Read ``school,mu_hat,sigma`` rows; defaults to the bundled eight-schools file."""
    if path is None:
        text = (resources.files("hcm") / "data" / "eight_schools.csv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    rows = csv.DictReader(text.splitlines())
    return [SchoolSummary(r["school"], float(r["mu_hat"]), float(r["sigma"])) for r in rows]


@dataclass(frozen=True)
class HierNormalModel:
    prior_mean: float = 0.0
    prior_sd: float = 5.0
    tau_scale: float = 5.0
    tau_fixed: float | None = None


def _log_halfcauchy(tau, scale):
    return math.log(2.0 / (math.pi * scale)) - np.log1p((tau / scale) ** 2)


def _log_normal(x, mean, sd):
    return -0.5 * ((x - mean) / sd) ** 2 - np.log(sd) - 0.5 * math.log(2 * math.pi)


def log_posterior(model: HierNormalModel, y: np.ndarray, sigma: np.ndarray,
                  nu, log_tau, mu) -> np.ndarray:
    """Unnormalised log density on the (ν, log τ, μ) scale, Jacobian included."""
    nu = np.asarray(nu, dtype=float)
    log_tau = np.asarray(log_tau, dtype=float)
    tau = np.exp(log_tau)
    mu = np.asarray(mu, dtype=float)
    lp = _log_normal(nu, model.prior_mean, model.prior_sd)
    if model.tau_fixed is None:
        lp = lp + _log_halfcauchy(tau, model.tau_scale) + log_tau
    if mu.shape[-1]:
        lp = lp + np.sum(_log_normal(mu, nu[..., None], tau[..., None]), axis=-1)
        lp = lp + np.sum(_log_normal(y, mu, sigma), axis=-1)
    return lp


@dataclass
class Chains:
    """Post-burn-in draws, each of shape (chains, iterations)."""

    draws: dict[str, np.ndarray]
    acceptance: dict[str, float]
    step: dict[str, float]
    seed: int
    rhats: dict[str, float] = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return next(iter(self.draws.values())).shape[0]

    @property
    def n_iter(self) -> int:
        return next(iter(self.draws.values())).shape[1]

    def to_csv(self, path: str | Path, thin: int = 1) -> Path:
        path = Path(path)
        names = list(self.draws)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "iteration"] + names)
            for c in range(self.n_chains):
                for t in range(0, self.n_iter, thin):
                    w.writerow([c, t] + [repr(float(self.draws[k][c, t])) for k in names])
        return path


def rhat(x: np.ndarray) -> float:
    """Split-chain potential scale reduction for draws of shape (chains, iterations)."""
    x = np.asarray(x, dtype=float)
    half = x.shape[1] // 2
    if half < 2:
        raise ValueError("need at least four iterations per chain")
    split = np.concatenate([x[:, :half], x[:, half:2 * half]], axis=0)
    n = split.shape[1]
    means = split.mean(axis=1)
    within = split.var(axis=1, ddof=1).mean()
    between = n * means.var(ddof=1)
    if within == 0:
        return 1.0 if between == 0 else math.inf
    var_hat = (n - 1) / n * within + between / n
    return float(math.sqrt(var_hat / within))


def mh_sample(schools: Sequence[SchoolSummary], model: HierNormalModel | None = None,
              iterations: int = 50_000, chains: int = 4, seed: int = 0,
              burn_in: int = 5_000, target: float = 0.3, check: bool = True) -> Chains:
    """Adaptive component-wise random-walk Metropolis.

    Raises :class:`DivergentChain` when ``check`` and some R-hat exceeds 1.1.
    """
    model = model or HierNormalModel()
    if chains < 2:
        raise ValueError("need at least two chains")
    if iterations < 4:
        raise ValueError("need at least four iterations")
    y = np.array([s.mu_hat for s in schools], dtype=float)
    sigma = np.array([s.sigma for s in schools], dtype=float)
    k = len(schools)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))

    nu = rng.normal(model.prior_mean, model.prior_sd, size=chains)
    fixed = model.tau_fixed is not None
    lt = np.full(chains, math.log(model.tau_fixed)) if fixed else rng.normal(math.log(model.tau_scale), 1.0, chains)
    mu = nu[:, None] + rng.normal(0, 1, size=(chains, k)) * (np.exp(lt)[:, None] if k else 0)

    s_nu, s_lt = 2.0, 0.5
    s_mu = np.full(k, 2.0)

    total = burn_in + iterations
    out_nu = np.empty((chains, iterations))
    out_tau = np.empty((chains, iterations))
    out_mu = np.empty((chains, iterations, k))
    acc_nu = acc_lt = 0.0
    acc_mu = np.zeros(k)
    win_nu = win_lt = 0.0
    win_mu = np.zeros(k)
    window = 100

    def mu_terms(mu_, nu_, tau_):
        return _log_normal(mu_, nu_[:, None], tau_[:, None]) + _log_normal(y, mu_, sigma)

    for t in range(total):
        tau = np.exp(lt)
        # ν | τ, μ
        prop = nu + s_nu * rng.standard_normal(chains)
        d = _log_normal(prop, model.prior_mean, model.prior_sd) - _log_normal(nu, model.prior_mean, model.prior_sd)
        if k:
            d = d + np.sum(_log_normal(mu, prop[:, None], tau[:, None])
                           - _log_normal(mu, nu[:, None], tau[:, None]), axis=1)
        ok = np.log(rng.random(chains)) < d
        nu = np.where(ok, prop, nu)
        a_nu = ok.mean()
        # log τ | ν, μ
        a_lt = 0.0
        if not fixed:
            prop = lt + s_lt * rng.standard_normal(chains)
            tp = np.exp(prop)
            d = (_log_halfcauchy(tp, model.tau_scale) + prop) - (_log_halfcauchy(tau, model.tau_scale) + lt)
            if k:
                d = d + np.sum(_log_normal(mu, nu[:, None], tp[:, None])
                               - _log_normal(mu, nu[:, None], tau[:, None]), axis=1)
            ok = np.log(rng.random(chains)) < d
            lt = np.where(ok, prop, lt)
            tau = np.exp(lt)
            a_lt = ok.mean()
        # μ_i | ν, τ, one coordinate each
        a_mu = np.zeros(k)
        if k:
            prop = mu + s_mu * rng.standard_normal((chains, k))
            d = mu_terms(prop, nu, tau) - mu_terms(mu, nu, tau)
            ok = np.log(rng.random((chains, k))) < d
            mu = np.where(ok, prop, mu)
            a_mu = ok.mean(axis=0)

        if t < burn_in:
            win_nu += a_nu
            win_lt += a_lt
            win_mu += a_mu
            if (t + 1) % window == 0:
                s_nu *= math.exp(win_nu / window - target)
                if not fixed:
                    s_lt *= math.exp(win_lt / window - target)
                s_mu *= np.exp(win_mu / window - target)
                win_nu = win_lt = 0.0
                win_mu[:] = 0.0
        else:
            i = t - burn_in
            out_nu[:, i] = nu
            out_tau[:, i] = tau
            out_mu[:, i] = mu
            acc_nu += a_nu
            acc_lt += a_lt
            acc_mu += a_mu

    draws = {"nu": out_nu, "tau": out_tau}
    names = [s.name for s in schools]
    for j, name in enumerate(names):
        draws[f"mu[{name}]"] = out_mu[:, :, j]
    acceptance = {"nu": acc_nu / iterations, "tau": acc_lt / iterations if not fixed else 1.0}
    step = {"nu": s_nu, "log_tau": s_lt}
    for j, name in enumerate(names):
        acceptance[f"mu[{name}]"] = float(acc_mu[j] / iterations)
        step[f"mu[{name}]"] = float(s_mu[j])
    result = Chains(draws, acceptance, step, seed)
    result.rhats = {p: rhat(v) for p, v in draws.items() if not (p == "tau" and fixed)}
    if check and any(r > 1.1 for r in result.rhats.values()):
        raise DivergentChain(result.rhats)
    return result


def posterior_ate(chains: Chains, param: str = "nu", rhat_max: float = 1.1) -> dict:
    """Pooled mean, sd and 5th/95th percentiles of ``param``."""
    x = chains.draws[param]
    r = rhat(x)
    if r > rhat_max:
        raise NotConverged(f"R-hat({param}) = {r:.3f} exceeds {rhat_max}")
    flat = x.reshape(-1)
    return {
        "param": param,
        "mean": float(flat.mean()),
        "sd": float(flat.std()),
        "p05": float(np.percentile(flat, 5)),
        "p95": float(np.percentile(flat, 95)),
        "rhat": r,
        "draws": int(flat.size),
    }


def summary_json(chains: Chains) -> str:
    body = {p: posterior_ate(chains, p, rhat_max=math.inf) for p in chains.draws}
    body["_acceptance"] = chains.acceptance
    body["_seed"] = chains.seed
    return json.dumps(body, indent=2, sort_keys=True)
