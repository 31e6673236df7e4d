"""Plug-in estimators for the three motifs and the aggregated baseline.

Per-unit Bernoulli estimates use Beta(1, 1) pseudocounts. Population-level
conditionals are linear or logistic regressions fitted here directly
(least squares and IRLS), so every estimator is a pure function of the data
and, for Monte Carlo steps, the dataset seed.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .simulate import LOGIT_EPS, HierDataset

__all__ = [
    "NonBinaryData",
    "DegenerateStratum",
    "ClassifierNotConverged",
    "SingularDesign",
    "BernoulliEst",
    "LinearModel",
    "LogisticModel",
    "EstimateResult",
    "logit",
    "sigmoid",
    "est_q_bernoulli",
    "est_q_cond_bernoulli",
    "fit_ols",
    "fit_logistic",
    "estimator_confounder",
    "estimator_confounder_soft",
    "estimator_interference",
    "estimator_instrument",
    "naive_regression_baseline",
    "MC_DRAWS",
]

MC_DRAWS = 100
_MC_STREAM = 0x5EED


class NonBinaryData(ValueError):
    pass


class DegenerateStratum(ValueError):
    def __init__(self, z, size: int):
        self.z = z
        self.size = size
        super().__init__(f"stratum z={z} has {size} unit(s); need at least 3")


class ClassifierNotConverged(RuntimeError):
    pass


class SingularDesign(ValueError):
    pass


def sigmoid(x):
    return special.expit(np.asarray(x, dtype=float))


def logit(p):
    """σ⁻¹ with inputs clamped to [1e-6, 1 − 1e-6]."""
    p = np.clip(np.asarray(p, dtype=float), LOGIT_EPS, 1 - LOGIT_EPS)
    return np.log(p / (1 - p))


def _binary(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.size and not np.all((x == 0) | (x == 1)):
        raise NonBinaryData(f"column {name} is not binary")
    return x.astype(np.int64)


@dataclass(frozen=True)
class BernoulliEst:
    """Smoothed means; shape (n,) for marginals, (n, 2) for conditionals on a binary parent.

    ``counts`` holds the matching denominators before smoothing.
    """

    mean: np.ndarray
    counts: np.ndarray

    @property
    def low_data(self) -> bool:
        return bool(np.any(self.counts < 2))


def est_q_bernoulli(x) -> BernoulliEst:
    """(Σ x + 1) / (m + 2) per unit."""
    x = _binary(np.atleast_2d(x), "x")
    m = x.shape[1]
    return BernoulliEst((x.sum(axis=1) + 1.0) / (m + 2.0), np.full(x.shape[0], m))


def est_q_cond_bernoulli(a, y) -> BernoulliEst:
    """μ̂(a) = (Σ y·1[a_j = a] + 1) / (Σ 1[a_j = a] + 2), columns a = 0, 1.

    A 1-d pair of columns is treated as a single unit.
    """
    a = _binary(np.atleast_2d(a), "treatment")
    y = _binary(np.atleast_2d(y), "outcome")
    if a.shape != y.shape:
        raise ValueError("treatment and outcome tables differ in shape")
    n1 = a.sum(axis=1)
    n0 = a.shape[1] - n1
    s1 = (a * y).sum(axis=1)
    s0 = y.sum(axis=1) - s1
    mean = np.column_stack([(s0 + 1.0) / (n0 + 2.0), (s1 + 1.0) / (n1 + 2.0)])
    return BernoulliEst(mean, np.column_stack([n0, n1]))


# ------------------------------------------------------------ regressions


@dataclass(frozen=True)
class LinearModel:
    intercept: float
    coef: np.ndarray
    resid_sd: float
    n: int

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self.intercept + X @ self.coef


def _design(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return np.column_stack([np.ones(len(X)), X])


def fit_ols(X, y) -> LinearModel:
    D = _design(X)
    y = np.asarray(y, dtype=float)
    if len(y) < D.shape[1]:
        raise SingularDesign(f"{len(y)} rows for {D.shape[1]} coefficients")
    beta, _, rank, sv = np.linalg.lstsq(D, y, rcond=None)
    if rank < D.shape[1] or sv[-1] <= 1e-10 * sv[0]:
        raise SingularDesign("design matrix is rank deficient")
    resid = y - D @ beta
    dof = max(len(y) - D.shape[1], 1)
    return LinearModel(float(beta[0]), beta[1:], float(np.sqrt(resid @ resid / dof)), len(y))


@dataclass(frozen=True)
class LogisticModel:
    intercept: float
    coef: np.ndarray
    iterations: int
    converged: bool
    center: np.ndarray = field(default_factory=lambda: np.zeros(0))
    scale: np.ndarray = field(default_factory=lambda: np.ones(0))

    def decision(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self.intercept + X @ self.coef

    def predict_proba(self, X) -> np.ndarray:
        return sigmoid(self.decision(X))


def _loglik(D, y, beta, l2):
    eta = D @ beta
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * l2 * np.sum(beta[1:] ** 2))


def fit_logistic(X, y, l2: float = 0.0, max_iter: int = 100, tol: float = 1e-10,
                 standardize: bool = True) -> LogisticModel:
    """Newton-Raphson (IRLS) with step halving; an optional ridge spares the intercept.

    Features are centred and scaled internally when ``standardize``; the
    returned coefficients are on the original scale.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise NonBinaryData("logistic response must be binary")
    center = X.mean(axis=0) if standardize else np.zeros(X.shape[1])
    scale = X.std(axis=0) if standardize else np.ones(X.shape[1])
    scale = np.where(scale > 0, scale, 1.0)
    D = _design((X - center) / scale)
    beta = np.zeros(D.shape[1])
    penalty = np.full(D.shape[1], l2)
    penalty[0] = 0.0
    ll = _loglik(D, y, beta, l2)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = sigmoid(D @ beta)
        w = p * (1 - p)
        grad = D.T @ (y - p) - penalty * beta
        H = (D * w[:, None]).T @ D + np.diag(penalty) + 1e-12 * np.eye(len(beta))
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            cand = beta + t * step
            new = _loglik(D, y, cand, l2)
            if new >= ll - 1e-12 or t < 1e-8:
                break
            t *= 0.5
        beta, old, ll = cand, ll, new
        if abs(ll - old) < tol * (1 + abs(ll)) and np.max(np.abs(t * step)) < 1e-6:
            converged = True
            break
    coef = beta[1:] / scale
    intercept = float(beta[0] - np.sum(coef * center))
    return LogisticModel(intercept, coef, it, converged, center, scale)


# ------------------------------------------------------------- estimators


@dataclass(frozen=True)
class EstimateResult:
    estimate: float
    estimator: str
    details: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __float__(self) -> float:
        return self.estimate

    def to_json(self) -> dict:
        def clean(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v
        return {"estimate": self.estimate, "estimator": self.estimator,
                "details": clean(self.details), "flags": list(self.flags)}


def _low_data(est: BernoulliEst) -> tuple[str, ...]:
    return ("low_data",) if est.low_data else ()


def estimator_confounder(data: HierDataset, a_star: int, treatment: str = "A",
                         outcome: str = "Y") -> EstimateResult:
    """(1/n) Σ_i μ̂^{y|a}_i(a⋆)."""
    if a_star not in (0, 1):
        raise ValueError("a_star must be 0 or 1")
    q = est_q_cond_bernoulli(data.subunit[treatment], data.subunit[outcome])
    value = float(np.mean(q.mean[:, a_star]))
    return EstimateResult(value, "confounder", {"a_star": a_star, "n": data.n, "m": data.m},
                          _low_data(q))


def estimator_confounder_soft(data: HierDataset, mu_star: float, treatment: str = "A",
                              outcome: str = "Y") -> EstimateResult:
    """Σ_a q⋆(a) (1/n) Σ_i μ̂^{y|a}_i(a): the confounder formula under a soft intervention."""
    q = est_q_cond_bernoulli(data.subunit[treatment], data.subunit[outcome])
    per_a = q.mean.mean(axis=0)
    value = float((1 - mu_star) * per_a[0] + mu_star * per_a[1])
    return EstimateResult(value, "confounder", {"mu_star": mu_star}, _low_data(q))


def estimator_interference(data: HierDataset, mu_star: float, treatment: str = "A",
                           outcome: str = "Y", interferer: str = "Z",
                           draws: int = MC_DRAWS) -> EstimateResult:
    """Front-door composition through the unit-level interferer.

    Σ_a q⋆(a) Σ_z p̂(z | μ⋆) (1/n) Σ_i E_p̂[μ^{y|a}(a) | μ̂^a_i, z], the inner
    expectation by Monte Carlo through a per-(a, z) Gaussian regression on
    the logit scale.
    """
    a = data.subunit[treatment]
    qa = est_q_bernoulli(a)
    qya = est_q_cond_bernoulli(a, data.subunit[outcome])
    z = _binary(data.unit[interferer], interferer)
    x = logit(qa.mean)

    for level in (0, 1):
        size = int(np.sum(z == level))
        if size < 3:
            raise DegenerateStratum(level, size)

    pz_model = fit_logistic(x, z)
    if not pz_model.converged:
        raise ClassifierNotConverged("p(z | q^a) did not converge")
    pz1 = float(pz_model.predict_proba(np.array([logit(mu_star)]))[0])

    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(data.seed, spawn_key=(_MC_STREAM,))))
    fits = {}
    total = 0.0
    for av in (0, 1):
        wa = mu_star if av else 1 - mu_star
        for zv in (0, 1):
            wz = pz1 if zv else 1 - pz1
            mask = z == zv
            fit = fit_ols(x[mask], logit(qya.mean[mask, av]))
            fits[(av, zv)] = fit
            centre = fit.predict(x)
            eps = rng.standard_normal((data.n, draws))
            inner = sigmoid(centre[:, None] + fit.resid_sd * eps).mean(axis=1)
            total += wa * wz * float(inner.mean())
    details = {
        "mu_star": mu_star,
        "p_z1": pz1,
        "z_model": {"intercept": pz_model.intercept, "coef": pz_model.coef},
        "y_models": {f"a={k[0]},z={k[1]}": {"intercept": f.intercept, "slope": float(f.coef[0]),
                                            "resid_sd": f.resid_sd, "n": f.n}
                     for k, f in fits.items()},
        "draws": draws,
    }
    return EstimateResult(total, "interference", details, _low_data(qya))


def _instrument_features(la, l0, l1) -> np.ndarray:
    cols = [la, l0, l1, la * l0, la * l1, l0 * l1]
    return np.column_stack(cols)


def estimator_instrument(data: HierDataset, mu_star: float, instrument: str = "Z",
                         treatment: str = "A", outcome: str = "Y",
                         l2: float = 1e-3) -> EstimateResult:
    """Backdoor over Q^{a|z}: (1/n) Σ_i Ê[Y | σ⁻¹(μ⋆), σ⁻¹(μ̂^{a|z}_i(0)), σ⁻¹(μ̂^{a|z}_i(1))].

    The outcome classifier is a logistic regression on the three logit
    features and their pairwise products.
    """
    zt = data.subunit[instrument]
    at = data.subunit[treatment]
    y = _binary(data.unit[outcome], outcome)
    qa = est_q_bernoulli(at)
    qaz = est_q_cond_bernoulli(zt, at)
    la, l0, l1 = logit(qa.mean), logit(qaz.mean[:, 0]), logit(qaz.mean[:, 1])
    model = fit_logistic(_instrument_features(la, l0, l1), y, l2=l2, max_iter=200)
    if not model.converged:
        raise ClassifierNotConverged(f"outcome classifier stopped after {model.iterations} iterations")
    ls = np.full(data.n, float(logit(mu_star)))
    value = float(np.mean(model.predict_proba(_instrument_features(ls, l0, l1))))
    flags = list(_low_data(qaz))
    if np.all(zt == zt[:, :1]):
        flags.append("degenerate_instrument")
    return EstimateResult(value, "instrument",
                          {"mu_star": mu_star, "classifier": "logistic+interactions",
                           "iterations": model.iterations},
                          tuple(flags))


def naive_regression_baseline(data: HierDataset, contrast: Sequence[float] = (0.0, 1.0),
                              treatment: str = "A", outcome: str = "Y") -> EstimateResult:
    """OLS of per-unit mean outcome on per-unit mean treatment; slope × (hi − lo)."""
    abar = data.subunit[treatment].mean(axis=1)
    if outcome in data.subunit:
        ybar = data.subunit[outcome].mean(axis=1)
    else:
        ybar = np.asarray(data.unit[outcome], dtype=float)
    if np.ptp(abar) == 0:
        raise SingularDesign("per-unit treatment means are constant")
    fit = fit_ols(abar, ybar)
    lo, hi = contrast
    return EstimateResult(float(fit.coef[0] * (hi - lo)), "regression",
                          {"slope": float(fit.coef[0]), "intercept": fit.intercept,
                           "contrast": [lo, hi]})
