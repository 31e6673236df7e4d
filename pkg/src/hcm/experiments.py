"""Simulation grids, the convergence sweep and their tidy CSV output.

Every row is ``(setting, size, seed, estimator, estimate, truth, flags)``
with n = m = size. Contrasts are a⋆ = 1 vs 0 for the confounder motif and
Bernoulli(0.75) vs Bernoulli(0.25) for the other two.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .estimate import (
    ClassifierNotConverged,
    DegenerateStratum,
    SingularDesign,
    est_q_cond_bernoulli,
    estimator_confounder,
    estimator_confounder_soft,
    estimator_instrument,
    estimator_interference,
    naive_regression_baseline,
)
from .simulate import HierDataset, MechanismSpec, sample_hcgm, sample_latents, spec_for, true_ate

__all__ = [
    "Row",
    "SETTINGS",
    "SIZES",
    "run_cell",
    "reproduce",
    "write_rows",
    "read_rows",
    "summarize",
    "true_q",
    "empirical_q",
    "hierarchical_w1",
    "ks_sweep",
    "wasserstein_sweep",
]

HI, LO = 0.75, 0.25
SIZES = (10, 100, 1000)
SETTINGS = {
    "confounder": ("omega", (0.0, 0.2, 0.5)),
    "interference": ("rho", (0.0, 0.5, 1.5)),
    "instrument": ("omega", (0.0, 0.2, 0.5)),
}
# the estimation code can legitimately refuse tiny samples
_SOFT_ERRORS = (DegenerateStratum, ClassifierNotConverged, SingularDesign, np.linalg.LinAlgError)


@dataclass(frozen=True)
class Row:
    setting: str
    size: int
    seed: int
    estimator: str
    estimate: float
    truth: float
    flags: str = ""


def _attempt(name, fn) -> tuple[str, float, str]:
    try:
        r = fn()
    except _SOFT_ERRORS as exc:
        return name, math.nan, type(exc).__name__
    return name, float(r), ""


def _contrast(f):
    def run():
        return float(f(HI)) - float(f(LO))
    return run


def _estimators(motif: str, data: HierDataset):
    if motif == "confounder":
        return [
            ("hcm", lambda: float(estimator_confounder(data, 1)) - float(estimator_confounder(data, 0))),
            ("regression", lambda: naive_regression_baseline(data, (0.0, 1.0))),
        ]
    if motif == "interference":
        return [
            ("hcm", _contrast(lambda mu: estimator_interference(data, mu))),
            ("confounder", _contrast(lambda mu: estimator_confounder_soft(data, mu))),
            ("regression", lambda: naive_regression_baseline(data, (LO, HI))),
        ]
    if motif == "instrument":
        return [
            ("hcm", _contrast(lambda mu: estimator_instrument(data, mu))),
            ("regression", lambda: naive_regression_baseline(data, (LO, HI))),
        ]
    raise ValueError(f"unknown motif {motif!r}")


def _param_kwargs(motif: str, value: float) -> dict:
    key, _ = SETTINGS[motif]
    return {key: value}


def run_cell(motif: str, value: float, size: int, seed: int) -> list[Row]:
    """Simulate one dataset with n = m = ``size`` and run every estimator on it."""
    kw = _param_kwargs(motif, value)
    spec = spec_for(motif, **kw)
    truth = true_ate(motif, **kw)
    data = sample_hcgm(spec, size, size, seed)
    setting = f"{SETTINGS[motif][0]}={value:g}"
    rows = []
    for name, fn in _estimators(motif, data):
        name, est, flag = _attempt(name, fn)
        rows.append(Row(setting, size, seed, name, est, truth, flag))
    return rows


def _cell(args):
    return run_cell(*args)


def reproduce(motif: str, seeds: Iterable[int] = range(20), sizes: Sequence[int] = SIZES,
              values: Sequence[float] | None = None, jobs: int = 1) -> list[Row]:
    """Full grid, in (value, size, seed) order whatever ``jobs`` is."""
    values = SETTINGS[motif][1] if values is None else values
    cells = [(motif, v, s, seed) for v in values for s in sizes for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_cell, cells))
    else:
        parts = [_cell(c) for c in cells]
    return [r for part in parts for r in part]


def write_rows(rows: Sequence[Row], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(Row)])
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in astuple(r)])
    return path


def read_rows(path: str | Path) -> list[Row]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [Row(d["setting"], int(d["size"]), int(d["seed"]), d["estimator"],
                    float(d["estimate"]), float(d["truth"]), d.get("flags", ""))
                for d in csv.DictReader(fh)]


def summarize(rows: Sequence[Row]) -> list[dict]:
    """Per (setting, size, estimator): mean, cross-seed sd and SE, mean absolute error."""
    groups: dict[tuple, list[Row]] = {}
    for r in rows:
        groups.setdefault((r.setting, r.size, r.estimator), []).append(r)
    out = []
    for (setting, size, est), rs in groups.items():
        x = np.array([r.estimate for r in rs])
        ok = x[np.isfinite(x)]
        truth = rs[0].truth
        sd = float(ok.std(ddof=1)) if ok.size > 1 else math.nan
        out.append({
            "setting": setting, "size": size, "estimator": est, "truth": truth,
            "runs": int(ok.size), "failed": int(x.size - ok.size),
            "mean": float(ok.mean()) if ok.size else math.nan,
            "sd": sd, "se": sd / math.sqrt(ok.size) if ok.size > 1 else math.nan,
            "mae": float(np.mean(np.abs(ok - truth))) if ok.size else math.nan,
        })
    return out


# ---------------------------------------------------------------- convergence


def _subunit_order(spec: MechanismSpec):
    subs = [v for v in spec.variables if not v.is_unit]
    if any(not v.observed for v in subs):
        raise ValueError("hidden subunit variables are not supported here")
    return subs


def true_q(data: HierDataset) -> np.ndarray:
    """Per-unit joint over all subunit variables, shape (n, 2^k), cells in bit order."""
    subs = _subunit_order(data.spec)
    pos = {v.name: b for b, v in enumerate(subs)}
    cells = np.arange(2 ** len(subs))
    out = np.ones((data.n, cells.size))
    for v in subs:
        bit = (cells >> pos[v.name]) & 1
        idx = np.zeros(cells.size, dtype=np.int64)
        for b, p in enumerate(v.subunit_parents):
            idx += ((cells >> pos[p]) & 1) << b
        mu = data.latents[v.name][:, idx]
        out *= np.where(bit, mu, 1 - mu)
    return out


def empirical_q(data: HierDataset) -> np.ndarray:
    subs = _subunit_order(data.spec)
    code = np.zeros((data.n, data.m), dtype=np.int64)
    for b, v in enumerate(subs):
        code += data.subunit[v.name].astype(np.int64) << b
    k = 2 ** len(subs)
    return np.stack([np.mean(code == c, axis=1) for c in range(k)], axis=1)


def hierarchical_w1(unit_a: np.ndarray, q_a: np.ndarray,
                    unit_b: np.ndarray, q_b: np.ndarray) -> float:
    """W1 between two equal-size hierarchical empirical distributions.

    Ground metric on (unit values, q): L1 on unit values plus W1 between the
    q's under the discrete metric, which is total variation.
    """
    if len(q_a) != len(q_b):
        raise ValueError("both samples need the same number of units")
    cost = 0.5 * np.abs(q_a[:, None, :] - q_b[None, :, :]).sum(axis=2)
    if unit_a.size:
        cost = cost + np.abs(unit_a[:, None, :] - unit_b[None, :, :]).sum(axis=2)
    r, c = optimize.linear_sum_assignment(cost)
    return float(cost[r, c].mean())


def _unit_matrix(data: HierDataset) -> np.ndarray:
    if not data.unit:
        return np.zeros((data.n, 0))
    return np.column_stack([np.asarray(v, dtype=float) for v in data.unit.values()])


def ks_sweep(ms: Sequence[int] = (10, 100, 1000), n: int = 1000, seeds: Iterable[int] = range(10),
             omega: float = 0.2) -> dict[int, list[float]]:
    """KS distance between per-unit μ̂^{y|a}(1) at each m and fresh draws of μ^{y|a}(1).

    The reference draws come from the collapsed model directly (an
    independent random stream), so the distance only vanishes as m grows.
    """
    spec = spec_for("confounder", omega=omega)
    out: dict[int, list[float]] = {m: [] for m in ms}
    for seed in seeds:
        full = sample_hcgm(spec, n, max(ms), seed)
        ref = sample_latents(spec, n, seed)["Y"][:, 1]
        for m in ms:
            d = full.subset(n, m)
            est = est_q_cond_bernoulli(d.subunit["A"], d.subunit["Y"]).mean[:, 1]
            out[m].append(float(stats.ks_2samp(est, ref).statistic))
    return out


def wasserstein_sweep(ms: Sequence[int] = (25, 100, 400), n: int = 500,
                      seeds: Iterable[int] = range(10), omega: float = 0.2) -> dict[int, list[float]]:
    """Hierarchical W1 between p_{N,M} and p_N (same units, true q) at each m."""
    spec = spec_for("confounder", omega=omega)
    out: dict[int, list[float]] = {m: [] for m in ms}
    for seed in seeds:
        full = sample_hcgm(spec, n, max(ms), seed)
        q_true = true_q(full)
        units = _unit_matrix(full)
        for m in ms:
            d = full.subset(n, m)
            out[m].append(hierarchical_w1(units, empirical_q(d), units, q_true))
    return out


def convergence_rows(seeds: Iterable[int] = range(10)) -> list[Row]:
    seeds = list(seeds)
    rows = []
    for name, sweep in (("ks", ks_sweep), ("w1", wasserstein_sweep)):
        for m, vals in sweep(seeds=seeds).items():
            for seed, v in zip(seeds, vals):
                rows.append(Row(f"{name}", m, seed, name, v, 0.0))
    return rows
