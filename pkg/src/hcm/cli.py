"""``hcm`` command line.

Exit codes: 0 success (or identified), 2 not identified, 1 input or runtime
error; argparse usage errors also exit 2 as usual but print ``usage:``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

from . import __version__
from .bayes import DivergentChain, NotConverged, load_schools, mh_sample, posterior_ate
from .dot import to_dot
from .dsl import HcmSyntaxError, SemanticError, load_hcm, parse_hcm
from .estimate import (
    estimator_confounder,
    estimator_confounder_soft,
    estimator_instrument,
    estimator_interference,
    naive_regression_baseline,
)
from .experiments import SETTINGS, SIZES, convergence_rows, reproduce, summarize, write_rows
from .fixtures import fixture_names, fixture_text
from .graph import GraphError, latent_projection
from .identify import InvalidQuery, identify_hcm
from .simulate import DomainError, HierDataset, InvalidSpec, sample_hcgm, spec_for
from .transform import collapse

OUTPUT_ENV = "HCM_OUTPUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_NOT_ID = 0, 1, 2
EXPERIMENTS = ("confounder", "interference", "instrument", "eight-schools", "convergence")


def _out_dir(arg: str | None) -> Path:
    d = Path(arg or os.environ.get(OUTPUT_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable))
    else:
        print(text)


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if hasattr(x, "item"):
        return x.item()
    raise TypeError(f"{type(x).__name__} is not JSON serializable")


def _read_model(path: str):
    p = Path(path)
    if not p.exists() and path in fixture_names():
        return parse_hcm(fixture_text(path))
    return load_hcm(p)


# ----------------------------------------------------------------- commands


def cmd_identify(args) -> int:
    hcm, query = _read_model(args.file)
    if query is None:
        raise InvalidQuery("file has no query block")
    result = identify_hcm(hcm, query)
    if args.dot_dir:
        d = Path(args.dot_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "hcm.dot").write_text(to_dot(hcm), encoding="utf-8")
        (d / "collapsed.dot").write_text(to_dot(collapse(hcm).flat, "collapsed"), encoding="utf-8")
        if result.model is not None:
            (d / "final.dot").write_text(to_dot(result.model.flat, "final"), encoding="utf-8")
            (d / "projection.dot").write_text(
                to_dot(latent_projection(result.model.flat), "projection"), encoding="utf-8")
    if result.identified:
        payload = {
            "identified": True,
            "estimand": result.estimand.to_json(),
            "text": result.estimand.text(),
            "latex": result.estimand.latex(),
            "intervention": result.intervention,
            "outcome_node": result.outcome_node,
            "assumptions": [a.value for a in result.assumptions],
            "steps": list(result.steps),
        }
        lines = [f"identified: {result.estimand.text()}",
                 f"intervene on {result.intervention}, outcome {result.outcome_node}"]
        lines += [f"  step: {s}" for s in result.steps]
        lines.append("assumptions: " + ", ".join(a.value for a in result.assumptions))
        _emit(args, payload, "\n".join(lines))
        return EXIT_OK
    payload = {"identified": False, "witness": result.describe(),
               "candidates_tried": result.candidates_tried}
    _emit(args, payload, f"not identified by this method: {result.describe()}")
    return EXIT_NOT_ID


def cmd_collapse(args) -> int:
    hcm, _ = _read_model(args.file)
    model = collapse(hcm)
    if args.dot:
        print(to_dot(model.flat, "collapsed"), end="")
        return EXIT_OK
    flat = model.flat
    payload = {
        "nodes": list(flat.nodes),
        "edges": sorted(map(list, flat.edges)),
        "hidden": sorted(flat.hidden),
        "deterministic": sorted(flat.deterministic),
        "q_variables": {k: {"subject": sorted(hcm.name_of(i) for i in q.subject),
                            "conditioning": sorted(hcm.name_of(i) for i in q.conditioning),
                            "observed": q.observed}
                        for k, q in model.qvars.items()},
    }
    text = "\n".join([f"nodes: {' '.join(flat.nodes)}"] +
                     [f"  {a} -> {b}" for a, b in sorted(flat.edges)] +
                     [f"hidden: {' '.join(sorted(flat.hidden)) or '-'}"])
    _emit(args, payload, text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    spec = spec_for(args.motif, omega=args.omega, rho=args.rho)
    data = sample_hcgm(spec, args.n, args.m, args.seed)
    out = Path(args.out) if args.out else _out_dir(None) / f"{args.motif}_n{args.n}_m{args.m}_s{args.seed}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path, side = data.to_csv(out)
    _emit(args, {"csv": str(csv_path), "sidecar": str(side), "n": args.n, "m": args.m},
          f"wrote {csv_path} and {side}")
    return EXIT_OK


def _guess_motif(data: HierDataset) -> str:
    if data.spec is not None:
        return data.spec.name
    if "Z" in data.subunit:
        return "instrument"
    return "interference" if "Z" in data.unit else "confounder"


def cmd_estimate(args) -> int:
    data = HierDataset.from_csv(args.data)
    motif = args.estimator or _guess_motif(data)
    mu = args.mu_star
    if motif == "confounder":
        if mu is None:
            res = estimator_confounder(data, args.a_star)
        else:
            res = estimator_confounder_soft(data, mu)
    elif motif == "interference":
        res = estimator_interference(data, 0.75 if mu is None else mu)
    elif motif == "instrument":
        res = estimator_instrument(data, 0.75 if mu is None else mu)
    else:
        res = naive_regression_baseline(data)
    _emit(args, res.to_json(), f"{res.estimator}: {res.estimate:.6f}"
          + (f"  [{', '.join(res.flags)}]" if res.flags else ""))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    if args.experiment == "eight-schools":
        schools = load_schools(args.data)
        chains = mh_sample(schools, iterations=args.iterations, chains=args.chains, seed=args.seed)
        summary = posterior_ate(chains)
        summary["acceptance"] = chains.acceptance
        summary["rhat_max"] = max(chains.rhats.values())
        (out / "eight_schools.json").write_text(
            json.dumps(summary, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
        chains.to_csv(out / "eight_schools_chains.csv", thin=args.thin)
        _emit(args, summary,
              f"ATE posterior: mean {summary['mean']:.2f}, sd {summary['sd']:.2f}, "
              f"5%-95% [{summary['p05']:.2f}, {summary['p95']:.2f}], R-hat {summary['rhat']:.3f}")
        return EXIT_OK
    count = args.seeds or (10 if args.experiment == "convergence" else 20)
    seeds = range(args.seed, args.seed + count)
    if args.experiment == "convergence":
        rows = convergence_rows(seeds)
    else:
        sizes = tuple(int(s) for s in args.sizes.split(",")) if args.sizes else SIZES
        rows = reproduce(args.experiment, seeds, sizes, jobs=args.jobs)
    path = write_rows(rows, out / f"{args.experiment}.csv")
    table = summarize(rows)
    elapsed = time.perf_counter() - t0
    lines = [f"wrote {path} ({len(rows)} rows, {elapsed:.1f} s)"]
    for s in table:
        lines.append(f"  {s['setting']:>10} size={s['size']:<5} {s['estimator']:<11}"
                     f" mean={s['mean']:.4f} se={s['se']:.4f} truth={s['truth']:.4f}")
    _emit(args, {"csv": str(path), "summary": table, "seconds": elapsed}, "\n".join(lines))
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hcm", description="Hierarchical causal models.")
    p.add_argument("--version", action="version", version=f"hcm {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        return sp

    sp = common(sub.add_parser("identify", help="decide identifiability of the file's query"))
    sp.add_argument("file", help=".hcm path or bundled fixture name")
    sp.add_argument("--dot-dir", help="write every intermediate graph as DOT here")
    sp.set_defaults(func=cmd_identify)

    sp = common(sub.add_parser("collapse", help="print the collapsed model"))
    sp.add_argument("file")
    sp.add_argument("--dot", action="store_true")
    sp.set_defaults(func=cmd_collapse)

    sp = common(sub.add_parser("simulate", help="draw a dataset from a motif"))
    sp.add_argument("motif", choices=sorted(SETTINGS))
    sp.add_argument("--n", type=int, default=1000)
    sp.add_argument("--m", type=int, default=1000)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--omega", type=float, default=0.0)
    sp.add_argument("--rho", type=float, default=0.0)
    sp.add_argument("--out", help="CSV path (sidecar goes next to it)")
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("estimate", help="run an estimator on a simulated CSV"))
    sp.add_argument("data")
    sp.add_argument("--estimator", choices=["confounder", "interference", "instrument", "regression"])
    sp.add_argument("--mu-star", type=float, dest="mu_star")
    sp.add_argument("--a-star", type=int, dest="a_star", default=1, choices=[0, 1])
    sp.add_argument("--seed", type=int, help="accepted for symmetry; the sidecar seed is used")
    sp.set_defaults(func=cmd_estimate)

    sp = common(sub.add_parser("reproduce", help="run an experiment grid"))
    sp.add_argument("experiment", choices=EXPERIMENTS)
    sp.add_argument("--seed", type=int, default=0, help="first seed")
    sp.add_argument("--seeds", type=int, help="number of seeds (20; 10 for convergence)")
    sp.add_argument("--sizes", help="comma-separated n = m values")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or .)")
    sp.add_argument("--iterations", type=int, default=50_000)
    sp.add_argument("--chains", type=int, default=4)
    sp.add_argument("--thin", type=int, default=10)
    sp.add_argument("--data", help="school,mu_hat,sigma CSV (default: bundled)")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HcmSyntaxError as exc:
        print(f"{args.file if hasattr(args, 'file') else ''}:{exc}", file=sys.stderr)
    except (SemanticError, InvalidQuery, GraphError, DomainError, InvalidSpec,
            DivergentChain, NotConverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
