"""Command-line entry point.

Exit codes: 0 ok, 2 usage error, 3 domain error, 4 non-convergence (the
result is still printed).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import seqinf
from .channel import DyadicGrid, pushforward
from .core import DomainError, FiniteDistribution, SPECS, distribution_from_dict, load_distribution, mean, parse_vector
from .fdiv_dual import dinf, reduced_inf
from .general_constraint import ConstraintFunction, ConstraintSet, klinf_general
from .klinf_dual import DEFAULT_TOL, klinf
from .primal_oracle import primal_fdiv_finite

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_NONCONVERGED = 0, 2, 3, 4
CSV_COLUMNS = ["replicate", "seed", "stop_time", "censored"]
ORACLE_MAX_DIM = 3


class UsageError(Exception):
    pass


def load_schema(name: str) -> dict:
    text = resources.files("mindiv").joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _emit(obj: dict, schema: str) -> None:
    jsonschema.validate(obj, load_schema(schema))
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _floats(a) -> list:
    return [float(v) for v in np.atleast_1d(a)]


# -- commands ------------------------------------------------------------------


def cmd_klinf(args) -> int:
    P = load_distribution(args.dist)
    res = klinf(P, parse_vector(args.mu), args.tol)
    _emit({
        "value": res.value,
        "lambda": _floats(res.argmax.lam),
        "gap": res.argmax.gap,
        "iterations": res.iterations,
        "converged": res.converged,
    }, "klinf_result")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_fdiv(args) -> int:
    P = load_distribution(args.dist)
    mu = parse_vector(args.mu)
    if args.reduced:
        res = reduced_inf(P, mu, args.spec, args.tol)
        out = {"spec": args.spec, "value": res.value, "lambda": _floats(res.argmax.lam), "gamma": None}
    else:
        res = dinf(P, mu, args.spec, args.tol)
        out = {"spec": args.spec, "value": res.value, "lambda": _floats(res.argmax.lam),
               "gamma": res.argmax.gamma}
    out.update(iterations=res.iterations, converged=res.converged)
    _emit(out, "fdiv_result")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def _load_set(text: str) -> ConstraintSet:
    path = Path(text)
    try:
        obj = json.loads(path.read_text(encoding="utf-8")) if path.is_file() else json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--set is neither a JSON file nor inline JSON: {exc}") from None
    return ConstraintSet.from_dict(obj)


def cmd_general(args) -> int:
    P = load_distribution(args.dist)
    g = ConstraintFunction.from_name(args.g, P.dim)
    C = _load_set(args.set)
    res = klinf_general(P, g, C, args.tol)
    _emit({
        "value": res.value,
        "lambda": _floats(res.argmax.lam),
        "gamma": res.argmax.gamma,
        "iterations": res.iterations,
        "converged": res.converged,
        "radius": res.radius,
        "unbounded_suspected": res.unbounded_suspected,
        "cuts": res.cuts,
    }, "general_result")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_channel(args) -> int:
    P = load_distribution(args.dist)
    grid = DyadicGrid(args.k, P.dim)
    Pk = pushforward(P, grid)
    _emit({
        "distribution": Pk.to_json_dict(),
        "level": grid.level,
        "mesh": grid.mesh,
        "mean_in": _floats(mean(P)),
        "mean_out": _floats(mean(Pk)),
    }, "channel_result")
    return EXIT_OK


def _resolve_dist(ref, base: Path) -> FiniteDistribution:
    if isinstance(ref, str):
        return load_distribution(base / ref)
    return distribution_from_dict(ref)


def load_scenario(path: str) -> dict:
    p = Path(path)
    try:
        obj = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read scenario {path}: {exc}") from None
    try:
        jsonschema.validate(obj, load_schema("scenario"))
    except jsonschema.ValidationError as exc:
        raise UsageError(f"scenario {path}: {exc.message}") from None
    scen = dict(obj)
    scen["null"] = _resolve_dist(obj["null"], p.parent)
    scen["alt"] = _resolve_dist(obj["alt"], p.parent) if obj.get("alt") is not None else None
    return scen


def run_simulation(scen: dict, mode: str, window):
    null, alt = scen["null"], scen["alt"]
    stream = alt if alt is not None else null
    a, n_max, R, seed = scen["alpha"], scen["n_max"], scen["replicates"], scen["seed"]
    if mode == "test":
        cfg = seqinf.TestConfig(mean(null), a)
        return seqinf.simulate_test(stream, cfg, n_max, R, seed), []
    if mode == "cs":
        return seqinf.simulate_cs(stream, a, n_max, R, seed), ["coverage_violated"]
    rows = seqinf.simulate_cd(null, alt, scen.get("change_at"), a, n_max, R, seed, window)
    return rows, (["delay"] if scen.get("change_at") is not None else [])


def rows_to_csv(rows: list[dict], extra: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS + extra)
    for row in rows:
        vals = []
        for col in CSV_COLUMNS + extra:
            v = row.get(col)
            vals.append("" if v is None else (str(v).lower() if isinstance(v, bool) else str(v)))
        w.writerow(vals)
    return buf.getvalue()


def cmd_simulate(args) -> int:
    scen = load_scenario(args.scenario)
    if args.seed is not None:
        scen["seed"] = args.seed
    if args.replicates is not None:
        scen["replicates"] = args.replicates
    if args.mode == "cd" and scen.get("change_at") is not None and scen["alt"] is None:
        raise UsageError("cd mode with change_at needs an alt distribution")
    window = None if args.window == 0 else args.window
    rows, extra = run_simulation(scen, args.mode, window)
    Path(args.out).write_text(rows_to_csv(rows, extra), encoding="utf-8")
    summary = seqinf.summarize(rows, scen["n_max"])
    summary.update(mode=args.mode, alpha=scen["alpha"], n_max=scen["n_max"], seed=scen["seed"], csv=str(args.out))
    _emit(summary, "simulate_summary")
    return EXIT_OK


def oracle_check(n: int, dim: int, seed: int, spec: str = "kl") -> dict:
    """Largest primal/dual gap over seeded random instances."""
    rng = np.random.default_rng(seed)
    s = SPECS[spec]
    worst_abs = worst_rel = 0.0
    ok = True
    for _ in range(n):
        m = int(rng.integers(1, 11))
        P = FiniteDistribution(rng.random((m, dim)), rng.dirichlet(np.ones(m)))
        mu = rng.uniform(0.1, 0.9, dim)
        dual = klinf(P, mu).value if spec == "kl" else dinf(P, mu, spec).value
        primal = primal_fdiv_finite(P, mu, s).value
        gap = abs(dual - primal)
        worst_abs = max(worst_abs, gap)
        worst_rel = max(worst_rel, gap / max(abs(primal), 1e-3))
        ok = ok and gap <= max(1e-5 * abs(primal), 1e-8)
    return {"instances": n, "K": dim, "seed": seed, "spec": spec,
            "max_abs_gap": worst_abs, "max_rel_gap": worst_rel, "within_1e-5": ok}


def cmd_oracle_check(args) -> int:
    if not 1 <= args.K <= ORACLE_MAX_DIM:
        raise UsageError(f"oracle-check supports K in 1..{ORACLE_MAX_DIM}")
    _emit(oracle_check(args.n, args.K, args.seed, args.spec), "oracle_report")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mindiv", description="Minimum-divergence projections and sequential inference.")
    sub = p.add_subparsers(dest="command", required=True)

    def dist_mu(sp):
        sp.add_argument("--dist", required=True, help="distribution JSON file")
        sp.add_argument("--mu", required=True, help="target mean, comma separated")
        sp.add_argument("--tol", type=float, default=DEFAULT_TOL)

    sp = sub.add_parser("klinf", help="mean-constrained KLinf")
    dist_mu(sp)
    sp.set_defaults(func=cmd_klinf)

    sp = sub.add_parser("fdiv", help="mean-constrained f-divergence infimum")
    dist_mu(sp)
    sp.add_argument("--spec", required=True, choices=sorted(SPECS))
    sp.add_argument("--reduced", action="store_true", help="use the single-vector dual")
    sp.set_defaults(func=cmd_fdiv)

    sp = sub.add_parser("general", help="KLinf under E_Q[g(X)] in C")
    sp.add_argument("--dist", required=True)
    sp.add_argument("--g", required=True, help="identity | powers:j | norms")
    sp.add_argument("--set", required=True, help="constraint set as JSON (inline or file)")
    sp.add_argument("--tol", type=float, default=DEFAULT_TOL)
    sp.set_defaults(func=cmd_general)

    sp = sub.add_parser("channel", help="push a distribution through the level-k channel")
    sp.add_argument("--dist", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.set_defaults(func=cmd_channel)

    sp = sub.add_parser("simulate", help="Monte Carlo for test, cs or cd")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--mode", required=True, choices=["test", "cs", "cd"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--window", type=int, default=seqinf.DEFAULT_WINDOW, help="0 disables the window")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("oracle-check", help="primal/dual agreement on random instances")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--K", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--spec", choices=sorted(SPECS), default="kl")
    sp.set_defaults(func=cmd_oracle_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
