"""Command-line front end: ``solve``, ``sweep``, ``check`` and ``bench``.

Exit codes: 0 on success, 1 on bad input, 2 when the computation itself
fails (no feasible rank found, every sweep trial failed, a check failed).
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .problem import MalformedInstanceError, NetworkInstance, build_affine_system
from .rank_search import SOLVERS, extract_beamformers, minimize_rank
from .solvers import SolverOptions

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FAILED = 2
SEED_ENV = "STIEFEL_TIM_SEED"


class InputError(Exception):
    """Bad command-line input; reported on stderr with exit code 1."""


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _load_json(path, what):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} {path} is not valid JSON: {exc}") from None


def _load_opts(path):
    if path is None:
        return None
    data = _load_json(path, "options file")
    if not isinstance(data, dict):
        raise InputError("options file must hold a JSON object")
    return data


def _solver_options(data):
    try:
        return SolverOptions.from_dict(data or {})
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad solver options: {exc}") from None


def _write_text(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
        return
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}") from None


def cmd_solve(args):
    """Rank search on one topology file; writes the result as JSON."""
    data = _load_json(args.topology, "topology")
    try:
        inst = NetworkInstance.from_dict(data)
    except MalformedInstanceError as exc:
        raise InputError(f"malformed topology {args.topology}: {exc}") from None
    opts = _solver_options(_load_opts(args.opts))
    result = minimize_rank(
        inst,
        args.solver,
        opts,
        restarts=args.restarts,
        seed=_seed(args),
        max_rank=args.max_rank,
    )
    payload = result.to_dict()
    if result.success and args.beamformers:
        bf = extract_beamformers(result.X, inst, result.rank)
        arrays = {f"U_{k + 1}": U for k, U in enumerate(bf.receive)}
        arrays.update({f"V_{j + 1}_{i + 1}": V for (j, i), V in bf.precoders.items()})
        try:
            np.savez(args.beamformers, X=result.X, **arrays)
        except OSError as exc:
            raise InputError(f"cannot write {args.beamformers}: {exc.strerror}") from None
    _write_text(args.out, json.dumps(payload, indent=2) + "\n")
    if not result.success:
        print(f"no rank up to {args.max_rank or 'N'} met the residual criterion", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def _parse_values(text):
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"grid values must be comma-separated numbers, got {text!r}") from None


def _sweep_config(args):
    from .experiments import SweepConfig

    data = {}
    if args.config:
        data = _load_json(args.config, "sweep config")
        if not isinstance(data, dict):
            raise InputError("sweep config must hold a JSON object")
    overrides = {
        "K": args.K,
        "d": args.d,
        "var": args.var,
        "p": args.p,
        "q": args.q,
        "P": args.P,
        "trials": args.trials,
        "restarts": args.restarts,
        "model": args.model,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.values is not None:
        data["values"] = _parse_values(args.values)
    if args.solver:
        data["solvers"] = tuple(args.solver)
    if args.seed is not None or "seed" not in data:
        data["seed"] = _seed(args)
    if args.timing:
        data["timing"] = True
    opts = _load_opts(args.opts)
    if opts is not None:
        # either {solver: {...}} or one flat set applied to every solver
        if opts and all(k in SOLVERS for k in opts):
            data["opts"] = opts
        else:
            data["opts"] = {s: opts for s in data.get("solvers", SOLVERS)}
    missing = [k for k in ("K", "var", "values") if k not in data]
    if missing:
        raise InputError(f"sweep needs {', '.join(missing)} (flags or --config)")
    try:
        cfg = SweepConfig.from_dict(data)
        for s in cfg.solvers:
            cfg.solver_options(s)
    except (TypeError, ValueError) as exc:
        raise InputError(f"bad sweep config: {exc}") from None
    return cfg


def cmd_sweep(args):
    """Parameter sweep; writes per-trial CSV and a JSON summary next to it."""
    from .experiments import run_sweep

    cfg = _sweep_config(args)
    if args.jobs is not None and args.jobs < 1:
        raise InputError("--jobs must be at least 1")
    jobs = args.jobs or os.cpu_count() or 1
    result = run_sweep(cfg, jobs=jobs)
    _write_text(args.out, result.to_csv())
    summary = args.summary
    if summary is None and args.out not in (None, "-"):
        summary = str(Path(args.out).with_suffix(".json"))
    if summary is not None:
        _write_text(summary, result.summary_json() + "\n")
    if all(row["rank"] is None for row in result.rows):
        print("every trial failed", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def cmd_check(args):
    """Run the self-check suites and print one line per suite."""
    from .checks import run_all

    sign = -1.0 if args.inject_hessian_sign_error else 1.0
    results = run_all(_seed(args), quick=args.quick, hessian_sign=sign)
    for res in results:
        print(res.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def cmd_bench(args):
    """Time each solver at a fixed rank on one random instance."""
    from .experiments import random_topology
    from .manifold import random_point
    from .problem import balance_factors
    from .rank_search import solve_at_rank

    seed = _seed(args)
    if not (0 <= args.p <= 1 and 0 <= args.q <= 1):
        raise InputError("--p and --q must lie in [0, 1]")
    inst = random_topology(args.K, args.p, args.q, args.d, seed)
    system = build_affine_system(inst)
    if not 1 <= args.rank <= system.N:
        raise InputError(f"--rank must lie in [1, {system.N}]")
    opts = _solver_options(_load_opts(args.opts))
    rows = []
    for solver in args.solver or SOLVERS:
        Y0 = balance_factors(random_point(system.N, args.rank, seed), system.m)
        start = time.perf_counter()
        _, report = solve_at_rank(system, args.rank, solver, Y0, opts)
        seconds = time.perf_counter() - start
        rows.append(
            {
                "solver": solver,
                "rank": args.rank,
                "iterations": report.iterations,
                "inner_iterations": report.inner_iterations,
                "final_cost": report.objective[-1],
                "final_grad_norm": report.grad_norm[-1],
                "status": report.status.value,
                "seconds": seconds,
                "ms_per_iteration": 1e3 * seconds / max(report.iterations, 1),
            }
        )
    header = {"K": args.K, "p": args.p, "q": args.q, "d": args.d, "m": system.m, "n": system.n, "constraints": system.l}
    _write_text(args.out, json.dumps({"instance": header, "runs": rows}, indent=2) + "\n")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="stiefel-tim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, solver_many=False):
        if solver_many:
            p.add_argument("--solver", action="append", choices=SOLVERS, help="repeat to select several (default: all)")
        else:
            p.add_argument("--solver", choices=SOLVERS, default="rtr")
        p.add_argument("--seed", type=int, help=f"random seed (default: ${SEED_ENV} or 0)")
        p.add_argument("--out", help="output path ('-' or omitted: stdout)")
        p.add_argument("--opts", help="JSON file of solver options")

    p = sub.add_parser("solve", help="minimal feasible rank for one topology")
    common(p)
    p.add_argument("--topology", required=True, help="topology JSON file")
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-rank", type=int)
    p.add_argument("--beamformers", help="also write X and beamformers to this .npz file")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="DoF / rate sweep over p, q or P")
    common(p, solver_many=True)
    p.add_argument("--config", help="JSON sweep config; flags override its fields")
    p.add_argument("--var", choices=("p", "q", "P"))
    p.add_argument("--values", help="comma-separated grid values")
    p.add_argument("--K", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--P", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--model", choices=("generic-gaussian", "pathloss-rayleigh"))
    p.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    p.add_argument("--summary", help="JSON summary path (default: --out with .json suffix)")
    p.add_argument("--timing", action="store_true", help="fill the seconds column (output no longer reproducible)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the self-check suites")
    p.add_argument("--seed", type=int)
    p.add_argument("--quick", action="store_true", help="fewer cases per suite")
    p.add_argument("--inject-hessian-sign-error", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("bench", help="time the solvers at a fixed rank")
    common(p, solver_many=True)
    p.add_argument("--K", type=int, default=10)
    p.add_argument("--p", type=float, default=0.3)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--rank", type=int, default=4)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
