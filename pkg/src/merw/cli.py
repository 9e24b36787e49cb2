"""Command-line entry point ``merw``.

Exit status: 0 on success, 2 on invalid input (bad spec, violated
hypothesis, missing file), 1 on numerical non-convergence or a failed
self-check.  Every output file starts with the line
``# merw <version> config=<hash> seed=<seed>`` (CSV) or carries the same
text in a leading ``_header`` field (JSON).  The hash covers every option
except output paths, so reruns of one configuration are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .eigen import log_psi_mixture, psi_extremal
from .env import IIDEnvironment, NuSpec, make_environment
from .errors import ModelError, NonConvergenceError

_OUTPUT_KEYS = {"out", "summary", "beta_hist", "func", "command", "oracle_command"}


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("MERW_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ModelError(f"MERW_SEED={env!r} is not an integer") from None
    return 0


def _config_hash(args) -> str:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _OUTPUT_KEYS}
    cfg["version"] = __version__
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _header(args) -> str:
    return f"merw {__version__} config={_config_hash(args)} seed={args.master_seed}"


def _load_env_spec(text: str):
    text = text.strip()
    if text.startswith("{"):
        return make_environment(text)
    path = Path(text)
    if not path.is_file():
        raise ModelError(f"environment spec {text!r} is neither inline JSON nor a readable file")
    return make_environment(path.read_text())


def _window(text: str) -> tuple[int, int]:
    try:
        a, b = text.split(":")
        return int(a), int(b)
    except ValueError:
        raise ModelError(f"window must look like a:b, got {text!r}") from None


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _open_out(path: Optional[str]):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def _write_csv(args, path: Optional[str], columns: Sequence[str], rows) -> None:
    fh, close = _open_out(path)
    try:
        fh.write(f"# {_header(args)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    finally:
        if close:
            fh.close()


def _clean(o):
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_clean(v) for v in o.tolist()]
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else None
    return o


def _write_json(args, path: Optional[str], payload: dict) -> None:
    doc = {"_header": _header(args), **payload}
    fh, close = _open_out(path)
    try:
        fh.write(json.dumps(_clean(doc), indent=2) + "\n")
    finally:
        if close:
            fh.close()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_eigen(args) -> int:
    env = _load_env_spec(args.env)
    ev = psi_extremal(env, _window(args.window), args.tol, kappa=args.kappa)
    lmix = log_psi_mixture(ev, args.kappa)
    rows = []
    for k, i in enumerate(ev.sites):
        b, a = ev.beta(int(i)), ev.alpha(int(i))
        rows.append((int(i), ev.weights[k], ev.log_psi_plus[k], ev.log_psi_minus[k], lmix[k],
                     b.lo, b.hi, a.lo, a.hi))
    _write_csv(args, args.out, ["i", "w_i", "log_psi_plus", "log_psi_minus", "log_psi_kappa",
                                "beta_bracket_lo", "beta_bracket_hi",
                                "alpha_bracket_lo", "alpha_bracket_hi"], rows)
    if args.beta_hist:
        beta = 0.5 * (ev.beta_lo + ev.beta_hi)
        beta = beta[np.isfinite(beta)]
        counts, edges = np.histogram(beta, bins=args.bins, range=(_gamma(ev.lam), 1.0))
        _write_csv(args, args.beta_hist, ["bin_lo", "bin_hi", "count"],
                   [(edges[k], edges[k + 1], int(c)) for k, c in enumerate(counts)])
    return 0


def _gamma(lam: float) -> float:
    return (lam - math.sqrt(lam * lam - 4.0)) / 2.0


def cmd_kernel(args) -> int:
    from .kernel import merw_kernel

    env = _load_env_spec(args.env)
    a, b = _window(args.window)
    ev = psi_extremal(env, (a - 1, b + 1), args.tol)
    k = merw_kernel(env, ev, args.kappa, (a, b))
    rows = [(int(i), k.p_left[n], k.p_stay[n], k.p_right[n], k.row_sum_pre[n])
            for n, i in enumerate(k.sites)]
    _write_csv(args, args.out, ["i", "p_left", "p_stay", "p_right",
                                "row_sum_pre_normalization"], rows)
    return 0


def cmd_simulate(args) -> int:
    from .sim import SiteKernel, _speed_from_final, run_batch

    env = _load_env_spec(args.env)
    if args.steps < 1 or args.replicas < 1:
        raise ModelError("need --steps >= 1 and --replicas >= 1")
    K = SiteKernel(env, args.tol)
    res = run_batch([K], args.kappa, [args.start] * args.replicas, args.steps,
                    args.master_seed, record=True)
    paths = res.paths
    if args.out or not args.summary:
        _write_csv(args, args.out, ["replica", "step", "position"],
                   ((j, t, int(paths[j, t])) for j in range(paths.shape[0])
                    for t in range(paths.shape[1])))
    if args.summary:
        est = _speed_from_final(res.final, args.start, args.steps, args.kappa)
        speed = est.to_dict()
        if args.replicas < 30:
            speed["ci_half_width"] = None
        margin = 4.0 * math.sqrt(args.steps)
        d = res.final - args.start
        nr, nl = int((d > margin).sum()), int((d < -margin).sum())
        visits = (paths == args.start).sum(axis=1)
        _write_json(args, args.summary, {
            "env": env.to_spec(), "kappa": args.kappa, "start": args.start,
            "steps": args.steps, "replicas": args.replicas, "speed": speed,
            "direction": {"fraction_right": nr / args.replicas, "n_right": nr, "n_left": nl,
                          "n_indeterminate": args.replicas - nr - nl, "margin": margin},
            "returns": {"site": args.start, "mean": float(visits.mean()),
                        "per_replica": visits.astype(int).tolist()},
        })
    return 0


def cmd_speed(args) -> int:
    from .speed import annealed_speed, speed_curve, speed_report

    if args.env:
        env = _load_env_spec(args.env)
        rep = speed_report(env, args.terms, args.tol)
        _write_json(args, args.out, {"env": env.to_spec(), **rep.to_dict()})
        return 0
    rows = []
    if args.p_grid:
        if args.M is None:
            raise ModelError("--p-grid needs --M")
        grid = [float(x) for x in args.p_grid.split(",")]
        curve = speed_curve(args.M, grid, args.reps, args.master_seed, args.tol)
        for r in curve.table():
            rows.append((r["p"], r["M"], r["v"], r["ci"], r["reps"]))
        if not curve.decreasing:
            print("warning: speed curve is not strictly decreasing beyond the CIs",
                  file=sys.stderr)
    elif args.nu:
        nu = NuSpec.parse(args.nu)
        a = annealed_speed(nu, args.reps, args.master_seed, args.tol)
        p = nu.atoms[1][1] if len(nu.atoms) == 2 else float("nan")
        rows.append((p, nu.ceiling, a.v, a.ci_half_width, a.reps))
    else:
        raise ModelError("speed needs --env, --nu or --p-grid")
    _write_csv(args, args.out, ["p", "M", "v", "ci", "reps"], rows)
    return 0


def cmd_oracle(args) -> int:
    from .oracle import count_excursions, estimate_lambda, green_at_radius

    if args.oracle_command == "count-excursions":
        t = count_excursions(args.n)
        _write_csv(args, args.out, ["n", "k", "l", "count"], t.rows())
        return 0
    env = _load_env_spec(args.env)
    if args.oracle_command == "green":
        from .speed import green_closed_form

        g = green_at_radius(env, args.i, args.j, args.N)
        try:
            closed = green_closed_form(env, args.i, args.j)
        except ModelError:
            closed = None
        _write_json(args, args.out, {"env": env.to_spec(), "i": args.i, "j": args.j,
                                     "N": args.N, "partial_sum": g.value,
                                     "tail_estimate": g.tail_estimate, "closed_form": closed})
        return 0
    est = estimate_lambda(env, args.site, args.n_max)
    _write_json(args, args.out, {"env": env.to_spec(), "site": args.site, "n": est.n,
                                 "roots": est.roots, "target": est.target,
                                 "relative_gap": est.rel_gap(),
                                 "monotone_last_20": est.monotone_tail(20)})
    return 0


def cmd_periodic(args) -> int:
    from .periodic import (concentration_mass, entropy_rate, periodic_measure,
                           srw_entropy_rate)

    sol = periodic_measure(args.ell, args.M)
    conc = []
    for eps in args.eps:
        c = concentration_mass(args.ell, args.M, eps)
        conc.append({"eps": eps, "radius": c.radius, "mass": c.mass, "degenerate": c.degenerate})
    _write_json(args, args.out, {
        "ell": sol.ell, "M": sol.M, "theta": sol.theta, "theta_residual": sol.residual,
        "lambda": sol.lambda_ell, "log_Z": sol.log_Z, "pi": sol.pi,
        # null once Z leaves float range
        "Z": sol.Z if math.isfinite(sol.Z) else None,
        "Z_direct": sol.Z_direct if math.isfinite(sol.Z_direct) else None,
        "entropy_rate": entropy_rate(args.ell, args.M), "log_lambda": math.log(sol.lambda_ell),
        "srw_entropy_rate": srw_entropy_rate(args.ell, args.M), "concentration": conc,
    })
    return 0


def cmd_figure1(args) -> int:
    from .sim import SiteKernel, run_batch

    nu = NuSpec.bernoulli(args.p, args.M)
    env_seed = args.env_seed if args.env_seed is not None else args.master_seed
    env = IIDEnvironment(nu, env_seed)
    res = run_batch([SiteKernel(env)], 1.0, [0] * args.replicas, args.steps,
                    args.master_seed, record=True)
    paths = res.paths
    _write_csv(args, args.out, ["replica", "step", "position"],
               ((j, t, int(paths[j, t])) for j in range(paths.shape[0])
                for t in range(paths.shape[1])))
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_selfcheck

    ok = run_selfcheck(mutate_beta=args.mutate_beta, out=sys.stdout)
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="merw", description="Maximal entropy random walks on Z "
                                "with self-loop environments.")
    p.add_argument("--version", action="version", version=f"merw {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, out=True):
        if seed:
            sp.add_argument("--seed", type=int, default=None,
                            help="master seed (falls back to $MERW_SEED, then 0)")
        if out:
            sp.add_argument("--out", default=None, help="output file (default stdout)")

    env_help = "environment: inline JSON such as '{\"kind\":\"step\",\"M\":2}' or a JSON file"

    sp = sub.add_parser("eigen", help="extremal eigenvectors and alpha/beta brackets")
    sp.add_argument("--env", required=True, help=env_help)
    sp.add_argument("--window", default="-20:20")
    sp.add_argument("--kappa", type=float, default=0.5)
    sp.add_argument("--tol", type=float, default=1e-12)
    sp.add_argument("--beta-hist", default=None, help="also write a histogram of beta")
    sp.add_argument("--bins", type=int, default=50)
    common(sp)
    sp.set_defaults(func=cmd_eigen)

    sp = sub.add_parser("kernel", help="transition probabilities on a window")
    sp.add_argument("--env", required=True, help=env_help)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--window", default="-20:20")
    sp.add_argument("--tol", type=float, default=1e-12)
    common(sp)
    sp.set_defaults(func=cmd_kernel)

    sp = sub.add_parser("simulate", help="simulate trajectories")
    sp.add_argument("--env", required=True, help=env_help)
    sp.add_argument("--kappa", type=float, default=1.0)
    sp.add_argument("--start", type=int, default=0)
    sp.add_argument("--steps", type=int, default=1000)
    sp.add_argument("--replicas", type=int, default=1)
    sp.add_argument("--tol", type=float, default=1e-12)
    sp.add_argument("--summary", default=None, help="JSON summary file")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("speed", help="annealed speed curve or quenched S")
    sp.add_argument("--nu", default=None, help="single-site law, e.g. bernoulli:0.5,2")
    sp.add_argument("--p-grid", default=None, help="comma-separated p values (with --M)")
    sp.add_argument("--M", type=float, default=None)
    sp.add_argument("--env", default=None, help=env_help + " (quenched report)")
    sp.add_argument("--reps", type=int, default=10000)
    sp.add_argument("--terms", type=int, default=2000, help="series terms for --env")
    sp.add_argument("--tol", type=float, default=1e-12)
    common(sp)
    sp.set_defaults(func=cmd_speed)

    sp = sub.add_parser("oracle", help="exact path counts and brute-force checks")
    osub = sp.add_subparsers(dest="oracle_command", required=True)
    o = osub.add_parser("count-excursions")
    o.add_argument("--n", type=int, required=True)
    common(o, seed=False)
    o = osub.add_parser("green")
    o.add_argument("--env", required=True, help=env_help)
    o.add_argument("--i", type=int, default=0)
    o.add_argument("--j", type=int, default=0)
    o.add_argument("--N", type=int, default=400)
    common(o, seed=False)
    o = osub.add_parser("lambda")
    o.add_argument("--env", required=True, help=env_help)
    o.add_argument("--site", type=int, default=0)
    o.add_argument("--n-max", type=int, default=60)
    common(o, seed=False)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("periodic", help="reduced-graph solution of a periodic environment")
    sp.add_argument("--ell", type=int, required=True)
    sp.add_argument("--M", type=float, required=True)
    sp.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.01, 0.001])
    common(sp, seed=False)
    sp.set_defaults(func=cmd_periodic)

    sp = sub.add_parser("figure1", help="trajectories of the extremal walk in one iid environment")
    sp.add_argument("--p", type=float, default=0.02)
    sp.add_argument("--M", type=float, default=20.0)
    sp.add_argument("--replicas", type=int, default=200)
    sp.add_argument("--steps", type=int, default=600)
    sp.add_argument("--env-seed", type=int, default=None, help="default: the master seed")
    common(sp)
    sp.set_defaults(func=cmd_figure1)

    sp = sub.add_parser("selfcheck", help="run the fast acceptance checks")
    sp.add_argument("--mutate-beta", action="store_true",
                    help="corrupt one beta value (negative control; must fail)")
    sp.set_defaults(func=cmd_selfcheck)
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.master_seed = _seed(args)
        return args.func(args)
    except NonConvergenceError as exc:
        print(f"merw: non-convergence: {exc}", file=sys.stderr)
        return 1
    except (ModelError, ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"merw: invalid input: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
