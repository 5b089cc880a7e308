"""Command-line interface: ``lpgstar <command> ...``."""

import argparse
import csv
import json
import math
import re
import sys

import numpy as np

from . import measure as ms
from .accretive import (FAMILIES, AccretiveSystem, G_glo, G_loc, certify_system, cube_family, global_theta_sq,
                        testing_constant_G)
from .dyadic import DyadicGrid, GoodnessParams, grid_dump
from .kernel import kernel_from_args
from .martingale import build_stopping_forest
from .operator import TQuadrature, g_star, local_square_function, whitney_square_function
from . import verify


def _pair(text, cast=float):
    parts = [cast(v) for v in text.split(",")]
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected two comma-separated values, got {text!r}")
    return tuple(parts)


def _tquad(text):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected N,t_lo,t_hi")
    return TQuadrature(float(parts[1]), float(parts[2]), int(parts[0]))


def _cube_arg(text):
    """``k:i1,i2,...`` -> (k, index tuple)."""
    try:
        k, idx = text.split(":")
        return int(k), tuple(int(i) for i in idx.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a cube as k:i1,...,in, got {text!r}") from None


def _default_window(mu, cube=None):
    lo = int(math.floor(math.log2(mu.min_separation()))) - 2 if mu.size > 1 else -8
    extent = float(np.max(np.ptp(mu.points, axis=0))) if mu.size > 1 else 1.0
    hi = int(math.ceil(math.log2(max(extent, mu.scale_window[0])))) + 2
    if cube is not None:
        lo, hi = min(lo, cube[0] - 1), max(hi, cube[0] + 1)
    return lo, hi


def _grid(mu, seed, window, cube=None):
    window = window or _default_window(mu, cube)
    if seed is None:
        return DyadicGrid.standard(window, mu.n)
    return DyadicGrid.random(seed, window, mu.n)


def _emit(doc, out):
    text = json.dumps(doc, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _add_kernel_args(p):
    p.add_argument("--kernel", default="standard", choices=["standard", "zero"])
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--m", type=float, default=None, help="power bound exponent (default: the measure's)")
    p.add_argument("--lambda", dest="lam", type=float, default=4.0)
    p.add_argument("--truncate", type=float, default=None)
    p.add_argument("--tquad", type=_tquad, default=TQuadrature(1 / 64, 64.0, 64), metavar="N,t_lo,t_hi")


def _kernel(args, mu):
    m = mu.m if args.m is None else args.m
    return kernel_from_args(args.kernel, m, args.alpha, args.lam, args.truncate)


# ---------------------------------------------------------------- commands

def cmd_measure_generate(args):
    if args.generator == "uniform_grid":
        mu = ms.uniform_grid(args.count, args.n, args.m)
    elif args.generator == "random_cloud":
        mu = ms.random_cloud(args.count, args.n, args.seed, args.m)
    else:
        mu = ms.cantor(args.count, args.n, args.m, args.seed)
    _emit(ms.measure_to_dict(mu), args.out)
    return 0


def cmd_grid_build(args):
    grid = DyadicGrid.random(args.seed, args.window, args.n)
    params = GoodnessParams(args.r, args.gamma)
    lo = np.full(args.n, args.box[0])
    hi = np.full(args.n, args.box[1])
    _emit(grid_dump(grid, params, lo, hi, max_per_scale=args.max_per_scale), args.out)
    return 0


def cmd_gstar_eval(args):
    mu = ms.load_measure(args.measure)
    f = ms.load_function(args.function, mu)
    kernel = _kernel(args, mu)
    if args.whitney:
        grid = _grid(mu, args.seed, args.window)
        vals = whitney_square_function(kernel, mu, f, grid, args.top_scale, args.tquad, squared=False)
    elif args.local is not None:
        grid = _grid(mu, args.seed, args.window, args.local)
        Q = grid.cube(*args.local)
        idx = np.flatnonzero(Q.contains(mu.points))
        vals = np.zeros(mu.size)
        if idx.size:
            vals[idx] = local_square_function(kernel, mu, f, Q, args.tquad, x=idx)
    else:
        vals = g_star(kernel, mu, f, args.tquad)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(["x_index", "value"])
        for i, v in enumerate(np.asarray(vals, dtype=float)):
            w.writerow([i, repr(float(v))])
    finally:
        if args.out:
            fh.close()
    return 0


def cmd_testing(args):
    mu = ms.load_measure(args.measure)
    kernel = _kernel(args, mu)
    grid = _grid(mu, args.seed, args.window)
    lo = args.scales[0] if args.scales else max(grid.k_min, int(math.floor(math.log2(args.tquad.t_lo))))
    hi = args.scales[1] if args.scales else grid.k_max
    cubes = cube_family(mu, grid, range(lo, hi + 1))
    system = AccretiveSystem(args.system)
    sq = global_theta_sq(kernel, mu, args.tquad)
    per = []
    for Q in cubes:
        per.append({"cube": Q.to_dict(),
                    "G": testing_constant_G(system, mu, kernel, [Q], args.p, args.tquad),
                    "G_loc": G_loc(args.kappa, mu, kernel, [Q], args.p, args.tquad),
                    "G_glo": G_glo(args.kappa, mu, kernel, [Q], args.p, args.tquad, theta_sq=sq)})
    c_acc, A = certify_system(system, mu, cubes, args.p)
    doc = {"G": max(c["G"] for c in per), "G_loc": max(c["G_loc"] for c in per),
           "G_glo": max(c["G_glo"] for c in per), "c_acc": c_acc, "A": A,
           "kappa": args.kappa, "p": args.p, "system": args.system, "per_cube": per}
    _emit(doc, args.out)
    return 0


def cmd_stopping_build(args):
    mu = ms.load_measure(args.measure)
    grid = _grid(mu, args.seed, args.window, args.root)
    root = grid.cube(*args.root)
    forest = build_stopping_forest(root, AccretiveSystem(args.system), mu, args.p, max_depth=args.max_depth)
    doc = forest.to_dict()
    doc["A"] = forest.A
    _emit(doc, args.out)
    return 0


def cmd_verify_run(args):
    with open(args.config) as fh:
        config = json.load(fh)
    only = args.only.split(",") if args.only else None
    report, code = verify.run_suite(config, args.out, only=only, seed=args.seed)
    for name, c in report["checks"].items():
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status} {name} max_ratio={c['max_ratio']} runtime={c['runtime_s']:.2f}s")
    return code


def cmd_verify_default_config(args):
    _emit(verify.default_config(), args.out)
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    ap = argparse.ArgumentParser(prog="lpgstar", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("measure", help="measure files").add_subparsers(dest="action", required=True)
    g = p.add_parser("generate", help="write a generated measure as JSON")
    g.add_argument("--generator", choices=sorted(ms.GENERATORS), default="uniform_grid")
    g.add_argument("--count", type=int, default=64, help="atoms per side, atom count, or Cantor levels")
    g.add_argument("--n", type=int, default=1)
    g.add_argument("--m", type=float, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_measure_generate)

    p = sub.add_parser("grid", help="random dyadic grids").add_subparsers(dest="action", required=True)
    g = p.add_parser("build", help="dump the cubes of a shifted grid meeting a box")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--window", type=lambda s: _pair(s, int), required=True, metavar="kmin,kmax")
    g.add_argument("--r", type=int, default=2)
    g.add_argument("--gamma", type=float, default=0.1)
    g.add_argument("--n", type=int, default=1)
    g.add_argument("--box", type=_pair, default=(0.0, 1.0), metavar="lo,hi")
    g.add_argument("--max-per-scale", type=int, default=4096)
    g.add_argument("--out")
    g.set_defaults(func=cmd_grid_build)

    p = sub.add_parser("gstar", help="square function values").add_subparsers(dest="action", required=True)
    g = p.add_parser("eval", help="evaluate at every atom, CSV x_index,value")
    g.add_argument("--measure", required=True)
    g.add_argument("--function", required=True)
    _add_kernel_args(g)
    g.add_argument("--local", type=_cube_arg, default=None, metavar="k:i1,...")
    g.add_argument("--whitney", action="store_true")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--top-scale", type=int, default=0)
    g.add_argument("--window", type=lambda s: _pair(s, int), default=None, metavar="kmin,kmax")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gstar_eval)

    g = sub.add_parser("testing", help="testing constants of a system")
    g.add_argument("--measure", required=True)
    g.add_argument("--system", choices=[f for f in FAMILIES if f != "custom"], required=True)
    g.add_argument("--p", type=float, default=2.0)
    g.add_argument("--kappa", type=float, default=3.0)
    _add_kernel_args(g)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--window", type=lambda s: _pair(s, int), default=None, metavar="kmin,kmax")
    g.add_argument("--scales", type=lambda s: _pair(s, int), default=None, metavar="kmin,kmax")
    g.add_argument("--out")
    g.set_defaults(func=cmd_testing)

    p = sub.add_parser("stopping", help="stopping forests").add_subparsers(dest="action", required=True)
    g = p.add_parser("build", help="build the forest under a root cube")
    g.add_argument("--measure", required=True)
    g.add_argument("--root", type=_cube_arg, required=True, metavar="k:i1,...")
    g.add_argument("--system", choices=[f for f in FAMILIES if f != "custom"], required=True)
    g.add_argument("--p", type=float, default=2.0)
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--window", type=lambda s: _pair(s, int), default=None, metavar="kmin,kmax")
    g.add_argument("--max-depth", type=int, default=64)
    g.add_argument("--out")
    g.set_defaults(func=cmd_stopping_build)

    p = sub.add_parser("verify", help="verification suite").add_subparsers(dest="action", required=True)
    g = p.add_parser("run", help="run the checks of a configuration")
    g.add_argument("--config", required=True)
    g.add_argument("--only", default=None, help="comma-separated check names")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_verify_run)
    g = p.add_parser("default-config", help="print the default configuration")
    g.add_argument("--out")
    g.set_defaults(func=cmd_verify_default_config)
    return ap


_VALUE_OPTIONS = {"--window", "--local", "--root", "--scales", "--box"}


def _join_negative(argv):
    """``--window -4,2`` -> ``--window=-4,2`` so argparse does not read -4,2 as an option."""
    out, i = [], 0
    while i < len(argv):
        a = argv[i]
        if a in _VALUE_OPTIONS and i + 1 < len(argv) and re.fullmatch(r"-[\d.][\d.,:-]*", argv[i + 1]):
            out.append(f"{a}={argv[i + 1]}")
            i += 2
        else:
            out.append(a)
            i += 1
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_negative(argv))
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"lpgstar: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
