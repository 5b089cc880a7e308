"""Randomised verification harness for the quantitative estimates.

Each check returns a ``CheckReport`` holding one row per sampled case. A
report passes when its max ratio is at most the threshold (default: no
threshold) and every trend criterion it computes holds. Trend criteria use
pooled least squares on log ratios with per-instance intercepts.

Negative controls remove the mechanism that produces the decay while keeping
the claimed bound, so a working checker must see the control ratio grow
along the index sweep.
"""
import csv
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import _core
from . import operator as op
from .accretive import (AccretiveSystem, G_glo, G_loc, cube_family, testing_constant_G)
from .dyadic import (DyadicGrid, GoodnessParams, GridShift, bad_fraction, bad_mask,
                     overlap_count, theta_of_j, whitney_family)
from .kernel import KernelParams, standard_kernel, truncate, zero_kernel
from .martingale import (AtomTree, build_stopping_forest, carleson_ratios, certify_stopping,
                         decompose, difference_table, level_packing, reconstruct,
                         stein_ratio)
from .measure import GENERATORS, lp_norm, maximal_function_atoms


# ---------------------------------------------------------------- instances

@dataclass
class Instance:
    mu: object
    kernel: object
    system: AccretiveSystem
    grid: DyadicGrid
    goodness: GoodnessParams
    quad: op.TQuadrature
    p: float = 2.0
    top: int = 0
    zeta: int = None
    seed: int = 0
    label: str = ""
    roots: str = "all"

    @property
    def params(self):
        kp = self.kernel.params
        return {"p": self.p, "lam": kp.lam, "alpha": kp.alpha, "m": kp.m, "gamma": self.goodness.gamma,
                "r": self.goodness.r, "s": self.top, "zeta": self.zeta}


def _density(points, rng, terms=3, amp=0.5):
    """A smooth positive random density exp(sum of a few random sinusoids)."""
    log = np.zeros(len(points))
    for _ in range(terms):
        freq = rng.integers(1, 4, points.shape[1])
        phase = rng.uniform(0, 2 * np.pi)
        log += amp * rng.uniform(-1, 1) * np.sin(2 * np.pi * points @ freq + phase)
    return np.exp(log)


def lex_order(mu):
    """Atom order sorted by coordinates (a labelling-free order)."""
    return np.lexsort(mu.points.T[::-1])


def make_measure(spec, seed):
    gen = spec.get("generator", "uniform_grid")
    args = dict(spec.get("args", {}))
    if gen in ("random_cloud", "cantor") and "seed" not in args:
        args["seed"] = seed
    mu = GENERATORS[gen](**args)
    masses = spec.get("masses", "equal")
    if masses != "equal":
        rng = np.random.default_rng([seed, 7])
        if masses == "random":
            w = rng.uniform(0.5, 1.5, mu.size)
        elif masses == "density":
            w = _density(mu.points, rng)
        else:
            raise ValueError(f"unknown masses option {masses!r}")
        mu = mu.with_masses(w / w.sum())
    return mu


def make_grid(mu, spec, seed, top, r):
    """Grid over [k_min, top + above_top] (default above_top = r + 2) with k_min a couple of scales below the atom separation.

    ``shift``: "random", "zero", or "cell_aligned" (random bits only at
    scales at or above the atom cell scale, so cubes are unions of cells).
    """
    k_min = spec.get("k_min")
    if k_min is None:
        k_min = int(math.floor(math.log2(mu.min_separation()))) - 2 if mu.size > 1 else top - 8
    k_max = top + spec.get("above_top", r + 2)
    mode = spec.get("shift", "random")
    rng = np.random.default_rng([seed, 11])
    bits = rng.integers(0, 2, size=(k_max - k_min + 1, mu.n))
    if mode == "zero":
        bits[:] = 0
    elif mode == "cell_aligned":
        K = spec.get("align_scale")
        if K is None:
            K = math.log2(mu.scale_window[0])
            if K != round(K):
                raise ValueError("cell alignment needs a power-of-two cell width")
        bits[: max(0, int(round(K)) - k_min)] = 0
    elif mode != "random":
        raise ValueError(f"unknown shift mode {mode!r}")
    return DyadicGrid(GridShift(k_min, k_max, bits, seed))


def auto_gamma(alpha, m, cap=0.1):
    """min(cap, 0.9 x the largest gamma allowed by the two constraints)."""
    top = min(alpha / (2 * (m + alpha)), (alpha / 4) / (m + alpha / 4))
    return min(cap, 0.9 * top)


def make_instance(spec, config=None, seed=0):
    """Build an Instance from an instance spec and the shared configuration."""
    cfg = dict(DEFAULTS)
    cfg.update(config or {})
    seed = spec.get("seed", seed)
    mu = make_measure(spec, seed)
    kc = dict(cfg["kernel"])
    kc.update(spec.get("kernel", {}))
    params = KernelParams(m=mu.m, alpha=kc["alpha"], lam=kc["lam"])
    kernel = zero_kernel(params) if kc.get("name") == "zero" else standard_kernel(params, kc.get("scale", 1.0))
    if kc.get("truncate"):
        kernel = truncate(kernel, kc["truncate"])
    gc = dict(cfg["goodness"])
    gc.update(spec.get("goodness", {}))
    gamma = gc.get("gamma")
    if gamma is None:
        gamma = auto_gamma(params.alpha, params.m)
    good = GoodnessParams(gc["r"], gamma, params.alpha, params.m)
    lo = mu.points.min(axis=0)
    hi = mu.points.max(axis=0)
    top = spec.get("top_scale", cfg.get("top_scale"))
    if top is None:
        top = int(math.ceil(math.log2(max(float((hi - lo).max()), mu.scale_window[0]))))
    grid = make_grid(mu, spec, seed, top, good.r)
    qc = dict(cfg["quadrature"])
    qc.update(spec.get("quadrature", {}))
    if kernel.truncation is not None and "t_lo" not in qc:
        qc["t_lo"], qc["t_hi"] = kernel.truncation
    quad = op.TQuadrature(qc.get("t_lo", 2.0 ** -8), qc.get("t_hi", 2.0**8), qc["count"])
    zeta = spec.get("zeta", -int(math.floor(math.log2(mu.scale_window[0]))))
    system = AccretiveSystem(spec.get("system", cfg["system"]))
    return Instance(mu, kernel, system, grid, good, quad, spec.get("p", cfg["p"]), top, zeta, seed,
                    spec.get("label", f"{spec.get('generator', 'uniform_grid')}-{seed}"),
                    spec.get("roots", "interior" if spec.get("shift") == "cell_aligned" else "all"))


def data_box(mu):
    """[min - h/2, max + h/2] per axis with h the measure's smallest scale (the cell box of a uniform grid)."""
    h = mu.scale_window[0]
    return mu.points.min(axis=0) - h / 2, mu.points.max(axis=0) + h / 2


def root_cubes(inst):
    """Top-scale cubes carrying atoms; with ``roots="interior"`` only those inside the data box."""
    grid, k = inst.grid, inst.top
    idx = np.unique(grid.locate_indices(inst.mu.points, k), axis=0)
    cubes = [grid.cube(k, row) for row in idx]
    if inst.roots == "interior":
        lo, hi = data_box(inst.mu)
        cubes = [Q for Q in cubes if np.all(Q.corner >= lo) and np.all(Q.corner + Q.side <= hi)]
        if not cubes:
            raise ValueError("no top-scale cube lies inside the data box; lower the top scale")
    return cubes


def root_atoms(inst):
    """Atoms under the roots of an instance."""
    inside = np.zeros(inst.mu.size, dtype=bool)
    for Q in root_cubes(inst):
        inside |= Q.contains(inst.mu.points)
    return np.flatnonzero(inside)


def instance_forests(inst, max_depth=64):
    return [build_stopping_forest(Q, inst.system, inst.mu, inst.p, max_depth=max_depth)
            for Q in root_cubes(inst)]


def random_functions(mu, seed, count, kind="mixed"):
    """(N, count) functions with |f| <= 1, defined from atom positions only.

    Even columns are uniform noise assigned in coordinate order; odd columns
    (for ``kind="mixed"``) are signed indicators of random boxes.
    """
    rng = np.random.default_rng(seed)
    order = lex_order(mu)
    lo = mu.points.min(axis=0)
    span = float((mu.points.max(axis=0) - lo).max()) or 1.0
    F = np.zeros((mu.size, count))
    for j in range(count):
        if kind == "noise" or j % 2 == 0:
            F[order, j] = rng.uniform(-1, 1, mu.size)
        else:
            c = lo + rng.uniform(0, 1, mu.n) * span
            half = rng.uniform(0.02, 0.3) * span
            inside = np.max(np.abs(mu.points - c), axis=1) <= half
            if not inside.any():
                inside[order[rng.integers(mu.size)]] = True
            F[:, j] = np.where(inside, rng.choice([-1.0, 1.0]), 0.0)
    return F


# ---------------------------------------------------------------- reports

@dataclass
class CheckReport:
    name: str
    rows: list = field(default_factory=list)
    threshold: float = math.inf
    criteria: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    runtime_s: float = 0.0
    error: str = None

    @property
    def ratios(self):
        return np.array([r["ratio"] for r in self.rows if "ratio" in r and not r.get("control")], dtype=float)

    @property
    def max_ratio(self):
        r = self.ratios
        return float(r.max()) if r.size else 0.0

    @property
    def passed(self):
        return self.error is None and self.max_ratio <= self.threshold and all(self.criteria.values())

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "max_ratio": self.max_ratio,
                "threshold": self.threshold if math.isfinite(self.threshold) else None,
                "criteria": self.criteria, "summary": self.summary, "cases": len(self.rows),
                "error": self.error, "runtime_s": self.runtime_s}


def trend(rows, x_keys, y_key="log_ratio", group_key="instance"):
    """Pooled OLS of y on the x columns with one intercept per group.

    Returns {x: (slope, stderr)}; columns that do not vary are dropped.
    """
    if not rows:
        return {}
    groups = sorted({r[group_key] for r in rows})
    keys = [k for k in x_keys if len({r[k] for r in rows}) > 1]
    y = np.array([r[y_key] for r in rows], dtype=float)
    X = np.zeros((len(rows), len(groups) + len(keys)))
    for n_, r in enumerate(rows):
        X[n_, groups.index(r[group_key])] = 1.0
        for c, k in enumerate(keys):
            X[n_, len(groups) + c] = r[k]
    dof = len(rows) - X.shape[1]
    if dof <= 0 or not keys:
        return {k: (0.0, math.inf) for k in keys}
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    s2 = float(resid @ resid) / dof
    cov = s2 * np.linalg.pinv(X.T @ X)
    return {k: (float(coef[len(groups) + c]), float(math.sqrt(max(cov[len(groups) + c, len(groups) + c], 0.0))))
            for c, k in enumerate(keys)}


def _cell_max(rows, keys):
    """Collapse rows to the max ratio per (instance, keys) cell, as log values."""
    cells = {}
    for r in rows:
        if r["ratio"] <= 0:
            continue
        key = (r["instance"],) + tuple(r[k] for k in keys)
        cells[key] = max(cells.get(key, 0.0), r["ratio"])
    return [dict(zip(("instance",) + tuple(keys), k), log_ratio=math.log(v)) for k, v in cells.items()]


def _timed(name, fn, *args, **kw):
    t0 = time.perf_counter()
    rep = fn(*args, **kw)
    rep.runtime_s = time.perf_counter() - t0
    rep.name = name
    return rep


# ---------------------------------------------------------------- density helpers

def window_density(kernel, mu, g, support, x_idx, ts, lam=None, split=False):
    """V(x, t) of the function g (supported on ``support``) at atoms x_idx and times ts.

    ``split`` evaluates both the source and the cone sums as two halves
    added together, as a summation-order check. Returns (Nx, T).
    """
    lam = kernel.params.lam if lam is None else lam
    m = kernel.params.m
    ts = np.asarray(ts, dtype=float)
    support = np.asarray(support)
    if support.size == 0:
        return np.zeros((len(x_idx), ts.size))
    if not split:
        th = op.theta_values(kernel, mu, g, ts, z_idx=support)
        sq = np.abs(th) ** 2
        return np.sqrt(op.cone_values(mu, sq, ts, lam, m, x_idx=x_idx)[0])
    half = support.size // 2
    th = (op.theta_values(kernel, mu, g, ts, z_idx=support[:half])
          + op.theta_values(kernel, mu, g, ts, z_idx=support[half:]))
    sq = np.abs(th) ** 2
    ys = np.arange(mu.size)
    a, b = ys[: mu.size // 2], ys[mu.size // 2:]
    out = (op.cone_values(mu, sq[:, a], ts, lam, m, x_idx=x_idx, y_idx=a)[0]
           + op.cone_values(mu, sq[:, b], ts, lam, m, x_idx=x_idx, y_idx=b)[0])
    return np.sqrt(out)


def whitney_times(side, count=3):
    """Times inside (l/2, l] for the Whitney band of a cube of side l."""
    return side * 2.0 ** (-(np.arange(count) + 0.5) / count)


def _sample_x(mu, atoms, count=4):
    """Up to ``count`` atoms spread evenly in coordinate order."""
    atoms = np.asarray(atoms)
    order = atoms[np.lexsort(mu.points[atoms].T[::-1])]
    if order.size <= count:
        return order
    return order[np.linspace(0, order.size - 1, count).round().astype(int)]


# ---------------------------------------------------------------- pointwise control

def check_pointwise_maximal(inst, trials=10_000, seed=0, n_funcs=32, lam=None, zero_f=False,
                            max_nodes=48):
    """max of V(x, t) / M f(x) over random (x, t, f); the first half of the sample is also reported."""
    mu = inst.mu
    F = np.zeros((mu.size, n_funcs)) if zero_f else random_functions(mu, seed, n_funcs)
    nodes = inst.quad.nodes
    if nodes.size > max_nodes:
        nodes = nodes[np.linspace(0, nodes.size - 1, max_nodes).round().astype(int)]
    V = np.sqrt(op.vsq_table(inst.kernel, mu, F, nodes, lam=lam))
    M = maximal_function_atoms(mu, F)
    rng = np.random.default_rng([seed, 1])
    fi = rng.integers(0, n_funcs, trials)
    xi = rng.integers(0, mu.size, trials)
    ti = rng.integers(0, nodes.size, trials)
    v = V[fi, xi, ti]
    mx = M[xi, fi]
    if np.any((mx == 0) & (v > 0)):
        raise ArithmeticError("maximal function vanished where the density is positive")
    ratio = np.where(mx > 0, v / np.where(mx > 0, mx, 1.0), 0.0)
    rep = CheckReport("pointwise_maximal")
    lab = inst.label
    rep.rows = [{"instance": lab, "f": int(a), "x": int(b), "t": float(nodes[c]), "ratio": float(r)}
                for a, b, c, r in zip(fi, xi, ti, ratio)]
    half = float(ratio[: trials // 2].max()) if trials >= 2 else 0.0
    full = float(ratio.max()) if trials else 0.0
    rep.summary = {"max_first_half": half, "max": full,
                   "change": (full - half) / half if half > 0 else 0.0,
                   "lam": inst.kernel.params.lam if lam is None else lam}
    return rep


# ---------------------------------------------------------------- decay lemmas

class _DecayContext:
    """Shared per-instance data for the decay checkers."""

    def __init__(self, inst, seed, n_funcs=2):
        self.inst = inst
        mu, grid = inst.mu, inst.grid
        self.forests = instance_forests(inst)
        self.fs = random_functions(mu, [seed, 3], n_funcs, kind="noise")
        self.tables = [[difference_table(F, self.fs[:, j]) for F in self.forests] for j in range(n_funcs)]
        self.tree = AtomTree(mu, grid, grid.k_min, inst.top)
        self.good = {k: ~bad_mask(grid, k, self.tree.keys[k], inst.goodness) for k in self.tree.scales}
        self.any = {k: np.ones(len(self.tree.keys[k]), dtype=bool) for k in self.tree.scales}
        # candidate Q: non-root cubes under some root holding at least two atoms
        self.cands = {}
        for fi, F in enumerate(self.forests):
            t = F.tree
            for k in range(F.root.k - 1, t.k_lo, -1):
                ids = np.flatnonzero(t.count[k] >= 2)
                if ids.size:
                    self.cands.setdefault(k, []).append((fi, ids, np.ldexp(t.keys[k][ids].astype(float), k)
                                                         + grid.offset(k)))

    def delta(self, j, fi, k, c):
        """(global atoms, values) of Delta_Q f for the cube with id c at scale k in forest fi."""
        F = self.forests[fi]
        loc = np.flatnonzero(F.tree.inv[k] == c)
        return F.tree.atoms[loc], self.tables[j][fi][k][loc]

    def candidates(self, k):
        for fi, ids, corners in self.cands.get(k, []):
            yield fi, ids, corners

    def r_cubes(self, k, good=True):
        """(ids, corners) of nonempty cubes at scale k (only good ones by default)."""
        ids = np.flatnonzero(self.good[k] if good else self.any[k])
        return ids, np.ldexp(self.tree.keys[k][ids].astype(float), k) + self.inst.grid.offset(k)

    def r_atoms(self, k, c):
        return self.tree.atoms[self.tree.inv[k] == c]


def _gaps(corner, side, corners, sides):
    """l-infinity set distance between one box and many boxes."""
    gap = np.maximum(0.0, np.maximum(corner - (corners + sides), corners - (corner + side)))
    return gap.max(axis=1)


def _dyadic_band(ratio):
    """j with 2^j < ratio <= 2^(j+1)."""
    return (np.ceil(np.log2(ratio)) - 1).astype(int)


def _pair_ratio(ctx, j_f, fi, kq, c, R_side, x_idx, bound_of_l1, absolute=False, split=False):
    atoms, vals = ctx.delta(j_f, fi, kq, c)
    mu = ctx.inst.mu
    l1 = float((np.abs(vals) * mu.masses[atoms]).sum())
    if l1 == 0:
        return None
    g = np.zeros(mu.size)
    g[atoms] = np.abs(vals) if absolute else vals
    lhs = window_density(ctx.inst.kernel, mu, g, atoms, x_idx, whitney_times(R_side), split=split)
    return float(lhs.max()), bound_of_l1(l1)


def check_separated_decay(inst, case="less", n_R=8, per_cell=2, seed=0, i_max=None, j_max=4,
                          control=True, ctx=None, require_good=False):
    """Decay of V(x, t) of Delta_Q f for (x, t) in W_R over the (i, j) sweep.

    less: l(R) = 2^i l(Q), D(Q,R)/l(R) ~ 2^j, S = Q^(i+j+theta(j)), decay 2^-a(i+3j/4).
    sep:  l(Q) = 2^i l(R), separated, D/l(Q) ~ 2^j, S = Q^(j+theta(i+j)), decay 2^-a(i+j)/4.
    adj:  l(R) <= l(Q) <= 2^r l(R), not separated, bound l(R)^-m ||Delta_Q f||_1.
    Controls: less uses |Delta_Q f| (no cancellation); sep uses nested pairs R in Q
    (no separation). The adjacent case has no index sweep and no control.
    These estimates hold for arbitrary R, so goodness of R is optional.
    ``i_max`` defaults to r + 5.
    """
    if case not in ("less", "sep", "adj"):
        raise ValueError(f"unknown case {case!r}")
    ctx = ctx or _DecayContext(inst, seed)
    kp, gp = inst.kernel.params, inst.goodness
    i_max = gp.r + 5 if i_max is None else i_max
    a, m, gam = kp.alpha, kp.m, gp.gamma
    rng = np.random.default_rng([seed, 5, ("less", "sep", "adj").index(case)])
    rep = CheckReport(f"separated_decay_{case}")
    pool = ctx.good if require_good else ctx.any
    scales = [k for k in ctx.tree.scales if pool[k].any()]
    if case == "less":
        i_range, j_range = range(1, i_max + 1), range(0, j_max + 1)
    elif case == "sep":
        i_range, j_range = range(0, i_max + 1), range(0, j_max + 1)
    else:
        i_range, j_range = range(0, gp.r + 1), range(0, 2)
    for _ in range(n_R):
        kR = int(rng.choice(scales))
        ids, corners = ctx.r_cubes(kR, require_good)
        pick = int(rng.integers(ids.size))
        cR, cornerR = ids[pick], corners[pick]
        lR = math.ldexp(1.0, kR)
        x_idx = _sample_x(inst.mu, ctx.r_atoms(kR, cR))
        for i in i_range:
            kQ = kR - i if case == "less" else kR + i
            lQ = math.ldexp(1.0, kQ)
            for fi, qids, qc in ctx.candidates(kQ):
                gap = _gaps(cornerR, lR, qc, lQ)
                D = lQ + lR + gap
                sep = gap > lR**gam * lQ ** (1 - gam)
                base = lR if case == "less" else lQ
                jj = _dyadic_band(D / base)
                for j in j_range:
                    if case == "less":
                        ok = jj == j
                    elif case == "sep":
                        ok = (jj == j) & sep
                    else:
                        ok = (jj == j) & ~sep
                    hit = np.flatnonzero(ok)
                    if hit.size == 0:
                        continue
                    for h in rng.choice(hit, size=min(per_cell, hit.size), replace=False):
                        jf = int(rng.integers(ctx.fs.shape[1]))
                        if case == "less":
                            lS = lQ * 2.0 ** (i + j + theta_of_j(j, gp))
                            bound = lambda l1: 2.0 ** (-a * (i + 0.75 * j)) * lS**-m * l1
                        elif case == "sep":
                            lS = lQ * 2.0 ** (j + theta_of_j(i + j, gp))
                            bound = lambda l1: 2.0 ** (-a * (i + j) / 4) * lS**-m * l1
                        else:
                            bound = lambda l1: lR**-m * l1
                        res = _pair_ratio(ctx, jf, fi, kQ, qids[h], lR, x_idx, bound)
                        if res is None:
                            continue
                        lhs, b = res
                        rep.rows.append({"instance": inst.label, "case": case, "control": False, "i": i,
                                         "j": j, "kR": kR, "kQ": kQ, "lhs": lhs, "bound": b,
                                         "ratio": lhs / b})
                        if control and case == "less":
                            lhs_c, _ = _pair_ratio(ctx, jf, fi, kQ, qids[h], lR, x_idx, bound, absolute=True)
                            rep.rows.append({"instance": inst.label, "case": case, "control": True, "i": i,
                                             "j": j, "kR": kR, "kQ": kQ, "lhs": lhs_c, "bound": b,
                                             "ratio": lhs_c / b})
            if control and case == "sep" and i >= 1:
                # nested pair: the ancestor of R i levels up, so d(Q, R) = 0 and j = 0
                for fi, qids, qc in ctx.candidates(kQ):
                    inside = np.all((qc <= cornerR) & (cornerR + lR <= qc + lQ), axis=1)
                    hit = np.flatnonzero(inside)
                    if hit.size == 0:
                        continue
                    lS = lQ * 2.0 ** theta_of_j(i, gp)
                    bound = lambda l1: 2.0 ** (-a * i / 4) * lS**-m * l1
                    res = _pair_ratio(ctx, int(rng.integers(ctx.fs.shape[1])), fi, kQ, qids[hit[0]], lR,
                                      x_idx, bound)
                    if res is None:
                        continue
                    lhs, b = res
                    rep.rows.append({"instance": inst.label, "case": case, "control": True, "i": i, "j": 0,
                                     "kR": kR, "kQ": kQ, "lhs": lhs, "bound": b, "ratio": lhs / b})
    return rep


def check_nested_decay(inst, variant="cutoff", n_R=8, seed=0, control=True, ctx=None, sweep=5):
    """Nested decay over i = r+1 .. r+sweep for good R and (x, t) in W_R.

    cutoff: V of 1_{R^(i) minus R^(i-1)} Delta_{R^(i)} f against 2^-ai/2 2^-(k+i)m ||Delta_{R^(i)} f||_1.
    accretive: V of 1_{outside R^(i-1)} b_{(R^(i))^a} against 2^-ai/2.
    The control drops the cutoff indicator in both variants.
    """
    if variant not in ("cutoff", "accretive"):
        raise ValueError(f"unknown variant {variant!r}")
    ctx = ctx or _DecayContext(inst, seed)
    mu, grid = inst.mu, inst.grid
    a, m, r = inst.kernel.params.alpha, inst.kernel.params.m, inst.goodness.r
    rng = np.random.default_rng([seed, 9, variant == "accretive"])
    rep = CheckReport(f"nested_decay_{variant}")
    top_R = inst.top - r - sweep
    scales = [k for k in ctx.tree.scales if k <= top_R and ctx.good[k].any()]
    if not scales:
        return rep
    for _ in range(n_R):
        k = int(rng.choice(scales))
        ids, _ = ctx.r_cubes(k)
        cR = int(ids[rng.integers(ids.size)])
        R = ctx.tree.cube(k, cR)
        x_idx = _sample_x(mu, ctx.r_atoms(k, cR))
        # the forest whose root holds R
        fi = next(n_ for n_, F in enumerate(ctx.forests) if F.tree.cube_id(grid.ancestor(R, F.root.k - k)) == 0)
        F = ctx.forests[fi]
        jf = int(rng.integers(ctx.fs.shape[1]))
        for i in range(r + 1, r + sweep + 1):
            P = grid.ancestor(R, i)
            Pm = grid.ancestor(R, i - 1)
            outside = ~Pm.contains(mu.points)
            if variant == "cutoff":
                c = F.tree.cube_id(P)
                atoms, vals = ctx.delta(jf, fi, P.k, c)
                l1 = float((np.abs(vals) * mu.masses[atoms]).sum())
                if l1 == 0:
                    continue
                bound = 2.0 ** (-a * i / 2) * 2.0 ** (-(k + i) * m) * l1
                full = np.zeros(mu.size)
                full[atoms] = vals
            else:
                s_idx = F.a_of[P.k][F.tree.cube_id(P)]
                full = np.zeros(mu.size, dtype=F.stop_b[s_idx].dtype)
                full[F.tree.atoms] = F.stop_b[s_idx]
                bound = 2.0 ** (-a * i / 2)
            for ctl in ((False, True) if control else (False,)):
                g = full if ctl else np.where(outside, full, 0.0)
                supp = np.flatnonzero(g != 0)
                lhs = float(window_density(inst.kernel, mu, g, supp, x_idx, whitney_times(R.side)).max())
                rep.rows.append({"instance": inst.label, "variant": variant, "control": ctl, "i": i, "j": 0,
                                 "kR": k, "lhs": lhs, "bound": bound, "ratio": lhs / bound})
    return rep


def decay_criteria(rep, sweep_keys=("i", "j"), control_key="i"):
    """Slope tests on per-cell maxima: genuine slopes <= 2 sigma, control slope > 2 sigma."""
    gen = _cell_max([r for r in rep.rows if not r["control"]], sweep_keys)
    ctl = _cell_max([r for r in rep.rows if r["control"]], sweep_keys)
    tg = trend(gen, sweep_keys)
    tc = trend(ctl, sweep_keys)
    crit = {f"slope_{k}_nonpositive": s <= 2 * e for k, (s, e) in tg.items()}
    if ctl:
        s, e = tc.get(control_key, (0.0, math.inf))
        crit[f"control_slope_{control_key}_positive"] = s > 2 * e
    summary = {"slopes": {k: {"slope": s, "stderr": e} for k, (s, e) in tg.items()},
               "control_slopes": {k: {"slope": s, "stderr": e} for k, (s, e) in tc.items()},
               "cells": len(gen), "control_cells": len(ctl)}
    return crit, summary


def merge_reports(name, reports):
    out = CheckReport(name)
    for r in reports:
        out.rows.extend(r.rows)
    return out


# ---------------------------------------------------------------- goodness

def check_goodness_probability(gamma=(0.1, 0.4), rs=(2, 4, 6, 8), n_shifts=1000, seed=0, n=1, k=0, span=12,
                               cubes=None):
    """Bad fraction per (gamma, r) over n_shifts shifts (the same shifts for every r)."""
    if n_shifts < 100:
        raise ValueError("need at least 100 shifts")
    cubes = np.zeros((1, n), dtype=np.int64) if cubes is None else np.asarray(cubes)
    gammas = [float(gamma)] if np.isscalar(gamma) else [float(g) for g in gamma]
    window = (k, k + span)
    rep = CheckReport("goodness_probability")
    mono, again, fractions = True, True, {}
    for g in gammas:
        fr = []
        for r in rs:
            f = bad_fraction(GoodnessParams(r, g), n_shifts, seed, window, k, n, cubes)
            M = n_shifts * cubes.shape[0]
            s = math.sqrt(max(f * (1 - f), 1.0 / M) / M)
            fr.append((f, s))
            rep.rows.append({"gamma": g, "r": r, "fraction": f, "sigma": s, "samples": M})
        mono &= all(b[0] - a[0] <= 3 * math.sqrt(a[1] ** 2 + b[1] ** 2) for a, b in zip(fr, fr[1:]))
        again &= bad_fraction(GoodnessParams(rs[0], g), n_shifts, seed, window, k, n, cubes) == fr[0][0]
        fractions[str(g)] = {str(r): f for r, (f, _) in zip(rs, fr)}
    rep.criteria = {"monotone_3sigma": mono, "reproducible": again}
    rep.summary = {"fractions": fractions, "window": list(window)}
    return rep


# ---------------------------------------------------------------- Carleson embedding

def carleson_embedding_terms(inst, require_good=False):
    """Per-atom Whitney contributions c_k(x) of |theta_t 1|^2 over R_k(x), per scale k.

    With require_good only good R contribute.

    Returns (scales, C) with C of shape (N, len(scales)).
    """
    mu, grid, quad = inst.mu, inst.grid, inst.quad
    r = inst.goodness.r
    V1 = op.vsq_table(inst.kernel, mu, np.ones(mu.size), quad.nodes)
    bands = quad.bands
    scales = list(range(grid.k_min, min(grid.k_max - r, inst.top) + 1))
    C = np.zeros((mu.size, len(scales)))
    for c, k in enumerate(scales):
        sel = bands == k
        if not sel.any():
            continue
        C[:, c] = V1[:, sel] @ quad.weights[sel]
        if require_good:
            idx = grid.locate_indices(mu.points, k)
            C[:, c] *= ~bad_mask(grid, k, idx, inst.goodness)
    return scales, C


def carleson_constant(inst, scales, C):
    """Car = max over cubes Q of [mu(Q)^-1 int_Q (sum_{S in Q} A_S^2)^(p/2)]^(1/p)."""
    mu, grid, p, r = inst.mu, inst.grid, inst.p, inst.goodness.r
    cum = np.cumsum(C, axis=1)
    best = 0.0
    for kQ in range(scales[0] + r, min(grid.k_max, inst.top) + 1):
        upto = kQ - r - scales[0]
        inner = cum[:, min(upto, len(scales) - 1)]
        _, inv = np.unique(grid.locate_indices(mu.points, kQ), axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        num = np.bincount(inv, inner ** (p / 2) * mu.masses)
        den = np.bincount(inv, mu.masses)
        best = max(best, float(np.max(num / den)))
    return best ** (1 / p)


def check_carleson_embedding(inst, n_funcs=100, seed=0, with_glo=True, require_good=False):
    """Embedding ratio ||(sum |<f>_S|^2 A_S^2)^(1/2)||_p / (Car ||f||_p) over random f, and Car / G_glo(9)."""
    mu, grid, p, r = inst.mu, inst.grid, inst.p, inst.goodness.r
    scales, C = carleson_embedding_terms(inst, require_good)
    car = carleson_constant(inst, scales, C)
    F = random_functions(mu, seed, n_funcs)
    rep = CheckReport("carleson_embedding")
    from .martingale import conditional_expectation
    avg = {k: np.stack([conditional_expectation(F[:, j], k + r, grid, mu) for j in range(n_funcs)], axis=1)
           for k in scales}
    for j in range(n_funcs):
        E = sum(C[:, c] * np.abs(avg[k][:, j]) ** 2 for c, k in enumerate(scales))
        lhs = lp_norm(mu, np.sqrt(E), p)
        fn = lp_norm(mu, F[:, j], p)
        ratio = lhs / (car * fn) if car > 0 and fn > 0 else 0.0
        rep.rows.append({"instance": inst.label, "f": j, "lhs": lhs, "car": car, "f_norm": fn, "ratio": ratio})
    rep.summary = {"car": car}
    if with_glo:
        cubes = cube_family(mu, grid, range(max(grid.k_min, int(np.floor(np.log2(inst.quad.t_lo)))), inst.top + 1))
        g9 = G_glo(9, mu, inst.kernel, cubes, p, inst.quad)
        rep.summary.update(G_glo_9=g9, car_over_glo=car / g9 if g9 > 0 else 0.0)
    return rep


# ---------------------------------------------------------------- main inequality

def testing_cubes(inst):
    lo = max(inst.grid.k_min, int(math.floor(math.log2(inst.quad.t_lo))))
    return cube_family(inst.mu, inst.grid, range(lo, inst.top + 1))


def check_main_inequality(instances, n_funcs=16, seed=0, with_chain=True):
    """max over random unit-norm f of ||g* f||_p / (1 + G) per instance, with a growth test in log2 N."""
    rep = CheckReport("main_inequality")
    for n_, inst in enumerate(instances):
        mu, p = inst.mu, inst.p
        cubes = testing_cubes(inst)
        G = testing_constant_G(inst.system, mu, inst.kernel, cubes, p, inst.quad)
        F = random_functions(mu, [seed, n_, mu.size], n_funcs)
        F = F / np.array([lp_norm(mu, F[:, j], p) for j in range(n_funcs)])
        gs = op.g_star(inst.kernel, mu, F, inst.quad)
        norms = np.array([lp_norm(mu, gs[j], p) for j in range(n_funcs)])
        row = {"instance": inst.label, "size": mu.size, "log2_size": math.log2(mu.size), "G": G,
               "norm_max": float(norms.max()), "ratio": float(norms.max() / (1 + G))}
        if with_chain:
            gl = G_loc(3, mu, inst.kernel, cubes, p, inst.quad)
            gg = G_glo(9, mu, inst.kernel, cubes, p, inst.quad)
            row.update(G_loc_3=gl, G_glo_9=gg, ratio_loc=float(norms.max() / (1 + gl)),
                       ratio_glo=float(norms.max() / (1 + gg)))
        rep.rows.append(row)
    if len({r["size"] for r in rep.rows}) > 1:
        rows = [dict(r, log_ratio=math.log(r["ratio"]), group=0) for r in rep.rows if r["ratio"] > 0]
        tr = trend(rows, ["log2_size"], group_key="group")
        s, e = tr.get("log2_size", (0.0, math.inf))
        rep.criteria["no_growth_2sigma"] = s <= 2 * e
        rep.summary["slope"] = {"slope": s, "stderr": e}
    return rep


# ---------------------------------------------------------------- quadrature

def check_quadrature(instances, counts=(256, 2048), seed=0, tol=0.005, n0_start=16):
    """Relative gap between g* at two node counts on the same window; also the first N with N vs 4N < tol."""
    rep = CheckReport("quadrature", threshold=tol)
    for n_, inst in enumerate(instances):
        mu = inst.mu
        f = random_functions(mu, [seed, n_], 2)
        lo, hi = inst.quad.t_lo, inst.quad.t_hi

        def gap(a, b):
            ga = op.g_star(inst.kernel, mu, f, op.TQuadrature(lo, hi, a))
            gb = op.g_star(inst.kernel, mu, f, op.TQuadrature(lo, hi, b))
            keep = gb > 1e-12 * gb.max()
            return float(np.max(np.abs(ga - gb)[keep] / gb[keep])) if keep.any() else 0.0

        rel = gap(*counts)
        N0 = None
        N = n0_start
        while N <= counts[0]:
            if gap(N, 4 * N) < tol:
                N0 = N
                break
            N *= 2
        rep.rows.append({"instance": inst.label, "size": mu.size, "n_coarse": counts[0], "n_fine": counts[1],
                         "ratio": rel, "N0": N0})
    return rep


# ---------------------------------------------------------------- martingale checks

def check_reconstruction(instances, n_funcs=2, seed=0, tol=1e-10):
    """Max |sum_Q Delta_Q f - f| and max |int Delta_Q f dmu| over non-root Q."""
    rep = CheckReport("reconstruction", threshold=tol)
    for n_, inst in enumerate(instances):
        mu = inst.mu
        forests = instance_forests(inst)
        F = random_functions(mu, [seed, n_], n_funcs)
        for j in range(n_funcs):
            f = F[:, j]
            err, mean_err = 0.0, 0.0
            total = np.zeros(mu.size)
            for Fo in forests:
                diffs = decompose(f, Fo)
                total += reconstruct(diffs, mu.size).real
                roots = Fo.root
                for d in diffs:
                    if d.cube != roots:
                        mean_err = max(mean_err, abs(float((d.values * mu.masses[d.atoms]).sum())))
            under = root_atoms(inst)
            err = float(np.max(np.abs(total - f)[under]))
            rep.rows.append({"instance": inst.label, "family": inst.system.family, "n": mu.n, "size": mu.size,
                             "f": j, "reconstruction": err, "mean": mean_err, "ratio": max(err, mean_err)})
    return rep


def check_stopping(instances):
    """Exact re-check of both stopping conditions; the ratio is the count of violations."""
    rep = CheckReport("stopping_certification", threshold=0.0)
    for inst in instances:
        for Fo in instance_forests(inst):
            bad_s, bad_n = certify_stopping(Fo, inst.system, inst.mu)
            rep.rows.append({"instance": inst.label, "family": inst.system.family, "root": str(Fo.root.index),
                             "stops": len(Fo.stops), "bad_stops": len(bad_s), "bad_nonstops": len(bad_n),
                             "ratio": float(len(bad_s) + len(bad_n))})
    return rep


def check_carleson_sequence(pairs, tol=0.2):
    """Carleson ratio of the stopping cubes on (coarse, fine) instance pairs with the same geometry."""
    rep = CheckReport("carleson_sequence", threshold=tol)
    for coarse, fine in pairs:
        fc, ff = instance_forests(coarse), instance_forests(fine)
        rc, rf = carleson_ratios(fc), carleson_ratios(ff)
        pack = max(level_packing(F) for F in fc + ff)
        rep.rows.append({"instance": coarse.label, "family": coarse.system.family, "coarse_size": coarse.mu.size,
                         "fine_size": fine.mu.size, "coarse_ratio": rc, "fine_ratio": rf, "packing": pack,
                         "stops_coarse": sum(len(F.stops) for F in fc), "stops_fine": sum(len(F.stops) for F in ff),
                         "ratio": abs(rf - rc) / rc})
    return rep


def check_whitney_overlap(n=1, scales=(0, 1, 2, 3), probes=10_000, r=2, gamma=0.3, depth=None, dilation=9):
    """Max overlap of dilated Whitney cubes on a probe grid of ``probes`` points, per scale of Q.

    The smallest admissible cube side is held fixed, so the family under a larger Q is deeper.
    """
    depth = depth if depth is not None else (8 if n == 1 else 7)
    per_axis = int(round(probes ** (1.0 / n)))
    k0 = min(scales)
    grid = DyadicGrid.random(0, (k0 - depth - 1, max(scales) + 2), n)
    params = GoodnessParams(r, gamma)
    rep = CheckReport("whitney_overlap")
    for k in scales:
        Q = grid.cube(k, grid.locate_indices(np.zeros((1, n)), k)[0])
        fam = whitney_family(Q, params, max_depth=depth + k - k0)
        lo = Q.corner
        count = overlap_count(fam, dilation, lo, lo + Q.side, per_axis)
        rep.rows.append({"n": n, "scale": k, "depth": depth + k - k0, "family_size": len(fam),
                         "ratio": float(count)})
    counts = [r_["ratio"] for r_ in rep.rows]
    rep.criteria = {"no_growth": max(counts) <= counts[0], "nonempty": min(r_["family_size"] for r_ in rep.rows) > 0}
    rep.summary = {"max_overlap": max(counts)}
    return rep


def check_stein(instances, n_suites=20, terms=6, seed=0):
    """||(sum |E_k f_k|^2)^(1/2)||_p / ||(sum |f_k|^2)^(1/2)||_p over random suites."""
    rep = CheckReport("stein")
    for n_, inst in enumerate(instances):
        rng = np.random.default_rng([seed, n_])
        ks = np.arange(inst.grid.k_min, inst.top + 1)
        for s in range(n_suites):
            fs = [random_functions(inst.mu, [seed, n_, s, t], 1)[:, 0] for t in range(terms)]
            sc = [int(k) for k in rng.choice(ks, terms)]
            rep.rows.append({"instance": inst.label, "suite": s,
                             "ratio": stein_ratio(fs, sc, inst.grid, inst.mu, inst.p)})
    return rep


# ---------------------------------------------------------------- suite

DEFAULTS = {
    "seed": 0,
    "p": 2.0,
    "system": "smooth_profile",
    "kernel": {"alpha": 0.5, "lam": 4.0, "truncate": 64},
    "goodness": {"r": 2, "gamma": None},
    "quadrature": {"count": 64},
    "top_scale": 0,
}


def default_config():
    """The default suite: every check on small one- and two-dimensional instances."""
    grid1 = {"generator": "uniform_grid", "args": {"per_side": 256}, "masses": "random",
             "shift": "cell_aligned", "top_scale": -1}
    grid2 = {"generator": "uniform_grid", "args": {"per_side": 16, "n": 2}, "masses": "random",
             "shift": "cell_aligned", "top_scale": -1, "system": "polish_bump"}
    cantor = {"generator": "cantor", "args": {"levels": 8}, "kernel": {"truncate": None}}
    sep = dict(cantor, args={"levels": 9}, system="indicator")
    nested = dict(sep, system="gaussian", kernel={"alpha": 1.0, "lam": 8.0, "truncate": None},
                  goodness={"r": 8, "gamma": 0.28}, above_top=2)
    fams = ["indicator", "gaussian", "poisson_bump", "polish_bump", "smooth_profile"]
    recon = [dict(grid1, args={"per_side": 64 * 2 ** (q % 4)}, system=f) for q, f in enumerate(fams)]
    recon += [dict(grid2, args={"per_side": 8 * 2 ** (q % 2), "n": 2}, system=f) for q, f in enumerate(fams)]
    refine = [{"generator": "uniform_grid", "args": {"per_side": 64 if n == 1 else 16, "n": n},
               "shift": "cell_aligned", "top_scale": -1, "system": f}
              for f in ("polish_bump", "smooth_profile") for n in (1, 2)]
    scaling = [{"generator": "uniform_grid", "args": {"per_side": 2 ** q}, "system": "indicator",
                "kernel": {"truncate": 64}} for q in range(6, 11)]
    return {
        **json.loads(json.dumps(DEFAULTS)),
        "instances": [grid1, grid2],
        "checks": {
            "reconstruction": {"instances": recon, "n_funcs": 2},
            "stopping_certification": {"instances": recon},
            "carleson_sequence": {"instances": refine, "pairs": 2, "refine": 4},
            "pointwise_maximal": {"instances": [grid1, grid2, cantor], "trials": 10_000},
            "separated_decay": {"instances": [sep], "replicas": 10, "n_R": 8, "cases": ["less", "sep", "adj"]},
            "nested_decay": {"instances": [nested], "replicas": 10, "n_R": 8, "variants": ["cutoff", "accretive"]},
            "goodness_probability": {"n_shifts": 1000, "rs": [2, 4, 6, 8], "gamma": [0.1, 0.4]},
            "carleson_embedding": {"instances": [grid1, grid2, cantor], "n_funcs": 50},
            "main_inequality": {"instances": scaling, "n_funcs": 16},
            "quadrature": {"instances": [grid1, grid2, cantor], "counts": [256, 2048]},
            "whitney_overlap": {"dims": [1, 2]},
            "stein": {"n_suites": 10},
        },
    }


def _instances(cfg, check_cfg, seed):
    specs = check_cfg.get("instances", cfg.get("instances", []))
    reps = int(check_cfg.get("replicas", 1))
    return [make_instance(s, cfg, seed + n_ * reps + q) for n_, s in enumerate(specs) for q in range(reps)]


def _refined_pair(spec, cfg, seed, refine):
    """A (coarse, fine) pair sharing the density, the shift and the cell alignment scale."""
    coarse = make_instance(dict(spec, masses=spec.get("masses", "density")), cfg, seed)
    K = int(round(math.log2(coarse.mu.scale_window[0])))
    args = dict(spec.get("args", {}))
    n = args.get("n", 1)
    args["per_side"] = args.get("per_side", 64) * int(round(refine ** (1.0 / n)))
    base = dict(spec, args=args, masses=spec.get("masses", "density"), align_scale=K,
                k_min=coarse.grid.k_min - int(round(math.log2(refine) / n)))
    fine = make_instance(base, cfg, seed)
    coarse = make_instance(dict(spec, masses=spec.get("masses", "density"), align_scale=K,
                                k_min=fine.grid.k_min), cfg, seed)
    return coarse, fine


def _run_check(name, cfg, ccfg, seed):
    if name == "reconstruction":
        return check_reconstruction(_instances(cfg, ccfg, seed), ccfg.get("n_funcs", 2), seed)
    if name == "stopping_certification":
        return check_stopping(_instances(cfg, ccfg, seed))
    if name == "carleson_sequence":
        specs = ccfg.get("instances", cfg.get("instances", []))
        pairs = [_refined_pair(s, cfg, seed + q, ccfg.get("refine", 4))
                 for s in specs for q in range(ccfg.get("pairs", 1))]
        return check_carleson_sequence(pairs, ccfg.get("threshold", 0.2))
    if name == "pointwise_maximal":
        reps = []
        for inst in _instances(cfg, ccfg, seed):
            main = check_pointwise_maximal(inst, ccfg.get("trials", 10_000), seed, ccfg.get("n_funcs", 32))
            kp = inst.kernel.params
            neg = check_pointwise_maximal(inst, ccfg.get("trials", 10_000), seed, ccfg.get("n_funcs", 32),
                                          lam=2 + kp.alpha / kp.m)
            main.criteria[f"{inst.label}_stable"] = abs(main.summary["change"]) < 0.25
            main.criteria[f"{inst.label}_control_larger"] = neg.summary["max"] > main.summary["max"]
            main.summary["control_max"] = neg.summary["max"]
            reps.append(main)
        out = merge_reports(name, reps)
        for r in reps:
            out.criteria.update(r.criteria)
            out.summary[r.rows[0]["instance"] if r.rows else "empty"] = r.summary
        return out
    if name == "separated_decay":
        reps = []
        for inst in _instances(cfg, ccfg, seed):
            ctx = _DecayContext(inst, seed)
            for case in ccfg.get("cases", ["less", "sep", "adj"]):
                reps.append(check_separated_decay(inst, case, ccfg.get("n_R", 8), seed=seed, ctx=ctx))
        out = merge_reports(name, reps)
        for case in ccfg.get("cases", ["less", "sep", "adj"]):
            sub = merge_reports(case, [r for r in reps if r.name.endswith(case)])
            if case != "adj":
                crit, summ = decay_criteria(sub)
                out.criteria.update({f"{case}_{k}": v for k, v in crit.items()})
                out.summary[case] = summ
        return out
    if name == "nested_decay":
        reps = []
        for inst in _instances(cfg, ccfg, seed):
            ctx = _DecayContext(inst, seed)
            for v in ccfg.get("variants", ["cutoff", "accretive"]):
                reps.append(check_nested_decay(inst, v, ccfg.get("n_R", 8), seed=seed, ctx=ctx))
        out = merge_reports(name, reps)
        for v in ccfg.get("variants", ["cutoff", "accretive"]):
            crit, summ = decay_criteria(merge_reports(v, [r for r in reps if r.name.endswith(v)]))
            out.criteria.update({f"{v}_{k}": val for k, val in crit.items()})
            out.summary[v] = summ
        return out
    if name == "goodness_probability":
        return check_goodness_probability(ccfg.get("gamma", (0.1, 0.4)), tuple(ccfg.get("rs", (2, 4, 6, 8))),
                                          ccfg.get("n_shifts", 1000), seed, ccfg.get("n", 1))
    if name == "carleson_embedding":
        reps = [check_carleson_embedding(i, ccfg.get("n_funcs", 100), seed) for i in _instances(cfg, ccfg, seed)]
        out = merge_reports(name, reps)
        out.summary = {r.rows[0]["instance"]: r.summary for r in reps if r.rows}
        return out
    if name == "main_inequality":
        return check_main_inequality(_instances(cfg, ccfg, seed), ccfg.get("n_funcs", 16), seed)
    if name == "quadrature":
        return check_quadrature(_instances(cfg, ccfg, seed), tuple(ccfg.get("counts", (256, 2048))), seed)
    if name == "whitney_overlap":
        reps = [check_whitney_overlap(n, tuple(ccfg.get("scales", (0, 1, 2, 3))), ccfg.get("probes", 10_000),
                                      ccfg.get("r", 2), ccfg.get("gamma", 0.3)) for n in ccfg.get("dims", [1])]
        out = merge_reports(name, reps)
        for r in reps:
            n = r.rows[0]["n"]
            out.criteria.update({f"n{n}_{k}": v for k, v in r.criteria.items()})
            out.summary[f"n{n}"] = r.summary
        return out
    if name == "stein":
        rep = check_stein(_instances(cfg, ccfg, seed), ccfg.get("n_suites", 20), seed=seed)
        if cfg["p"] == 2:
            rep.threshold = 1.0 + 1e-12  # conditional expectations contract L^2 exactly
        return rep
    raise KeyError(f"unknown check {name!r}")


CHECKS = ("reconstruction", "stopping_certification", "carleson_sequence", "pointwise_maximal",
          "separated_decay", "nested_decay", "goodness_probability", "carleson_embedding",
          "main_inequality", "quadrature", "whitney_overlap", "stein")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def write_ratios(rep, path):
    keys = []
    for r in rep.rows:
        for k in r:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rep.rows:
            w.writerow({k: _jsonable(v) for k, v in r.items()})


def run_suite(config, out_dir, only=None, seed=None):
    """Run the configured checks, write report.json and ratios_<check>.csv; return (report, exit code)."""
    cfg = dict(DEFAULTS)
    cfg.update(config)
    seed = cfg.get("seed", 0) if seed is None else seed
    names = [n for n in CHECKS if n in cfg.get("checks", {})]
    if only:
        unknown = set(only) - set(CHECKS)
        if unknown:
            raise KeyError(f"unknown checks {sorted(unknown)}")
        names = [n for n in names if n in only]
    os.makedirs(out_dir, exist_ok=True)
    checks, failed = {}, []
    for name in names:
        ccfg = cfg["checks"][name] or {}
        t0 = time.perf_counter()
        try:
            rep = _run_check(name, cfg, ccfg, seed)
            rep.name = name
            if "threshold" in ccfg and ccfg["threshold"] is not None:
                rep.threshold = float(ccfg["threshold"])
        except Exception as exc:  # a hard failure is recorded against the check
            rep = CheckReport(name, error=f"{type(exc).__name__}: {exc}")
        rep.runtime_s = time.perf_counter() - t0
        write_ratios(rep, os.path.join(out_dir, f"ratios_{name}.csv"))
        checks[name] = _jsonable(rep.to_dict())
        if not rep.passed:
            failed.append(name)
    report = {"seed": seed, "checks": checks, "failed": failed, "passed": not failed,
              "backend": _core.BACKEND, "generated_at": time.strftime("%Y-%m-%dT%H:%M:%S")}
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    return report, (1 if failed else 0)


def strip_timing(report):
    """Copy of a report without wall-clock fields (for reproducibility comparisons)."""
    out = json.loads(json.dumps(report))
    out.pop("generated_at", None)
    for c in out.get("checks", {}).values():
        c.pop("runtime_s", None)
    return out
