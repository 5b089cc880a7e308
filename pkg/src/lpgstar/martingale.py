"""Stopping forests, twisted martingale differences and conditional expectations.

A forest is built by one top-down pass over scales. Each nonempty cube Q
below the root is tested against the normalised testing function of its
current stopping ancestor F:

    mean:  |<b_F>_Q| < 1/2          size:  <|b_F|^p>_Q > 2^(p'+1) A^(p')

A violating cube becomes a stopping cube, starts over with its own
normalised b, and is its own a-cube; otherwise Q inherits F. Cubes holding
at most one atom are not descended into, since their subcubes carry the same
single atom and hence the same averages.

All per-cube sums go through ``np.bincount`` over an atom-to-cube map, so
re-evaluating a condition reproduces the original floating-point value.
"""
from dataclasses import dataclass, field

import numpy as np

from .accretive import DegenerateSystem, make_b, normalized_size_constant
from .dyadic import Cube
from .measure import EmptyCube


class DegenerateDenominator(ZeroDivisionError):
    """<b_{(Q')^a}>_{Q'} vanished for some cube."""


class DepthExceeded(RuntimeError):
    """Stopping recursion went deeper than allowed; ``forest`` holds the partial result."""

    def __init__(self, msg, forest=None):
        super().__init__(msg)
        self.forest = forest


def conjugate(p):
    return p / (p - 1)


class AtomTree:
    """Nonempty cubes of a grid at scales [k_lo, k_hi] restricted to a set of atoms.

    For each scale: ``keys[k]`` (C, n) integer indices, ``inv[k]`` mapping local
    atoms to cube ids, ``mass[k]`` and ``count[k]`` per cube, and ``up[k]``
    mapping cube ids at k to their parents' ids at k + 1.
    """

    def __init__(self, mu, grid, k_lo, k_hi, atoms=None):
        self.mu, self.grid = mu, grid
        self.k_lo, self.k_hi = k_lo, k_hi
        self.atoms = np.arange(mu.size) if atoms is None else np.asarray(atoms)
        self.w = mu.masses[self.atoms]
        pts = mu.points[self.atoms]
        self.keys, self.inv, self.mass, self.count, self.up = {}, {}, {}, {}, {}
        self._lookup = {}
        for k in range(k_lo, k_hi + 1):
            keys, inv = np.unique(grid.locate_indices(pts, k), axis=0, return_inverse=True)
            inv = inv.reshape(-1)
            self.keys[k], self.inv[k] = keys, inv
            self.mass[k] = np.bincount(inv, self.w, minlength=len(keys))
            self.count[k] = np.bincount(inv, minlength=len(keys))
        for k in range(k_lo, k_hi):
            up = np.empty(len(self.keys[k]), dtype=np.int64)
            up[self.inv[k]] = self.inv[k + 1]
            self.up[k] = up

    @property
    def scales(self):
        return range(self.k_hi, self.k_lo - 1, -1)

    def cube(self, k, c):
        return Cube(k, tuple(int(i) for i in self.keys[k][c]), self.grid)

    def cube_id(self, Q):
        if not self.k_lo <= Q.k <= self.k_hi:
            return None
        table = self._lookup.get(Q.k)
        if table is None:
            table = {tuple(int(i) for i in row): c for c, row in enumerate(self.keys[Q.k])}
            self._lookup[Q.k] = table
        return table.get(tuple(Q.index))

    def averages(self, k, values):
        """Per-cube averages of atom values (complex allowed)."""
        v = np.asarray(values)
        num = np.bincount(self.inv[k], (v * self.w).real, minlength=len(self.keys[k]))
        if np.iscomplexobj(v):
            num = num + 1j * np.bincount(self.inv[k], (v * self.w).imag, minlength=len(self.keys[k]))
        return num / self.mass[k]

    def separated_at_floor(self):
        return bool(np.all(self.count[self.k_lo] <= 1))


@dataclass
class StoppingForest:
    root: Cube
    tree: AtomTree
    p: float
    A: float
    stops: list = field(default_factory=list)
    generation: list = field(default_factory=list)
    reason: list = field(default_factory=list)
    parent_stop: list = field(default_factory=list)
    stop_b: list = field(default_factory=list)
    a_of: dict = field(default_factory=dict)
    b_cur: dict = field(default_factory=dict)
    scanned: dict = field(default_factory=dict)

    mean_floor = 0.5

    @property
    def size_ceiling(self):
        q = conjugate(self.p)
        return 2.0 ** (q + 1) * self.A**q

    @property
    def levels(self):
        depth = max(self.generation) + 1 if self.generation else 0
        out = [[] for _ in range(depth)]
        for S, g in zip(self.stops, self.generation):
            out[g].append(S)
        return out

    def a_map(self, Q):
        """Minimal stopping cube containing Q (Q must be a nonempty cube under the root)."""
        c = self.tree.cube_id(Q)
        if c is None:
            raise EmptyCube(f"{Q} is not a nonempty cube under the root")
        return self.stops[self.a_of[Q.k][c]]

    def stop_index(self, S):
        return self.stops.index(S)

    def to_dict(self):
        kids = [[] for _ in self.stops]
        for i, par in enumerate(self.parent_stop):
            if par >= 0:
                kids[par].append(i)

        def node(i):
            S = self.stops[i]
            return {"cube": {"scale": S.k, "index": list(S.index)}, "reason": self.reason[i],
                    "mass": float(self.tree.mass[S.k][self.tree.cube_id(S)]),
                    "children": [node(j) for j in kids[i]]}

        return node(0)


def _tests(tree, k, cur, p):
    """(|mean|, p-mean) of the current testing function over every cube at scale k."""
    mean = np.abs(tree.averages(k, cur))
    pmean = tree.averages(k, np.abs(cur) ** p)
    return mean, pmean


def _normalised_b(system, S, mu, atoms):
    b = make_b(system, S, mu)[atoms]
    w = mu.masses[atoms]
    inside = S.contains(mu.points[atoms])
    mean = (b[inside] * w[inside]).sum() / w[inside].sum()
    if mean == 0:
        raise DegenerateSystem(f"<b_Q>_Q = 0 on {S}")
    return b / mean


def build_stopping_forest(root, system, mu, p, A=None, max_depth=64, k_floor=None):
    """Stopping cubes under ``root`` down to scale ``k_floor`` (default: the grid's bottom)."""
    grid = root.grid
    k_floor = grid.k_min if k_floor is None else k_floor
    inside = np.flatnonzero(root.contains(mu.points))
    if inside.size == 0:
        raise EmptyCube(f"root {root} carries no atoms")
    tree = AtomTree(mu, grid, k_floor, root.k, atoms=inside)
    if A is None:
        # only the root and cubes whose parent holds several atoms are ever tested
        cubes = [root] + [tree.cube(k, c) for k in range(root.k - 1, k_floor - 1, -1)
                          for c in np.flatnonzero(tree.count[k + 1][tree.up[k]] > 1)]
        A = normalized_size_constant(system, mu, cubes, p)
    forest = StoppingForest(root, tree, p, A)
    thr = forest.size_ceiling

    forest.stops.append(root)
    forest.generation.append(0)
    forest.reason.append("root")
    forest.parent_stop.append(-1)
    forest.stop_b.append(_normalised_b(system, root, mu, inside))
    cur = forest.stop_b[0].copy()
    k = root.k
    forest.a_of[k] = np.zeros(1, dtype=np.int64)
    forest.b_cur[k] = cur.copy()
    forest.scanned[k] = np.zeros(1, dtype=bool)
    for k in range(root.k - 1, k_floor - 1, -1):
        up = tree.up[k]
        parent_a = forest.a_of[k + 1][up]
        live = tree.count[k + 1][up] > 1
        mean, pmean = _tests(tree, k, cur, p)
        hit_mean = live & (mean < forest.mean_floor)
        hit_size = live & ~hit_mean & (pmean > thr)
        a_now = parent_a.copy()
        for c in np.flatnonzero(hit_mean | hit_size):
            S = tree.cube(k, c)
            par = int(parent_a[c])
            gen = forest.generation[par] + 1
            if gen > max_depth:
                raise DepthExceeded(f"stopping generation {gen} exceeds max_depth={max_depth}", forest)
            forest.stops.append(S)
            forest.generation.append(gen)
            forest.reason.append("mean" if hit_mean[c] else "size")
            forest.parent_stop.append(par)
            bS = _normalised_b(system, S, mu, inside)
            forest.stop_b.append(bS)
            members = tree.inv[k] == c
            cur[members] = bS[members]
            a_now[c] = len(forest.stops) - 1
        forest.a_of[k] = a_now
        forest.b_cur[k] = cur.copy()
        forest.scanned[k] = live
    return forest


def build_forests(mu, grid, top, system, p, A=None, max_depth=64, k_floor=None):
    """One forest per nonempty cube at scale ``top``."""
    idx = np.unique(grid.locate_indices(mu.points, top), axis=0)
    return [build_stopping_forest(grid.cube(top, row), system, mu, p, A, max_depth, k_floor)
            for row in idx]


# ---------------------------------------------------------------- certification

def certify_stopping(forest, system, mu):
    """Re-evaluate both conditions from scratch.

    Returns (bad_stops, bad_nonstops): stopping cubes that violate neither
    condition, and scanned non-stopping cubes that violate one. Both lists
    are empty for a correct forest.
    """
    tree = forest.tree
    thr = forest.size_ceiling
    b_of = [_normalised_b(system, S, mu, tree.atoms) for S in forest.stops]
    is_stop = {(S.k, S.index): i for i, S in enumerate(forest.stops)}
    bad_stops, bad_non = [], []
    for k in range(forest.root.k - 1, tree.k_lo - 1, -1):
        up = tree.up[k]
        owner = forest.a_of[k + 1][up]
        live = tree.count[k + 1][up] > 1
        cur = np.zeros(len(tree.atoms), dtype=np.result_type(*b_of))
        atom_owner = owner[tree.inv[k]]
        for i in np.unique(atom_owner):
            sel = atom_owner == i
            cur[sel] = b_of[i][sel]
        mean, pmean = _tests(tree, k, cur, forest.p)
        violates = (mean < forest.mean_floor) | (pmean > thr)
        for c in range(len(tree.keys[k])):
            if not live[c]:
                continue
            key = (k, tuple(int(i) for i in tree.keys[k][c]))
            if key in is_stop and not violates[c]:
                bad_stops.append(tree.cube(k, c))
            if key not in is_stop and violates[c]:
                bad_non.append(tree.cube(k, c))
    return bad_stops, bad_non


def level_packing(forest):
    """max over stopping F of (sum of mu(S) over next-generation S inside F) / mu(F)."""
    tree = forest.tree
    mass = [tree.mass[S.k][tree.cube_id(S)] for S in forest.stops]
    child_mass = np.zeros(len(forest.stops))
    for i, par in enumerate(forest.parent_stop):
        if par >= 0:
            child_mass[par] += mass[i]
    return float(np.max(child_mass / np.asarray(mass)))


def carleson_sums(forest):
    """For each scale, per-cube sum of mu(S) over stopping S contained in the cube."""
    tree = forest.tree
    acc = {k: np.zeros(len(tree.keys[k])) for k in tree.scales}
    for S in forest.stops:
        c = tree.cube_id(S)
        m = tree.mass[S.k][c]
        for k in range(S.k, forest.root.k + 1):
            acc[k][c] += m
            if k < forest.root.k:
                c = tree.up[k][c]
    return acc


def carleson_ratios(forests):
    """Max over every nonempty cube R under the roots of sum_{S in R} mu(S) / mu(R)."""
    best = 0.0
    for F in forests:
        acc = carleson_sums(F)
        for k, a in acc.items():
            best = max(best, float(np.max(a / F.tree.mass[k])))
    return best


def carleson_check(forest, mu, test_cubes):
    """max over ``test_cubes`` R of sum_{stopping S in R} mu(S) / mu(R) (R disjoint from the root gives 0)."""
    acc = carleson_sums(forest)
    best = 0.0
    for R in test_cubes:
        inside = R.contains(mu.points)
        mR = mu.masses[inside].sum()
        if mR == 0:
            continue
        c = forest.tree.cube_id(R)
        if c is not None:
            total = acc[R.k][c]
        else:
            # R above the root or outside it: add every stopping cube inside R
            total = sum(forest.tree.mass[S.k][forest.tree.cube_id(S)] for S in forest.stops
                        if S.k <= R.k and np.all(R.contains(S.center[None, :])))
        best = max(best, float(total / mR))
    return best


# ---------------------------------------------------------------- differences

def _expectation_table(forest, f):
    """E_k f(z) = <f>_Q / <b_a>_Q * b_a(z) for the scale-k cube Q containing z, per scale."""
    tree = forest.tree
    f = np.asarray(f)[tree.atoms]
    out = {}
    for k in tree.scales:
        b = forest.b_cur[k]
        fa = tree.averages(k, f)
        ba = tree.averages(k, b)
        if np.any(ba == 0):
            raise DegenerateDenominator(f"vanishing <b_a>_Q at scale {k}")
        out[k] = (fa / ba)[tree.inv[k]] * b
    return out


def difference_table(forest, f):
    """Dense differences: ``out[k][z] = Delta_Q f(z)`` for the scale-k cube Q containing z.

    The root scale carries the extra <f>_{Q*} b_{Q*} term.
    """
    tree = forest.tree
    E = _expectation_table(forest, f)
    out = {}
    for k in tree.scales:
        if k == tree.k_lo:
            break
        out[k] = E[k - 1] - (0 if k == forest.root.k else E[k])
    return out


@dataclass
class TwistedDifference:
    cube: Cube
    atoms: np.ndarray
    values: np.ndarray
    child_ratios: dict
    parent_ratio: complex


def delta_Q(f, Q, forest, mu):
    """Delta_Q f for one cube, computed directly from its children (sparse result)."""
    tree = forest.tree
    c = tree.cube_id(Q)
    if c is None:
        raise EmptyCube(f"{Q} is not a nonempty cube under the root")
    k = Q.k
    f = np.asarray(f)
    loc = np.flatnonzero(tree.inv[k] == c)
    glob = tree.atoms[loc]
    w = tree.w[loc]
    b_par = forest.b_cur[k][loc]
    bmean = (b_par * w).sum() / w.sum()
    if bmean == 0:
        raise DegenerateDenominator(f"<b_a>_Q vanishes on {Q}")
    par_ratio = (f[glob] * w).sum() / w.sum() / bmean
    vals = np.zeros(loc.size, dtype=np.result_type(f, b_par, float))
    ratios = {}
    if k - 1 < tree.k_lo:
        raise EmptyCube(f"{Q} is at the bottom of the tree")
    child_ids = tree.inv[k - 1][loc]
    b_child = forest.b_cur[k - 1][loc]
    for cc in np.unique(child_ids):
        sel = child_ids == cc
        wm = w[sel].sum()
        cb = (b_child[sel] * w[sel]).sum() / wm
        if cb == 0:
            raise DegenerateDenominator(f"<b_a>_Q' vanishes on a child of {Q}")
        ratio = (f[glob[sel]] * w[sel]).sum() / wm / cb
        ratios[tree.cube(k - 1, cc)] = ratio
        vals[sel] = ratio * b_child[sel] - par_ratio * b_par[sel]
    if k == forest.root.k:
        vals = vals + par_ratio * b_par
    return TwistedDifference(Q, glob, vals, ratios, par_ratio)


def decompose(f, forest, mu=None):
    """All nonzero-support differences Delta_Q f under the root, as sparse records."""
    tree = forest.tree
    D = difference_table(forest, f)
    out = []
    for k, vals in D.items():
        order = np.argsort(tree.inv[k], kind="stable")
        ids = tree.inv[k][order]
        cuts = np.flatnonzero(np.diff(ids)) + 1
        for chunk in np.split(order, cuts):
            c = tree.inv[k][chunk[0]]
            out.append(TwistedDifference(tree.cube(k, c), tree.atoms[chunk], vals[chunk], {}, None))
    return out


def reconstruct(differences, size):
    out = np.zeros(size, dtype=np.result_type(*[d.values for d in differences]) if differences else float)
    for d in differences:
        np.add.at(out, d.atoms, d.values)
    return out


def square_function_norm(f, forests, mu, p):
    """||(sum_k |Delta_k f|^2)^(1/2)||_p^p / mu(union of roots)."""
    total, mass = 0.0, 0.0
    for F in forests:
        D = difference_table(F, f)
        sq = np.zeros(len(F.tree.atoms))
        for vals in D.values():
            sq += np.abs(vals) ** 2
        total += float((sq ** (p / 2) * F.tree.w).sum())
        mass += float(F.tree.w.sum())
    return total / mass


# ---------------------------------------------------------------- expectations

def conditional_expectation(f, k, grid, mu):
    """E_k f: replace f by its average over the scale-k cube containing each atom."""
    idx = grid.locate_indices(mu.points, k)
    _, inv = np.unique(idx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    f = np.asarray(f)
    mass = np.bincount(inv, mu.masses)
    num = np.bincount(inv, (f * mu.masses).real)
    if np.iscomplexobj(f):
        num = num + 1j * np.bincount(inv, (f * mu.masses).imag)
    return (num / mass)[inv]


def stein_ratio(fs, scales, grid, mu, p):
    """||(sum |E_{k_i} f_i|^2)^(1/2)||_p / ||(sum |f_i|^2)^(1/2)||_p."""
    num = np.zeros(mu.size)
    den = np.zeros(mu.size)
    for f, k in zip(fs, scales):
        num += np.abs(conditional_expectation(f, k, grid, mu)) ** 2
        den += np.abs(np.asarray(f)) ** 2
    a = (num ** (p / 2) * mu.masses).sum() ** (1 / p)
    b = (den ** (p / 2) * mu.masses).sum() ** (1 / p)
    return float(a / b) if b > 0 else 0.0
