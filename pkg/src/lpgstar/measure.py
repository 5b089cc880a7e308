"""Finite atomic measures on R^n with l-infinity geometry.

A function in L^p(mu) is represented by its values at the atoms: a numpy
array of length ``mu.size`` (real or complex), or a 2-D array with one column
per function where noted.
"""
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np


class EmptyCube(ValueError):
    """Raised when an average is requested over a cube carrying no mass."""


def linf_distances(a, b):
    """Pairwise l-infinity distances between rows of ``a`` (M, n) and ``b`` (N, n)."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    out = np.abs(a[:, None, 0] - b[None, :, 0])
    for i in range(1, a.shape[1]):
        np.maximum(out, np.abs(a[:, None, i] - b[None, :, i]), out=out)
    return out


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Weighted points in R^n with growth exponent ``m``.

    ``scale_window`` is the range of radii (r_min, r_max) on which the upper
    power bound mu(B(x, r)) <= C_mu r^m is certified; ``power_bound`` is
    computed exactly on first access.
    """

    points: np.ndarray
    masses: np.ndarray
    m: float
    scale_window: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.array(self.masses, dtype=float).reshape(-1)
        if pts.shape[0] == 0:
            raise ValueError("a measure needs at least one atom")
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and masses differ in length")
        if not np.all(np.isfinite(pts)):
            raise ValueError("atom coordinates must be finite")
        if not np.all(w > 0):
            raise ValueError("atom masses must be strictly positive")
        if not self.m > 0:
            raise ValueError("growth exponent m must be positive")
        r_lo, r_hi = (float(v) for v in self.scale_window)
        if not 0 < r_lo < r_hi:
            raise ValueError("scale window must satisfy 0 < r_min < r_max")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", w)
        object.__setattr__(self, "m", float(self.m))
        object.__setattr__(self, "scale_window", (r_lo, r_hi))

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def n(self):
        return self.points.shape[1]

    @property
    def total_mass(self):
        return float(self.masses.sum())

    @cached_property
    def distances(self):
        d = linf_distances(self.points, self.points)
        d.setflags(write=False)
        return d

    @cached_property
    def power_bound(self):
        return power_bound_constant(self)

    def min_separation(self):
        if self.size == 1:
            return np.inf
        d = self.distances + np.diag(np.full(self.size, np.inf))
        return float(d.min())

    def with_masses(self, masses):
        return AtomicMeasure(self.points, masses, self.m, self.scale_window, dict(self.meta))

    def translated(self, shift):
        return AtomicMeasure(self.points + np.asarray(shift, dtype=float), self.masses, self.m,
                             self.scale_window, dict(self.meta))


def ball_mass(mu, x, r):
    """Mass of the closed l-infinity ball B(x, r)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    d = linf_distances(x, mu.points)[0]
    return float(mu.masses[d <= r].sum())


def power_bound_constant(mu):
    """Exact max of mu(B(x, r)) / r^m over atom centres x and r in the scale window.

    The ball mass is a right-continuous step function of r that jumps only at
    atom distances, while r^-m decreases, so the supremum over the window is
    attained at r_min or at a jump inside the window.
    """
    r_lo, r_hi = mu.scale_window
    d = mu.distances
    order = np.argsort(d, axis=1, kind="stable")
    ds = np.take_along_axis(d, order, axis=1)
    cs = np.cumsum(mu.masses[order], axis=1)
    # within a run of tied distances the earlier partial sums are smaller,
    # so taking the max over every position never overshoots
    inside = (ds >= r_lo) & (ds <= r_hi)
    best = 0.0
    if inside.any():
        best = float(np.max(np.where(inside, cs / np.where(inside, ds, 1.0) ** mu.m, 0.0)))
    at_lo = np.where(d <= r_lo, mu.masses[None, :], 0.0).sum(axis=1)
    return max(best, float(at_lo.max()) / r_lo**mu.m)


def cube_average(mu, f, Q):
    """Average of f over the half-open cube Q (a ``dyadic.Cube`` or anything with ``contains``)."""
    inside = Q.contains(mu.points)
    mass = mu.masses[inside].sum()
    if mass == 0:
        raise EmptyCube(f"cube {Q} carries no atoms")
    f = np.asarray(f)
    return (f[inside] * mu.masses[inside]).sum() / mass


def lp_norm(mu, f, p):
    """(sum |f|^p w)^(1/p); any p >= 1 is accepted so L^1 norms share the code."""
    if p < 1:
        raise ValueError("p must be at least 1")
    f = np.asarray(f)
    return float((np.abs(f) ** p * mu.masses).sum() ** (1.0 / p))


def _sorted_ball_averages(d, w, g):
    """Running ball averages along sorted distances, masked to valid radii.

    ``d`` (M, N) distances, ``w`` (N,) masses, ``g`` (N, F) nonneg values.
    Returns an (M, F) array of maxima over radii.
    """
    order = np.argsort(d, axis=1, kind="stable")
    ds = np.take_along_axis(d, order, axis=1)
    cw = np.cumsum(w[order], axis=1)
    valid = np.ones_like(ds, dtype=bool)
    valid[:, :-1] = ds[:, 1:] != ds[:, :-1]
    out = np.zeros((d.shape[0], g.shape[1]))
    for j in range(g.shape[1]):
        cg = np.cumsum((g[:, j] * w)[order], axis=1)
        out[:, j] = np.max(np.where(valid, cg / cw, -np.inf), axis=1)
    return out


def maximal_function(mu, f, x):
    """Centred maximal function sup_r mu(B(x,r))^-1 int_B |f| dmu at a point x.

    The supremum is taken over the distinct distances from x to the atoms,
    where both the numerator and the denominator jump.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    d = linf_distances(x, mu.points)
    g = np.abs(np.asarray(f)).reshape(mu.size, 1)
    return float(_sorted_ball_averages(d, mu.masses, g)[0, 0])


def maximal_function_atoms(mu, f):
    """Maximal function at every atom; ``f`` may be (N,) or (N, F)."""
    g = np.abs(np.asarray(f))
    single = g.ndim == 1
    g = g.reshape(mu.size, -1)
    out = _sorted_ball_averages(mu.distances, mu.masses, g)
    return out[:, 0] if single else out


# ---------------------------------------------------------------- generators

def uniform_grid(per_side, n=1, m=None, lo=0.0, hi=1.0, masses=None):
    """Cell centres of a regular grid on [lo, hi)^n with equal masses 1/N.

    ``m`` defaults to ``n``; the scale window runs from the cell width to the
    box width.
    """
    h = (hi - lo) / per_side
    axis = lo + (np.arange(per_side) + 0.5) * h
    pts = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    N = pts.shape[0]
    w = np.full(N, 1.0 / N) if masses is None else masses
    m = float(n if m is None else m)
    return AtomicMeasure(pts, w, m, (h, hi - lo),
                         {"generator": "uniform_grid", "per_side": per_side})


def random_cloud(count, n=1, seed=0, m=None):
    """``count`` i.i.d. uniform points in [0, 1)^n with equal masses."""
    rng = np.random.default_rng(seed)
    pts = rng.random((count, n))
    m = float(n if m is None else m)
    return AtomicMeasure(pts, np.full(count, 1.0 / count), m, (count ** (-1.0 / n), 1.0),
                         {"generator": "random_cloud", "seed": seed})


def cantor(levels, n=1, m=None, seed=0):
    """Self-similar fractal with 2^n children per cube and contraction 2^(-n/m).

    Each child keeps to its own orthant of the parent and is placed at a
    uniformly random offset inside it, which needs m <= n. Atoms sit at the
    centres of the level-``levels`` cubes with mass 2^(-n*levels).
    """
    m = float(np.log(2) / np.log(3) if m is None else m)
    rho = 2.0 ** (-n / m)
    if rho > 0.5:
        raise ValueError("cantor construction needs m <= n")
    rng = np.random.default_rng(seed)
    corners = np.zeros((1, n))
    side = 1.0
    orth = np.array(np.meshgrid(*([[0, 1]] * n), indexing="ij")).reshape(n, -1).T
    for _ in range(levels):
        child = side * rho
        base = corners[:, None, :] + orth[None, :, :] * (side / 2)
        slack = rng.random(base.shape) * (side / 2 - child)
        corners = (base + slack).reshape(-1, n)
        side = child
    pts = corners + side / 2
    N = pts.shape[0]
    return AtomicMeasure(pts, np.full(N, 1.0 / N), m, (side, 1.0),
                         {"generator": "cantor", "levels": levels, "seed": seed})


GENERATORS = {"uniform_grid": uniform_grid, "random_cloud": random_cloud, "cantor": cantor}


# ---------------------------------------------------------------- JSON

def measure_to_dict(mu):
    return {
        "n": mu.n,
        "m": mu.m,
        "scale_window": list(mu.scale_window),
        "atoms": [{"x": p.tolist(), "w": float(w)} for p, w in zip(mu.points, mu.masses)],
    }


def measure_from_dict(doc):
    atoms = doc["atoms"]
    n = int(doc["n"])
    pts = np.array([a["x"] for a in atoms], dtype=float).reshape(-1, n)
    w = np.array([a["w"] for a in atoms], dtype=float)
    return AtomicMeasure(pts, w, doc["m"], tuple(doc["scale_window"]))


def save_measure(mu, path):
    with open(path, "w") as fh:
        json.dump(measure_to_dict(mu), fh)


def load_measure(path):
    with open(path) as fh:
        return measure_from_dict(json.load(fh))


def load_function(path, mu=None):
    """Read atom values from JSON: a list of reals, or ``{"re": [...], "im": [...]}``."""
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "values" in doc:
        doc = doc["values"]
    if isinstance(doc, dict):
        f = np.asarray(doc["re"], dtype=float) + 1j * np.asarray(doc.get("im", 0.0), dtype=float)
    else:
        f = np.asarray(doc, dtype=float)
    if mu is not None and f.shape != (mu.size,):
        raise ValueError(f"function has {f.shape[0]} values but the measure has {mu.size} atoms")
    return f
