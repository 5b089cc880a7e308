"""Randomly shifted dyadic grids over a finite scale window.

A cube at scale k has side 2^k and concrete corner
``2^k * index + sum_{k_min <= j < k} 2^j beta_j``; all cubes of one scale
share that offset, so the grid stays nested. Every coordinate involved is a
dyadic rational, so membership and distances are exact in floating point as
long as the window stays inside the float exponent range.
"""
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class OutOfWindow(ValueError):
    """A scale outside the grid's window was requested."""


class TruncatedGoodness(RuntimeError):
    """Goodness was requested for a cube whose test ancestors leave the window."""


@dataclass(frozen=True, eq=False)
class GridShift:
    """Binary shift vectors beta_j in {0,1}^n for j in [k_min, k_max]."""

    k_min: int
    k_max: int
    bits: np.ndarray
    seed: object = None

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.int64)
        if bits.ndim != 2 or bits.shape[0] != self.k_max - self.k_min + 1:
            raise ValueError("bits must have one row per scale in the window")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("shift bits must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def n(self):
        return self.bits.shape[1]

    def beta(self, j):
        if not self.k_min <= j <= self.k_max:
            raise OutOfWindow(f"scale {j} outside [{self.k_min}, {self.k_max}]")
        return self.bits[j - self.k_min]

    def offset(self, k):
        """sum_{k_min <= j < k} 2^j beta_j as a float vector."""
        js = np.arange(self.k_min, k)
        if js.size == 0:
            return np.zeros(self.n)
        return (np.ldexp(1.0, js)[:, None] * self.bits[: k - self.k_min]).sum(axis=0)


def sample_shift(seed, window, n=1):
    """i.i.d. uniform beta_j in {0,1}^n, deterministic given the seed."""
    k_min, k_max = window
    if k_max < k_min:
        raise ValueError("empty window")
    rng = np.random.default_rng(seed)
    return GridShift(k_min, k_max, rng.integers(0, 2, size=(k_max - k_min + 1, n)), seed)


def zero_shift(window, n=1):
    k_min, k_max = window
    return GridShift(k_min, k_max, np.zeros((k_max - k_min + 1, n), dtype=np.int64), None)


@dataclass(frozen=True)
class Cube:
    """A dyadic cube of side 2^k; ``grid`` is carried along but ignored by ==/hash."""

    k: int
    index: tuple
    grid: "DyadicGrid" = field(default=None, compare=False, repr=False)

    @property
    def side(self):
        return math.ldexp(1.0, self.k)

    @property
    def corner(self):
        return self.grid.corner(self)

    @property
    def center(self):
        return self.corner + self.side / 2

    def contains(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = self.corner
        return np.all((pts >= lo) & (pts < lo + self.side), axis=1)

    def parent(self):
        return self.grid.parent(self)

    def children(self):
        return self.grid.children(self)

    def ancestor(self, j):
        return self.grid.ancestor(self, j)

    def to_dict(self):
        return {"scale": self.k, "index": list(self.index), "corner": self.corner.tolist()}


class DyadicGrid:
    """The shifted grid D^beta restricted to scales in ``[k_min, k_max]``."""

    def __init__(self, shift):
        self.shift = shift
        self.k_min = shift.k_min
        self.k_max = shift.k_max
        self.n = shift.n
        self._offsets = {k: shift.offset(k) for k in range(self.k_min, self.k_max + 1)}

    @classmethod
    def standard(cls, window, n=1):
        return cls(zero_shift(window, n))

    @classmethod
    def random(cls, seed, window, n=1):
        return cls(sample_shift(seed, window, n))

    def _check(self, k):
        if not self.k_min <= k <= self.k_max:
            raise OutOfWindow(f"scale {k} outside [{self.k_min}, {self.k_max}]")

    def offset(self, k):
        self._check(k)
        return self._offsets[k]

    def cube(self, k, index):
        self._check(k)
        index = tuple(int(i) for i in np.atleast_1d(index))
        if len(index) != self.n:
            raise ValueError("index has the wrong dimension")
        return Cube(k, index, self)

    def corner(self, Q):
        return np.ldexp(np.asarray(Q.index, dtype=float), Q.k) + self.offset(Q.k)

    def locate_indices(self, points, k):
        """Integer index array (N, n) of the scale-k cubes containing ``points``."""
        self._check(k)
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.floor(np.ldexp(pts - self._offsets[k], -k)).astype(np.int64)

    def locate(self, point, k):
        return self.cube(k, self.locate_indices(point, k)[0])

    def parent(self, Q):
        return self.ancestor(Q, 1)

    def ancestor(self, Q, j):
        if j < 0:
            raise ValueError("ancestor order must be nonnegative")
        target = Q.k + j
        self._check(target)
        idx = np.asarray(Q.index, dtype=np.int64)
        for k in range(Q.k, target):
            idx = np.floor_divide(idx - self.shift.beta(k), 2)
        return Cube(target, tuple(int(i) for i in idx), self)

    def children(self, Q):
        self._check(Q.k - 1)
        base = 2 * np.asarray(Q.index, dtype=np.int64) + self.shift.beta(Q.k - 1)
        out = []
        for e in np.ndindex(*([2] * self.n)):
            out.append(Cube(Q.k - 1, tuple(int(i) for i in base + np.array(e)), self))
        return out

    def descendant_index(self, Q, depth, rel):
        """Absolute indices of descendants of Q ``depth`` levels down.

        ``rel`` is an (M, n) array of relative coordinates in [0, 2^depth).
        """
        self._check(Q.k - depth)
        acc = np.zeros(self.n, dtype=np.int64)
        for i in range(1, depth + 1):
            acc = 2 * acc + self.shift.beta(Q.k - i)
        return (np.asarray(Q.index, dtype=np.int64) << depth) + acc + np.asarray(rel, dtype=np.int64)


# ---------------------------------------------------------------- geometry

def _box(Q):
    lo = Q.corner
    return lo, lo + Q.side


def set_distance(A, B):
    """l-infinity gap between the closed cubes A and B (0 when they meet)."""
    alo, ahi = _box(A)
    blo, bhi = _box(B)
    gap = np.maximum(0.0, np.maximum(alo - bhi, blo - ahi))
    return float(gap.max())


def long_distance(Q, R):
    """D(Q, R) = l(Q) + l(R) + d(Q, R)."""
    return Q.side + R.side + set_distance(Q, R)


def boundary_distance(I, J):
    """l-infinity distance from the closed cube I to the boundary of the closed cube J."""
    ilo, ihi = _box(I)
    jlo, jhi = _box(J)
    if np.all(ilo > jlo) and np.all(ihi < jhi):
        return float(np.min(np.minimum(ilo - jlo, jhi - ihi)))
    return set_distance(I, J)


# ---------------------------------------------------------------- goodness

@dataclass(frozen=True)
class GoodnessParams:
    """r and gamma of the good/bad split, optionally validated against (alpha, m)."""

    r: int
    gamma: float
    alpha: float = None
    m: float = None

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 1:
            raise ValueError("r must be a positive integer")
        if not 0 < self.gamma < 0.5:
            raise ValueError("gamma must lie in (0, 1/2)")
        if self.alpha is not None and self.m is not None:
            a, m, g = self.alpha, self.m, self.gamma
            if g > a / (2 * (m + a)):
                raise ValueError("gamma exceeds alpha / (2 (m + alpha))")
            if m * g / (1 - g) > a / 4:
                raise ValueError("m gamma / (1 - gamma) exceeds alpha / 4")


def theta_of_j(j, params):
    """ceil((j gamma + r) / (1 - gamma)), evaluated in exact rational arithmetic."""
    g = Fraction(repr(float(params.gamma)))
    return math.ceil((j * g + params.r) / (1 - g))


def _margin_threshold(k, kk, gamma):
    return 2.0 ** (gamma * k + (1 - gamma) * kk)


def goodness(I, params):
    """Return (bad, truncated) for the cube I in its own grid.

    Only ancestors need checking: a non-ancestor J at the same scale is
    separated from I by a face of I's ancestor, so it is never closer.
    ``truncated`` means the window stops short of scale k + r, in which case
    no ancestor qualifies and the cube counts as good.
    """
    grid = I.grid
    truncated = I.k + params.r > grid.k_max
    for kk in range(I.k + params.r, grid.k_max + 1):
        J = grid.ancestor(I, kk - I.k)
        if boundary_distance(I, J) <= _margin_threshold(I.k, kk, params.gamma):
            return True, truncated
    return False, truncated


def is_bad(I, params, strict=False):
    bad, truncated = goodness(I, params)
    if truncated and strict:
        raise TruncatedGoodness(f"window top {I.grid.k_max} is below scale {I.k + params.r}")
    return bad


def bad_mask(grid, k, indices, params):
    """Vectorised goodness for many cubes at scale k given as an (M, n) index array."""
    k = int(k)
    idx = np.asarray(indices, dtype=np.int64)
    corner = np.ldexp(idx.astype(float), k) + grid.offset(k)
    side = math.ldexp(1.0, k)
    bad = np.zeros(idx.shape[0], dtype=bool)
    anc = idx.copy()
    for kk in range(k, grid.k_max):
        anc = np.floor_divide(anc - grid.shift.beta(kk), 2)
        if kk + 1 < k + params.r:
            continue
        acorner = np.ldexp(anc.astype(float), kk + 1) + grid.offset(kk + 1)
        aside = math.ldexp(1.0, kk + 1)
        margin = np.minimum(corner - acorner, acorner + aside - corner - side).min(axis=1)
        bad |= margin <= _margin_threshold(k, kk + 1, params.gamma)
    return bad


def bad_fraction(params, n_shifts, seed, window, k, n=1, cubes=None):
    """Fraction of (shift, cube) pairs that are bad.

    The cubes are fixed members of the standard grid at scale k (``cubes`` is
    an (M, n) index array, default the origin cube) translated by each of
    ``n_shifts`` shifts drawn from ``seed``.
    """
    cubes = np.zeros((1, n), dtype=np.int64) if cubes is None else np.asarray(cubes)
    rng = np.random.default_rng(seed)
    k_min, k_max = window
    total = 0
    for _ in range(n_shifts):
        bits = rng.integers(0, 2, size=(k_max - k_min + 1, n))
        grid = DyadicGrid(GridShift(k_min, k_max, bits))
        total += int(bad_mask(grid, k, cubes, params).sum())
    return total / (n_shifts * cubes.shape[0])


# ---------------------------------------------------------------- Whitney

def whitney_family(Q, params, max_depth=None):
    """Maximal dyadic R in Q with 2^r l(R) <= l(Q) and dist(R, dQ) >= l(R)^g l(Q)^(1-g).

    The qualifying set is closed under taking subcubes, so the maximal members
    are found top down starting r levels below Q. Cubes touching the boundary
    never qualify, so the search stops at the grid's bottom scale or after
    ``max_depth`` levels below Q, whichever comes first.
    """
    grid = Q.grid
    r, g = params.r, params.gamma
    if Q.k - r < grid.k_min:
        raise OutOfWindow(f"Whitney family needs scale {Q.k - r} but the window starts at {grid.k_min}")
    last = Q.k - grid.k_min if max_depth is None else min(max_depth, Q.k - grid.k_min)
    n = grid.n
    rel = np.stack(np.meshgrid(*([np.arange(2**r)] * n), indexing="ij"), axis=-1).reshape(-1, n)
    out = []
    for d in range(r, last + 1):
        size = 1 << d
        margin = np.minimum(rel, size - 1 - rel).min(axis=1)
        ok = margin >= 2.0 ** (d * (1 - g))
        if ok.any():
            for idx in grid.descendant_index(Q, d, rel[ok]):
                out.append(Cube(Q.k - d, tuple(int(i) for i in idx), grid))
        rel = rel[~ok]
        if d == last or rel.size == 0:
            break
        offs = np.array(list(np.ndindex(*([2] * n))), dtype=np.int64)
        rel = (2 * rel[:, None, :] + offs[None, :, :]).reshape(-1, n)
    return out


def dilate_box(R, factor):
    c = R.center
    half = factor * R.side / 2
    return c - half, c + half


def overlap_count(cubes, factor, box_lo, box_hi, probes_per_axis):
    """Max over a regular probe grid of the number of dilated cubes covering a probe.

    Dilates are half-open boxes. Counting uses an n-dimensional difference
    array followed by prefix sums, so the cost is linear in the family size.
    """
    box_lo = np.asarray(box_lo, dtype=float)
    box_hi = np.asarray(box_hi, dtype=float)
    n = box_lo.size
    P = probes_per_axis
    axes = [box_lo[i] + (np.arange(P) + 0.5) * (box_hi[i] - box_lo[i]) / P for i in range(n)]
    diff = np.zeros((P + 1,) * n, dtype=np.int64)
    for R in cubes:
        lo, hi = dilate_box(R, factor)
        a = [int(np.searchsorted(axes[i], lo[i], side="left")) for i in range(n)]
        b = [int(np.searchsorted(axes[i], hi[i], side="left")) for i in range(n)]
        if any(ai >= bi for ai, bi in zip(a, b)):
            continue
        for e in np.ndindex(*([2] * n)):
            pos = tuple(b[i] if e[i] else a[i] for i in range(n))
            diff[pos] += (-1) ** sum(e)
    for i in range(n):
        diff = np.cumsum(diff, axis=i)
    return int(diff[(slice(0, P),) * n].max())


# ---------------------------------------------------------------- dump

def grid_dump(grid, params, box_lo, box_hi, scales=None, max_per_scale=4096):
    """JSON-ready list of cubes meeting the box [box_lo, box_hi) at each scale."""
    box_lo = np.asarray(box_lo, dtype=float)
    box_hi = np.asarray(box_hi, dtype=float)
    scales = range(grid.k_min, grid.k_max + 1) if scales is None else scales
    out = []
    for k in scales:
        first = grid.locate_indices(box_lo, k)[0]
        last = np.ceil(np.ldexp(box_hi - grid.offset(k), -k)).astype(np.int64) - 1
        counts = last - first + 1
        if np.prod(counts) > max_per_scale:
            continue
        ranges = [np.arange(first[i], last[i] + 1) for i in range(grid.n)]
        idx = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, grid.n)
        for row in idx:
            Q = Cube(k, tuple(int(i) for i in row), grid)
            bad, trunc = goodness(Q, params)
            d = Q.to_dict()
            d.update(good=not bad, truncated=trunc)
            out.append(d)
    return out


def save_grid_dump(entries, path):
    with open(path, "w") as fh:
        json.dump(entries, fh)
