"""The linear forms theta_t and the square functions built from them.

Everything is evaluated at atoms. The quantity computed for every variant is
the squared vertical density

    V(x, t)^2 = t^-m sum_y (t / (t + |x - y|))^(m lam) |theta_t f(y)|^2 w_y,

tabulated over quadrature nodes in t. The integral over dt/t is a midpoint
rule in log t, the only approximation in the system.
"""
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _core
from .dyadic import bad_mask
from .measure import linf_distances


@dataclass(frozen=True)
class TQuadrature:
    """``count`` midpoint nodes, uniform in log t on [t_lo, t_hi], each with weight h."""

    t_lo: float
    t_hi: float
    count: int

    def __post_init__(self):
        if not 0 < self.t_lo < self.t_hi:
            raise ValueError("need 0 < t_lo < t_hi")
        if self.count < 1:
            raise ValueError("need at least one node")

    @property
    def h(self):
        return math.log(self.t_hi / self.t_lo) / self.count

    @cached_property
    def nodes(self):
        return np.exp(math.log(self.t_lo) + (np.arange(self.count) + 0.5) * self.h)

    @property
    def weights(self):
        return np.full(self.count, self.h)

    @cached_property
    def bands(self):
        return node_bands(self.nodes)


def node_bands(t):
    """Scale k with t in (2^(k-1), 2^k], computed exactly from the binary exponent."""
    mant, exp = np.frexp(np.asarray(t, dtype=float))
    return np.where(mant == 0.5, exp - 1, exp).astype(np.int64)


@dataclass(frozen=True)
class ConeWeight:
    lam: float
    m: float

    def __call__(self, x, y, t):
        d = np.max(np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)), axis=-1)
        return (t / (t + d)) ** (self.m * self.lam)


# ---------------------------------------------------------------- tables

def _columns(f, size):
    F = np.asarray(f)
    single = F.ndim == 1
    F = F.reshape(size, -1)
    return F, single


def theta_values(kernel, mu, f, nodes, y_idx=None, z_idx=None):
    """theta_t f(y) for t in ``nodes`` and atoms y; shape (T, Ny, nf).

    ``z_idx`` restricts the source sum (default: the atoms where some column
    of f is nonzero). Complex f is split into real and imaginary parts for the
    compiled path.
    """
    F, _ = _columns(f, mu.size)
    nodes = np.atleast_1d(np.asarray(nodes, dtype=float))
    y_idx = np.arange(mu.size) if y_idx is None else np.asarray(y_idx)
    if z_idx is None:
        z_idx = np.flatnonzero(np.any(F != 0, axis=1))
    fz = F[z_idx] * mu.masses[z_idx, None]
    cplx = np.iscomplexobj(fz)
    out = np.zeros((nodes.size, y_idx.size, F.shape[1]), dtype=complex if cplx else float)
    if z_idx.size == 0:
        return out
    live = kernel.in_window(nodes)
    if not live.any():
        return out
    if kernel.standard_scale is not None:
        d = mu.distances[np.ix_(y_idx, z_idx)]
        p = kernel.params
        run = lambda g: _core.theta_table(d, g, nodes[live], p.alpha, p.m, kernel.standard_scale)
        out[live] = run(fz.real) + 1j * run(fz.imag) if cplx else run(fz)
        return out
    py, pz = mu.points[y_idx], mu.points[z_idx]
    for it in np.flatnonzero(live):
        val = kernel(nodes[it], py[:, None, :], pz[None, :, :]) @ fz
        if np.iscomplexobj(val) and not np.iscomplexobj(out):
            out = out.astype(complex)
        out[it] = val
    return out


def cone_values(mu, sq, nodes, lam, m, x_idx=None, y_idx=None):
    """t^-m sum_y cone(x, y, t) sq[t, y] w_y; ``sq`` is (T, Ny, nf), result (nf, Nx, T)."""
    x_idx = np.arange(mu.size) if x_idx is None else np.asarray(x_idx)
    y_idx = np.arange(mu.size) if y_idx is None else np.asarray(y_idx)
    d = mu.distances[np.ix_(x_idx, y_idx)]
    return _core.cone_table(d, mu.masses[y_idx], sq, nodes, m, m * lam)


def vsq_table(kernel, mu, f, nodes, x_idx=None, lam=None, z_idx=None):
    """Squared vertical densities V(x, t)^2 at atoms x_idx for every node.

    Returns (Nx, T) for a single function, (nf, Nx, T) for a column block.
    ``lam`` overrides the kernel's lambda in the cone weight.
    """
    lam = kernel.params.lam if lam is None else lam
    nodes = np.atleast_1d(np.asarray(nodes, dtype=float))
    F, single = _columns(f, mu.size)
    th = theta_values(kernel, mu, F, nodes, z_idx=z_idx)
    sq = th.real**2 + th.imag**2 if np.iscomplexobj(th) else th**2
    out = cone_values(mu, sq, nodes, lam, kernel.params.m, x_idx=x_idx)
    return out[0] if single else out


# ---------------------------------------------------------------- pointwise forms

def theta(kernel, mu, f, y, t):
    """theta_t f(y) = sum_z s_t(y, z) f(z) w_z at an arbitrary point y."""
    y = np.asarray(y, dtype=float).reshape(1, -1)
    f = np.asarray(f)
    s = kernel(t, y, mu.points)
    return (s * f * mu.masses).sum()


def vertical_density(kernel, mu, f, x, t, lam=None):
    """V(x, t) at an arbitrary point x (direct, unvectorised evaluation)."""
    lam = kernel.params.lam if lam is None else lam
    m = kernel.params.m
    th = theta_values(kernel, mu, f, [t])[0, :, 0]
    d = linf_distances(np.asarray(x, dtype=float).reshape(1, -1), mu.points)[0]
    cone = (t / (t + d)) ** (m * lam)
    return float(np.sqrt((cone * np.abs(th) ** 2 * mu.masses).sum() / t**m))


def _check_window(kernel, quad):
    if kernel.truncation is not None:
        lo, hi = kernel.truncation
        if lo < quad.t_lo or hi > quad.t_hi:
            raise ValueError("kernel truncation window must lie inside the quadrature window")


def _atoms(x, size):
    if x is None:
        return np.arange(size), False
    idx = np.atleast_1d(np.asarray(x, dtype=np.int64))
    return idx, np.ndim(x) == 0


def g_star(kernel, mu, f, quad, x=None, lam=None):
    """g*_lambda f at atoms ``x`` (an index, an index array, or None for all).

    A block f of shape (N, nf) gives an (nf, Nx) result.
    """
    _check_window(kernel, quad)
    idx, scalar = _atoms(x, mu.size)
    v = vsq_table(kernel, mu, f, quad.nodes, x_idx=idx, lam=lam)
    out = np.sqrt(v @ quad.weights)
    return float(out[0]) if scalar and out.ndim == 1 else out


def local_square_function(kernel, mu, f, Q, quad, x=None, lam=None, squared=False):
    """The same integral restricted to t <= l(Q) (testing-condition form)."""
    keep = quad.nodes <= Q.side
    idx, scalar = _atoms(x, mu.size)
    if not keep.any():
        warnings.warn("no quadrature nodes below l(Q); local square function is 0", stacklevel=2)
        F, single = _columns(f, mu.size)
        out = np.zeros(idx.size) if single else np.zeros((F.shape[1], idx.size))
    else:
        v = vsq_table(kernel, mu, f, quad.nodes[keep], x_idx=idx, lam=lam)
        out = v @ quad.weights[keep]
    out = out if squared else np.sqrt(out)
    return float(out[0]) if scalar and out.ndim == 1 else out


def whitney_square_function(kernel, mu, f, grid, s, quad, x=None, restrict="all", params=None,
                            lam=None, squared=True):
    """Sum over scales k <= s of the band (2^(k-1), 2^k] contribution at the cube R_k containing x.

    ``restrict`` selects all cubes, only good ones or only bad ones (``params``
    gives r and gamma). The squared form is the default; ``squared=False``
    returns its square root.
    """
    idx, scalar = _atoms(x, mu.size)
    bands = quad.bands
    keep = bands <= s
    if restrict != "all":
        if params is None:
            raise ValueError("goodness restriction needs GoodnessParams")
        keep &= bands >= grid.k_min
    v = vsq_table(kernel, mu, f, quad.nodes[keep], x_idx=idx, lam=lam)
    w = quad.weights[keep]
    kb = bands[keep]
    if restrict == "all":
        out = v @ w
    else:
        mask = np.zeros((idx.size, kb.size), dtype=bool)
        for k in np.unique(kb):
            cubes = grid.locate_indices(mu.points[idx], k)
            bad = bad_mask(grid, k, cubes, params)
            sel = bad if restrict == "bad" else ~bad
            mask[:, kb == k] = sel[:, None]
        out = (v * mask) @ w
    out = out if squared else np.sqrt(out)
    return float(out[0]) if scalar and out.ndim == 1 else out
