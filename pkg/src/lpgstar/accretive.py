"""Pseudo-accretive systems Q -> b_Q and the testing constants built on them.

Every built-in profile is multiplied by the indicator of the half-open cube,
so support in Q holds exactly. Gaussian and Poisson profiles use the
Euclidean distance to the centre; the polish and smooth profiles use the
l-infinity distance, which keeps their denominators positive on the whole
cube and makes the smooth profile equal 1 on the concentric half cube.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from . import operator as op
from .measure import EmptyCube, lp_norm

FAMILIES = ("indicator", "gaussian", "poisson_bump", "polish_bump", "smooth_profile", "custom")


class DegenerateSystem(ValueError):
    """Some b_Q has zero mean over Q."""


@dataclass(frozen=True)
class AccretiveSystem:
    """A named family of testing functions, optionally scaled by a constant."""

    family: str
    scale: complex = 1.0
    generator: object = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.family == "custom" and self.generator is None:
            raise ValueError("the custom family needs a generator(Q, points) callable")


# ---------------------------------------------------------------- smooth profile

_S_CAP = 40.0  # exp(-40^2) underflows, so the integrand is zero past this point


def _bump(s, c4):
    return np.exp(-s * s / (1.0 - s * s / c4))


@lru_cache(maxsize=4096)
def _bump_mass(c4):
    top = min(np.sqrt(c4), _S_CAP)
    val, _ = quad(_bump, 0.0, top, args=(c4,), epsabs=0.0, epsrel=1e-13, limit=200)
    return val


@lru_cache(maxsize=1 << 16)
def _bump_tail(s, c4):
    top = min(np.sqrt(c4), _S_CAP)
    if s >= top:
        return 0.0
    if s >= 1.0:
        # the exponent is convex with slope g at s, so past s + 80/g the rest is below e^-80
        g = 2 * s / (1.0 - s * s / c4) ** 2
        top = min(top, s + 80.0 / g)
        pts = [s + j / g for j in (0.25, 1, 3, 8, 20) if s + j / g < top]
    else:
        pts = [x for x in (1.0, 3.0, 6.0) if s < x < top]
    val, _ = quad(_bump, s, top, args=(c4,), epsabs=0.0, epsrel=1e-13, limit=200, points=pts or None)
    return val


def smooth_profile_value(tau, ell):
    """Psi_Q(tau) for a cube of side ``ell``: int_tau^inf psi / int psi.

    psi(s) = exp(-1 / ((s - a^2)(d^2 - s))) on (a^2, d^2), a = ell/4, d = ell/2.
    With u = (s - a^2)/(d^2 - a^2) and v = u - 1/2 the exponent becomes
    -c (1/(u(1-u)) - 4) up to a constant factor, c = (d^2 - a^2)^-2, and the
    further substitution w = 4 sqrt(c) v turns it into -w^2 / (1 - w^2/(4c)).
    The ratio is then a pair of one-dimensional integrals of a function whose
    width is of order one, which quad resolves to near machine precision.
    """
    a2, d2 = (ell / 4) ** 2, (ell / 2) ** 2
    if tau <= a2:
        return 1.0
    if tau >= d2:
        return 0.0
    span = d2 - a2
    c = 1.0 / span**2
    v = (tau - a2) / span - 0.5
    s = 4.0 * np.sqrt(c) * v
    c4 = 4.0 * c
    z = 2.0 * _bump_mass(c4)
    if s >= 0:
        return _bump_tail(float(s), c4) / z
    return 1.0 - _bump_tail(float(-s), c4) / z


# ---------------------------------------------------------------- profiles

def _profile(family, pts, center, ell):
    n = pts.shape[1]
    diff = pts - center
    if family == "indicator":
        return np.ones(len(pts))
    if family == "gaussian":
        r2 = (diff**2).sum(axis=1)
        return np.pi ** (-n / 2) * np.exp(-r2 / ell**2)
    if family == "poisson_bump":
        r2 = (diff**2).sum(axis=1)
        return ell ** (n + 1) / (ell**2 + r2) ** ((n + 1) / 2)
    rinf = np.max(np.abs(diff), axis=1)
    if family == "polish_bump":
        den = ell**2 - 4 * rinf**2
        out = np.zeros(len(pts))
        ok = den > 0
        out[ok] = np.exp(-(ell**2) / den[ok])
        return out
    if family == "smooth_profile":
        return np.array([smooth_profile_value(float(t), ell) for t in rinf**2])
    raise ValueError(family)


def make_b(system, Q, mu):
    """b_Q evaluated at every atom (zero outside Q)."""
    inside = Q.contains(mu.points)
    if not inside.any():
        raise EmptyCube(f"cube {Q} carries no atoms")
    out = np.zeros(mu.size, dtype=complex if np.iscomplexobj(system.scale) else float)
    pts = mu.points[inside]
    if system.family == "custom":
        vals = np.asarray(system.generator(Q, pts))
        if np.iscomplexobj(vals):
            out = out.astype(complex)
    else:
        vals = _profile(system.family, pts, Q.center, Q.side)
    out[inside] = system.scale * vals
    return out


def cube_atoms(mu, Q):
    return np.flatnonzero(Q.contains(mu.points))


def cube_family(mu, grid, scales):
    """All cubes of the grid at the given scales that carry atoms."""
    out = []
    for k in scales:
        idx = np.unique(grid.locate_indices(mu.points, k), axis=0)
        out.extend(grid.cube(k, row) for row in idx)
    return out


def certify_system(system, mu, cubes, p):
    """(c_acc, A) = (min |<b_Q>_Q|, max ||b_Q||_p^p / mu(Q)) over the family."""
    if not cubes:
        raise ValueError("empty cube family")
    c_acc, A = np.inf, 0.0
    for Q in cubes:
        b = make_b(system, Q, mu)
        inside = cube_atoms(mu, Q)
        mass = mu.masses[inside].sum()
        mean = abs((b[inside] * mu.masses[inside]).sum() / mass)
        if mean == 0:
            raise DegenerateSystem(f"b_Q has zero mean on {Q}")
        c_acc = min(c_acc, mean)
        A = max(A, lp_norm(mu, b, p) ** p / mass)
    return float(c_acc), float(A)


def normalized_size_constant(system, mu, cubes, p):
    """max ||b_Q / <b_Q>_Q||_p^p / mu(Q): the A of the normalised system."""
    A = 0.0
    for Q in cubes:
        b = make_b(system, Q, mu)
        inside = cube_atoms(mu, Q)
        mass = mu.masses[inside].sum()
        mean = (b[inside] * mu.masses[inside]).sum() / mass
        if mean == 0:
            raise DegenerateSystem(f"b_Q has zero mean on {Q}")
        A = max(A, lp_norm(mu, b / mean, p) ** p / mass)
    return float(A)


# ---------------------------------------------------------------- testing constants

def _local_mean(mu, x_idx, integrals, p, denom):
    return float(((integrals ** (p / 2) * mu.masses[x_idx]).sum() / denom) ** (1.0 / p))


def testing_constant_G(system, mu, kernel, cubes, p, quad_rule, detail=False, lam=None):
    """max over the family of [mu(Q)^-1 int_Q (int_0^l(Q) V_t b_Q(x)^2 dt/t)^(p/2) dmu]^(1/p).

    The supremum over all cubes is replaced by the finite family, so this is
    a lower estimate of the constant.
    """
    per = []
    for Q in cubes:
        x_idx = cube_atoms(mu, Q)
        keep = quad_rule.nodes <= Q.side
        if x_idx.size == 0:
            continue
        if not keep.any():
            per.append(0.0)
            continue
        b = make_b(system, Q, mu)
        v = op.vsq_table(kernel, mu, b, quad_rule.nodes[keep], x_idx=x_idx, lam=lam, z_idx=x_idx)
        per.append(_local_mean(mu, x_idx, v @ quad_rule.weights[keep], p, mu.masses[x_idx].sum()))
    G = max(per) if per else 0.0
    return (G, per) if detail else G


def dilated_mass(mu, Q, kappa):
    lo = Q.center - kappa * Q.side / 2
    hi = Q.center + kappa * Q.side / 2
    inside = np.all((mu.points >= lo) & (mu.points < hi), axis=1)
    return float(mu.masses[inside].sum())


def G_loc(kappa, mu, kernel, cubes, p, quad_rule, detail=False):
    """Testing with 1_Q, normalised by mu(kappa Q)."""
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    per = []
    for Q in cubes:
        x_idx = cube_atoms(mu, Q)
        denom = dilated_mass(mu, Q, kappa)
        if denom == 0 or x_idx.size == 0:
            continue
        keep = quad_rule.nodes <= Q.side
        if not keep.any():
            per.append(0.0)
            continue
        f = np.zeros(mu.size)
        f[x_idx] = 1.0
        v = op.vsq_table(kernel, mu, f, quad_rule.nodes[keep], x_idx=x_idx, z_idx=x_idx)
        per.append(_local_mean(mu, x_idx, v @ quad_rule.weights[keep], p, denom))
    G = max(per) if per else 0.0
    return (G, per) if detail else G


def global_theta_sq(kernel, mu, quad_rule):
    """|theta_t 1(y)|^2 for every node and atom, shape (T, N, 1)."""
    th = op.theta_values(kernel, mu, np.ones(mu.size), quad_rule.nodes)
    return th**2


def G_glo(kappa, mu, kernel, cubes, p, quad_rule, detail=False, theta_sq=None):
    """Testing with the constant function 1, normalised by mu(kappa Q)."""
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    sq = global_theta_sq(kernel, mu, quad_rule) if theta_sq is None else theta_sq
    per = []
    for Q in cubes:
        x_idx = cube_atoms(mu, Q)
        denom = dilated_mass(mu, Q, kappa)
        if denom == 0 or x_idx.size == 0:
            continue
        keep = quad_rule.nodes <= Q.side
        if not keep.any():
            per.append(0.0)
            continue
        v = op.cone_values(mu, sq[keep], quad_rule.nodes[keep], kernel.params.lam,
                           kernel.params.m, x_idx=x_idx)[0]
        per.append(_local_mean(mu, x_idx, v @ quad_rule.weights[keep], p, denom))
    G = max(per) if per else 0.0
    return (G, per) if detail else G
