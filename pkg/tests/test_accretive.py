import mpmath as mp
import numpy as np
import pytest

from lpgstar.accretive import (AccretiveSystem, DegenerateSystem, G_glo, G_loc, certify_system, cube_family,
                               make_b, normalized_size_constant, smooth_profile_value)
from lpgstar import accretive
from lpgstar.dyadic import DyadicGrid
from lpgstar.kernel import KernelParams, standard_kernel, zero_kernel
from lpgstar.measure import EmptyCube, random_cloud, uniform_grid
from lpgstar.operator import TQuadrature


def psi_oracle(tau, ell):
    """Psi_Q(tau) from the defining integrals, in 40-digit arithmetic."""
    mp.mp.dps = 40
    a2 = mp.mpf(ell) ** 2 / 16
    d2 = mp.mpf(ell) ** 2 / 4
    tau = mp.mpf(tau)
    if tau <= a2:
        return mp.mpf(1)
    if tau >= d2:
        return mp.mpf(0)
    psi = lambda s: mp.exp(-1 / ((s - a2) * (d2 - s))) if a2 < s < d2 else mp.mpf(0)
    D = d2 - a2
    mid = (a2 + d2) / 2
    wd = D**2 / 4
    grid = sorted({mid + j * D / 400 for j in range(-199, 200)}
                  | {mid + j * wd for j in range(-80, 81) if a2 < mid + j * wd < d2})
    den = mp.quad(psi, [a2] + grid + [d2])
    g = mp.diff(lambda s: 1 / ((s - a2) * (d2 - s)), tau)
    step = min(abs(1 / g), (d2 - tau) / 4) if g > 0 else wd
    near = [tau + j * step / 20 for j in range(400) if tau + j * step / 20 < d2]
    num = mp.quad(psi, near + [p for p in grid if p > near[-1]] + [d2])
    return num / den


# (ell, tau, Psi) from psi_oracle, frozen
FROZEN = [
    (1.0, 0.07, 0.99999999999999911),
    (1.0, 0.125, 0.99999995978482769),
    (1.0, 0.15, 0.84482087078283494),
    (1.0, 0.2, 5.9543597697645225e-16),
    (1.0, 0.24, 6.6553477828337819e-199),
    (0.5, 0.02, 1.0),
    (0.5, 0.04, 0.0078348736756660793),
    (2.0, 0.6, 0.60849724214547234),
    (2.0, 0.95, 3.685285531753715e-12),
]


@pytest.mark.parametrize("ell,tau,want", FROZEN)
def test_smooth_profile_against_frozen_oracle(ell, tau, want):
    assert smooth_profile_value(tau, ell) == pytest.approx(want, rel=1e-9)


def test_smooth_profile_against_live_oracle():
    for ell, tau in [(1.0, 0.16), (4.0, 2.1)]:
        assert smooth_profile_value(tau, ell) == pytest.approx(float(psi_oracle(tau, ell)), rel=1e-9)


def test_smooth_profile_is_monotone_with_plateaus():
    ell = 1.0
    taus = np.linspace(0, 0.3, 301)
    vals = np.array([smooth_profile_value(t, ell) for t in taus])
    assert np.all(np.diff(vals) <= 0)
    assert np.all(vals[taus <= ell**2 / 16] == 1.0)
    assert np.all(vals[taus >= ell**2 / 4] == 0.0)


def _setup(n=1, per_side=16):
    mu = uniform_grid(per_side, n=n)
    grid = DyadicGrid.random(2, (-6, 2), n=n)
    return mu, grid


@pytest.mark.parametrize("family", ["indicator", "gaussian", "poisson_bump", "polish_bump", "smooth_profile"])
def test_support_in_cube(family):
    mu, grid = _setup(n=2)
    Q = grid.locate(mu.points[37], -1)
    b = make_b(AccretiveSystem(family), Q, mu)
    inside = Q.contains(mu.points)
    assert np.all(b[~inside] == 0)
    if family in ("polish_bump", "smooth_profile"):
        # both vanish to all orders at the boundary, so edge atoms may underflow to 0
        assert np.all(b[inside] >= 0) and b[inside].max() > 0
    else:
        assert np.all(b[inside] > 0)


def test_smooth_profile_equals_one_on_half_cube():
    mu, grid = _setup(per_side=64)
    Q = grid.locate(mu.points[20], -1)
    b = make_b(AccretiveSystem("smooth_profile"), Q, mu)
    near = np.max(np.abs(mu.points - Q.center), axis=1) <= Q.side / 4
    assert np.all(b[near] == 1.0)


def test_indicator_constants():
    mu, grid = _setup()
    cubes = cube_family(mu, grid, range(-3, 1))
    c_acc, A = certify_system(AccretiveSystem("indicator"), mu, cubes, 2.0)
    assert c_acc == 1.0 and A == pytest.approx(1.0)
    assert normalized_size_constant(AccretiveSystem("indicator", scale=3.0), mu, cubes, 2.0) == pytest.approx(1.0)


def test_degenerate_custom_system():
    mu = uniform_grid(16)
    Q = DyadicGrid.standard((-6, 2)).cube(-2, (1,))
    odd = AccretiveSystem("custom", generator=lambda Q, pts: np.where(pts[:, 0] < Q.center[0], 1.0, -1.0))
    with pytest.raises(DegenerateSystem):
        certify_system(odd, mu, [Q], 2.0)


def test_empty_cube():
    mu, grid = _setup()
    with pytest.raises(EmptyCube):
        make_b(AccretiveSystem("indicator"), grid.cube(-2, (40,)), mu)


def test_testing_constants():
    mu = random_cloud(40, seed=3)
    grid = DyadicGrid.random(1, (-8, 1))
    cubes = cube_family(mu, grid, range(-4, 1))
    q = TQuadrature(1 / 32, 2.0, 24)
    k = standard_kernel(KernelParams(1.0, 0.5, 4.0))
    G1 = accretive.testing_constant_G(AccretiveSystem("indicator"), mu, k, cubes, 2.0, q)
    G3 = accretive.testing_constant_G(AccretiveSystem("indicator", scale=3.0), mu, k, cubes, 2.0, q)
    assert G3 == pytest.approx(3 * G1)
    assert G_loc(3, mu, k, cubes, 2.0, q) <= G_glo(3, mu, k, cubes, 2.0, q) + 1e-14
    assert G_loc(9, mu, k, cubes, 2.0, q) <= G_loc(3, mu, k, cubes, 2.0, q) + 1e-14
    assert accretive.testing_constant_G(AccretiveSystem("gaussian"), mu, zero_kernel(k.params), cubes, 2.0, q) == 0.0
    with pytest.raises(ValueError):
        G_loc(0.5, mu, k, cubes, 2.0, q)
