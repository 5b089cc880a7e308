import math

import numpy as np
import pytest

from lpgstar import _core
from lpgstar.dyadic import DyadicGrid, GoodnessParams
from lpgstar.kernel import KernelParams, scaled, standard_kernel, truncate, zero_kernel
from lpgstar.measure import cantor, random_cloud, uniform_grid
from lpgstar.operator import (ConeWeight, TQuadrature, g_star, local_square_function, node_bands, theta,
                              theta_values, vertical_density, vsq_table, whitney_square_function)


def _kernel(m=1.0, alpha=0.5, lam=4.0):
    return standard_kernel(KernelParams(m=m, alpha=alpha, lam=lam))


def _g_star_direct(mu, f, nodes, weights, m, alpha, lam):
    """Triple loop over (x, t, y) with the kernel written out."""
    out = np.zeros(mu.size)
    pts, w = mu.points, mu.masses
    for i in range(mu.size):
        total = 0.0
        for t, h in zip(nodes, weights):
            acc = 0.0
            for j in range(mu.size):
                th = 0.0
                for z in range(mu.size):
                    d = np.max(np.abs(pts[j] - pts[z]))
                    th += t**alpha / (t + d) ** (m + alpha) * f[z] * w[z]
                dxy = np.max(np.abs(pts[i] - pts[j]))
                acc += (t / (t + dxy)) ** (m * lam) * abs(th) ** 2 * w[j]
            total += h * acc / t**m
        out[i] = math.sqrt(total)
    return out


def test_quadrature_nodes_and_weights():
    q = TQuadrature(0.01, 100.0, 40)
    assert q.nodes.size == 40 and np.all(np.diff(q.nodes) > 0)
    # midpoint rule in log t integrates dt/t exactly
    assert q.weights.sum() == pytest.approx(math.log(1e4))
    with pytest.raises(ValueError):
        TQuadrature(1.0, 0.5, 3)


def test_node_bands_half_open():
    assert list(node_bands([0.5, 0.51, 1.0, 1.5, 2.0, 2.01])) == [-1, 0, 0, 1, 1, 2]


def test_g_star_matches_direct_sum():
    mu = random_cloud(9, n=2, seed=3)
    f = np.random.default_rng(1).standard_normal(9)
    q = TQuadrature(0.05, 20.0, 12)
    got = g_star(_kernel(m=2.0, alpha=1.0, lam=4.0), mu, f, q)
    want = _g_star_direct(mu, f, q.nodes, q.weights, 2.0, 1.0, 4.0)
    assert np.allclose(got, want, rtol=1e-12)


@pytest.mark.skipif("cython" not in _core.BACKENDS, reason="compiled core not built")
def test_backends_agree():
    mu = cantor(6, seed=2)
    rng = np.random.default_rng(0)
    F = rng.standard_normal((mu.size, 3)) * mu.masses[:, None]
    nodes = np.geomspace(1e-3, 10, 17)
    th_c = _core.theta_table(mu.distances, F, nodes, 0.5, mu.m, 1.5, backend="cython")
    th_n = _core.theta_table(mu.distances, F, nodes, 0.5, mu.m, 1.5, backend="numpy")
    assert np.allclose(th_c, th_n, rtol=1e-12, atol=0)
    sq = th_n**2
    c_c = _core.cone_table(mu.distances, mu.masses, sq, nodes, mu.m, 4 * mu.m, backend="cython")
    c_n = _core.cone_table(mu.distances, mu.masses, sq, nodes, mu.m, 4 * mu.m, backend="numpy")
    assert np.allclose(c_c, c_n, rtol=1e-12, atol=0)


def test_theta_values_match_pointwise_theta():
    mu = random_cloud(12, seed=4)
    f = np.random.default_rng(2).standard_normal(12)
    k = _kernel()
    nodes = [0.01, 0.3, 4.0]
    tab = theta_values(k, mu, f, nodes)[:, :, 0]
    for a, t in enumerate(nodes):
        for y in range(12):
            assert tab[a, y] == pytest.approx(theta(k, mu, f, mu.points[y], t), rel=1e-12)


def test_vertical_density_matches_table():
    mu = random_cloud(15, seed=5)
    f = np.random.default_rng(3).standard_normal(15)
    k = _kernel()
    nodes = np.array([0.02, 0.5, 3.0])
    tab = np.sqrt(vsq_table(k, mu, f, nodes))
    for i in range(15):
        for a, t in enumerate(nodes):
            assert tab[i, a] == pytest.approx(vertical_density(k, mu, f, mu.points[i], t), rel=1e-12)


def test_cone_weight():
    w = ConeWeight(lam=4.0, m=1.0)
    assert w(np.array([0.0]), np.array([1.0]), 1.0) == pytest.approx(0.5**4)


def test_custom_kernel_path_matches_fast_path():
    mu = random_cloud(10, seed=6)
    f = np.random.default_rng(4).standard_normal(10)
    k = _kernel()
    slow = scaled(k, 1j)
    q = TQuadrature(0.05, 10.0, 8)
    assert np.allclose(g_star(slow, mu, f, q), g_star(k, mu, f, q), rtol=1e-12)


def test_homogeneity_and_complex_input():
    mu = random_cloud(10, seed=7)
    f = np.random.default_rng(5).standard_normal(10)
    k = _kernel()
    q = TQuadrature(0.05, 10.0, 8)
    base = g_star(k, mu, f, q)
    assert np.allclose(g_star(k, mu, (2 - 1j) * f, q), abs(2 - 1j) * base)
    g = f + 1j * np.roll(f, 3)
    both = g_star(k, mu, g, q) ** 2
    assert np.allclose(both, g_star(k, mu, g.real, q) ** 2 + g_star(k, mu, g.imag, q) ** 2)


def test_monotone_in_lambda():
    mu = random_cloud(20, seed=8)
    f = np.random.default_rng(6).standard_normal(20)
    k = _kernel()
    q = TQuadrature(0.05, 10.0, 8)
    assert np.all(g_star(k, mu, f, q, lam=6.0) <= g_star(k, mu, f, q, lam=4.0) + 1e-15)


def test_zero_kernel_and_truncation_window():
    mu = random_cloud(8, seed=9)
    f = np.ones(8)
    q = TQuadrature(0.05, 10.0, 8)
    assert np.all(g_star(zero_kernel(KernelParams(1.0, 0.5, 4.0)), mu, f, q) == 0)
    with pytest.raises(ValueError):
        g_star(truncate(_kernel(), 100), mu, f, q)


def test_local_and_whitney_forms():
    mu = uniform_grid(32)
    f = np.random.default_rng(7).standard_normal(32)
    k = _kernel()
    q = TQuadrature(1 / 128, 4.0, 48)
    grid = DyadicGrid.random(1, (-8, 3))
    full = g_star(k, mu, f, q)
    Q = grid.locate(mu.points[5], -1)
    loc = local_square_function(k, mu, f, Q, q, x=5)
    assert loc <= full[5]
    # all nodes lie in bands <= 2, so the Whitney sum up to scale 2 is the whole integral
    assert np.allclose(whitney_square_function(k, mu, f, grid, 2, q, squared=False), full)
    params = GoodnessParams(2, 0.1)
    good = whitney_square_function(k, mu, f, grid, 2, q, restrict="good", params=params)
    bad = whitney_square_function(k, mu, f, grid, 2, q, restrict="bad", params=params)
    assert np.allclose(good + bad, full**2)
    assert np.all(good >= 0) and np.all(bad >= 0)
