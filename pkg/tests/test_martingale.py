import numpy as np
import pytest

from lpgstar.accretive import AccretiveSystem
from lpgstar.dyadic import DyadicGrid
from lpgstar.martingale import (DepthExceeded, build_forests, build_stopping_forest, carleson_check,
                                carleson_ratios, certify_stopping, conditional_expectation, conjugate,
                                decompose, delta_Q, difference_table, level_packing, reconstruct,
                                square_function_norm, stein_ratio)
from lpgstar.measure import AtomicMeasure, cantor, lp_norm, random_cloud, uniform_grid


def _two_atoms():
    mu = AtomicMeasure([[0.25], [0.75]], [0.5, 0.5], 1.0, (0.5, 1.0))
    grid = DyadicGrid.standard((-3, 0))
    # b = (2, 0) on the root and 1 on every smaller cube
    sys = AccretiveSystem("custom", generator=lambda Q, pts: np.where(pts[:, 0] < 0.5, 2.0, 0.0)
                          if Q.k == 0 else np.ones(len(pts)))
    return mu, grid, sys


def test_conjugate():
    assert conjugate(2.0) == 2.0
    assert conjugate(1.5) == pytest.approx(3.0)


def test_two_atom_mean_stop():
    mu, grid, sys = _two_atoms()
    F = build_stopping_forest(grid.cube(0, (0,)), sys, mu, 2.0)
    assert [(S.k, S.index) for S in F.stops] == [(0, (0,)), (-1, (1,))]
    assert F.reason == ["root", "mean"]
    assert F.A == pytest.approx(2.0)
    assert F.a_map(grid.cube(-1, (0,))) == grid.cube(0, (0,))
    assert F.a_map(grid.cube(-2, (3,))) == grid.cube(-1, (1,))
    assert certify_stopping(F, sys, mu) == ([], [])
    doc = F.to_dict()
    assert doc["reason"] == "root" and doc["children"][0]["reason"] == "mean"
    with pytest.raises(DepthExceeded) as err:
        build_stopping_forest(grid.cube(0, (0,)), sys, mu, 2.0, max_depth=0)
    assert err.value.forest is not None


def test_size_stop_with_small_A():
    mu = uniform_grid(16)
    grid = DyadicGrid.standard((-6, 0))
    spike = AccretiveSystem("custom", generator=lambda Q, pts: np.where(np.abs(pts[:, 0] - 1 / 32) < 1e-9, 40.0, 1.0))
    F = build_stopping_forest(grid.cube(0, (0,)), spike, mu, 2.0, A=1.0)
    assert "size" in F.reason
    assert certify_stopping(F, spike, mu) == ([], [])


def test_indicator_forest_is_root_only():
    mu = random_cloud(50, seed=1)
    grid = DyadicGrid.random(3, (-10, 1))
    for F in build_forests(mu, grid, 0, AccretiveSystem("indicator"), 2.0):
        assert len(F.stops) == 1 and F.reason == ["root"]


def _instance(seed, family="gaussian", n=1):
    mu = cantor(6, n=n, seed=seed) if n == 1 else uniform_grid(8, n=2)
    grid = DyadicGrid.random(seed, (-12 if n == 1 else -6, 2), n=n)
    return mu, grid, build_forests(mu, grid, 0, AccretiveSystem(family), 2.0)


@pytest.mark.parametrize("family", ["indicator", "gaussian", "poisson_bump", "polish_bump"])
def test_reconstruction_and_vanishing_means(family):
    mu, grid, forests = _instance(4, family)
    f = np.random.default_rng(0).standard_normal(mu.size) + 1j * np.random.default_rng(1).standard_normal(mu.size)
    total = np.zeros(mu.size, dtype=complex)
    for F in forests:
        D = decompose(f, F, mu)
        total += reconstruct(D, mu.size)
        for d in D:
            if d.cube != F.root:
                assert abs((d.values * mu.masses[d.atoms]).sum()) < 1e-12
    assert np.max(np.abs(total - f)) < 1e-10
    for F in forests:
        assert certify_stopping(F, AccretiveSystem(family), mu) == ([], [])


def test_direct_delta_matches_table():
    mu, grid, forests = _instance(2, "poisson_bump")
    f = np.random.default_rng(3).standard_normal(mu.size)
    F = forests[0]
    table = difference_table(F, f)
    tree = F.tree
    for k in list(table)[:6]:
        for c in range(len(tree.keys[k])):
            Q = tree.cube(k, c)
            d = delta_Q(f, Q, F, mu)
            loc = np.flatnonzero(tree.inv[k] == c)
            assert np.allclose(d.values, table[k][loc], rtol=1e-12, atol=1e-14)


def test_f_equal_to_b_has_no_inner_differences():
    mu, grid, forests = _instance(5, "gaussian")
    F = forests[0]
    tree = F.tree
    f = np.zeros(mu.size)
    f[tree.atoms] = F.stop_b[0]
    table = difference_table(F, f)
    for k, vals in table.items():
        if k == F.root.k:
            continue
        own = F.a_of[k][tree.inv[k]] == 0
        kids = F.a_of[k - 1][tree.inv[k - 1]] == 0
        whole = np.array([np.all(kids[tree.inv[k] == c]) for c in tree.inv[k]])
        sel = own & whole
        assert np.allclose(vals[sel], 0, atol=1e-12)


def test_haar_case_is_orthogonal():
    mu, grid, forests = _instance(6, "indicator")
    f = np.random.default_rng(4).standard_normal(mu.size)
    got = square_function_norm(f, forests, mu, 2.0)
    mass = sum(F.tree.w.sum() for F in forests)
    want = sum((np.abs(f[F.tree.atoms]) ** 2 * F.tree.w).sum() for F in forests) / mass
    assert got == pytest.approx(want, rel=1e-12)


def test_tower_property():
    mu = random_cloud(60, n=2, seed=7)
    grid = DyadicGrid.random(1, (-8, 1), n=2)
    f = np.random.default_rng(5).standard_normal(60)
    for k in range(-6, 0):
        fine = conditional_expectation(f, k, grid, mu)
        assert np.allclose(conditional_expectation(fine, k + 1, grid, mu), conditional_expectation(f, k + 1, grid, mu))
        assert (fine * mu.masses).sum() == pytest.approx((f * mu.masses).sum())


def test_stein_ratio_contracts_at_p2():
    mu = random_cloud(80, seed=8)
    grid = DyadicGrid.random(2, (-9, 1))
    rng = np.random.default_rng(6)
    for _ in range(10):
        fs = [rng.standard_normal(80) for _ in range(4)]
        ks = [int(k) for k in rng.integers(-8, 1, 4)]
        assert stein_ratio(fs, ks, grid, mu, 2.0) <= 1 + 1e-12


def test_carleson_quantities():
    mu, grid, forests = _instance(3, "gaussian", n=2)
    assert carleson_ratios(forests) >= 1.0
    F = forests[0]
    far = grid.cube(0, tuple(int(i) + 5 for i in F.root.index))
    assert carleson_check(F, mu.translated(np.zeros(2)), [far]) == 0.0
    assert level_packing(F) <= 1.0 + 1e-12
