import itertools
import math

import numpy as np
import pytest

from lpgstar.dyadic import (DyadicGrid, GoodnessParams, OutOfWindow, TruncatedGoodness, bad_fraction, bad_mask,
                            boundary_distance, dilate_box, goodness, grid_dump, is_bad, long_distance,
                            overlap_count, sample_shift, set_distance, theta_of_j, whitney_family)


def test_shift_is_seeded():
    a = sample_shift(7, (-5, 3), n=2)
    b = sample_shift(7, (-5, 3), n=2)
    assert np.array_equal(a.bits, b.bits)
    assert a.bits.shape == (9, 2)


def test_nesting_and_navigation():
    grid = DyadicGrid.random(3, (-6, 2), n=2)
    Q = grid.cube(0, (1, -2))
    kids = Q.children()
    assert len(kids) == 4
    for c in kids:
        assert c.parent() == Q
        lo = c.corner
        assert np.all(lo >= Q.corner) and np.all(lo + c.side <= Q.corner + Q.side)
    g = Q
    for _ in range(3):
        g = g.children()[1]
    assert g.ancestor(3) == Q


def test_locate_is_consistent():
    grid = DyadicGrid.random(5, (-8, 1), n=1)
    pts = np.random.default_rng(0).random((200, 1))
    for k in range(-8, 1):
        idx = grid.locate_indices(pts, k)
        for p, i in zip(pts, idx):
            assert grid.cube(k, i).contains(p[None, :])[0]
        if k < 1:
            up = grid.locate_indices(pts, k + 1)
            anc = [grid.cube(k, i).parent().index for i in idx]
            assert [tuple(u) for u in up] == anc


def test_out_of_window():
    grid = DyadicGrid.standard((-2, 2))
    with pytest.raises(OutOfWindow):
        grid.cube(3, (0,))


def test_distances():
    grid = DyadicGrid.standard((-4, 2))
    A, B = grid.cube(0, (0,)), grid.cube(0, (3,))
    assert set_distance(A, B) == 2.0
    assert long_distance(A, B) == 4.0
    I, J = grid.cube(-2, (1,)), grid.cube(1, (0,))
    assert boundary_distance(I, J) == 0.25


def test_theta_of_j_is_exact():
    p = GoodnessParams(2, 0.25)
    # (j/4 + 2) / (3/4) for j = 2 equals 10/3
    assert theta_of_j(2, p) == 4
    assert theta_of_j(1, p) == 3


def test_goodness_params_validation():
    with pytest.raises(ValueError):
        GoodnessParams(0, 0.1)
    with pytest.raises(ValueError):
        GoodnessParams(2, 0.6)
    with pytest.raises(ValueError):
        GoodnessParams(2, 0.3, alpha=0.5, m=1.0)


def test_bad_mask_matches_scalar_goodness():
    params = GoodnessParams(2, 0.3)
    for seed in range(4):
        grid = DyadicGrid.random(seed, (-7, 3), n=2)
        idx = np.array(list(itertools.product(range(-3, 4), repeat=2)))
        for k in (-6, -4, -2):
            mask = bad_mask(grid, k, idx, params)
            scalar = [goodness(grid.cube(k, i), params)[0] for i in idx]
            assert list(mask) == scalar


def test_threshold_equality_counts_as_bad():
    # with r = 8 only J = [0, 256) is tested; its margin threshold for a unit cube is 256^(3/4) = 64
    grid = DyadicGrid.standard((0, 8))
    params = GoodnessParams(8, 0.25)
    tie, clear = grid.cube(0, (64,)), grid.cube(0, (65,))
    assert boundary_distance(tie, tie.ancestor(8)) == 64.0
    assert is_bad(tie, params) and not is_bad(clear, params)
    assert list(bad_mask(grid, 0, np.array([[64], [65]]), params)) == [True, False]


def test_truncated_goodness():
    grid = DyadicGrid.standard((-3, 0))
    I = grid.cube(-1, (0,))
    assert goodness(I, GoodnessParams(2, 0.1)) == (False, True)
    with pytest.raises(TruncatedGoodness):
        is_bad(I, GoodnessParams(2, 0.1), strict=True)


def test_bad_fraction_reproducible_and_monotone():
    fr = [bad_fraction(GoodnessParams(r, 0.4), 300, 11, (0, 12), 0) for r in (2, 4, 6, 8)]
    assert fr == [bad_fraction(GoodnessParams(r, 0.4), 300, 11, (0, 12), 0) for r in (2, 4, 6, 8)]
    assert all(b <= a + 1e-12 for a, b in zip(fr, fr[1:]))
    assert 0 < fr[-1] < 1


def test_whitney_family_properties():
    params = GoodnessParams(2, 0.3)
    grid = DyadicGrid.random(2, (-10, 2), n=2)
    Q = grid.cube(0, (0, 0))
    fam = whitney_family(Q, params, max_depth=6)
    assert fam
    keys = {(R.k, R.index) for R in fam}
    assert len(keys) == len(fam)
    for R in fam:
        assert 2 ** params.r * R.side <= Q.side
        assert boundary_distance(R, Q) >= R.side ** params.gamma * Q.side ** (1 - params.gamma)
        P = R.parent()
        # maximality: the parent fails the scale cap or the boundary condition
        if P.k < Q.k - params.r + 1:
            assert boundary_distance(P, Q) < P.side ** params.gamma * Q.side ** (1 - params.gamma)
    # disjointness: no member contains another's corner
    for a, b in itertools.combinations(fam, 2):
        lo_a, lo_b = a.corner, b.corner
        overlap = np.all(np.maximum(lo_a, lo_b) < np.minimum(lo_a + a.side, lo_b + b.side))
        assert not overlap


def test_overlap_count_matches_brute_force():
    grid = DyadicGrid.random(1, (-8, 2), n=1)
    Q = grid.cube(0, (0,))
    fam = whitney_family(Q, GoodnessParams(2, 0.3), max_depth=6)
    P = 200
    lo, hi = Q.corner, Q.corner + Q.side
    probes = lo[0] + (np.arange(P) + 0.5) * (hi[0] - lo[0]) / P
    brute = 0
    for x in probes:
        c = 0
        for R in fam:
            a, b = dilate_box(R, 9)
            c += a[0] <= x < b[0]
        brute = max(brute, c)
    assert overlap_count(fam, 9, lo, hi, P) == brute


def test_grid_dump_fields():
    grid = DyadicGrid.random(0, (-3, 1))
    out = grid_dump(grid, GoodnessParams(2, 0.1), [0.0], [1.0])
    assert out and set(out[0]) == {"scale", "index", "corner", "good", "truncated"}
    assert all(d["truncated"] for d in out if d["scale"] + 2 > 1)
