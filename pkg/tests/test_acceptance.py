"""Acceptance criteria 1-9, each at its stated tolerance.

Every test prints one line ``criterion N: PASS|FAIL ...`` (visible with ``pytest -s``
and collected in the terminal summary by ``conftest.py``).
"""
import time

import numpy as np
import pytest

from lpgstar import verify as V

pytestmark = pytest.mark.acceptance

FAMILIES = ["indicator", "gaussian", "poisson_bump", "polish_bump", "smooth_profile"]
LINES = []


def _report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


def _fifty_instances():
    out = []
    for s in range(50):
        n = 1 if s % 2 == 0 else 2
        per = [64, 128, 256, 512][s // 2 % 4] if n == 1 else [8, 16][s // 2 % 2]
        spec = {"generator": "uniform_grid", "args": {"per_side": per, "n": n}, "masses": "random",
                "shift": "cell_aligned", "top_scale": -1, "system": FAMILIES[s % 5]}
        out.append(V.make_instance(spec, seed=s))
    return out


@pytest.fixture(scope="module")
def fifty():
    return _fifty_instances()


def test_criterion_1_reconstruction(fifty):
    t0 = time.perf_counter()
    rep = V.check_reconstruction(_fifty_instances(), n_funcs=1)
    dt = time.perf_counter() - t0
    rec = max(r["reconstruction"] for r in rep.rows)
    mean = max(r["mean"] for r in rep.rows)
    dims = {r["n"] for r in rep.rows}
    fams = {r["family"] for r in rep.rows}
    sizes = [r["size"] for r in rep.rows]
    ok = (len(rep.rows) == 50 and rec < 1e-10 and mean < 1e-10 and dt < 60 and dims == {1, 2}
          and fams == set(FAMILIES) and min(sizes) >= 64 and max(sizes) <= 512)
    _report(1, ok, f"max |sum Delta - f| = {rec:.2e}, max |int Delta| = {mean:.2e}, {dt:.1f} s")


def test_criterion_2_stopping_certification(fifty):
    rep = V.check_stopping(fifty)
    stops = sum(r.get("stops", 0) for r in rep.rows)
    bad = sum(r["ratio"] for r in rep.rows)
    _report(2, rep.passed and bad == 0, f"{int(bad)} violations over {stops} stopping cubes")


def test_criterion_3_carleson_sequence():
    pairs = []
    for fam in ("polish_bump", "smooth_profile"):
        for n in (1, 2):
            spec = {"generator": "uniform_grid", "args": {"per_side": 64 if n == 1 else 16, "n": n},
                    "shift": "cell_aligned", "top_scale": -1, "system": fam}
            pairs += [V._refined_pair(spec, {}, s, 4) for s in range(5)]
    rep = V.check_carleson_sequence(pairs)
    finite = all(np.isfinite(r["coarse_ratio"]) and np.isfinite(r["fine_ratio"]) for r in rep.rows)
    quad = all(r["fine_size"] == 4 * r["coarse_size"] for r in rep.rows)
    ok = len(rep.rows) == 20 and finite and quad and rep.max_ratio < 0.2
    _report(3, ok, f"max relative change {rep.max_ratio:.3f} over {len(rep.rows)} pairs")


def test_criterion_4_pointwise_maximal():
    specs = [{"generator": "uniform_grid", "args": {"per_side": 256}, "kernel": {"truncate": None}},
             {"generator": "uniform_grid", "args": {"per_side": 16, "n": 2}, "kernel": {"truncate": None}},
             {"generator": "cantor", "args": {"levels": 8}, "kernel": {"truncate": None}},
             {"generator": "random_cloud", "args": {"count": 200}, "kernel": {"truncate": None}}]
    details, ok = [], True
    for s, spec in enumerate(specs):
        inst = V.make_instance(spec, seed=s)
        kp = inst.kernel.params
        assert kp.alpha <= kp.m * (kp.lam - 2) / 2
        main = V.check_pointwise_maximal(inst, trials=20_000)
        # alpha = m (lam - 2) on the same instance, i.e. lam = 2 + alpha / m
        neg = V.check_pointwise_maximal(inst, trials=20_000, lam=2 + kp.alpha / kp.m)
        change = abs(main.summary["change"])
        ok &= change < 0.25 and neg.summary["max"] > main.summary["max"]
        details.append(f"{inst.label}: change {change:.3f}, max {main.summary['max']:.3g} < control "
                       f"{neg.summary['max']:.3g}")
    _report(4, ok, "; ".join(details))


def test_criterion_5_decay_lemmas():
    sep = {"generator": "cantor", "args": {"levels": 9}, "system": "indicator", "kernel": {"truncate": None}}
    nested = dict(sep, system="gaussian", kernel={"alpha": 1.0, "lam": 8.0, "truncate": None},
                  goodness={"r": 8, "gamma": 0.28}, above_top=2)
    reps = {c: [] for c in ("less", "sep", "cutoff", "accretive")}
    for seed in range(10):
        inst = V.make_instance(sep, seed=seed)
        ctx = V._DecayContext(inst, seed)
        i_max = inst.goodness.r + 5
        for case in ("less", "sep"):
            reps[case].append(V.check_separated_decay(inst, case, n_R=8, seed=seed, ctx=ctx, i_max=i_max))
        inst = V.make_instance(nested, seed=seed)
        ctx = V._DecayContext(inst, seed)
        for v in ("cutoff", "accretive"):
            reps[v].append(V.check_nested_decay(inst, v, n_R=8, seed=seed, ctx=ctx, sweep=5))
    ok, details = True, []
    for name, rs in reps.items():
        merged = V.merge_reports(name, rs)
        n_inst = len({r["instance"] for r in merged.rows})
        crit, summ = V.decay_criteria(merged)
        ok &= all(crit.values()) and n_inst >= 10
        s_i = summ["slopes"]["i"]
        c_i = summ["control_slopes"]["i"]
        details.append(f"{name}: slope_i {s_i['slope']:+.3f}+-{s_i['stderr']:.3f}, "
                       f"control {c_i['slope']:+.3f}+-{c_i['stderr']:.3f}"
                       f" on {n_inst} instances")
    _report(5, ok, "; ".join(details))


def test_criterion_6_goodness_probability():
    rep = V.check_goodness_probability(gamma=(0.1, 0.4), rs=(2, 4, 6, 8), n_shifts=1000, seed=0)
    again = V.check_goodness_probability(gamma=(0.1, 0.4), rs=(2, 4, 6, 8), n_shifts=1000, seed=0)
    same = [r["fraction"] for r in rep.rows] == [r["fraction"] for r in again.rows]
    fr = rep.summary["fractions"]
    _report(6, rep.passed and same, f"bad fractions {fr}")


def test_criterion_7_whitney_overlap():
    details, ok = [], True
    for n in (1, 2):
        rep = V.check_whitney_overlap(n=n, scales=(0, 1, 2, 3), probes=10_000)
        counts = [r["ratio"] for r in rep.rows]
        ok &= rep.passed
        details.append(f"n={n}: overlaps {counts}")
    _report(7, ok, "; ".join(details))


def test_criterion_8_quadrature():
    cfg = V.default_config()
    seen, insts = set(), []
    for ccfg in cfg["checks"].values():
        for spec in ccfg.get("instances", cfg["instances"]):
            key = repr(sorted(spec.items()))
            if key not in seen:
                seen.add(key)
                insts.append(V.make_instance(spec, cfg, len(insts)))
    rep = V.check_quadrature(insts, counts=(256, 2048), n0_start=256)
    _report(8, rep.passed, f"max relative gap {rep.max_ratio:.2e} over {len(insts)} suite instances")


def test_criterion_9_main_inequality_and_suite_runtime(tmp_path):
    insts = [V.make_instance({"generator": "uniform_grid", "args": {"per_side": 2**q}, "system": "indicator",
                              "kernel": {"truncate": 64}}, seed=q) for q in range(6, 11)]
    rep = V.check_main_inequality(insts, n_funcs=16)
    slope = rep.summary["slope"]
    t0 = time.perf_counter()
    suite, code = V.run_suite(V.default_config(), tmp_path)
    dt = time.perf_counter() - t0
    ok = rep.passed and code == 0 and dt < 300
    _report(9, ok, f"slope {slope['slope']:+.4f}+-{slope['stderr']:.4f} in log2 N; default suite "
                   f"{'passed' if code == 0 else 'failed'} in {dt:.0f} s")
