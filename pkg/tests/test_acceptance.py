"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still reports what was measured.
"""
import os
import time

import numpy as np
import pytest

from conftest import record
from finereg import geometry as g
from finereg.greens import BoundarySet, Workspace, verify_resolvent_identity
from finereg.kernels import martin_kernel, verify_boundary_harnack
from finereg.operators import PotentialSpec as P, build_grid, make_operator
from finereg.reduite import (ObstacleProblem, complementarity, estimate_hardy_constant,
                             hardy_quotient, solve_reduite, verify_energy_bound)
from finereg.regularity import (REGULAR, SINGULAR, ae_regularity_tests, classify,
                                criterion_cone_test, criterion_integral_Ky, criterion_relative,
                                criterion_smooth_explicit, verify_weighted_energy_localization)
from finereg.stochastic import WalkConfig, conditioned_functional, truncated_quadrature
from oracles import lp_reduite

DISK = g.DomainSpec.disk([0.0, 0.0], 1.0)
SQUARE = g.DomainSpec.box([0.0, 0.0], [1.0, 1.0])
CHART = g.DomainSpec.lipschitz_graph(0.1, 1.05, lambda x: 0.5 * np.abs(x))
CHART_X0 = [0.0, 0.6]
THREADS = max(1, min(4, os.cpu_count() or 1))


def _cone_power(bp, cone, s, kappa=1.0):
    return P.cone_restricted(P.power_law(kappa, s, bp.y), cone)


def test_c01_resolvent_identity():
    t = time.perf_counter()
    grid = build_grid(SQUARE, 1 / 32)
    errs = {}
    for name, V in [("zero", None), ("const5", P.constant(5.0)), ("hardy0.5", P.hardy(0.5))]:
        errs[name] = verify_resolvent_identity(Workspace(grid, make_operator(grid, V=V)))
    dt = time.perf_counter() - t
    ok = max(errs.values()) <= 1e-8 and dt < 10
    record(1, ok, f"max rel err {max(errs.values()):.2e} (<=1e-8), {dt:.1f}s (<10s)")
    assert ok


def _comparison_cases():
    sq = build_grid(SQUARE, 1 / 32)
    dk = build_grid(DISK, 1 / 64)
    ch = build_grid(CHART, CHART.r / 32)
    bp = g.boundary_point(DISK, [0.0, -1.0], x0=[0.0, 0.0])
    cone = g.build_cone(bp, 0.5, 0.5, DISK)
    rand = np.random.default_rng(0)
    yield "square", sq, None, [P.constant(5.0), P.hardy(0.5), rand.uniform(0, 20, sq.n)]
    yield "disk", dk, [0.0, 0.0], [P.constant(5.0), P.hardy(0.4), _cone_power(bp, cone, 1.0),
                                   _cone_power(bp, cone, 2.0),
                                   P.indicator(g.DomainSpec.disk([0, 0.4], 0.3), 5.0)]
    yield "chart", ch, CHART_X0, [P.constant(5.0), P.hardy(0.3)]


def test_c02_comparison_principle():
    worst = 0.0
    n = 0
    for _, grid, x0, pots in _comparison_cases():
        base = Workspace(grid, x0=x0)
        poles = [base.x0, grid.nearest_node(grid.nodes[base.x0] * 0.5 + grid.nodes[0] * 0.5)]
        for V in pots:
            ws = Workspace(grid, make_operator(grid, V=V), x0=x0)
            for p in poles:
                G = base.green("L0", p).values
                GV = ws.green("L1", p).values
                worst = max(worst, float(np.max(GV - G) / G.max()))
                n += 1
    ok = worst <= 1e-10
    record(2, ok, f"max violation of G^V <= G {worst:.1e} (<=1e-10) over {n} pole/potential pairs")
    assert ok


def test_c03_disk_martin_kernel():
    t = time.perf_counter()
    grid = build_grid(DISK, 1 / 128)
    ws = Workspace(grid, x0=[0.0, 0.0], shortley_weller=True)
    y = np.array([0.0, -1.0])
    K = martin_kernel(ws, "laplacian", g.boundary_point(DISK, y, x0=[0.0, 0.0])).field
    x = grid.nodes
    exact = (1 - np.sum(x ** 2, axis=1)) / np.sum((x - y) ** 2, axis=1)
    sel = grid.delta >= 4 * grid.h
    err = np.abs(K[sel] / exact[sel] - 1)
    far = np.linalg.norm(x[sel] - y, axis=1) >= 8 * grid.h
    dt = time.perf_counter() - t
    ok = err.max() <= 0.03 and dt < 60
    record(3, ok, f"max rel err {err.max():.4f} (<=0.03), {err[far].max():.4f} beyond 8h, "
                  f"median {np.median(err):.1e}, {dt:.1f}s")
    assert ok


def test_c04_power_law_family():
    grid = build_grid(DISK, 1 / 256)
    bp = g.boundary_point(DISK, [0.0, -1.0], x0=[0.0, 0.0])
    cone = g.build_cone(bp, 0.5, 0.5, DISK)
    expect = {1.0: REGULAR, 1.5: REGULAR, 2.0: SINGULAR}
    ok = True
    parts = []
    for s, want in expect.items():
        V = _cone_power(bp, cone, s)
        ws = Workspace(grid, make_operator(grid, V=V), x0=[0.0, 0.0])
        c = classify(ws, bp)
        qs = {"integral-Ky": c.reports["integral-Ky"].q,
              "smooth-explicit": criterion_smooth_explicit(grid, bp, V).q,
              "cone-test": criterion_cone_test(cone, V, DISK, grid.h).q}
        dq = max(abs(q - 2 ** (s - 2)) for q in qs.values())
        good = c.verdict == want and c.unanimous and dq <= 0.1
        ok &= good
        parts.append(f"s={s:g} {c.verdict} |q-2^(s-2)|<={dq:.3f}")
    record(4, ok, "; ".join(parts))
    assert ok


def _suite():
    """Disk and graph scenarios across the potential families."""
    dk = build_grid(DISK, 1 / 128)
    for ang in (-np.pi / 2, -0.9):
        bp = g.boundary_point(DISK, [np.cos(ang), np.sin(ang)], x0=[0.0, 0.0])
        cone = g.build_cone(bp, 0.5, 0.5, DISK)
        cases = [("zero", P.zero(), None), ("const5", P.constant(5.0), None),
                 ("hardy0.2", P.hardy(0.2), 0.2), ("hardy0.5", P.hardy(0.5), 0.5)]
        if ang == -np.pi / 2:
            cases += [(f"s{s:g}", _cone_power(bp, cone, s), None) for s in (1.0, 1.5, 2.0)]
        for name, V, a in cases:
            yield f"disk@{ang:.2f}-{name}", dk, [0.0, 0.0], bp, V, a
    ch = build_grid(CHART, CHART.r / 64)
    bp = g.boundary_point(CHART, [0.0, 0.0], x0=CHART_X0)
    cone = g.build_cone(bp, 0.5, 0.25, CHART)
    for name, V, a in [("zero", P.zero(), None), ("const5", P.constant(5.0), None),
                       ("hardy0.3", P.hardy(0.3), 0.3), ("s1", _cone_power(bp, cone, 1.0), None),
                       ("s2", _cone_power(bp, cone, 2.0), None)]:
        yield f"graph-{name}", ch, CHART_X0, bp, V, a


@pytest.fixture(scope="module")
def suite_results():
    out = {}
    for name, grid, x0, bp, V, a in _suite():
        ws = Workspace(grid, make_operator(grid, V=V, a=a), x0=x0)
        c = classify(ws, bp)
        rel0 = criterion_relative(ws, bp)
        ky = criterion_integral_Ky(ws, bp)
        wsg = Workspace(grid, make_operator(grid, V=V, a=a, gamma=V), x0=x0)
        relV = criterion_relative(wsg, bp)
        out[name] = (c.consistent, c.verdict, rel0.same_as(ky), relV.verdict)
    return out


def test_c05_criterion_consistency(suite_results):
    bad = [k for k, v in suite_results.items() if not v[0]]
    verdicts = [v[1] for v in suite_results.values()]
    ok = len(suite_results) >= 12 and not bad
    record(5, ok, f"{len(suite_results)} scenarios, {len(bad)} with disagreeing criteria "
                  f"({verdicts.count(REGULAR)} regular, {verdicts.count(SINGULAR)} singular)")
    assert ok, bad


def test_c06_energy_bound():
    rng = np.random.default_rng(3)
    regions = [(np.array([rng.uniform(-0.06, 0.06), rng.uniform(0.3, 0.75)]),
                rng.uniform(0.02, 0.05)) for _ in range(20)]
    maxima = []
    finite = True
    for h in (1 / 320, 1 / 640):
        grid = build_grid(CHART, h)
        ws = Workspace(grid, make_operator(grid, V=P.hardy(0.3), a=0.3))
        pole = grid.nearest_node([0.0, 0.5])
        ratios = [verify_energy_bound(ws, pole, np.linalg.norm(grid.nodes - c, axis=1) < r).ratio
                  for c, r in regions]
        finite &= bool(np.all(np.isfinite(ratios)))
        maxima.append(max(ratios))
    change = max(maxima) / min(maxima)
    ok = finite and change <= 2
    record(6, ok, f"20 sets, all finite={finite}, max {maxima[0]:.3f} -> {maxima[1]:.3f} "
                  f"(x{change:.2f}, <=2)")
    assert ok


def test_c07_reduite_solver():
    worst_lp = worst_comp = worst_mono = 0.0
    for n in (17, 33):
        grid = build_grid(SQUARE, 1 / (n - 1))
        ws = Workspace(grid)
        A = ws.system("L0").matrix
        rng = np.random.default_rng(n)
        pole = grid.nearest_node([0.25, 0.25])
        for trial in range(5):
            region = np.linalg.norm(grid.nodes - rng.uniform(0.3, 0.8, 2), axis=1) <= 0.15
            w = ws.green("L0", pole).values if trial == 0 else rng.uniform(0, 1, grid.n)
            prob = ObstacleProblem(ws, region, w)
            res = solve_reduite(prob, tol=1e-11)
            psi = prob.obstacle()
            scale = psi.max()
            worst_comp = max(worst_comp, np.max(np.abs(complementarity(A, res.s, psi))) / scale)
            worst_lp = max(worst_lp, np.max(np.abs(res.s - lp_reduite(A, psi))) / scale)
            bigger = region | (rng.uniform(size=grid.n) < 0.1)
            s_region = solve_reduite(ObstacleProblem(ws, bigger, w), tol=1e-11).s
            s_obst = solve_reduite(ObstacleProblem(ws, region, w + rng.uniform(0, 1, grid.n)),
                                   tol=1e-11).s
            worst_mono = max(worst_mono, np.max(res.s - s_region) / scale,
                             np.max(res.s - s_obst) / scale)
    ok = worst_comp <= 1e-8 and worst_lp <= 1e-6 and worst_mono <= 1e-8
    record(7, ok, f"complementarity {worst_comp:.1e} (<=1e-8), LP oracle {worst_lp:.1e} "
                  f"(<=1e-6), monotonicity {max(worst_mono, 0):.1e} (<=1e-8)")
    assert ok


def test_c08_boundary_harnack():
    cs = [verify_boundary_harnack(CHART, CHART.r / k, V=P.hardy(0.3), trials=10, a=0.3).constant
          for k in (64, 128)]
    change = max(cs) / min(cs)
    ok = bool(np.all(np.isfinite(cs))) and change <= 2
    record(8, ok, f"constant {cs[0]:.3f} at r/64, {cs[1]:.3f} at r/128 (x{change:.2f}, <=2)")
    assert ok


def test_c09_weighted_energy_localization():
    ok = True
    parts = []
    for label, coeffs in (("laplacian", None), ("diag(2,1)", np.diag([2.0, 1.0]))):
        rs = [verify_weighted_energy_localization(CHART, P.hardy(0.3), 0.25, 0.5, CHART.r / k,
                                                  trials=10, coeffs=coeffs).ratio
              for k in (32, 64)]
        change = max(rs) / min(rs)
        ok &= bool(np.all(np.isfinite(rs))) and change <= 2
        parts.append(f"{label} {rs[0]:.3f} -> {rs[1]:.3f} (x{change:.2f})")
    record(9, ok, "; ".join(parts) + " (<=2)")
    assert ok


def test_c10_almost_everywhere():
    grid = build_grid(DISK, 1 / 128)
    kset = BoundarySet.arc(DISK, -2.0, -1.0)
    ws = Workspace(grid, make_operator(grid, V=P.hardy(0.4), a=0.4))
    sing = ae_regularity_tests(ws, kset)
    away = P.indicator(g.DomainSpec.disk([0.0, 0.4], 0.3), 5.0)
    reg = ae_regularity_tests(Workspace(grid, make_operator(grid, V=away)), kset)
    n_sing = round(sing.fraction_singular * len(sing.sampled))
    n_reg = round(reg.fraction_regular * len(reg.sampled))
    ok = (sing.harmonic_measure_test.verdict == SINGULAR and sing.cone_union_test.verdict == SINGULAR
          and n_sing >= 18 and reg.harmonic_measure_test.verdict == REGULAR
          and np.isfinite(reg.harmonic_measure_test.extrapolated) and n_reg >= 18)
    record(10, ok, f"hardy(0.4): shells q {sing.harmonic_measure_test.q:.2f}/"
                   f"{sing.cone_union_test.q:.2f}, {n_sing}/20 singular; away from K: "
                   f"integral {reg.harmonic_measure_test.extrapolated:.3g}, {n_reg}/20 regular")
    assert ok


def test_c11_monte_carlo():
    grid = build_grid(DISK, 1 / 128)
    bp = g.boundary_point(DISK, [0.0, -1.0])
    cone = g.build_cone(bp, 0.5, 0.5, DISK)
    ws = Workspace(grid)
    hfield = martin_kernel(ws, "L0", bp).field
    cfg = WalkConfig(hfield, bp.y, 0.05, ws.x0, paths=10500, seed=11)
    ok = True
    parts = []
    for name, V in (("const", P.constant(1.0)), ("s=1", _cone_power(bp, cone, 1.0))):
        Vv = V.evaluate(grid)
        r = conditioned_functional(grid, Vv, cfg, threads=THREADS)
        q = truncated_quadrature(grid, Vv, hfield, ws.x0, bp.y, 0.05)
        z = (r.mean - q) / r.stderr
        ok &= abs(z) <= 3 and r.retained >= 10 ** 4
        parts.append(f"{name} z={z:+.2f} ({r.retained} paths)")
        if name == "const":
            again = conditioned_functional(grid, Vv, cfg, threads=1)
            same = again.mean == r.mean and again.stderr == r.stderr
            ok &= same
            parts.append(f"rerun bit-identical={same}")
    record(11, ok, "; ".join(parts))
    assert ok


def test_c12_relative_degeneration(suite_results):
    same = [k for k, v in suite_results.items() if v[2]]
    reg = [k for k, v in suite_results.items() if v[3] == REGULAR]
    n = len(suite_results)
    ok = len(same) == n and len(reg) == n
    record(12, ok, f"gamma=0 identical to integral-Ky on {len(same)}/{n}; "
                   f"gamma=V regular on {len(reg)}/{n}")
    assert ok


def test_c13_hardy_constant():
    rect = build_grid(g.DomainSpec.box([0.0, 0.0], [16.0, 1.0]), 1 / 128)
    ch = estimate_hardy_constant(rect).value
    grids = {"square": build_grid(SQUARE, 1 / 32), "disk": build_grid(DISK, 1 / 64),
             "chart": build_grid(CHART, CHART.r / 32),
             "rectangle": build_grid(g.DomainSpec.box([0.0, 0.0], [16.0, 1.0]), 1 / 16)}
    rng = np.random.default_rng(13)
    worst = 0.0
    for grid in grids.values():
        C = estimate_hardy_constant(grid).value
        x = grid.nodes
        for i in range(100):
            if i % 2:
                f = rng.normal(size=grid.n)
            else:
                # boundary profile delta^alpha times a smooth random modulation
                k = rng.uniform(0, 3, (3, 2))
                mod = 1.5 + sum(np.cos(x @ kk + rng.uniform(0, 2 * np.pi)) for kk in k) / 3
                f = grid.delta ** rng.uniform(0.5, 2.0) * mod
            worst = max(worst, hardy_quotient(grid, f) / C)
    close = abs(ch - 4) <= 0.15 * 4
    ok = close and worst <= 1 + 1e-9
    record(13, ok, f"C_H on 16:1 rectangle {ch:.3f} (target 4 +-15%); "
                   f"max quotient/C_H {worst:.3f} over 100 fields x {len(grids)} domains")
    assert ok
