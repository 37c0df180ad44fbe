import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finereg import geometry as g
from finereg import regularity as R
from finereg.greens import Workspace
from finereg.operators import PotentialSpec as P, build_grid, make_operator


def _synthetic_shells(qs, k0=1, kmax=6):
    """One node per dyadic shell at distance 0.75 * 2^-k carrying ``q^k``."""
    ks = np.arange(k0, kmax + 1)
    dist = 0.75 * 2.0 ** (-ks.astype(float))
    return ks, dist, qs ** ks.astype(float)


@pytest.mark.parametrize("q", [0.25, 0.5, 0.9, 1.0, 1.3])
def test_shell_fit_recovers_geometric_ratio(q):
    ks, dist, summand = _synthetic_shells(q)
    rep = R.shell_analysis("t", [0, 0], summand, dist, h=2.0 ** -9)
    np.testing.assert_array_equal(rep.k, ks)
    assert rep.q == pytest.approx(q, rel=1e-12)
    np.testing.assert_array_equal(rep.counts, 1)
    assert rep.verdict == R.verdict_from_q(q, R.DEFAULT)


def test_shell_extrapolated_tail():
    ks, dist, summand = _synthetic_shells(0.5)
    rep = R.shell_analysis("t", [0, 0], summand, dist, h=2.0 ** -9)
    assert rep.extrapolated == pytest.approx(summand.sum() + summand[-1])


def test_too_few_shells_inconclusive():
    ks, dist, summand = _synthetic_shells(0.5, kmax=3)
    rep = R.shell_analysis("t", [0, 0], summand, dist, h=2.0 ** -6)
    assert len(rep.k) < 4
    assert rep.verdict == R.INCONCLUSIVE and np.isnan(rep.extrapolated)


def test_zero_summand_regular():
    rep = R.shell_analysis("t", [0, 0], np.zeros(5), np.linspace(0.01, 0.9, 5), h=1e-3)
    assert rep.verdict == R.REGULAR and rep.q == 0.0 and rep.total == 0.0


def test_negative_summand_rejected():
    with pytest.raises(ValueError):
        R.shell_analysis("t", [0, 0], np.array([1.0, -1.0]), np.array([0.5, 0.2]), h=1e-3)


def test_unresolved_and_layer_mass_separated():
    ks, dist, summand = _synthetic_shells(0.5, kmax=8)
    layer = np.zeros(len(ks), bool)
    layer[0] = True
    rep = R.shell_analysis("t", [0, 0], summand, dist, h=2.0 ** -9, layer=layer)
    # shells stop at 2^-k >= 8h, i.e. k <= 6
    assert rep.k[-1] == 6
    assert rep.unresolved == pytest.approx(summand[-2:].sum())
    assert rep.layer == summand[0]
    assert rep.total == pytest.approx(summand[1:].sum())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=6, max_size=6))
def test_shell_sums_nonnegative_and_partition(vals):
    ks, dist, _ = _synthetic_shells(0.5)
    s = np.array(vals)
    rep = R.shell_analysis("t", [0, 0], s, dist, h=2.0 ** -9)
    assert np.all(rep.shells >= 0)
    assert rep.shells.sum() + rep.unresolved == pytest.approx(s.sum())


@pytest.mark.parametrize("s", [1.0, 1.5, 2.0])
def test_cone_quadrature_ratio_is_exact_power(disk, s):
    bp = g.boundary_point(disk, [0.0, -1.0], x0=[0.0, 0.0])
    cone = g.build_cone(bp, 0.5, 0.5, disk)
    V = P.cone_restricted(P.power_law(1.0, s, bp.y), cone)
    rep = R.criterion_cone_test(cone, V, disk, 1 / 256)
    assert rep.q == pytest.approx(2 ** (s - 2), rel=1e-6)


def test_ratio_report_verdicts():
    ts = np.geomspace(0.25, 0.02, 5)
    down = R.ratio_report("t", [0, 0], ts, 0.5 ** np.arange(5), -1, R.DEFAULT)
    flat = R.ratio_report("t", [0, 0], ts, np.full(5, 0.6), -1, R.DEFAULT)
    up = R.ratio_report("t", [0, 0], ts, 2.0 ** np.arange(5), +1, R.DEFAULT)
    bad = R.ratio_report("t", [0, 0], ts, np.array([1, np.nan, 1, 1, 1.0]), -1, R.DEFAULT)
    assert (down.verdict, flat.verdict, up.verdict, bad.verdict) == (
        R.SINGULAR, R.REGULAR, R.SINGULAR, R.INCONCLUSIVE)
    assert down.q == pytest.approx(1 / 16)


def test_consolidate():
    rep = lambda v: R.CriterionReport("x", np.zeros(2), verdict=v)  # noqa: E731
    verdict, ok, _ = R.consolidate({"a": rep(R.REGULAR), "b": rep(R.INCONCLUSIVE)})
    assert verdict == R.REGULAR and ok
    verdict, ok, _ = R.consolidate({"a": rep(R.REGULAR), "b": rep(R.SINGULAR)})
    assert verdict == R.INCONCLUSIVE and not ok


def test_zero_potential_is_regular(disk64):
    ws = Workspace(disk64, x0=[0.0, 0.0])
    c = R.classify(ws, [0.0, -1.0])
    assert c.verdict == R.REGULAR and c.consistent
    assert c.reports["integral-Ky"].total == 0.0
    assert c.reports["c-weight"].extras["c"] == 1.0


def test_constant_potential_is_regular(disk64):
    ws = Workspace(disk64, make_operator(disk64, V=P.constant(5.0)), x0=[0.0, 0.0])
    c = R.classify(ws, [0.6, 0.8])
    assert c.verdict == R.REGULAR and c.consistent


def test_relative_with_zero_gamma_matches_integral(disk64):
    ws = Workspace(disk64, make_operator(disk64, V=P.hardy(0.3)), x0=[0.0, 0.0])
    a = R.criterion_relative(ws, [0.0, -1.0])
    b = R.criterion_integral_Ky(ws, [0.0, -1.0])
    assert a.criterion == "relative-R"
    assert a.same_as(b)


def test_relative_with_gamma_equal_V_is_regular(disk64):
    V = P.hardy(0.3)
    ws = Workspace(disk64, make_operator(disk64, V=V, gamma=V), x0=[0.0, 0.0])
    rep = R.criterion_relative(ws, [0.0, -1.0])
    assert rep.verdict == R.REGULAR and rep.total == 0.0


def test_smooth_explicit_requires_disk(square32):
    with pytest.raises(R.InvalidDomainError):
        R.criterion_smooth_explicit(square32, [0.5, 0.0], np.zeros(square32.n))


def test_weighted_energy_localization_finite(chart):
    res = R.verify_weighted_energy_localization(chart, P.hardy(0.3), 0.25, 0.5, chart.r / 32,
                                                trials=4)
    assert np.all(np.isfinite(res.per_trial)) and res.ratio > 0
    with pytest.raises(ValueError):
        R.verify_weighted_energy_localization(chart, P.hardy(0.3), 0.5, 0.25, chart.r / 32)
