import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finereg import geometry as g
from finereg.errors import DomainMembershipError, InvalidConeError, InvalidDomainError


def test_square_distance(square):
    assert g.distance_to_boundary(square, [0.3, 0.5]) == pytest.approx(0.3)


def test_disk_distance_at_center(disk):
    assert g.distance_to_boundary(disk, [0.0, 0.0]) == pytest.approx(1.0)


def test_triangle_distance_is_min_over_edges():
    tri = g.DomainSpec.polygon([[0, 0], [1, 0], [0, 1]])
    x = np.array([0.25, 0.25])
    # the legs are closer than the hypotenuse
    assert g.distance_to_boundary(tri, x) == pytest.approx(0.25)
    d_hyp = abs(x.sum() - 1) / np.sqrt(2)
    assert d_hyp == pytest.approx(0.353553, abs=1e-6)
    # dense boundary sampling oracle
    pts, _ = g.boundary_samples(tri, 20000)
    assert np.min(np.linalg.norm(pts - x, axis=1)) == pytest.approx(0.25, abs=1e-4)


def test_outside_point_rejected(square):
    with pytest.raises(DomainMembershipError):
        g.distance_to_boundary(square, [1.5, 0.5])


def test_clockwise_polygon_rejected():
    with pytest.raises(InvalidDomainError):
        g.DomainSpec.polygon([[0, 0], [0, 1], [1, 0]])


def test_chart_admissibility():
    with pytest.raises(InvalidDomainError):
        g.DomainSpec.lipschitz_graph(0.5, 1.0, lambda x: 0 * x)
    with pytest.raises(InvalidDomainError):
        # Lip(f) = 2 > rho / (10 r)
        g.DomainSpec.lipschitz_graph(0.1, 1.05, lambda x: 2 * np.abs(x))


def test_cone_membership():
    bp = g.BoundaryPoint(np.array([0.0, 0.0]), np.array([0.0, 1.0]), 0.1)
    cone = g.build_cone(bp, 1.0, 0.5)
    assert cone.contains([0.0, 0.25])[0]
    assert not cone.contains([0.3, 0.25])[0]


def test_empty_cone_rejected():
    bp = g.BoundaryPoint(np.array([0.0, 0.0]), np.array([0.0, 1.0]), 0.1)
    with pytest.raises(InvalidConeError):
        g.build_cone(bp, 1.0, 0.0)


def test_disk_cone_contained(disk):
    bp = g.boundary_point(disk, [0.0, -1.0])
    np.testing.assert_allclose(bp.nu, [0.0, 1.0])
    cone = g.build_cone(bp, 0.5, 0.5, disk)
    assert np.all(g.contains(disk, cone.sample(20000, np.random.default_rng(1))))
    assert cone.inner_margin > 0


def test_boundary_point_cone_avoids_x0(disk):
    bp = g.boundary_point(disk, [0.0, -1.0], x0=[0.0, 0.0])
    assert g.cone_admissible(disk, bp.y, bp.nu, bp.eta, [0.0, 0.0])


def test_polygon_corner_normal_is_bisector(square):
    nu = g.pseudo_normal(square, [0.0, 0.0])
    np.testing.assert_allclose(nu, [np.sqrt(0.5), np.sqrt(0.5)])


def test_cone_union_single(square):
    bp = g.boundary_point(square, [0.5, 0.0])
    sub = g.cone_union_subdomain(square, [bp], 0.5, 0.3)
    assert sub.area() == pytest.approx(g.build_cone(bp, 0.5, 0.3).area())


def test_cone_union_two_shifted_matches_monte_carlo(square):
    pts = [g.boundary_point(square, [0.4, 0.0]), g.boundary_point(square, [0.5, 0.0])]
    sub = g.cone_union_subdomain(square, pts, 0.5, 0.3)
    cones = [g.build_cone(p, 0.5, 0.3) for p in pts]
    rng = np.random.default_rng(5)
    box_lo, box_hi = np.array([0.2, 0.0]), np.array([0.7, 0.3])
    x = rng.uniform(box_lo, box_hi, (400000, 2))
    hit = cones[0].contains(x) | cones[1].contains(x)
    mc = hit.mean() * np.prod(box_hi - box_lo)
    se = np.sqrt(hit.mean() * (1 - hit.mean()) / len(x)) * np.prod(box_hi - box_lo)
    assert abs(sub.area() - mc) < 4 * se
    # strictly less than two disjoint cones
    assert sub.area() < 2 * cones[0].area()


def test_cone_union_empty(square):
    with pytest.raises(InvalidDomainError):
        g.cone_union_subdomain(square, [], 0.5, 0.3)


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.95, 0.95), st.floats(-0.95, 0.95), st.floats(-0.95, 0.95),
       st.floats(-0.95, 0.95))
def test_distance_is_1_lipschitz_on_polygon(a, b, c, d):
    dom = g.DomainSpec.polygon([[-1, -1], [1, -1], [1, 1], [0, 0.2], [-1, 1]])
    p, q = np.array([a, b]), np.array([c, d])
    pts = np.array([p, q])
    if not np.all(g.contains(dom, pts)):
        return
    dp, dq = g.distance_to_boundary(dom, pts)
    assert abs(dp - dq) <= np.linalg.norm(p - q) + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.floats(-0.05, 0.05), st.floats(1e-4, 0.025))
def test_graph_distance_sandwich(chart, xp, height):
    lip = 0.5
    x = np.array([xp, float(chart.f(xp)) + height])
    d = g.distance_to_boundary(chart, x)
    assert d <= height + 1e-12
    assert d >= height / np.sqrt(1 + lip ** 2) - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(0.0, 1.0), st.floats(0.1, 1.0), st.floats(0.0, 1.0))
def test_cone_monotone_in_aperture_and_height(K1, dK, l1, dl):
    bp = g.BoundaryPoint(np.array([0.0, 0.0]), np.array([0.0, 1.0]), 0.1)
    small = g.build_cone(bp, K1, l1)
    big = g.build_cone(bp, K1 + dK, l1 + dl)
    pts = small.sample(200, np.random.default_rng(0))
    assert np.all(big.contains(pts))
