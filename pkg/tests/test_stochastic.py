import numpy as np
import pytest

from finereg import geometry as g
from finereg.errors import InsufficientStatisticsError
from finereg.greens import Workspace
from finereg.kernels import martin_kernel
from finereg.operators import PotentialSpec as P, build_grid
from finereg.stochastic import (WalkConfig, conditioned_functional, path_keys,
                                truncated_quadrature)


@pytest.fixture(scope="module")
def walk():
    disk = g.DomainSpec.disk([0, 0], 1.0)
    grid = build_grid(disk, 1 / 32)
    bp = g.boundary_point(disk, [0.0, -1.0])
    ws = Workspace(grid)
    hfield = martin_kernel(ws, "L0", bp).field
    return grid, bp, ws, hfield


def _cfg(walk, **kw):
    grid, bp, ws, hfield = walk
    base = dict(hfield=hfield, y=bp.y, eps=0.25, x0=ws.x0, paths=3000, seed=5)
    base.update(kw)
    return WalkConfig(**base)


def test_zero_potential(walk):
    grid = walk[0]
    r = conditioned_functional(grid, np.zeros(grid.n), _cfg(walk))
    assert r.mean == 0.0 and r.stderr == 0.0


def test_eps_below_four_h_rejected(walk):
    grid = walk[0]
    with pytest.raises(ValueError):
        conditioned_functional(grid, np.ones(grid.n), _cfg(walk, eps=3 * grid.h))


def test_path_keys_distinct():
    k = path_keys(7, 100000)
    assert len(np.unique(k)) == len(k)
    np.testing.assert_array_equal(k[:10], path_keys(7, 10))


def test_seeded_runs_bit_identical_across_threads(walk):
    grid = walk[0]
    V = P.constant(1.0).evaluate(grid)
    cfg = _cfg(walk, paths=9000)
    a = conditioned_functional(grid, V, cfg, threads=1)
    b = conditioned_functional(grid, V, cfg, threads=3)
    assert a.mean == b.mean and a.stderr == b.stderr
    np.testing.assert_array_equal(a.samples, b.samples)
    c = conditioned_functional(grid, V, _cfg(walk, paths=9000, seed=6))
    assert c.mean != a.mean


def test_agrees_with_quadrature(walk):
    grid, bp, ws, hfield = walk
    V = P.constant(1.0).evaluate(grid)
    r = conditioned_functional(grid, V, _cfg(walk))
    q = truncated_quadrature(grid, V, hfield, ws.x0, bp.y, 0.25)
    assert r.retained == 3000 and r.discarded == 0
    assert abs(r.mean - q) <= 3 * r.stderr


def test_quadrature_linear_in_potential(walk):
    grid, bp, ws, hfield = walk
    V = np.random.default_rng(0).uniform(0, 1, grid.n)
    a = truncated_quadrature(grid, V, hfield, ws.x0, bp.y, 0.25)
    b = truncated_quadrature(grid, 3 * V, hfield, ws.x0, bp.y, 0.25)
    assert b == pytest.approx(3 * a, rel=1e-12)


def test_too_few_retained_raises(walk):
    grid = walk[0]
    with pytest.raises(InsufficientStatisticsError):
        conditioned_functional(grid, np.ones(grid.n), _cfg(walk, max_steps=1, paths=500))
