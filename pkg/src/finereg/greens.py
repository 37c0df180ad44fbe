"""Discrete Green functions, Green potentials and harmonic measure.

Green columns carry the ``h**-N`` Dirac scaling, so ``green.values``
approximates the continuum ``G(., pole)`` and ``h**N``-weighted sums
approximate integrals directly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import PoleError
from .operators import assemble, dirichlet_rhs, make_operator

log = logging.getLogger(__name__)


class Workspace:
    """Grid + operator with cached factorizations and Green columns.

    ``x0`` is the normalization point (deepest node by default).  Systems are
    assembled once per mode and shared read-only by all solves.
    """

    def __init__(self, grid, op=None, x0=None, shortley_weller=False):
        self.grid = grid
        self.op = op if op is not None else make_operator(grid)
        if isinstance(x0, (int, np.integer)):
            self.x0 = int(x0)
        elif x0 is None:
            self.x0 = grid.deepest_node()
        else:
            self.x0 = grid.nearest_node(x0)
        self.shortley_weller = shortley_weller
        self._systems = {}
        self._greens = {}

    def system(self, mode):
        if mode not in self._systems:
            self._systems[mode] = assemble(self.grid, self.op, mode, self.shortley_weller)
        return self._systems[mode]

    def green(self, mode, pole):
        key = (mode, int(pole))
        if key not in self._greens:
            self._greens[key] = green_column(self, mode, pole)
        return self._greens[key]

    def with_potential(self, V=None, gamma=None):
        """Workspace for the same grid and coefficients with another potential."""
        return Workspace(self.grid, self.op.with_potential(V=V, gamma=gamma), self.x0,
                         self.shortley_weller)

    def coarsened(self):
        """The same problem on the ``2h`` sublattice.

        Lattices are origin aligned, so every coarse node is a fine node and
        ``V``, ``gamma`` restrict exactly.  ``x0`` moves to the nearest
        coarse node.
        """
        from .operators import build_grid

        coarse = build_grid(self.grid.domain, 2 * self.grid.h)
        fine = np.array([self.grid.node_at(2 * k) for k in coarse.index])
        op = make_operator(coarse, self.op.coeffs, gamma=self.op.gamma[fine],
                           V=self.op.V[fine])
        return Workspace(coarse, op, self.grid.nodes[self.x0], self.shortley_weller)

    def zeroth(self, mode):
        if mode == "L0":
            return self.op.gamma
        if mode == "L1":
            return self.op.V
        return np.zeros(self.grid.n)


@dataclass(eq=False)
class GreenField:
    pole: int
    mode: str
    values: np.ndarray

    def __getitem__(self, idx):
        return self.values[idx]


def green_column(ws, mode, pole):
    """``G(., pole)`` for the requested mode."""
    grid = ws.grid
    pole = int(pole)
    if not 0 <= pole < grid.n:
        raise PoleError(f"pole {pole} is not an interior node")
    rhs = np.zeros(grid.n)
    rhs[pole] = 1.0 / grid.cell
    u = ws.system(mode).solve(rhs)
    if np.any(u < -1e-12 * np.abs(u).max()):
        log.warning("Green column has negative entries (min %.3g)", u.min())
    return GreenField(pole, mode, u)


@dataclass
class PotentialValue:
    """``h^N sum G(pole, x) rho(x)``, split at the near-boundary layer."""

    value: float
    interior: float
    layer: float


def green_potential(grid, green, density):
    """Green potential of a nonnegative density evaluated at the pole."""
    rho = np.asarray(density, float)
    if np.any(rho < 0):
        raise ValueError("density must be nonnegative")
    w = grid.cell * green.values * rho
    interior = float(np.sum(w[~grid.layer]))
    layer = float(np.sum(w[grid.layer]))
    return PotentialValue(float(np.sum(w)), interior, layer)


def verify_resolvent_identity(ws, pole=None):
    """Max relative discrepancy in ``G = G^V + G M_V G^V`` for one column.

    Here ``G`` is the L0 Green function and ``G^V`` the L1 one, so with
    ``gamma = 0`` this is the classical Laplacian/Schrodinger pair.
    """
    grid = ws.grid
    pole = ws.x0 if pole is None else int(pole)
    g = ws.green("L0", pole).values
    gv = ws.green("L1", pole).values
    D = ws.op.V - ws.op.gamma
    # (G M_V G^V)(x, pole) = h^N sum_w G(x, w) D(w) G^V(w, pole)
    comp = ws.system("L0").solve(D * gv)
    rhs = gv + comp
    scale = np.max(np.abs(g))
    return float(np.max(np.abs(g - rhs)) / scale)


# -- boundary value problems --------------------------------------------

class BoundarySet:
    """A subset of the boundary: disk arcs, graph intervals, or a predicate.

    ``contains`` takes boundary points; ``sample`` returns points of the set.
    """

    def __init__(self, domain, kind, **params):
        self.domain = domain
        self.kind = kind
        self.params = params
        if kind == "arc" and domain.kind != "disk":
            raise ValueError("arc boundary sets need a disk")
        if kind == "graph-interval" and domain.kind != "lipschitz-graph":
            raise ValueError("graph-interval boundary sets need a lipschitz-graph chart")

    @classmethod
    def full(cls, domain):
        return cls(domain, "full")

    @classmethod
    def arc(cls, domain, theta0, theta1):
        return cls(domain, "arc", theta0=float(theta0), theta1=float(theta1))

    @classmethod
    def graph_interval(cls, domain, a, b):
        return cls(domain, "graph-interval", a=float(a), b=float(b))

    @classmethod
    def empty(cls, domain):
        return cls(domain, "empty")

    @classmethod
    def predicate(cls, domain, fn):
        """Boundary points where ``fn(points)`` is true."""
        return cls(domain, "predicate", fn=fn)

    def contains(self, pts):
        p = np.atleast_2d(pts)
        if self.kind == "full":
            return np.ones(len(p), bool)
        if self.kind == "empty":
            return np.zeros(len(p), bool)
        if self.kind == "arc":
            th = np.mod(np.arctan2(p[:, 1] - self.domain.center[1],
                                   p[:, 0] - self.domain.center[0]), 2 * np.pi)
            a = np.mod(self.params["theta0"], 2 * np.pi)
            span = self.params["theta1"] - self.params["theta0"]
            return np.mod(th - a, 2 * np.pi) <= span
        if self.kind == "graph-interval":
            on = self.domain.on_sharp_boundary(p, tol=1e-9 * self.domain.rho)
            return on & (p[:, 0] >= self.params["a"]) & (p[:, 0] <= self.params["b"])
        if self.kind == "predicate":
            return np.asarray(self.params["fn"](p), bool)
        raise ValueError(f"unknown boundary set {self.kind}")

    def measure(self):
        if self.kind == "arc":
            return self.domain.radius * (self.params["theta1"] - self.params["theta0"])
        if self.kind == "graph-interval":
            xs = np.linspace(self.params["a"], self.params["b"], 2001)
            f = self.domain.f(xs)
            return float(np.sum(np.hypot(np.diff(xs), np.diff(f))))
        if self.kind == "empty":
            return 0.0
        return float("nan")

    def sample(self, n, rng=None, interior_fraction=0.9):
        """``n`` points of the set, equispaced over its central part."""
        c = 0.5 * (1 - interior_fraction)
        u = np.linspace(c, 1 - c, n)
        if self.kind == "arc":
            t0, t1 = self.params["theta0"], self.params["theta1"]
            th = t0 + u * (t1 - t0)
            return self.domain.center + self.domain.radius * np.column_stack([np.cos(th), np.sin(th)])
        if self.kind == "graph-interval":
            xs = self.params["a"] + u * (self.params["b"] - self.params["a"])
            return np.column_stack([xs, self.domain.f(xs)])
        raise ValueError(f"cannot sample boundary set {self.kind}")


def dirichlet_solve(ws, g, mode="L0"):
    """Solution of ``A u = 0`` in the interior with boundary data ``g``."""
    rhs, _, _ = dirichlet_rhs(ws.grid, g, None if mode == "laplacian" else ws.op,
                              ws.shortley_weller)
    return ws.system(mode).solve(rhs)


def harmonic_measure(ws, boundary_set, mode="L0"):
    """L0-harmonic extension of the indicator of ``boundary_set``."""
    if boundary_set.kind == "empty":
        log.warning("harmonic measure of an empty boundary set is zero")
        return np.zeros(ws.grid.n)
    u = dirichlet_solve(ws, lambda p: boundary_set.contains(p).astype(float), mode)
    if not np.any(u):
        log.warning("boundary set misses every boundary link; harmonic measure is zero")
    return u


def boundary_adjacent_pole(grid, y):
    """Node closest to the boundary point ``y`` among boundary-adjacent nodes."""
    cand = np.flatnonzero(grid.boundary_adjacent)
    d = np.linalg.norm(grid.nodes[cand] - np.asarray(y, float), axis=1)
    return int(cand[np.argmin(d)])


def torsion(ws, mode="L0"):
    """Solution of ``A u = 1``."""
    return ws.system(mode).solve(np.ones(ws.grid.n))


__all__ = ["Workspace", "GreenField", "green_column", "green_potential", "PotentialValue",
           "verify_resolvent_identity", "BoundarySet", "dirichlet_solve", "harmonic_measure",
           "boundary_adjacent_pole", "torsion", "geometry"]
