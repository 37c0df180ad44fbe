"""Grid discretization of divergence-form operators ``sum d_i(a_ij d_j .) - W``.

Nodes are the lattice points ``h Z^N`` strictly inside the domain.  Dirichlet
conditions are imposed by node exclusion: a missing neighbor contributes its
coupling to the diagonal and nothing to the right-hand side.  Matrices are
scaled as ``-L + W`` (units of ``1/h**2``), so ``A^{-1} e_p / h**N`` is the
discrete Green function with pole at node ``p``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry
from .errors import (AssemblyError, FineRegError, InvalidDomainError,
                     PotentialClassError, SolverError)

log = logging.getLogger(__name__)

DIRECT_LIMIT = 500_000


@dataclass(eq=False)
class GridDomain:
    domain: geometry.DomainSpec
    h: float
    nodes: np.ndarray          # (n, N) coordinates
    index: np.ndarray          # (n, N) integer lattice coordinates
    delta: np.ndarray          # (n,) distance to boundary
    lookup: np.ndarray         # dense lattice -> node id, -1 if excluded
    offset: np.ndarray         # lattice coordinate of lookup[0, 0(, 0)]
    neighbors: np.ndarray      # (n, 2N) node ids for -e_0, +e_0, -e_1, ...

    @property
    def n(self):
        return len(self.nodes)

    @property
    def dim(self):
        return self.nodes.shape[1]

    @property
    def cell(self):
        """Volume element ``h**N``."""
        return self.h ** self.dim

    @cached_property
    def boundary_adjacent(self):
        return np.any(self.neighbors < 0, axis=1)

    @cached_property
    def layer(self):
        """Near-boundary layer ``delta < 2h``."""
        return self.delta < 2 * self.h

    def node_at(self, lattice):
        """Node id at integer lattice coordinates, -1 if excluded."""
        k = np.asarray(lattice) - self.offset
        if np.any(k < 0) or np.any(k >= self.lookup.shape):
            return -1
        return int(self.lookup[tuple(k)])

    def nearest_node(self, x):
        x = np.asarray(x, float).reshape(-1)
        k = np.rint(x / self.h).astype(int)
        j = self.node_at(k)
        if j >= 0:
            return j
        return int(np.argmin(np.linalg.norm(self.nodes - x, axis=1)))

    def deepest_node(self):
        """Node maximizing ``delta``; ties broken toward the bounding-box center."""
        lo, hi = self.domain.bounds()
        c = 0.5 * (lo + hi)
        score = self.delta - 1e-9 * np.linalg.norm(self.nodes - c, axis=1)
        return int(np.argmax(score))

    def field(self, values):
        v = np.asarray(values, float)
        if v.shape != (self.n,) or not np.all(np.isfinite(v)):
            raise ValueError(f"field must be {self.n} finite values")
        return v


def build_grid(domain, h):
    """Interior lattice nodes of ``domain`` at spacing ``h``."""
    if h <= 0:
        raise InvalidDomainError("grid spacing must be positive")
    lo, hi = domain.bounds()
    klo = np.floor(lo / h).astype(int) - 1
    khi = np.ceil(hi / h).astype(int) + 1
    axes = [np.arange(a, b + 1) for a, b in zip(klo, khi)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    pts = mesh * h
    inside = geometry.contains(domain, pts)
    idx = mesh[inside]
    nodes = pts[inside]
    if len(nodes) < 9:
        raise InvalidDomainError(f"grid has {len(nodes)} nodes (< 9); refine h")
    delta = geometry.distance_to_boundary(domain, nodes)
    keep = delta > 0
    idx, nodes, delta = idx[keep], nodes[keep], delta[keep]
    shape = tuple(khi - klo + 1)
    lookup = -np.ones(shape, dtype=np.int64)
    lookup[tuple((idx - klo).T)] = np.arange(len(idx))
    nbrs = np.empty((len(idx), 2 * domain.dim), dtype=np.int64)
    for d in range(domain.dim):
        for s, sign in enumerate((-1, 1)):
            k = idx - klo
            k[:, d] += sign
            nbrs[:, 2 * d + s] = lookup[tuple(k.T)]
    return GridDomain(domain, float(h), nodes, idx, delta, lookup, klo, nbrs)


# -- potentials ---------------------------------------------------------

POTENTIAL_KINDS = ("zero", "constant", "hardy", "power-law", "cone-restricted",
                   "indicator-scaled", "scaled")


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Declarative nonnegative potential.

    ``params`` by kind: constant -> kappa; hardy -> kappa (``kappa / delta**2``);
    power-law -> kappa, s, center (``kappa |x - center|**-s``);
    cone-restricted -> inner, cone; indicator-scaled -> region, kappa;
    scaled -> inner, factor.  ``a`` is the class bound checked at evaluation.
    """

    kind: str
    params: dict = field(default_factory=dict)
    a: float | None = None

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")

    # constructors read better at call sites
    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, kappa, a=None):
        return cls("constant", {"kappa": float(kappa)}, a)

    @classmethod
    def hardy(cls, kappa, a=None):
        return cls("hardy", {"kappa": float(kappa)}, a)

    @classmethod
    def power_law(cls, kappa, s, center, a=None):
        return cls("power-law", {"kappa": float(kappa), "s": float(s),
                                 "center": np.asarray(center, float)}, a)

    @classmethod
    def cone_restricted(cls, inner, cone, a=None):
        return cls("cone-restricted", {"inner": inner, "cone": cone}, a)

    @classmethod
    def indicator(cls, region, kappa, a=None):
        return cls("indicator-scaled", {"region": region, "kappa": float(kappa)}, a)

    @classmethod
    def scaled(cls, inner, factor, a=None):
        return cls("scaled", {"inner": inner, "factor": float(factor)}, a)

    def values(self, nodes, delta):
        """Raw nodal values (no class check)."""
        k, p = self.kind, self.params
        if k == "zero":
            return np.zeros(len(nodes))
        if k == "constant":
            return np.full(len(nodes), p["kappa"])
        if k == "hardy":
            return p["kappa"] / delta ** 2
        if k == "power-law":
            r = np.linalg.norm(nodes - p["center"], axis=1)
            with np.errstate(divide="ignore"):
                return p["kappa"] * r ** (-p["s"])
        if k == "cone-restricted":
            inside = p["cone"].contains(nodes)
            out = np.zeros(len(nodes))
            out[inside] = p["inner"].values(nodes[inside], delta[inside])
            return out
        if k == "indicator-scaled":
            region = p["region"]
            inside = (region.contains(nodes) if hasattr(region, "contains")
                      else geometry.contains(region, nodes))
            return np.where(inside, p["kappa"], 0.0)
        return p["factor"] * p["inner"].values(nodes, delta)

    def evaluate(self, grid):
        v = self.values(grid.nodes, grid.delta)
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise PotentialClassError(f"{self.kind} potential is not finite and nonnegative on the grid")
        if self.a is not None:
            excess = v * grid.delta ** 2
            worst = int(np.argmax(excess))
            if excess[worst] > self.a * (1 + 1e-12):
                raise PotentialClassError(
                    f"V*delta^2 = {excess[worst]:.4g} > a = {self.a} at node "
                    f"{grid.nodes[worst].tolist()}")
        return v


# -- operators ----------------------------------------------------------

@dataclass(eq=False)
class EllipticOperator:
    """Coefficients, lower-order term ``gamma`` and potential ``V`` on a grid.

    ``coeffs`` is None (identity), a constant symmetric (N, N) array, or a
    callable mapping points (M, N) to (M, N, N).
    """

    grid: GridDomain
    coeffs: object = None
    gamma: np.ndarray = None
    V: np.ndarray = None
    c0: float = 1.0
    a: float | None = None

    @property
    def R(self):
        """``V - gamma``."""
        return self.V - self.gamma

    def coeff_at(self, pts):
        pts = np.atleast_2d(pts)
        dim = pts.shape[1]
        if self.coeffs is None:
            return np.broadcast_to(np.eye(dim), (len(pts), dim, dim))
        if callable(self.coeffs):
            return np.asarray(self.coeffs(pts), float)
        return np.broadcast_to(np.asarray(self.coeffs, float), (len(pts), dim, dim))

    @property
    def is_identity(self):
        return self.coeffs is None or (not callable(self.coeffs)
                                       and np.array_equal(self.coeffs, np.eye(self.grid.dim)))

    def with_potential(self, V=None, gamma=None):
        """Copy with new ``V`` and/or ``gamma`` (arrays or PotentialSpec)."""
        return make_operator(self.grid, self.coeffs,
                             gamma=self.gamma if gamma is None else gamma,
                             V=self.V if V is None else V, a=self.a)


def _as_field(grid, spec):
    if spec is None:
        return np.zeros(grid.n)
    if isinstance(spec, PotentialSpec):
        return spec.evaluate(grid)
    return grid.field(spec)


def make_operator(grid, coeffs=None, gamma=None, V=None, a=None):
    """Validated EllipticOperator; ``gamma``/``V`` may be PotentialSpec or arrays."""
    gamma_v = _as_field(grid, gamma)
    V_v = _as_field(grid, V)
    if np.any(gamma_v < 0):
        raise PotentialClassError("gamma must be nonnegative")
    if np.any(gamma_v > V_v * (1 + 1e-12) + 1e-300):
        raise PotentialClassError("need gamma <= V nodewise")
    if a is not None and np.any(V_v * grid.delta ** 2 > a * (1 + 1e-12)):
        raise PotentialClassError(f"V exceeds a/delta^2 with a={a}")
    if coeffs is not None and not callable(coeffs):
        coeffs = np.asarray(coeffs, float)
        if coeffs.shape != (grid.dim, grid.dim):
            raise AssemblyError("constant coefficients must be an (N, N) matrix")
    op = EllipticOperator(grid, coeffs, gamma_v, V_v, 1.0, a)
    mats = op.coeff_at(grid.nodes)
    if not np.allclose(mats, np.swapaxes(mats, 1, 2), atol=0, rtol=0):
        raise AssemblyError("coefficient matrix a_ij must be symmetric")
    eig = np.linalg.eigvalsh(mats)
    if np.any(eig <= 0):
        raise AssemblyError("coefficients are not uniformly elliptic")
    op.c0 = float(max(eig.max(), 1.0 / eig.min()))
    return op


MODES = ("L0", "L1", "laplacian")


@dataclass(eq=False)
class LinearSystem:
    """Assembled SPD system plus a lazily built factorization."""

    grid: GridDomain
    matrix: sp.csc_matrix
    mode: str
    zeroth: np.ndarray
    symmetric: bool = True
    _lu: object = field(default=None, repr=False)

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def shortley_weller(self):
        return not self.symmetric

    def factor(self):
        if self._lu is None and not self.symmetric:
            self._lu = spla.splu(self.matrix, permc_spec="COLAMD")
        if self._lu is None and self.n <= DIRECT_LIMIT:
            try:
                lu = spla.splu(self.matrix, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                               options=dict(SymmetricMode=True))
            except RuntimeError as exc:  # singular factor
                raise AssemblyError(f"factorization failed: {exc}") from exc
            piv = lu.U.diagonal()
            if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
                raise AssemblyError("assembled matrix is not positive definite "
                                    f"(min pivot {piv.min():.3g})")
            self._lu = lu
        return self._lu

    def solve(self, rhs, rtol=1e-10, maxiter=None):
        return solve(self, rhs, rtol=rtol, maxiter=maxiter)


def _links(grid, shortley_weller=False):
    """Per-direction ``(neighbor ids, arm lengths)``; arms are ``h`` except on
    missing links under Shortley-Weller, where they reach the boundary."""
    key = ("links", shortley_weller)
    cache = grid.__dict__.setdefault("_cache", {})
    if key in cache:
        return cache[key]
    out = []
    for d in range(grid.dim):
        for s, sign in enumerate((-1, 1)):
            nb = grid.neighbors[:, 2 * d + s]
            arm = np.full(grid.n, grid.h)
            if shortley_weller:
                miss = nb < 0
                arm[miss] = geometry.axis_crossing(grid.domain, grid.nodes[miss], d, sign, grid.h)
                arm[miss] = np.maximum(arm[miss], 1e-3 * grid.h)
            out.append((nb, arm))
    cache[key] = out
    return out


def _diag_stencil(grid, op, shortley_weller=False):
    """Rows, cols and values of the flux-form second-order part."""
    n, dim = grid.n, grid.dim
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    links = _links(grid, shortley_weller)
    for d in range(dim):
        (nbl, hl), (nbr, hr) = links[2 * d], links[2 * d + 1]
        for nb, arm, other, sign in ((nbl, hl, hr, -1), (nbr, hr, hl, 1)):
            e = np.zeros(dim)
            e[d] = 0.5 * sign * grid.h
            a = op.coeff_at(grid.nodes + e)[:, d, d]
            w = 2 * a / (arm * (arm + other))
            diag += w
            ok = nb >= 0
            rows.append(np.flatnonzero(ok))
            cols.append(nb[ok])
            vals.append(-w[ok])
    return rows, cols, vals, diag


def _cross_stencil(grid, op):
    """Mixed-derivative terms ``-2 a_ij d_i d_j`` (i < j) on the four diagonal
    neighbors; the coefficient on each link is averaged over its endpoints so
    the matrix stays symmetric."""
    h2 = grid.h ** 2
    dim = grid.dim
    rows, cols, vals = [], [], []
    mats = op.coeff_at(grid.nodes)
    for i in range(dim):
        for j in range(i + 1, dim):
            aij = mats[:, i, j]
            if not np.any(aij):
                continue
            for si, sj, sign in ((1, 1, -1), (-1, -1, -1), (1, -1, 1), (-1, 1, 1)):
                k = grid.index.copy()
                k[:, i] += si
                k[:, j] += sj
                kk = k - grid.offset
                ok = np.all((kk >= 0) & (kk < grid.lookup.shape), axis=1)
                nb = -np.ones(grid.n, dtype=np.int64)
                nb[ok] = grid.lookup[tuple(kk[ok].T)]
                has = nb >= 0
                p = np.flatnonzero(has)
                q = nb[has]
                coef = 0.5 * (aij[p] + aij[q])
                rows.append(p)
                cols.append(q)
                vals.append(sign * coef / (2 * h2))
    return rows, cols, vals


def assemble(grid, op, mode="L1", shortley_weller=False):
    """Sparse matrix for ``-L + gamma`` (L0), ``-L + V`` (L1) or ``-Delta``.

    The default node-exclusion assembly is symmetric positive definite.  With
    ``shortley_weller=True`` the arms of boundary links are shortened to the
    true crossing distance: second-order boundary accuracy, but the matrix is
    no longer symmetric (identity-diagonal coefficients only).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if op is not None and op.grid is not grid:
        if op.grid.n != grid.n or not np.array_equal(op.grid.index, grid.index):
            raise AssemblyError("operator and grid have different node sets")
    if mode == "laplacian" or op is None:
        base = EllipticOperator(grid)
        zeroth = np.zeros(grid.n)
    else:
        base = op
        zeroth = op.gamma if mode == "L0" else op.V
    rows, cols, vals, diag = _diag_stencil(grid, base, shortley_weller)
    if shortley_weller and not base.is_identity:
        mats = base.coeff_at(grid.nodes)
        off = mats - np.einsum("nii->ni", mats)[:, :, None] * np.eye(grid.dim)
        if np.any(off):
            raise AssemblyError("Shortley-Weller assembly supports diagonal coefficients only")
    elif not base.is_identity:
        r2, c2, v2 = _cross_stencil(grid, base)
        rows += r2
        cols += c2
        vals += v2
    n = grid.n
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag + zeroth)
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsc()
    A.sum_duplicates()
    return LinearSystem(grid, A, mode, np.asarray(zeroth, float), symmetric=not shortley_weller)


def solve(system, rhs, rtol=1e-10, maxiter=None):
    """Solve ``A u = rhs`` (rhs may be (n,) or (n, k)); checks the residual."""
    b = np.asarray(rhs, float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side must be finite")
    A = system.matrix
    nb = np.linalg.norm(b, axis=0)
    if np.all(nb == 0):
        return np.zeros_like(b)
    lu = system.factor()
    if lu is not None:
        u = lu.solve(b)
    else:
        u = _pcg(A, b, rtol, maxiter)
    res = np.linalg.norm(A @ u - b, axis=0) / np.where(nb > 0, nb, 1.0)
    worst = float(np.max(res))
    if worst > rtol:
        # one step of iterative refinement before giving up
        if lu is not None:
            u = u + lu.solve(b - A @ u)
            worst = float(np.max(np.linalg.norm(A @ u - b, axis=0) / np.where(nb > 0, nb, 1.0)))
        if worst > rtol:
            raise SolverError(f"relative residual {worst:.3g} exceeds {rtol:g}", residual=worst)
    return u


def _pcg(A, b, rtol, maxiter):
    dinv = 1.0 / A.diagonal()
    M = spla.LinearOperator(A.shape, matvec=lambda x: dinv * x, dtype=float)
    maxiter = maxiter or 20 * A.shape[0]
    cols = b.reshape(len(b), -1)
    out = np.empty_like(cols)
    for k in range(cols.shape[1]):
        x, info = spla.cg(A, cols[:, k], rtol=0.1 * rtol, atol=0.0, M=M, maxiter=maxiter)
        if info != 0:
            res = np.linalg.norm(A @ x - cols[:, k]) / np.linalg.norm(cols[:, k])
            raise SolverError(f"CG stopped after {info} iterations, residual {res:.3g}", residual=res)
        out[:, k] = x
    return out.reshape(b.shape)


def dirichlet_rhs(grid, g, op=None, shortley_weller=False):
    """Right-hand side imposing Dirichlet data ``g`` on the missing links.

    ``g`` maps boundary points (M, N) to values; each missing link carries the
    value at the point where it crosses the boundary.  Returns
    ``(rhs, crossing_points, owner_nodes)``.
    """
    base = op if op is not None else EllipticOperator(grid)
    rhs = np.zeros(grid.n)
    ghosts, owners = [], []
    links = _links(grid, shortley_weller)
    for d in range(grid.dim):
        (nbl, hl), (nbr, hr) = links[2 * d], links[2 * d + 1]
        for nb, arm, other, sign in ((nbl, hl, hr, -1), (nbr, hr, hl, 1)):
            miss = np.flatnonzero(nb < 0)
            if miss.size == 0:
                continue
            reach = geometry.axis_crossing(grid.domain, grid.nodes[miss], d, sign, grid.h)
            bp = grid.nodes[miss].copy()
            bp[:, d] += sign * reach
            e = np.zeros(grid.dim)
            e[d] = 0.5 * sign * grid.h
            a = base.coeff_at(grid.nodes[miss] + e)[:, d, d]
            w = 2 * a / (arm[miss] * (arm[miss] + other[miss]))
            np.add.at(rhs, miss, w * np.asarray(g(bp), float))
            ghosts.append(bp)
            owners.append(miss)
    if not ghosts:
        raise FineRegError("grid has no boundary-adjacent nodes")
    return rhs, np.vstack(ghosts), np.concatenate(owners)
