"""Discrete réduites (obstacle problems), energy bounds and Hardy constants."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SolverError

log = logging.getLogger(__name__)


@dataclass(eq=False)
class ObstacleProblem:
    """Find the smallest ``s`` with ``A s >= 0`` and ``s >= w`` on ``region``.

    ``ws`` is a greens.Workspace; ``mode`` is "L0" or "laplacian".
    ``region`` is a boolean node mask and ``w`` a field (only its values on
    the region matter).
    """

    ws: object
    region: np.ndarray
    w: np.ndarray
    mode: str = "L0"

    def obstacle(self):
        psi = np.zeros(self.ws.grid.n)
        psi[self.region] = self.w[self.region]
        return psi


@dataclass(eq=False)
class ReduiteResult:
    s: np.ndarray
    active: np.ndarray
    energy: float
    iterations: int
    residual: float
    converged: bool
    history: list = field(default_factory=list, repr=False)


def _colors(grid, A):
    """Independent node classes for Gauss-Seidel sweeps.

    Parity classes of the lattice work for 5-point stencils; cross terms
    need the four (i mod 2, j mod 2) classes.
    """
    lat = np.rint(grid.nodes / grid.h).astype(np.int64)
    if np.all(A.diagonal() == 0):
        return [np.arange(grid.n)]
    for key in (lat.sum(axis=1) % 2, np.ravel_multi_index(tuple((lat % 2).T), (2,) * grid.dim)):
        classes = [np.flatnonzero(key == c) for c in np.unique(key)]
        if all(A[c][:, c].nnz == len(c) for c in classes):
            return classes
    raise SolverError("could not find an independent coloring for the stencil")


def complementarity(A, s, psi):
    """Nodewise ``min((A s)_i / A_ii, s_i - psi_i)`` in units of ``s``."""
    r = (A @ s) / A.diagonal()
    return np.minimum(r, s - psi)


def _equality_start(ws, problem, A, psi):
    """``s = w`` on the region and L-harmonic elsewhere.

    For an M-matrix and superharmonic ``w`` this already is the réduite, so
    the sweeps only confirm it; otherwise it is a good starting point.
    """
    free = np.flatnonzero(~problem.region)
    fixed = np.flatnonzero(problem.region)
    s = psi.copy()
    if len(free):
        Aff = sp.csc_matrix(A[free][:, free])
        rhs = -(A[free][:, fixed] @ psi[fixed])
        s[free] = np.maximum(spla.spsolve(Aff, rhs), 0.0)
    return s


def solve_reduite(problem, omega=1.5, tol=1e-9, max_sweeps=200000, s0=None):
    """Projected SOR for the discrete obstacle problem.

    Sweeps run over independent color classes, so each class update is a
    vectorized Gauss-Seidel step followed by the projection ``max(psi, .)``.
    Stops when the nodewise complementarity residual, relative to the
    largest obstacle value, is below ``tol``.  Starts from the equality
    solve unless ``s0`` is given.
    """
    ws = problem.ws
    grid = ws.grid
    psi = problem.obstacle()
    if np.any(psi < 0):
        raise ValueError("obstacle values must be nonnegative")
    A = sp.csr_matrix(ws.system(problem.mode).matrix)
    n = grid.n
    if not np.any(psi > 0):
        return ReduiteResult(np.zeros(n), np.zeros(n, bool), 0.0, 0, 0.0, True)
    diag = A.diagonal()
    colors = _colors(grid, A)
    blocks = [(c, A[c], diag[c]) for c in colors]
    if s0 is None:
        s0 = _equality_start(ws, problem, A, psi)
    s = np.maximum(np.asarray(s0, float), psi)
    # residual in units of the obstacle so tiny Green values do not pass trivially
    scale = float(psi.max())
    history = []
    res = np.inf
    it = 0
    for it in range(1, max_sweeps + 1):
        for c, Ac, dc in blocks:
            gs = s[c] - (Ac @ s) / dc
            s[c] = np.maximum(psi[c], (1 - omega) * s[c] + omega * gs)
        if it % 10 == 0 or it == 1:
            res = float(np.max(np.abs(complementarity(A, s, psi)))) / scale
            history.append(res)
            if res <= tol:
                break
    converged = res <= tol
    if not converged:
        log.warning("projected SOR stopped after %d sweeps, residual %.3g", it, res)
    energy = float(grid.cell * s @ (A @ s))
    active = problem.region & (s - psi <= 10 * tol * scale)
    return ReduiteResult(s, active, energy, it, res, converged, history)


def reduite_of_green(ws, pole, region, mode="L0", **kw):
    """Réduite of the Green column with pole ``pole`` on ``region``."""
    w = ws.green(mode, pole).values
    return solve_reduite(ObstacleProblem(ws, np.asarray(region, bool), w, mode), **kw)


@dataclass
class EnergyBound:
    ratio: float
    numerator: float
    reduite: float
    flagged: bool
    result: ReduiteResult = field(repr=False, default=None)


def verify_energy_bound(ws, pole, region, mode="L0", **kw):
    """``h^N sum_{A, delta >= 2h} (w/delta)^2`` over ``R_w^A(pole)``, ``w = G(., pole)``."""
    grid = ws.grid
    region = np.asarray(region, bool)
    if not np.any(region):
        return EnergyBound(0.0, 0.0, 0.0, False)
    w = ws.green(mode, pole).values
    keep = region & ~grid.layer
    num = float(grid.cell * np.sum((w[keep] / grid.delta[keep]) ** 2))
    res = solve_reduite(ObstacleProblem(ws, region, w, mode), **kw)
    den = float(res.s[pole])
    if den < 1e-300:
        flagged = num > 0
        return EnergyBound(np.inf if flagged else 0.0, num, den, flagged, res)
    return EnergyBound(num / den, num, den, False, res)


# -- Hardy constant ------------------------------------------------------

@dataclass
class HardyConstant:
    value: float
    eigenvalue: float
    eigenvector: np.ndarray = field(repr=False)
    residual: float


def hardy_forms(grid):
    """Stiffness (``h^N`` times the 5-point Laplacian) and ``delta^-2`` mass."""
    from .operators import assemble

    K = grid.cell * assemble(grid, None, "laplacian").matrix
    M = sp.diags(grid.cell / grid.delta ** 2)
    return sp.csc_matrix(K), sp.csc_matrix(M)


def estimate_hardy_constant(grid, tol=1e-10, maxiter=5000):
    """Best discrete constant in ``sum f^2/delta^2 <= C_H sum |grad f|^2``.

    ``C_H = 1/lambda_min`` for ``K f = lambda M f``.  The smallest eigenvalue
    comes from shift-invert Lanczos at zero, i.e. Krylov-accelerated inverse
    iteration.
    """
    if grid.n < 9:
        raise ValueError("grid needs at least 9 nodes")
    K, M = hardy_forms(grid)
    try:
        vals, vecs = spla.eigsh(K, k=1, M=M, sigma=0.0, which="LM", tol=tol, maxiter=maxiter)
    except spla.ArpackNoConvergence as exc:
        raise SolverError("Hardy eigen-iteration did not converge", residual=None) from exc
    lam = float(vals[0])
    v = vecs[:, 0]
    res = float(np.linalg.norm(K @ v - lam * (M @ v)) / max(np.linalg.norm(K @ v), 1e-300))
    if res > 1e-6:
        raise SolverError(f"Hardy eigen-iteration residual {res:.3g}", residual=res)
    return HardyConstant(1.0 / lam, lam, v, res)


def hardy_quotient(grid, f):
    """``sum f^2/delta^2 / sum |grad f|^2`` on the grid (both ``h^N``-weighted)."""
    K, M = hardy_forms(grid)
    f = np.asarray(f, float)
    return float(f @ (M @ f)) / float(f @ (K @ f))


__all__ = ["ObstacleProblem", "ReduiteResult", "solve_reduite", "reduite_of_green",
           "complementarity", "EnergyBound", "verify_energy_bound", "HardyConstant",
           "estimate_hardy_constant", "hardy_quotient", "hardy_forms"]
