"""Conditioned random walks (Doob h-transform) and their quadrature oracle.

Randomness is counter based: the uniform used by path ``i`` at step ``j``
is ``splitmix64(key_i + j * GOLDEN)`` with ``key_i`` mixing ``i`` into the
seed.  Each path owns its stream, so results do not depend on how paths are
split across threads.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InsufficientStatisticsError

log = logging.getLogger(__name__)

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
CHUNK = 4096


@dataclass(frozen=True)
class WalkConfig:
    hfield: np.ndarray
    y: np.ndarray
    eps: float
    x0: int
    paths: int = 10000
    seed: int = 0
    max_steps: int = 10 ** 6
    min_retained: int = 100


@dataclass
class WalkResult:
    mean: float
    stderr: float
    retained: int
    discarded: int
    mean_steps: float
    samples: np.ndarray


def _transition_table(grid, hfield):
    nb = grid.neighbors
    hv = np.where(nb >= 0, hfield[np.maximum(nb, 0)], 0.0)
    hv = np.maximum(hv, 0.0)
    tot = hv.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(hv, axis=1) / tot[:, None]
    return cum, tot > 0


def _splitmix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def path_keys(seed, paths):
    """Per-path stream keys: the path index mixed into the master seed."""
    with np.errstate(over="ignore"):
        i = np.arange(paths, dtype=np.uint64)
        return _splitmix(np.uint64(seed) * GOLDEN + _splitmix(i + GOLDEN))


def _uniform(keys, step):
    z = _splitmix(keys + step * GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def _simulate(grid, cfg, V, cum, alive_ok, absorb, keys):
    n = len(keys)
    dt = grid.h ** 2 / (2 * grid.dim)
    nb = grid.neighbors
    cur = np.full(n, cfg.x0, dtype=np.int64)
    acc = np.zeros(n)
    steps = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int8)   # 0 running, 1 reached y, 2 failed
    status[absorb[cur]] = 1
    run = np.flatnonzero(status == 0)
    with np.errstate(over="ignore"):
        for step in range(cfg.max_steps):
            if len(run) == 0:
                break
            c = cur[run]
            acc[run] += V[c] * dt
            u = _uniform(keys[run], np.uint64(step))
            j = np.minimum((u[:, None] >= cum[c]).sum(axis=1), nb.shape[1] - 1)
            nxt = nb[c, j]
            fail = ~alive_ok[c] | (nxt < 0)
            nxt = np.where(fail, c, nxt)
            cur[run] = nxt
            steps[run] += 1
            status[run[fail]] = 2
            status[run[~fail & absorb[nxt]]] = 1
            run = run[status[run] == 0]
    status[run] = 2
    return acc, status, steps


def conditioned_functional(grid, V, cfg, threads=1):
    """Mean and standard error of ``sum V(X) dt`` for the h-transformed walk.

    Paths stop when they enter the ball ``|X - y| < eps``.  A path that
    reaches a node without positive ``h`` neighbors or exceeds the step
    budget is discarded and counted.
    """
    V = np.asarray(V, float)
    hfield = np.asarray(cfg.hfield, float)
    if cfg.eps < 4 * grid.h * (1 - 1e-12):
        raise ValueError("eps must be at least 4h")
    if hfield[cfg.x0] <= 0:
        raise ValueError("h-field must be positive at the start node")
    if not np.any(V):
        return WalkResult(0.0, 0.0, cfg.paths, 0, 0.0, np.zeros(cfg.paths))
    absorb = np.linalg.norm(grid.nodes - cfg.y, axis=1) < cfg.eps
    cum, ok = _transition_table(grid, hfield)
    keys = path_keys(cfg.seed, cfg.paths)
    chunks = [keys[s:s + CHUNK] for s in range(0, cfg.paths, CHUNK)]

    def job(k):
        return _simulate(grid, cfg, V, cum, ok, absorb, k)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(k) for k in chunks]
    acc = np.concatenate([p[0] for p in parts])
    status = np.concatenate([p[1] for p in parts])
    steps = np.concatenate([p[2] for p in parts])
    good = status == 1
    kept = acc[good]
    if len(kept) < cfg.min_retained:
        raise InsufficientStatisticsError(
            f"only {len(kept)} of {cfg.paths} paths reached the ball around y")
    mean = float(np.mean(kept))
    se = float(np.std(kept, ddof=1) / np.sqrt(len(kept)))
    return WalkResult(mean, se, int(good.sum()), int((~good).sum()),
                      float(np.mean(steps[good])), kept)


def truncated_quadrature(grid, V, hfield, x0, y, eps):
    """``h^N sum G_eps(x0, x) h(x) V(x) / h(x0)`` with ``G_eps`` killed in the ball.

    This is the expected value of the walk functional: the simple walk's
    occupation numbers are ``(2N/h^2) G_eps h^N`` and the time step is
    ``h^2/(2N)``.
    """
    from .operators import assemble

    A = assemble(grid, None, "laplacian").matrix
    outside = np.linalg.norm(grid.nodes - y, axis=1) >= eps
    idx = np.flatnonzero(outside)
    pos = {int(j): i for i, j in enumerate(idx)}
    if x0 not in pos:
        raise ValueError("start node lies inside the truncation ball")
    A_eps = sp.csc_matrix(A[idx][:, idx])
    e = np.zeros(len(idx))
    e[pos[x0]] = 1.0 / grid.cell
    # A_eps is symmetric, so the row G(x0, .) equals the column
    g = spla.spsolve(A_eps, e)
    hv = np.asarray(hfield, float)
    return float(grid.cell * np.sum(g * hv[idx] * np.asarray(V, float)[idx]) / hv[x0])


__all__ = ["WalkConfig", "WalkResult", "conditioned_functional", "truncated_quadrature"]
