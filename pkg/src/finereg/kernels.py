"""Martin kernels, the regularity weight c(y) and ratio sampling."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import PoleError
from .greens import Workspace, boundary_adjacent_pole
from .operators import build_grid, dirichlet_rhs, make_operator

log = logging.getLogger(__name__)

TINY = 1e-300


def t_sequence(t_max, t_min):
    """Geometric sequence ``t_max, t_max/2, ...`` stopping at ``t_min``."""
    if t_max < t_min:
        raise PoleError(f"t_max={t_max:.3g} is below t_min={t_min:.3g}")
    ts = [t_max]
    while ts[-1] / 2 >= t_min * (1 - 1e-12):
        ts.append(ts[-1] / 2)
    return np.array(ts)


@dataclass(eq=False)
class MartinApprox:
    """Green ratios ``G(x, y+t nu) / G(x0, y+t nu)`` and their boundary limit.

    ``field`` is the ratio for the pole at the boundary-adjacent node closest
    to ``y``, which is the discrete boundary limit of the sequence.  Per-t
    fields are kept for the Cauchy diagnostics.
    """

    point: geometry.BoundaryPoint
    mode: str
    x0: int
    ts: np.ndarray
    poles: np.ndarray
    fields: list
    field: np.ndarray
    limit_pole: int
    increments: np.ndarray = field(default=None)
    cauchy: bool = True

    def __call__(self, idx):
        return self.field[idx]


def _ratio(ws, mode, pole):
    g = ws.green(mode, pole).values
    return g / g[ws.x0]


def martin_kernel(ws, mode, point, t_min=None, t_max=None, far=0.25):
    """Martin kernel approximation at ``point`` for the given mode.

    Poles run along the pseudo-normal ray at ``t_max, t_max/2, ...`` down to
    ``t_min`` (default ``4h``).  Increments are measured at nodes farther than
    ``far`` from ``y``, relative to the field maximum there.
    """
    grid = ws.grid
    h = grid.h
    t_min = 4 * h if t_min is None else t_min
    if t_min < 4 * h * (1 - 1e-12):
        raise PoleError(f"t_min={t_min:.3g} is closer than 4h to the boundary")
    t_max = min(point.eta, 0.25 * grid.domain.diameter()) if t_max is None else t_max
    ts = t_sequence(t_max, t_min)
    poles = []
    for t in ts:
        z = point.ray(t)[0]
        if not geometry.contains(grid.domain, z)[0]:
            raise PoleError(f"pole y + {t:.3g} nu leaves the domain")
        poles.append(grid.nearest_node(z))
    poles = np.array(poles)
    if np.any(poles == ws.x0):
        raise PoleError("a pole coincides with the normalization point")
    fields = [_ratio(ws, mode, p) for p in poles]
    limit = boundary_adjacent_pole(grid, point.y)
    K = _ratio(ws, mode, limit)

    dist = np.linalg.norm(grid.nodes - point.y, axis=1)
    sel = dist >= far
    if not np.any(sel):
        sel = dist >= np.median(dist)
    seq = fields + [K]
    inc = np.array([np.max(np.abs(b[sel] - a[sel])) / max(np.max(b[sel]), TINY)
                    for a, b in zip(seq[:-1], seq[1:])])
    # only the tail is expected to contract; early poles sit deep inside
    cauchy = bool(len(inc) < 2 or inc[-1] <= inc[-2] * (1 + 1e-9))
    if not cauchy:
        log.info("Martin ratios are not contracting at y=%s: %s", point.y, inc)
    return MartinApprox(point, mode, ws.x0, ts, poles, fields, K, limit, inc, cauchy)


@dataclass
class CWeight:
    """``c(y)`` with the pieces of ``1 - G^V(R K_y)(x0)``."""

    value: float
    unclamped: float
    potential: float
    interior: float
    layer: float
    summand: np.ndarray = field(repr=False, default=None)


def c_weight(ws, point=None, martin=None):
    """Regularity weight from the Riesz decomposition of the L0 Martin kernel.

    ``c(y) = 1 - h^N sum G^V(x0, x) R(x) K_y(x)`` with ``R = V - gamma``.

    ``K_y`` is taken with its pole at the nearest approach point ``y + t_min nu``.
    On the grid the identity makes ``c`` equal to ``G^V(x0, z) / G(x0, z)`` at
    the pole ``z``; a boundary-adjacent pole would tie ``c`` to the (arbitrary)
    value of a Hardy-type ``V`` at a node almost on the boundary.
    """
    if martin is None:
        martin = martin_kernel(ws, "L0", point)
    grid = ws.grid
    R = ws.op.R
    if not np.any(R):
        z = np.zeros(grid.n)
        return CWeight(1.0, 1.0, 0.0, 0.0, 0.0, z)
    gv = ws.green("L1", ws.x0).values
    w = grid.cell * gv * R * martin.fields[-1]
    interior = float(np.sum(w[~grid.layer]))
    layer = float(np.sum(w[grid.layer]))
    pot = float(np.sum(w))
    c = 1.0 - pot
    return CWeight(float(np.clip(c, 0.0, 1.0)), c, pot, interior, layer, w)


@dataclass
class RatioSamples:
    ts: np.ndarray
    nodes: np.ndarray
    ratios: np.ndarray
    flagged: np.ndarray


def ray_nodes(grid, vertex, axis, ts):
    pts = np.asarray(vertex, float) + np.outer(ts, axis)
    return np.array([grid.nearest_node(p) for p in pts])


def ratio_along_cone(grid, fieldA, fieldB, cone, ts):
    """``fieldA / fieldB`` at the nodes nearest ``vertex + t axis``."""
    ts = np.asarray(ts, float)
    if np.any(ts <= 0) or np.any(ts >= cone.height):
        raise ValueError("t-samples must lie inside the cone height")
    nodes = ray_nodes(grid, cone.vertex, cone.axis, ts)
    a = np.asarray(fieldA, float)[nodes]
    b = np.asarray(fieldB, float)[nodes]
    flagged = np.abs(b) < TINY
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(flagged, np.nan, a / np.where(flagged, 1.0, b))
    return RatioSamples(ts, nodes, r, flagged)


def cone_t_samples(h, t_max=0.25, t_min=None):
    """Default sampling ``t_max, t_max/2, ...`` down to ``4h``, increasing."""
    return t_sequence(t_max, 4 * h if t_min is None else t_min)[::-1]


# -- boundary Harnack ----------------------------------------------------

def _free_boundary_param(chart, p):
    """Arclength position along ``∂U`` minus the graph, from the right foot."""
    r, rho = chart.r, chart.rho
    fr, fl = chart.f(r), chart.f(-r)
    s = np.empty(len(p))
    right = p[:, 0] >= r - 1e-12
    left = p[:, 0] <= -r + 1e-12
    top = ~right & ~left
    s[right] = p[right, 1] - fr
    s[top] = (rho - fr) + (r - p[top, 0])
    s[left] = (rho - fr) + 2 * r + (rho - p[left, 1])
    total = (rho - fr) + 2 * r + (rho - fl)
    return s / total


def random_chart_data(chart, rng, pieces=16, lo=0.1, hi=1.0):
    """Dirichlet data: zero on the graph, random piecewise constant elsewhere."""
    levels = rng.uniform(lo, hi, pieces)
    tol = 1e-9 * chart.rho

    def g(p):
        p = np.atleast_2d(p)
        free = (np.abs(p[:, 0]) >= chart.r - tol) | (p[:, 1] >= chart.rho - tol)
        out = np.zeros(len(p))
        s = _free_boundary_param(chart, p[free])
        out[free] = levels[np.clip((s * pieces).astype(int), 0, pieces - 1)]
        return out

    return g


@dataclass
class HarnackResult:
    constant: float
    mixed: float
    per_trial: np.ndarray
    per_trial_mixed: np.ndarray


def chart_solutions(ws, chart, trials, seed, mode):
    """Positive solutions vanishing on the graph, one per trial."""
    rng = np.random.default_rng(seed)
    sys = ws.system(mode)
    out = []
    for _ in range(trials):
        rhs, _, _ = dirichlet_rhs(ws.grid, random_chart_data(chart, rng),
                                  None if mode == "laplacian" else ws.op, ws.shortley_weller)
        out.append(sys.solve(rhs))
    return out


def verify_boundary_harnack(chart, h, V=None, trials=10, seed=0, coeffs=None, a=None):
    """Worst boundary Harnack constant over random pairs on ``U ∩ T(1/2)``.

    Pairs (u, v) are L_V-solutions with independent random data.  The mixed
    constant compares a V-solution against a harmonic one (one-sided bound).
    """
    grid = build_grid(chart, h)
    op = make_operator(grid, coeffs=coeffs, V=V, a=a)
    ws = Workspace(grid, op)
    A = grid.nearest_node(chart.anchor)
    sel = chart.in_T(grid.nodes, 0.5)
    us = chart_solutions(ws, chart, 2 * trials, seed, "L1")
    hs = chart_solutions(ws, chart, trials, seed + 1, "L0")
    per, mixed = [], []
    for k in range(trials):
        u, v = us[2 * k], us[2 * k + 1]
        q = (u[sel] / u[A]) / (v[sel] / v[A])
        per.append(max(q.max(), 1.0 / q.min()))
        m = (u[sel] / u[A]) / (hs[k][sel] / hs[k][A])
        mixed.append(m.max())
    per, mixed = np.array(per), np.array(mixed)
    return HarnackResult(float(per.max()), float(mixed.max()), per, mixed)


__all__ = ["MartinApprox", "martin_kernel", "c_weight", "CWeight", "ratio_along_cone",
           "RatioSamples", "verify_boundary_harnack", "HarnackResult", "random_chart_data",
           "chart_solutions", "t_sequence", "cone_t_samples", "ray_nodes"]
