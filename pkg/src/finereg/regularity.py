"""Fine-regularity criteria with dyadic-shell divergence diagnostics.

Every integral criterion is reduced to nodal summands (already ``h^N``
weighted) and a distance to the boundary point.  Shells
``2^(-k-1) <= |x - y| < 2^(-k)`` with ``2^(-k) >= 8h`` are resolvable; the
per-shell ratio ``q`` is fitted on the last few of them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import FineRegError, InvalidConeError, InvalidDomainError, PotentialClassError
from .greens import BoundarySet, Workspace, harmonic_measure
from .kernels import c_weight, cone_t_samples, martin_kernel, ray_nodes
from .operators import build_grid, make_operator

log = logging.getLogger(__name__)

REGULAR, SINGULAR, INCONCLUSIVE = "regular", "singular", "inconclusive"
CRITERIA = ("integral-KyV", "integral-Ky", "smooth-explicit", "cone-test", "green-ratio",
            "martin-ratio", "c-weight", "relative-R")
CLASSIFY_CRITERIA = ("integral-Ky", "integral-KyV", "green-ratio", "martin-ratio", "c-weight")


@dataclass(frozen=True)
class Thresholds:
    q_reg: float = 0.8
    q_sing: float = 0.95
    min_shells: int = 4
    fit_shells: int = 4
    onset: float = 0.1            # leading shells below onset * next shell lie outside the support
    resolve: float = 8.0          # shells need 2^-k >= resolve * h
    ratio_factor: float = 4.0     # growth/decay factor for ratio verdicts
    stable_tol: float = 0.2
    stable_floor: float = 0.01
    c_sing: float = 0.05
    c_reg: float = 0.15
    c_decay: float = 0.7          # c(h)/c(2h) at or below: c is draining to 0
    c_stable: float = 0.9         # c(h)/c(2h) at or above: c has settled
    t_max: float = 0.25
    t_min_factor: float = 4.0


DEFAULT = Thresholds()


@dataclass(eq=False)
class CriterionReport:
    criterion: str
    y: np.ndarray
    k: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    r_lo: np.ndarray = field(default_factory=lambda: np.zeros(0))
    r_hi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    shells: np.ndarray = field(default_factory=lambda: np.zeros(0))
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    q: float = float("nan")
    total: float = 0.0
    extrapolated: float = 0.0
    layer: float = 0.0
    unresolved: float = 0.0
    verdict: str = INCONCLUSIVE
    ts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    extras: dict = field(default_factory=dict)

    def same_as(self, other, ignore=("criterion",)):
        """Field-by-field equality (arrays compared exactly)."""
        for name in self.__dataclass_fields__:
            if name in ignore:
                continue
            a, b = getattr(self, name), getattr(other, name)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if not np.array_equal(a, b, equal_nan=True):
                    return False
            elif isinstance(a, float) and np.isnan(a):
                if not (isinstance(b, float) and np.isnan(b)):
                    return False
            elif a != b:
                return False
        return True


# -- shell analysis --------------------------------------------------------

def fit_ratio(S):
    """``exp`` of the least-squares slope of ``log S_k`` against ``k``."""
    S = np.asarray(S, float)
    k = np.arange(len(S), dtype=float)
    slope = np.polyfit(k, np.log(S), 1)[0]
    return float(np.exp(slope))


def verdict_from_q(q, th):
    if not np.isfinite(q):
        return INCONCLUSIVE
    if q <= th.q_reg:
        return REGULAR
    if q >= th.q_sing:
        return SINGULAR
    return INCONCLUSIVE


def shell_analysis(criterion, y, summand, dist, h, layer=None, th=DEFAULT, extras=None):
    """Dyadic shell table, fitted ratio and verdict for nodal ``summand``.

    ``layer`` marks nodes whose mass is reported separately.  Mass closer to
    ``y`` than the last resolvable shell is ``unresolved``; the extrapolated
    total replaces it with the geometric tail ``S_last q / (1 - q)``.
    Leading shells much lighter than their inner neighbour only catch the
    edge of the summand's support; they are tabulated but neither fitted
    nor counted towards ``min_shells``.
    """
    summand = np.asarray(summand, float)
    if np.any(summand < 0):
        raise ValueError("shell summands must be nonnegative")
    layer = np.zeros(len(summand), bool) if layer is None else np.asarray(layer, bool)
    keep = ~layer
    d = np.asarray(dist, float)
    layer_mass = float(np.sum(summand[layer]))
    total = float(np.sum(summand[keep]))
    dmax = float(d.max()) if len(d) else 1.0
    k0 = int(np.floor(-np.log2(dmax)))
    kmax = int(np.floor(-np.log2(th.resolve * h)))
    ks = np.arange(k0, kmax + 1)
    r_hi = 2.0 ** (-ks.astype(float))
    r_lo = r_hi / 2
    # dyadic index of each node; nodes beyond 2^-k0 cannot occur by construction
    with np.errstate(divide="ignore"):
        kk = np.floor(-np.log2(d)).astype(np.int64)
    S = np.zeros(len(ks))
    counts = np.zeros(len(ks), int)
    for i, k in enumerate(ks):
        sel = keep & (kk == k)
        counts[i] = int(sel.sum())
        S[i] = float(np.sum(summand[sel]))
    inner = keep & (kk > kmax)
    unresolved = float(np.sum(summand[inner]))
    rep = CriterionReport(criterion, np.asarray(y, float), ks, r_lo, r_hi, S, counts,
                          total=total, layer=layer_mass, unresolved=unresolved,
                          extras=dict(extras or {}))
    if total == 0.0 and layer_mass == 0.0:
        rep.q = 0.0
        rep.extrapolated = 0.0
        rep.verdict = REGULAR
        return rep
    start = 0
    while start < len(S) - 1 and S[start] < th.onset * S[start + 1]:
        start += 1
    if len(ks) - start < th.min_shells:
        rep.extrapolated = float("nan")
        rep.verdict = INCONCLUSIVE
        rep.extras["reason"] = f"only {len(ks) - start} resolvable shells inside the support"
        return rep
    window = S[max(start, len(S) - th.fit_shells):]
    if np.all(window == 0):
        q = 0.0
    elif np.any(window == 0):
        # support ends inside the window: treat as decaying if the tail is empty
        q = 0.0 if window[-1] == 0 else fit_ratio(window[window > 0])
    else:
        q = fit_ratio(window)
    rep.q = q
    resolved = total - unresolved
    rep.extrapolated = resolved + S[-1] * q / (1 - q) if q < 1 else float("inf")
    rep.verdict = verdict_from_q(q, th)
    return rep


# -- per-point context -------------------------------------------------------

class PointAnalysis:
    """Martin kernels, Green columns and c(y) for one boundary point, cached."""

    def __init__(self, ws, point, th=DEFAULT):
        self.ws = ws
        self.point = point
        self.th = th
        self._martin = {}
        self._c = None

    @property
    def grid(self):
        return self.ws.grid

    def martin(self, mode):
        if mode not in self._martin:
            t_min = self.th.t_min_factor * self.grid.h
            t_max = max(min(self.point.eta, self.th.t_max), t_min)
            self._martin[mode] = martin_kernel(self.ws, mode, self.point, t_min=t_min,
                                               t_max=t_max)
        return self._martin[mode]

    def c(self):
        if self._c is None:
            self._c = c_weight(self.ws, martin=self.martin("L0"))
        return self._c

    def c_coarse(self):
        """``c(y)`` on the ``2h`` sublattice, or None if that grid is too coarse."""
        if not hasattr(self, "_c2"):
            self._c2 = None
            try:
                ws2 = self.ws.coarsened()
                h2 = ws2.grid.h
                t_min = self.th.t_min_factor * h2
                t_max = max(min(self.point.eta, self.th.t_max), t_min)
                m = martin_kernel(ws2, "L0", self.point, t_min=t_min, t_max=t_max)
                self._c2 = c_weight(ws2, martin=m).value
            except FineRegError as exc:
                log.info("no coarse c(y) at y=%s: %s", self.point.y, exc)
        return self._c2

    def dist(self):
        return np.linalg.norm(self.grid.nodes - self.point.y, axis=1)

    def ts(self):
        """Ray samples from far to near (the order of approach)."""
        h = self.grid.h
        t_max = max(min(self.point.eta, self.th.t_max), self.th.t_min_factor * h)
        return cone_t_samples(h, t_max, self.th.t_min_factor * h)[::-1]


def _as_point(ws, point, th):
    if isinstance(point, PointAnalysis):
        return point
    if not isinstance(point, geometry.BoundaryPoint):
        x0 = ws.grid.nodes[ws.x0]
        point = geometry.boundary_point(ws.grid.domain, point, x0=x0)
    return PointAnalysis(ws, point, th)


def ray_integral(pa):
    """``int t V(y + t nu) dt`` over the ray samples (log-spaced rule)."""
    ts = pa.ts()[::-1]
    nodes = ray_nodes(pa.grid, pa.point.y, pa.point.nu, ts)
    V = pa.ws.op.V[nodes]
    return float(np.sum(ts ** 2 * V) * np.log(2.0))


# -- integral criteria -------------------------------------------------------

def _green_martin_integral(pa, criterion, kernel_mode, weight):
    grid = pa.grid
    g = pa.ws.green("L0", pa.ws.x0).values
    K = pa.martin(kernel_mode).field
    summand = grid.cell * g * weight * K
    extras = {"ray_integral": ray_integral(pa)}
    return shell_analysis(criterion, pa.point.y, summand, pa.dist(), grid.h, grid.layer,
                          pa.th, extras)


def criterion_integral_Ky(ws, point, which="Ky", th=DEFAULT):
    """``h^N sum G(x0, x) V(x) K(x)`` with ``K = K_y`` or ``K_y^V``."""
    pa = _as_point(ws, point, th)
    if which not in ("Ky", "KyV"):
        raise ValueError("which must be 'Ky' or 'KyV'")
    mode = "L0" if which == "Ky" else "L1"
    return _green_martin_integral(pa, f"integral-{which}", mode, pa.ws.op.V)


def criterion_relative(ws, point, th=DEFAULT):
    """``h^N sum G0(x0, x) R(x) K_y(x)`` with ``R = V - gamma`` and L0 kernels."""
    pa = _as_point(ws, point, th)
    op = pa.ws.op
    if np.any(op.gamma > op.V * (1 + 1e-12) + 1e-300):
        raise PotentialClassError("relative criterion needs gamma <= V")
    return _green_martin_integral(pa, "relative-R", "L0", op.R)


def criterion_smooth_explicit(grid, point, V, th=DEFAULT):
    """Shells of ``h^N delta^2 |x-y|^-N V`` (no PDE solve, disk only)."""
    if grid.domain.kind not in ("disk", "ball"):
        raise InvalidDomainError("the explicit criterion is only supported on the disk or ball")
    y = point.y if isinstance(point, geometry.BoundaryPoint) else np.asarray(point, float)
    Vv = V.evaluate(grid) if hasattr(V, "evaluate") else np.asarray(V, float)
    dist = np.linalg.norm(grid.nodes - y, axis=1)
    summand = grid.cell * grid.delta ** 2 * dist ** (-grid.dim) * Vv
    return shell_analysis("smooth-explicit", y, summand, dist, grid.h, grid.layer, th)


def criterion_cone_test(cone, V, domain, h, th=DEFAULT, n_r=24, n_phi=48):
    """Shells of ``int_C V |x-y|^(2-N) dx`` by polar Gauss quadrature (N = 2).

    ``h`` only sets which shells count as resolvable, so the verdict is
    comparable with the grid criteria at the same spacing.
    """
    if len(cone.vertex) != 2:
        raise InvalidDomainError("cone test quadrature is implemented for N = 2")
    if cone.margin_in(domain) <= 0:
        raise InvalidConeError("cone is not contained in the domain")
    y = cone.vertex
    xr, wr = np.polynomial.legendre.leggauss(n_r)
    xp, wp = np.polynomial.legendre.leggauss(n_phi)
    half = np.arctan(cone.aperture)
    base = np.arctan2(cone.axis[1], cone.axis[0])
    phi = base + half * xp
    k0 = int(np.floor(-np.log2(cone.height / np.cos(half))))
    kmax = int(np.floor(-np.log2(th.resolve * h)))
    ks = np.arange(k0, kmax + 1)
    S = np.zeros(len(ks))
    for i, k in enumerate(ks):
        lo, hi = 2.0 ** (-k - 1), 2.0 ** (-k)
        r = 0.5 * (hi + lo) + 0.5 * (hi - lo) * xr
        R, P = np.meshgrid(r, phi, indexing="ij")
        pts = y + np.column_stack([(R * np.cos(P)).ravel(), (R * np.sin(P)).ravel()])
        inside = cone.contains(pts)
        vals = np.zeros(len(pts))
        if np.any(inside):
            delta = geometry.distance_to_boundary(domain, pts[inside])
            vals[inside] = V.values(pts[inside], np.atleast_1d(delta))
        W = np.outer(wr * 0.5 * (hi - lo) * r, wp * half).ravel()
        # |x-y|^(2-N) = 1 in the plane; the Jacobian r is in W
        S[i] = float(np.sum(W * vals))
    # the summand already integrates each shell, so feed shell totals directly
    mid = 1.5 * 2.0 ** (-ks.astype(float) - 1)
    return shell_analysis("cone-test", y, S, mid, h, None, th,
                          {"aperture": cone.aperture, "height": cone.height})


# -- ratio criteria ----------------------------------------------------------

def _monotone(r, sign):
    d = np.diff(r) * sign
    return bool(np.all(d >= -1e-9 * np.abs(r[:-1])))


def _stable(r, th):
    tail = r[-3:]
    return bool(len(tail) == 3 and tail.min() > th.stable_floor
                and tail.max() <= (1 + th.stable_tol) * tail.min())


def ratio_report(criterion, y, ts, ratios, growth, th, extras=None):
    """Verdict for a ratio sequence ordered from far to near.

    ``growth = -1``: singular means decay by ``ratio_factor``;
    ``growth = +1``: singular means growth by ``ratio_factor``.
    """
    r = np.asarray(ratios, float)
    rep = CriterionReport(criterion, np.asarray(y, float), ts=np.asarray(ts, float),
                          ratios=r, extras=dict(extras or {}))
    if len(r) < 3 or not np.all(np.isfinite(r)):
        rep.verdict = INCONCLUSIVE
        return rep
    change = r[-1] / r[0]
    rep.q = float(change)
    rep.total = float(r[-1])
    rep.extrapolated = float(r[-1])
    if growth < 0 and _monotone(r, -1) and change <= 1 / th.ratio_factor:
        rep.verdict = SINGULAR
    elif growth > 0 and _monotone(r, 1) and change >= th.ratio_factor:
        rep.verdict = SINGULAR
    elif _stable(r, th):
        rep.verdict = REGULAR
    else:
        rep.verdict = INCONCLUSIVE
    return rep


def criterion_green_ratio(ws, point, th=DEFAULT):
    """``g^V_{x0} / g^0_{x0}`` along the pseudo-normal ray, far to near."""
    pa = _as_point(ws, point, th)
    ts = pa.ts()
    nodes = ray_nodes(pa.grid, pa.point.y, pa.point.nu, ts)
    gv = pa.ws.green("L1", pa.ws.x0).values[nodes]
    g0 = pa.ws.green("L0", pa.ws.x0).values[nodes]
    return ratio_report("green-ratio", pa.point.y, ts, gv / g0, -1, th)


def criterion_martin_ratio(ws, point, th=DEFAULT):
    """``K_y^V / K_y`` along the pseudo-normal ray, far to near."""
    pa = _as_point(ws, point, th)
    ts = pa.ts()
    nodes = ray_nodes(pa.grid, pa.point.y, pa.point.nu, ts)
    kv = pa.martin("L1").field[nodes]
    k0 = pa.martin("L0").field[nodes]
    return ratio_report("martin-ratio", pa.point.y, ts, kv / k0, +1, th)


def criterion_c_weight(ws, point, th=DEFAULT):
    """``c(y)`` on the grid and on the ``2h`` sublattice.

    Regularity means ``c(y) > 0`` in the limit, so the verdict follows the
    refinement trend: singular when ``c`` is small or shrinks geometrically,
    regular when it is sizeable and settled.  Shells of ``G^V(x0, .) R K_y``
    are reported but do not vote; they converge at singular points too.
    """
    pa = _as_point(ws, point, th)
    grid = pa.grid
    cw = pa.c()
    rep = shell_analysis("c-weight", pa.point.y, cw.summand, pa.dist(), grid.h, grid.layer, th)
    c_ext = 1.0 - rep.extrapolated if np.isfinite(rep.extrapolated) else -np.inf
    c_coarse = pa.c_coarse()
    trend = cw.value / c_coarse if c_coarse and c_coarse > 0 else np.nan
    rep.extras.update(c=cw.value, c_unclamped=cw.unclamped, c_extrapolated=float(c_ext),
                      potential=cw.potential, c_coarse=c_coarse, c_trend=float(trend))
    if cw.value < th.c_sing or (np.isfinite(trend) and trend <= th.c_decay):
        rep.verdict = SINGULAR
    elif cw.value > th.c_reg and (trend >= th.c_stable or cw.value >= 1.0):
        rep.verdict = REGULAR
    else:
        rep.verdict = INCONCLUSIVE
    return rep


RUNNERS = {
    "integral-Ky": lambda ws, pa, th: criterion_integral_Ky(ws, pa, "Ky", th),
    "integral-KyV": lambda ws, pa, th: criterion_integral_Ky(ws, pa, "KyV", th),
    "green-ratio": criterion_green_ratio,
    "martin-ratio": criterion_martin_ratio,
    "c-weight": criterion_c_weight,
    "relative-R": criterion_relative,
    "smooth-explicit": lambda ws, pa, th: criterion_smooth_explicit(ws.grid, pa.point, ws.op.V, th),
}


@dataclass(eq=False)
class Classification:
    verdict: str
    consistent: bool
    reports: dict
    votes: dict

    @property
    def unanimous(self):
        confident = [v for v in self.votes.values() if v != INCONCLUSIVE]
        return len(set(confident)) <= 1


def consolidate(reports):
    votes = {name: rep.verdict for name, rep in reports.items()}
    confident = [v for v in votes.values() if v != INCONCLUSIVE]
    n_reg, n_sing = confident.count(REGULAR), confident.count(SINGULAR)
    consistent = not (n_reg and n_sing)
    if n_reg > n_sing:
        verdict = REGULAR
    elif n_sing > n_reg:
        verdict = SINGULAR
    else:
        verdict = INCONCLUSIVE
    return verdict, consistent, votes


def classify(ws, point, th=DEFAULT, criteria=CLASSIFY_CRITERIA):
    """Majority verdict of the confident criteria; disagreement is flagged."""
    pa = _as_point(ws, point, th)
    reports = {name: RUNNERS[name](ws, pa, th) for name in criteria}
    verdict, consistent, votes = consolidate(reports)
    if not consistent:
        log.warning("criteria disagree at y=%s: %s", pa.point.y, votes)
    return Classification(verdict, consistent, reports, votes)


# -- weighted energy localization ---------------------------------------------

@dataclass
class LocalizationResult:
    ratio: float
    per_trial: np.ndarray


def verify_weighted_energy_localization(chart, V, t, t_prime, h, trials=10, seed=0,
                                        coeffs=None, gamma=None):
    """Worst ``u(z1) sum_{U_t} v^2 R / (v(z1) sum_W v R u)`` over random pairs.

    ``u`` solves the L1 problem and ``v`` the L0 problem on the chart, both
    vanishing on the graph; ``R = V - gamma``.  Layer nodes are excluded.
    """
    from .kernels import chart_solutions

    if not 0 < t < t_prime <= 1:
        raise ValueError("need 0 < t < t' <= 1")
    grid = build_grid(chart, h)
    op = make_operator(grid, coeffs=coeffs, gamma=gamma, V=V)
    ws = Workspace(grid, op)
    R = op.R
    z1 = grid.nearest_node([0.0, 0.5 * (t + t_prime) * chart.rho])
    keep = ~grid.layer
    Ut = chart.in_T(grid.nodes, t) & keep
    W = chart.in_T(grid.nodes, t_prime) & keep
    us = chart_solutions(ws, chart, trials, seed, "L1")
    vs = chart_solutions(ws, chart, trials, seed + 7919, "L0")
    out = []
    for u, v in zip(us, vs):
        lhs = u[z1] * grid.cell * np.sum(v[Ut] ** 2 * R[Ut])
        rhs = v[z1] * grid.cell * np.sum(v[W] * R[W] * u[W])
        out.append(0.0 if lhs == 0 else lhs / rhs)
    out = np.array(out)
    return LocalizationResult(float(out.max()), out)


# -- almost-everywhere criteria ---------------------------------------------------

@dataclass(eq=False)
class AEReport:
    harmonic_measure_test: CriterionReport
    cone_union_test: CriterionReport
    sampled: list
    fraction_regular: float
    fraction_singular: float
    consistent: bool


def _distance_to_set(nodes, samples):
    out = np.empty(len(nodes))
    for s in range(0, len(nodes), 4096):
        d = np.linalg.norm(nodes[s:s + 4096, None, :] - samples[None], axis=2)
        out[s:s + 4096] = d.min(axis=1)
    return out


def ae_regularity_tests(ws, kset, K=0.5, ell=0.25, n_points=20, th=DEFAULT, n_cones=None):
    """Harmonic-measure and cone-union integrals plus sampled classification.

    The harmonic-measure integral ``sum w^K G(x0, .) V`` is analysed in shells
    of distance to ``kset``; the cone-union integral ``sum delta V`` over the
    union of cones at points of ``kset`` in shells of ``delta``.  The cone
    vertices are spaced about ``2h`` apart so the union has a full-width
    layer at every resolved scale.
    """
    grid = ws.grid
    domain = grid.domain
    x0 = grid.nodes[ws.x0]
    omega = harmonic_measure(ws, kset)
    g = ws.green("L0", ws.x0).values
    V = ws.op.V
    dense = kset.sample(2048, interior_fraction=1.0)
    dK = _distance_to_set(grid.nodes, dense)
    rep2 = shell_analysis("harmonic-measure", dense[len(dense) // 2],
                          grid.cell * omega * g * V, dK, grid.h, grid.layer, th)

    if n_cones is None:
        n_cones = max(8, int(np.ceil(kset.measure() / (2 * grid.h))))
    cps = [geometry.boundary_point(domain, p, x0=x0) for p in kset.sample(n_cones, interior_fraction=1.0)]
    sub = geometry.cone_union_subdomain(domain, cps, K, ell)
    inside = geometry.contains(sub, grid.nodes)
    rep3 = shell_analysis("cone-union", dense[len(dense) // 2],
                          grid.cell * np.where(inside, grid.delta * V, 0.0), grid.delta,
                          grid.h, grid.layer, th)

    sampled = []
    for p in kset.sample(n_points):
        bp = geometry.boundary_point(domain, p, x0=x0)
        sampled.append(classify(ws, bp, th))
    verdicts = [c.verdict for c in sampled]
    fr = verdicts.count(REGULAR) / len(verdicts)
    fs = verdicts.count(SINGULAR) / len(verdicts)
    return AEReport(rep2, rep3, sampled, fr, fs, all(c.consistent for c in sampled))


__all__ = ["Thresholds", "DEFAULT", "CriterionReport", "shell_analysis", "fit_ratio",
           "criterion_integral_Ky", "criterion_relative", "criterion_smooth_explicit",
           "criterion_cone_test", "criterion_green_ratio", "criterion_martin_ratio",
           "criterion_c_weight", "classify", "Classification", "consolidate",
           "verify_weighted_energy_localization", "ae_regularity_tests", "AEReport",
           "PointAnalysis", "ray_integral", "REGULAR", "SINGULAR", "INCONCLUSIVE",
           "CRITERIA", "CLASSIFY_CRITERIA"]
