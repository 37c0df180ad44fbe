"""Planar Lipschitz domains, exact boundary distance, pseudo-normals and cones.

Supported domains are the unit disk (any center/radius), simple polygons,
graph charts ``U_f(r, rho)`` and, at coarse resolution only, the 3D ball and
box.  A graph chart is stored as the polygon it bounds, so every planar
non-disk domain shares one code path.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from matplotlib.path import Path as _MplPath

from .errors import DomainMembershipError, InvalidConeError, InvalidDomainError

_CHUNK = 4096
_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """A bounded open domain.

    ``kind`` is one of ``disk``, ``polygon``, ``lipschitz-graph``, ``ball``,
    ``box``.  Use the classmethod constructors rather than building this
    directly.
    """

    kind: str
    dim: int = 2
    center: np.ndarray | None = None
    radius: float = 1.0
    vertices: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    # lipschitz-graph chart data
    r: float | None = None
    rho: float | None = None
    f_samples: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    # -- constructors -------------------------------------------------
    @classmethod
    def disk(cls, center=(0.0, 0.0), radius=1.0):
        if radius <= 0:
            raise InvalidDomainError("disk radius must be positive")
        return cls("disk", 2, center=np.asarray(center, float), radius=float(radius))

    @classmethod
    def ball(cls, center=(0.0, 0.0, 0.0), radius=1.0):
        if radius <= 0:
            raise InvalidDomainError("ball radius must be positive")
        return cls("ball", 3, center=np.asarray(center, float), radius=float(radius))

    @classmethod
    def box(cls, lo, hi):
        lo = np.asarray(lo, float)
        hi = np.asarray(hi, float)
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise InvalidDomainError("box needs lo < hi componentwise")
        if lo.size == 2:
            verts = [(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])]
            return cls.polygon(verts)
        if lo.size != 3:
            raise InvalidDomainError("box must be 2D or 3D")
        return cls("box", 3, lo=lo, hi=hi)

    @classmethod
    def polygon(cls, vertices):
        v = np.asarray(vertices, float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise InvalidDomainError("polygon needs at least 3 planar vertices")
        if np.allclose(v[0], v[-1]):
            v = v[:-1]
        _check_simple_ccw(v)
        return cls("polygon", 2, vertices=v)

    @classmethod
    def lipschitz_graph(cls, r, rho, f, n=257):
        """Chart ``{|x'| < r, f(x') < x_N < rho}`` for a planar graph ``f``.

        ``f`` is a callable or a uniform sample array on ``[-r, r]`` (odd
        length, so that ``x' = 0`` is a sample).  Linear interpolation is
        used between samples.
        """
        r = float(r)
        rho = float(rho)
        if not (r > 0 and 10 * r < rho):
            raise InvalidDomainError(f"graph chart needs 10*r < rho (r={r}, rho={rho})")
        if callable(f):
            xs = np.linspace(-r, r, n)
            fs = np.asarray(f(xs), float)
        else:
            fs = np.asarray(f, float)
            xs = np.linspace(-r, r, len(fs))
        if len(fs) % 2 == 0 or len(fs) < 3:
            raise InvalidDomainError("graph samples must have odd length >= 3")
        if abs(fs[len(fs) // 2]) > 1e-12:
            raise InvalidDomainError("graph function must satisfy f(0) = 0")
        lip = float(np.max(np.abs(np.diff(fs) / np.diff(xs))))
        if lip > rho / (10 * r) + 1e-12:
            raise InvalidDomainError(
                f"Lip(f) = {lip:.4g} exceeds rho/(10 r) = {rho / (10 * r):.4g}")
        verts = np.vstack([np.column_stack([xs, fs]), [[r, rho], [-r, rho]]])
        return cls("lipschitz-graph", 2, vertices=verts, r=r, rho=rho, f_samples=fs,
                   meta={"lip": lip})

    # -- derived ------------------------------------------------------
    @property
    def is_polygonal(self):
        return self.kind in ("polygon", "lipschitz-graph")

    def bounds(self):
        if self.kind in ("disk", "ball"):
            return self.center - self.radius, self.center + self.radius
        if self.kind == "box":
            return self.lo.copy(), self.hi.copy()
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def diameter(self):
        lo, hi = self.bounds()
        if self.kind in ("disk", "ball"):
            return 2 * self.radius
        if self.is_polygonal:
            d = self.vertices[:, None, :] - self.vertices[None, :, :]
            return float(np.sqrt((d ** 2).sum(-1)).max())
        return float(np.linalg.norm(hi - lo))

    def area(self):
        if self.kind == "disk":
            return np.pi * self.radius ** 2
        if self.is_polygonal:
            x, y = self.vertices.T
            return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
        if self.kind == "ball":
            return 4 / 3 * np.pi * self.radius ** 3
        return float(np.prod(self.hi - self.lo))

    # -- graph chart accessors ----------------------------------------
    def _need_chart(self):
        if self.kind != "lipschitz-graph":
            raise InvalidDomainError("operation needs a lipschitz-graph chart")

    def f(self, xp):
        self._need_chart()
        xs = np.linspace(-self.r, self.r, len(self.f_samples))
        return np.interp(xp, xs, self.f_samples)

    @property
    def anchor(self):
        """The distinguished point ``A = (0, rho/2)``."""
        self._need_chart()
        return np.array([0.0, self.rho / 2])

    def in_T(self, pts, t):
        """Membership in ``T(t) = (-t r, t r) x (-t rho, t rho)``."""
        self._need_chart()
        p = np.atleast_2d(pts)
        return (np.abs(p[:, 0]) < t * self.r) & (np.abs(p[:, 1]) < t * self.rho)

    def on_sharp_boundary(self, pts, tol=None):
        """True for boundary points on the graph part ``∂_# U``."""
        self._need_chart()
        p = np.atleast_2d(pts)
        tol = 1e-9 * self.rho if tol is None else tol
        return (np.abs(p[:, 0]) < self.r) & (np.abs(p[:, 1] - self.f(p[:, 0])) <= tol)


def _check_simple_ccw(v):
    from shapely.geometry import Polygon

    poly = Polygon(v)
    if not poly.is_valid or not poly.exterior.is_simple:
        raise InvalidDomainError("polygon is not simple")
    x, y = v.T
    signed = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))
    if signed <= 0:
        raise InvalidDomainError("polygon must be positively (counterclockwise) oriented")


def _edges(domain):
    a = domain.vertices
    b = np.roll(a, -1, axis=0)
    return a, b


def _segment_distance(pts, a, b):
    """Distances (M, E) from points to segments ``[a_e, b_e]`` plus the
    clamped parameters."""
    ab = b - a
    ll = np.einsum("ij,ij->i", ab, ab)
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("mej,ej->me", ap, ab) / ll, 0.0, 1.0)
    d = ap - t[..., None] * ab[None]
    return np.sqrt(np.einsum("mej,mej->me", d, d)), t


def _polygon_boundary_distance(domain, pts):
    a, b = _edges(domain)
    out = np.empty(len(pts))
    for s in range(0, len(pts), _CHUNK):
        d, _ = _segment_distance(pts[s:s + _CHUNK], a, b)
        out[s:s + _CHUNK] = d.min(axis=1)
    return out


def contains(domain, pts):
    """Open-set membership, vectorized over rows of ``pts``."""
    p = np.atleast_2d(np.asarray(pts, float))
    if domain.kind in ("disk", "ball"):
        return np.linalg.norm(p - domain.center, axis=1) < domain.radius - _EPS
    if domain.kind == "box":
        return np.all((p > domain.lo + _EPS) & (p < domain.hi - _EPS), axis=1)
    inside = _MplPath(domain.vertices).contains_points(p)
    return inside & (_polygon_boundary_distance(domain, p) > _EPS)


def distance_to_boundary(domain, x):
    """Euclidean distance ``delta`` from interior point(s) to the boundary.

    Raises DomainMembershipError for points outside the closed domain.
    Returns a float for a single point and an array for a stack of points.
    """
    single = np.ndim(x) == 1
    p = np.atleast_2d(np.asarray(x, float))
    if domain.kind in ("disk", "ball"):
        d = domain.radius - np.linalg.norm(p - domain.center, axis=1)
        outside = d < -_EPS
    elif domain.kind == "box":
        d = np.minimum(p - domain.lo, domain.hi - p).min(axis=1)
        outside = d < -_EPS
    else:
        d = _polygon_boundary_distance(domain, p)
        outside = ~_MplPath(domain.vertices).contains_points(p) & (d > 1e-9)
    if np.any(outside):
        bad = p[np.argmax(outside)]
        raise DomainMembershipError(f"point {bad.tolist()} is not in the closed domain")
    d = np.maximum(d, 0.0)
    return float(d[0]) if single else d


def nearest_boundary_point(domain, pts):
    """Closest boundary point for each row of ``pts`` (which may lie outside)."""
    p = np.atleast_2d(np.asarray(pts, float))
    if domain.kind in ("disk", "ball"):
        v = p - domain.center
        n = np.linalg.norm(v, axis=1, keepdims=True)
        n[n == 0] = 1.0
        return domain.center + domain.radius * v / n
    if domain.kind == "box":
        q = np.clip(p, domain.lo, domain.hi)
        inside = contains(domain, p)
        for i in np.flatnonzero(inside):
            gaps = np.concatenate([q[i] - domain.lo, domain.hi - q[i]])
            k = int(np.argmin(gaps))
            q[i, k % 3] = domain.lo[k] if k < 3 else domain.hi[k - 3]
        return q
    a, b = _edges(domain)
    out = np.empty_like(p)
    for s in range(0, len(p), _CHUNK):
        chunk = p[s:s + _CHUNK]
        d, t = _segment_distance(chunk, a, b)
        e = d.argmin(axis=1)
        tt = t[np.arange(len(chunk)), e]
        out[s:s + _CHUNK] = a[e] + tt[:, None] * (b[e] - a[e])
    return out


def boundary_samples(domain, n):
    """``n`` points spread uniformly by arclength over a planar boundary,
    with their arclength coordinate."""
    if domain.kind == "disk":
        th = np.linspace(0, 2 * np.pi, n, endpoint=False)
        pts = domain.center + domain.radius * np.column_stack([np.cos(th), np.sin(th)])
        return pts, th * domain.radius
    if not domain.is_polygonal:
        raise InvalidDomainError("boundary sampling is planar only")
    a, b = _edges(domain)
    seg = np.linalg.norm(b - a, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(0, cum[-1], n, endpoint=False)
    e = np.searchsorted(cum, s, side="right") - 1
    tt = (s - cum[e]) / seg[e]
    return a[e] + tt[:, None] * (b[e] - a[e]), s


# -- boundary points and pseudo-normals ---------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryPoint:
    y: np.ndarray
    nu: np.ndarray
    eta: float

    def ray(self, t):
        """Points ``y + t nu`` for scalar or array ``t``."""
        t = np.atleast_1d(np.asarray(t, float))
        return self.y[None, :] + t[:, None] * self.nu[None, :]


def pseudo_normal(domain, y):
    """Inward unit pseudo-normal at boundary point ``y``.

    Edge interiors get the inward edge normal, polygon corners the bisector
    of the two adjacent inward normals.
    """
    y = np.asarray(y, float)
    if domain.kind in ("disk", "ball"):
        v = domain.center - y
        return v / np.linalg.norm(v)
    if domain.kind == "box":
        gaps = np.concatenate([y - domain.lo, domain.hi - y])
        k = int(np.argmin(gaps))
        nu = np.zeros(3)
        nu[k % 3] = 1.0 if k < 3 else -1.0
        return nu
    a, b = _edges(domain)
    d, t = _segment_distance(y[None, :], a, b)
    d = d[0]
    tol = 1e-9 * max(1.0, domain.diameter())
    hits = np.flatnonzero(d <= tol)
    if hits.size == 0:
        raise DomainMembershipError(f"{y.tolist()} is not on the boundary")
    normals = []
    for e in hits:
        tv = b[e] - a[e]
        n = np.array([-tv[1], tv[0]]) / np.linalg.norm(tv)  # left normal is inward for CCW
        normals.append(n)
    nu = np.sum(normals, axis=0)
    if np.linalg.norm(nu) < 1e-12:
        raise InvalidDomainError("degenerate corner: no pseudo-normal")
    return nu / np.linalg.norm(nu)


def cone_admissible(domain, y, nu, eta, x0=None, n=200):
    """True if ``{y + t(nu + v): 0 < t <= eta, |v| <= eta}`` lies in
    ``domain`` minus ``x0``.

    The set is the union over ``t`` of closed balls ``B(y + t nu, t eta)``,
    so containment reduces to ``delta(y + t nu) > t eta`` along the axis.
    """
    t = eta * np.concatenate([np.geomspace(1e-4, 1.0, n // 2), np.linspace(0.5, 1.0, n // 2)])
    pts = y[None, :] + t[:, None] * nu[None, :]
    if not np.all(contains(domain, pts)):
        return False
    if not np.all(distance_to_boundary(domain, pts) > t * eta):
        return False
    if x0 is not None:
        if not np.all(np.linalg.norm(pts - np.asarray(x0, float), axis=1) > t * eta):
            return False
    return True


def boundary_point(domain, y, nu=None, eta=None, x0=None, iters=40):
    """BoundaryPoint with a default pseudo-normal and cone margin.

    When ``eta`` is not given it is half the largest admissible value found by
    bisection on ``(0, 1]``.
    """
    y = np.asarray(y, float)
    nu = pseudo_normal(domain, y) if nu is None else np.asarray(nu, float)
    nu = nu / np.linalg.norm(nu)
    if eta is None:
        lo, hi = 0.0, 1.0
        if cone_admissible(domain, y, nu, hi, x0):
            lo = hi
        else:
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                if cone_admissible(domain, y, nu, mid, x0):
                    lo = mid
                else:
                    hi = mid
        if lo == 0.0:
            raise InvalidConeError(f"no admissible cone at {y.tolist()}")
        eta = 0.5 * lo
    elif not cone_admissible(domain, y, nu, eta, x0):
        raise InvalidConeError(f"cone C(y, nu, {eta}) is not contained in the domain")
    return BoundaryPoint(y, nu, float(eta))


# -- truncated cones ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConeSpec:
    """Open truncated cone ``{x: 0 < s < height, |x_perp| < aperture * s}``
    where ``s = (x - vertex) . axis``."""

    vertex: np.ndarray
    axis: np.ndarray
    aperture: float
    height: float
    inner_margin: float = 0.0

    def contains(self, pts):
        p = np.atleast_2d(np.asarray(pts, float)) - self.vertex
        s = p @ self.axis
        perp = np.linalg.norm(p - s[:, None] * self.axis[None, :], axis=1)
        return (s > 0) & (s < self.height) & (perp < self.aperture * s)

    def sample(self, n, rng=None):
        """Uniform random points in the cone (rejection from its bounding box)."""
        rng = np.random.default_rng(0) if rng is None else rng
        dim = self.vertex.size
        w = self.aperture * self.height
        out = []
        basis = _orthobasis(self.axis)
        while sum(len(o) for o in out) < n:
            m = 4 * n
            s = rng.uniform(0, self.height, m)
            q = rng.uniform(-w, w, (m, dim - 1))
            pts = self.vertex + s[:, None] * self.axis + q @ basis
            out.append(pts[self.contains(pts)])
        return np.vstack(out)[:n]

    def polygon(self):
        """Vertices of the planar cone (a triangle), counterclockwise."""
        if self.vertex.size != 2:
            raise InvalidConeError("polygon() is planar only")
        perp = np.array([-self.axis[1], self.axis[0]])
        tip = self.vertex + self.height * self.axis
        w = self.aperture * self.height
        tri = np.array([self.vertex, tip - w * perp, tip + w * perp])
        x, y = tri.T
        if np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y) < 0:
            tri = tri[::-1]
        return tri

    def area(self):
        if self.vertex.size == 2:
            return self.aperture * self.height ** 2
        return np.pi * self.aperture ** 2 * self.height ** 3 / 3

    def margin_in(self, domain, n=4000):
        """Sampled ``inf_C delta(x) / |x - vertex|``; the fattened cone with
        this margin stays inside ``domain`` (up to sampling)."""
        pts = self.sample(n)
        pts = np.vstack([pts, self.vertex + np.linspace(0.01, 1, 50)[:, None] * self.height * self.axis])
        if not np.all(contains(domain, pts)):
            return 0.0
        d = distance_to_boundary(domain, pts)
        return float(np.min(d / np.linalg.norm(pts - self.vertex, axis=1)))


def _orthobasis(axis):
    dim = axis.size
    m = np.eye(dim) - np.outer(axis, axis)
    u, _, _ = np.linalg.svd(m)
    return u[:, : dim - 1].T


def build_cone(point, K, ell, domain=None):
    """Cone at a boundary point along its pseudo-normal.

    With ``domain`` supplied the strict-inner margin is measured and stored
    (90% of the sampled infimum, 0 if the cone leaves the domain).
    """
    if ell <= 0 or K <= 0:
        raise InvalidConeError(f"empty cone (K={K}, ell={ell})")
    cone = ConeSpec(np.asarray(point.y, float), np.asarray(point.nu, float), float(K), float(ell))
    if domain is not None:
        m = cone.margin_in(domain)
        cone = ConeSpec(cone.vertex, cone.axis, cone.aperture, cone.height, 0.9 * m)
    return cone


def cone_union_subdomain(domain, points, K, ell):
    """Union of the cones at ``points`` as a polygonal subdomain of ``domain``."""
    from shapely.geometry import Polygon
    from shapely.ops import unary_union

    if len(points) == 0:
        raise InvalidDomainError("cone union over an empty point list")
    if domain.dim != 2:
        raise InvalidDomainError("cone unions are planar only")
    cones = [build_cone(p, K, ell) for p in points]
    for c in cones:
        if not np.all(contains(domain, c.sample(400))):
            raise InvalidConeError(f"cone at {c.vertex.tolist()} leaves the domain")
    union = unary_union([Polygon(c.polygon()) for c in cones])
    if union.geom_type != "Polygon" or len(union.interiors) > 0:
        raise InvalidDomainError("cone union is not a simply connected polygon")
    union = union.simplify(0.0)
    verts = np.asarray(union.exterior.coords)[:-1]
    x, y = verts.T
    if np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y) < 0:
        verts = verts[::-1]
    sub = DomainSpec.polygon(verts)
    object.__setattr__(sub, "meta", {"cones": cones, "parent": domain})
    return sub


def axis_crossing(domain, pts, axis, sign, hmax):
    """Distance from each point along ``sign * e_axis`` to the first boundary
    crossing, capped at ``hmax``."""
    p = np.atleast_2d(np.asarray(pts, float))
    out = np.full(len(p), float(hmax))
    if domain.kind in ("disk", "ball"):
        q = p - domain.center
        other = (q ** 2).sum(axis=1) - q[:, axis] ** 2
        disc = domain.radius ** 2 - other
        ok = disc >= 0
        t = np.sqrt(np.where(ok, disc, 0.0)) - sign * q[:, axis]
        good = ok & (t > 0)
        out[good] = np.minimum(t[good], hmax)
        return out
    if domain.kind == "box":
        t = (domain.hi[axis] - p[:, axis]) if sign > 0 else (p[:, axis] - domain.lo[axis])
        return np.minimum(np.maximum(t, 0.0), hmax)
    a, b = _edges(domain)
    e = np.zeros(2)
    e[axis] = sign
    for s in range(0, len(p), _CHUNK):
        c = p[s:s + _CHUNK]
        # solve c + t e = a + u (b - a), 0 <= u <= 1, 0 < t <= hmax
        ab = b - a
        den = e[0] * ab[None, :, 1] - e[1] * ab[None, :, 0]
        ac = a[None, :, :] - c[:, None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (ac[..., 0] * ab[None, :, 1] - ac[..., 1] * ab[None, :, 0]) / den
            u = (ac[..., 0] * e[1] - ac[..., 1] * e[0]) / den
        hit = (np.abs(den) > 1e-15) & (u >= -1e-12) & (u <= 1 + 1e-12) & (t > 1e-14)
        t = np.where(hit, t, np.inf).min(axis=1)
        out[s:s + _CHUNK] = np.minimum(t, hmax)
    return out
