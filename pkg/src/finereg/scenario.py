"""Scenario files: parsing, validation and the per-point pipeline."""
from __future__ import annotations

import copy
import logging
import sys
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import geometry
from .errors import FineRegError, ScenarioError
from .operators import POTENTIAL_KINDS, PotentialSpec, build_grid, make_operator
from .regularity import (CLASSIFY_CRITERIA, CRITERIA, INCONCLUSIVE, REGULAR, RUNNERS, SINGULAR,
                         PointAnalysis, Thresholds, consolidate, criterion_cone_test)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DOMAIN_KINDS = ("disk", "polygon", "box", "lipschitz-graph")


@dataclass
class MonteCarlo:
    paths: int = 10000
    seed: int = 0
    eps: tuple = (0.1, 0.05)


@dataclass
class Scenario:
    name: str
    domain: geometry.DomainSpec
    h: float
    points: list
    V: dict
    gamma: dict | None = None
    a: float | None = None
    coeffs: np.ndarray | None = None
    x0: np.ndarray | None = None
    shortley_weller: bool = False
    criteria: tuple = CLASSIFY_CRITERIA
    cone: dict = field(default_factory=lambda: {"K": 0.5, "ell": 0.5})
    thresholds: Thresholds = field(default_factory=Thresholds)
    montecarlo: MonteCarlo | None = None
    out_dir: str = "out"
    plots: bool = False
    raw: dict = field(default_factory=dict, repr=False)


# -- parsing helpers ---------------------------------------------------------------

def _num(value, where):
    if isinstance(value, bool):
        raise ScenarioError("expected a number, got a boolean", where)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ScenarioError(f"expected a number or fraction string, got {value!r}", where)


def _vec(value, where, dim=None):
    if not isinstance(value, (list, tuple)) or not value:
        raise ScenarioError(f"expected a list of numbers, got {value!r}", where)
    v = np.array([_num(x, f"{where}[{i}]") for i, x in enumerate(value)])
    if dim is not None and len(v) != dim:
        raise ScenarioError(f"expected {dim} components, got {len(v)}", where)
    return v


def _table(d, key, where, required=True):
    val = d.get(key)
    if val is None:
        if required:
            raise ScenarioError("missing table", f"{where}.{key}" if where else key)
        return None
    if not isinstance(val, dict):
        raise ScenarioError("expected a table", f"{where}.{key}" if where else key)
    return val


def _unknown(d, allowed, where):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ScenarioError(f"unknown keys {extra}; allowed: {sorted(allowed)}", where)


def parse_domain(d):
    where = "domain"
    kind = d.get("kind")
    if kind not in DOMAIN_KINDS:
        raise ScenarioError(f"unknown domain kind {kind!r}; expected one of {DOMAIN_KINDS}",
                            f"{where}.kind")
    try:
        if kind == "disk":
            _unknown(d, {"kind", "center", "radius"}, where)
            return geometry.DomainSpec.disk(_vec(d.get("center", [0, 0]), f"{where}.center", 2),
                                            _num(d.get("radius", 1.0), f"{where}.radius"))
        if kind == "box":
            _unknown(d, {"kind", "lo", "hi"}, where)
            return geometry.DomainSpec.box(_vec(d.get("lo"), f"{where}.lo", 2),
                                           _vec(d.get("hi"), f"{where}.hi", 2))
        if kind == "polygon":
            _unknown(d, {"kind", "vertices"}, where)
            verts = d.get("vertices")
            if not isinstance(verts, list):
                raise ScenarioError("expected a list of [x, y] pairs", f"{where}.vertices")
            return geometry.DomainSpec.polygon(
                [_vec(v, f"{where}.vertices[{i}]", 2) for i, v in enumerate(verts)])
        _unknown(d, {"kind", "r", "rho", "f", "slope"}, where)
        r = _num(d.get("r"), f"{where}.r")
        rho = _num(d.get("rho"), f"{where}.rho")
        if "f" in d:
            f = _vec(d["f"], f"{where}.f")
        elif "slope" in d:
            slope = _num(d["slope"], f"{where}.slope")
            f = lambda x: slope * np.abs(x)  # noqa: E731
        else:
            raise ScenarioError("graph chart needs samples 'f' or a 'slope'", where)
        return geometry.DomainSpec.lipschitz_graph(r, rho, f)
    except ScenarioError:
        raise
    except FineRegError as exc:
        raise ScenarioError(str(exc), where) from exc


def _check_potential(d, where):
    if not isinstance(d, dict):
        raise ScenarioError("expected a potential table", where)
    kind = d.get("kind")
    if kind not in POTENTIAL_KINDS:
        raise ScenarioError(f"unknown potential kind {kind!r}; expected one of "
                            f"{sorted(POTENTIAL_KINDS)}", f"{where}.kind")
    allowed = {
        "zero": {"kind"},
        "constant": {"kind", "kappa"},
        "hardy": {"kind", "kappa"},
        "power-law": {"kind", "kappa", "s", "center"},
        "cone-restricted": {"kind", "inner", "point", "K", "ell"},
        "indicator-scaled": {"kind", "kappa", "center", "radius"},
        "scaled": {"kind", "inner", "factor"},
    }[kind]
    _unknown(d, allowed, where)
    for key in ("kappa", "s", "factor", "K", "ell", "radius"):
        if key in d:
            _num(d[key], f"{where}.{key}")
    if "center" in d:
        _vec(d["center"], f"{where}.center", 2)
    if kind in ("constant", "hardy", "power-law", "indicator-scaled") and "kappa" not in d:
        raise ScenarioError("missing 'kappa'", f"{where}.kappa")
    if kind == "power-law" and "s" not in d:
        raise ScenarioError("missing 's'", f"{where}.s")
    if kind == "indicator-scaled" and ("center" not in d or "radius" not in d):
        raise ScenarioError("indicator region needs 'center' and 'radius'", where)
    if kind == "scaled" and "factor" not in d:
        raise ScenarioError("missing 'factor'", f"{where}.factor")
    if kind in ("cone-restricted", "scaled"):
        _check_potential(d.get("inner"), f"{where}.inner")


def build_potential(d, domain, points, x0=None, default_cone=None):
    """PotentialSpec from a validated table; cones attach to boundary points."""
    kind = d["kind"]
    if kind == "zero":
        return PotentialSpec.zero()
    if kind == "constant":
        return PotentialSpec.constant(_num(d["kappa"], "kappa"))
    if kind == "hardy":
        return PotentialSpec.hardy(_num(d["kappa"], "kappa"))
    if kind == "power-law":
        center = _vec(d["center"], "center", 2) if "center" in d else points[0].y
        return PotentialSpec.power_law(_num(d["kappa"], "kappa"), _num(d["s"], "s"), center)
    if kind == "indicator-scaled":
        region = geometry.DomainSpec.disk(_vec(d["center"], "center", 2), _num(d["radius"], "radius"))
        return PotentialSpec.indicator(region, _num(d["kappa"], "kappa"))
    if kind == "scaled":
        return PotentialSpec.scaled(build_potential(d["inner"], domain, points, x0, default_cone),
                                    _num(d["factor"], "factor"))
    idx = int(d.get("point", 0))
    if not 0 <= idx < len(points):
        raise ScenarioError(f"cone point index {idx} out of range", "operator.V.point")
    K = _num(d.get("K", default_cone["K"]), "K")
    ell = _num(d.get("ell", default_cone["ell"]), "ell")
    cone = geometry.build_cone(points[idx], K, ell, domain)
    if cone.inner_margin <= 0:
        raise ScenarioError("cone is not strictly inside the domain", "operator.V")
    inner = build_potential(d["inner"], domain, points, x0, default_cone)
    return PotentialSpec.cone_restricted(inner, cone)


def parse(text, source="<scenario>"):
    """Validate a scenario document (TOML text) and return a Scenario."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: {exc}", "syntax") from exc
    return from_dict(doc)


def from_dict(doc):
    doc = copy.deepcopy(doc)
    _unknown(doc, {"schema_version", "name", "domain", "grid", "operator", "points", "criteria",
                   "thresholds", "cone", "montecarlo", "output"}, "top level")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"expected schema_version = {SCHEMA_VERSION}, got {version!r}",
                            "schema_version")
    name = doc.get("name", "scenario")
    if not isinstance(name, str) or not name:
        raise ScenarioError("expected a nonempty string", "name")
    domain = parse_domain(_table(doc, "domain", ""))

    grid_t = _table(doc, "grid", "")
    _unknown(grid_t, {"h", "x0", "shortley_weller"}, "grid")
    if "h" not in grid_t:
        raise ScenarioError("missing grid spacing", "grid.h")
    h = _num(grid_t["h"], "grid.h")
    if h <= 0:
        raise ScenarioError("grid spacing must be positive", "grid.h")
    if domain.diameter() / h < 16:
        raise ScenarioError(f"h = {h} gives fewer than 16 nodes across the domain", "grid.h")
    x0 = _vec(grid_t["x0"], "grid.x0", 2) if "x0" in grid_t else None
    if x0 is not None and not geometry.contains(domain, x0)[0]:
        raise ScenarioError("x0 is not inside the domain", "grid.x0")
    sw = grid_t.get("shortley_weller", False)
    if not isinstance(sw, bool):
        raise ScenarioError("expected true or false", "grid.shortley_weller")

    op_t = _table(doc, "operator", "", required=False) or {}
    _unknown(op_t, {"V", "gamma", "a", "coeffs"}, "operator")
    V = op_t.get("V", {"kind": "zero"})
    _check_potential(V, "operator.V")
    gamma = op_t.get("gamma")
    if gamma is not None:
        _check_potential(gamma, "operator.gamma")
    a = _num(op_t["a"], "operator.a") if "a" in op_t else None
    coeffs = None
    if "coeffs" in op_t:
        rows = op_t["coeffs"]
        if not isinstance(rows, list) or len(rows) != 2:
            raise ScenarioError("expected a 2x2 matrix", "operator.coeffs")
        coeffs = np.array([_vec(r, f"operator.coeffs[{i}]", 2) for i, r in enumerate(rows)])

    pts = doc.get("points")
    if not isinstance(pts, list) or not pts:
        raise ScenarioError("need at least one [[points]] entry", "points")
    points = []
    for i, p in enumerate(pts):
        where = f"points[{i}]"
        if not isinstance(p, dict):
            raise ScenarioError("expected a table", where)
        _unknown(p, {"y", "nu", "eta"}, where)
        y = _vec(p.get("y"), f"{where}.y", 2)
        pt = {"y": y}
        if "nu" in p:
            pt["nu"] = _vec(p["nu"], f"{where}.nu", 2)
        if "eta" in p:
            pt["eta"] = _num(p["eta"], f"{where}.eta")
        points.append(pt)

    crit_t = _table(doc, "criteria", "", required=False) or {}
    _unknown(crit_t, {"select"}, "criteria")
    criteria = tuple(crit_t.get("select", CLASSIFY_CRITERIA))
    for c in criteria:
        if c not in CRITERIA:
            raise ScenarioError(f"unknown criterion {c!r}; expected one of {CRITERIA}",
                                "criteria.select")
    if len(set(criteria)) != len(criteria):
        raise ScenarioError("criteria listed twice", "criteria.select")
    if "smooth-explicit" in criteria and domain.kind != "disk":
        raise ScenarioError("smooth-explicit needs a disk domain", "criteria.select")

    th_t = _table(doc, "thresholds", "", required=False) or {}
    fields = Thresholds.__dataclass_fields__
    _unknown(th_t, set(fields), "thresholds")
    th = Thresholds(**{k: (int(v) if fields[k].type in ("int", int) else _num(v, f"thresholds.{k}"))
                       for k, v in th_t.items()})
    if not th.q_reg < th.q_sing:
        raise ScenarioError("need q_reg < q_sing", "thresholds")

    cone_t = _table(doc, "cone", "", required=False) or {}
    _unknown(cone_t, {"K", "ell"}, "cone")
    cone = {"K": _num(cone_t.get("K", 0.5), "cone.K"), "ell": _num(cone_t.get("ell", 0.5), "cone.ell")}

    mc = None
    mc_t = _table(doc, "montecarlo", "", required=False)
    if mc_t is not None:
        _unknown(mc_t, {"paths", "seed", "eps"}, "montecarlo")
        eps = tuple(_vec(mc_t.get("eps", [0.1, 0.05]), "montecarlo.eps"))
        if min(eps) < 4 * h * (1 - 1e-12):
            raise ScenarioError(f"every eps must be at least 4h = {4 * h:g}", "montecarlo.eps")
        mc = MonteCarlo(int(mc_t.get("paths", 10000)), int(mc_t.get("seed", 0)), eps)
        if mc.paths < 100:
            raise ScenarioError("need at least 100 paths", "montecarlo.paths")

    out_t = _table(doc, "output", "", required=False) or {}
    _unknown(out_t, {"dir", "plots"}, "output")

    sc = Scenario(name, domain, h, points, V, gamma, a, coeffs, x0, sw, criteria, cone, th, mc,
                  str(out_t.get("dir", "out")), bool(out_t.get("plots", False)), doc)
    # resolve boundary points and potentials now so infeasible scenarios fail before solving
    resolve_points(sc)
    return sc


def load(path):
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ScenarioError(f"{path}: not UTF-8 text", "syntax") from exc
    return parse(text, str(path))


def resolve_points(sc):
    """BoundaryPoints for the scenario, validating that each ``y`` is on the boundary."""
    out = []
    scale = sc.domain.diameter()
    for i, p in enumerate(sc.points):
        y = p["y"]
        foot = geometry.nearest_boundary_point(sc.domain, y[None])[0]
        if np.linalg.norm(foot - y) > 1e-9 * scale:
            raise ScenarioError(f"point {y.tolist()} is not on the boundary "
                                f"(nearest boundary point {foot.tolist()})", f"points[{i}].y")
        try:
            out.append(geometry.boundary_point(sc.domain, y, p.get("nu"), p.get("eta"), sc.x0))
        except FineRegError as exc:
            raise ScenarioError(str(exc), f"points[{i}]") from exc
    return out


# -- sweeps ----------------------------------------------------------------------------

SWEEP_PARAMS = ("s", "kappa", "h")


def _set_first(d, key, value):
    """Set ``key`` in the first (depth-first) potential table that has it."""
    if not isinstance(d, dict):
        return False
    if key in d and d.get("kind") in POTENTIAL_KINDS:
        d[key] = value
        return True
    return any(_set_first(d.get(sub), key, value) for sub in ("inner",))


def with_parameter(sc, param, value):
    """Copy of ``sc`` with the sweep parameter replaced."""
    if param not in SWEEP_PARAMS:
        raise ScenarioError(f"unknown sweep parameter {param!r}; expected one of {SWEEP_PARAMS}",
                            "--param")
    doc = copy.deepcopy(sc.raw)
    if param == "h":
        doc["grid"]["h"] = float(value)
    else:
        V = doc.setdefault("operator", {}).get("V")
        if V is None or not _set_first(V, param, float(value)):
            raise ScenarioError(f"potential has no parameter {param!r} to sweep", "operator.V")
    return from_dict(doc)


# -- execution ---------------------------------------------------------------------

@dataclass(eq=False)
class PointResult:
    index: int
    point: geometry.BoundaryPoint
    reports: dict
    verdict: str
    consistent: bool
    votes: dict
    c: float | None = None
    montecarlo: list = field(default_factory=list)


@dataclass(eq=False)
class RunResult:
    scenario: Scenario
    points: list

    @property
    def consistent(self):
        return all(p.consistent for p in self.points)


def build_workspace(sc):
    from .greens import Workspace

    grid = build_grid(sc.domain, sc.h)
    bps = resolve_points(sc)
    try:
        V = build_potential(sc.V, sc.domain, bps, sc.x0, sc.cone)
        gamma = (None if sc.gamma is None
                 else build_potential(sc.gamma, sc.domain, bps, sc.x0, sc.cone))
        op = make_operator(grid, coeffs=sc.coeffs, gamma=gamma, V=V, a=sc.a)
    except ScenarioError:
        raise
    except FineRegError as exc:
        raise ScenarioError(str(exc), "operator") from exc
    return Workspace(grid, op, x0=sc.x0, shortley_weller=sc.shortley_weller), bps, V


def run_point(sc, ws, bp, index, V, threads=1):
    pa = PointAnalysis(ws, bp, sc.thresholds)
    reports = {}
    for name in sc.criteria:
        if name == "cone-test":
            cone = geometry.build_cone(bp, sc.cone["K"], sc.cone["ell"], sc.domain)
            reports[name] = criterion_cone_test(cone, V, sc.domain, sc.h, sc.thresholds)
        else:
            reports[name] = RUNNERS[name](ws, pa, sc.thresholds)
    # the cone test is one-sided: only its singular verdict is a pointwise claim
    voting = {k: r for k, r in reports.items() if k != "cone-test"}
    verdict, consistent, votes = consolidate(voting)
    if "cone-test" in reports:
        votes["cone-test"] = reports["cone-test"].verdict
        if reports["cone-test"].verdict == SINGULAR and verdict == REGULAR:
            consistent = False
        if not voting:
            verdict = SINGULAR if votes["cone-test"] == SINGULAR else INCONCLUSIVE
    c = reports["c-weight"].extras["c"] if "c-weight" in reports else None
    res = PointResult(index, bp, reports, verdict, consistent, votes, c)
    if sc.montecarlo is not None:
        res.montecarlo = run_montecarlo(sc, ws, pa, threads)
    return res


def run_montecarlo(sc, ws, pa, threads=1):
    from .stochastic import WalkConfig, conditioned_functional, truncated_quadrature

    K = pa.martin("L0").field
    out = []
    for eps in sc.montecarlo.eps:
        cfg = WalkConfig(K, pa.point.y, float(eps), ws.x0, sc.montecarlo.paths, sc.montecarlo.seed)
        r = conditioned_functional(ws.grid, ws.op.V, cfg, threads)
        quad = truncated_quadrature(ws.grid, ws.op.V, K, ws.x0, pa.point.y, float(eps))
        out.append({"eps": float(eps), "mean": r.mean, "stderr": r.stderr, "retained": r.retained,
                    "discarded": r.discarded, "quadrature": quad})
    return out


def run(sc, threads=1):
    ws, bps, V = build_workspace(sc)
    results = [run_point(sc, ws, bp, i, V, threads) for i, bp in enumerate(bps)]
    return RunResult(sc, results)


__all__ = ["Scenario", "MonteCarlo", "parse", "load", "from_dict", "run", "RunResult",
           "PointResult", "with_parameter", "SWEEP_PARAMS", "SCHEMA_VERSION"]
