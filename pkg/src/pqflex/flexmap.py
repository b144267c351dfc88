"""P-Q flexibility boundaries at a reference bus/phase.

The boundary is traced with an epsilon-constraint sweep: two range solves
along the sweep axis, then for each of ``k`` targets across that range the
sweep component is held inside a narrow band while the free component is
maximised and minimised. Points are reported in kW/kVAr in load convention
(power drawn from the upstream grid), like the base point.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .netmodel import PHASES, NetworkCase
from .opf import EpsilonBox, IPMOptions, ObjectiveSpec, OPFSolution, ScenarioConfig, build_problem, solve
from .powerflow import Setpoints, compile_network, solve_newton


class FlexMapError(Exception):
    pass


class DegenerateBoundaryError(FlexMapError):
    """Fewer than three feasible boundary points; ``boundary`` holds what was found."""

    def __init__(self, boundary: "FlexBoundary"):
        self.boundary = boundary
        n = len(boundary.polygon())
        super().__init__(f"degenerate boundary: {n} feasible point(s)")


class BoundarySolveError(FlexMapError):
    pass


class PolygonError(ValueError):
    pass


SPACINGS = ("adaptive", "cosine", "uniform")
# "endpoint": an end interval whose own solve failed, filled with the range-solve
# optimum (which sits inside that interval's band by construction)
FEASIBLE_STATUSES = ("optimal", "endpoint")


def sweep_targets(lo: float, hi: float, k: int, spacing: str = "cosine") -> np.ndarray:
    """``k`` targets from ``lo`` to ``hi`` inclusive.

    Cosine spacing packs targets towards both ends, where the boundary turns
    and a uniform grid would cut off a sliver beyond the first chord.
    ``adaptive`` starts from cosine targets here; the tracer adds the rest.
    """
    if spacing == "uniform":
        return np.linspace(lo, hi, k)
    t = (1 - np.cos(np.pi * np.arange(k) / (k - 1))) / 2
    t[0], t[-1] = 0.0, 1.0
    return lo + (hi - lo) * t


@dataclass(frozen=True)
class FlexAreaRequest:
    ref_bus: str | None = None
    ref_phase: str = "a"
    k: int = 40
    epsilon: float | None = None
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    sweep_axis: str = "P"
    spacing: str = "adaptive"

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.sweep_axis not in ("P", "Q"):
            raise ValueError("sweep_axis must be 'P' or 'Q'")
        if self.ref_phase not in PHASES:
            raise ValueError(f"unknown phase {self.ref_phase!r}")
        if self.spacing not in SPACINGS:
            raise ValueError(f"spacing must be one of {SPACINGS}")


@dataclass(frozen=True)
class BoundaryPoint:
    interval: int
    side: str
    status: str
    p_kw: float | None
    q_kvar: float | None

    @property
    def ok(self) -> bool:
        return self.status in FEASIBLE_STATUSES


@dataclass
class FlexBoundary:
    points: list
    base_point: tuple
    area: float
    infeasible_intervals: list
    gaps: list = field(default_factory=list)
    request: FlexAreaRequest | None = None
    sweep_range: tuple | None = None
    epsilon: float | None = None
    simple: bool = True

    def polygon(self) -> np.ndarray:
        """Feasible points in traversal order as an ``(n, 2)`` array of kW/kVAr."""
        pts = [(p.p_kw, p.q_kvar) for p in self.points if p.ok]
        return np.array(pts, dtype=float).reshape(-1, 2)

    def bbox_diagonal(self) -> float:
        poly = self.polygon()
        if len(poly) == 0:
            return 0.0
        return float(np.hypot(*(poly.max(axis=0) - poly.min(axis=0))))


# ---------------------------------------------------------------------------
# geometry


def _dedupe(points, tol=1e-9) -> np.ndarray:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return pts
    keep = [0]
    for i in range(1, len(pts)):
        if np.abs(pts[i] - pts[keep[-1]]).max() > tol:
            keep.append(i)
    if len(keep) > 1 and np.abs(pts[keep[-1]] - pts[keep[0]]).max() <= tol:
        keep.pop()
    return pts[keep]


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _segments_cross(p1, p2, q1, q2, tol) -> bool:
    # proper crossings only; touching and collinear overlap within tol are tolerated
    d1, d2 = _orient(q1, q2, p1), _orient(q1, q2, p2)
    d3, d4 = _orient(p1, p2, q1), _orient(p1, p2, q2)
    return ((d1 > tol and d2 < -tol) or (d1 < -tol and d2 > tol)) and (
        (d3 > tol and d4 < -tol) or (d3 < -tol and d4 > tol)
    )


def is_simple(points) -> bool:
    pts = _dedupe(points)
    n = len(pts)
    if n < 4:
        return True
    scale = max(float(np.ptp(pts, axis=0).max()), 1e-12)
    tol = 1e-9 * scale**2
    for i in range(n):
        a, b = pts[i], pts[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue
            if _segments_cross(a, b, pts[j], pts[(j + 1) % n], tol):
                return False
    return True


def polygon_area(points, check: bool = True) -> float:
    """Absolute shoelace area of an ordered polygon (consecutive duplicates ignored)."""
    pts = _dedupe(points)
    if len(pts) < 3:
        raise PolygonError(f"need at least 3 distinct points, got {len(pts)}")
    if check and not is_simple(pts):
        raise PolygonError("polygon ordering is self-intersecting")
    x, y = pts[:, 0], pts[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2)


def area_reduction(base_area: float, constrained_area: float) -> float:
    """Percent of ``base_area`` lost when only ``constrained_area`` remains."""
    if not base_area > 0:
        raise ValueError("base area must be positive")
    return 100.0 * (1.0 - constrained_area / base_area)


# ---------------------------------------------------------------------------
# base point and Minkowski bound


def _ref_bus(case: NetworkCase, ref_bus) -> str:
    return case.reference_bus.id if ref_bus is None else str(ref_bus)


def compute_base_point(case: NetworkCase, ref_bus=None, ref_phase: str = "a") -> tuple[float, float]:
    """Reference-bus (P, Q) in kW/kVAr with every flex setpoint at zero."""
    net = compile_network(case)
    state = solve_newton(case, Setpoints.zero(net))
    s = state.injection(_ref_bus(case, ref_bus), ref_phase) * case.kw_per_unit
    return float(s.real), float(s.imag)


def _participating_slots(case: NetworkCase, ref_phase: str, scenario: ScenarioConfig):
    net = compile_network(case)
    restricted = scenario.coordination == "phase_restricted" and scenario.coordination_mode == "per_unit_zero"
    return [k for k, (_, ph) in enumerate(net.flex_slots) if not restricted or ph == ref_phase]


def minkowski_upper_bound(case: NetworkCase, ref_phase: str = "a", scenario: ScenarioConfig | None = None, ref_bus=None) -> FlexBoundary:
    """Network-unconstrained rectangle: base point shifted by the sum of unit boxes.

    A flex injection lowers the reference consumption, so the box of summed
    setpoints is mirrored about the base point.
    """
    scenario = scenario or ScenarioConfig()
    net = compile_network(case)
    base = compute_base_point(case, ref_bus, ref_phase)
    slots = _participating_slots(case, ref_phase, scenario)
    b = net.flex_bounds[slots].sum(axis=0) * case.kw_per_unit if slots else np.zeros(4)
    pmin, pmax, qmin, qmax = b
    p0, q0 = base
    corners = [
        (p0 - pmax, q0 - qmax),
        (p0 - pmin, q0 - qmax),
        (p0 - pmin, q0 - qmin),
        (p0 - pmax, q0 - qmin),
    ]
    points = [BoundaryPoint(i, "vertex", "optimal", float(p), float(q)) for i, (p, q) in enumerate(corners)]
    area = float((pmax - pmin) * (qmax - qmin))
    return FlexBoundary(points, base, area, [], request=None)


# ---------------------------------------------------------------------------
# epsilon-constraint sweep


def _directions(axis: str):
    """(range-min, range-max) and (free-max, free-min) objective directions."""
    if axis == "P":
        return ((1.0, 0.0), (-1.0, 0.0)), ((0.0, -1.0), (0.0, 1.0))
    return ((0.0, 1.0), (0.0, -1.0)), ((-1.0, 0.0), (1.0, 0.0))


def _attempt(case, objective, scenario, starts, options) -> OPFSolution:
    """Solve from each start in turn; the first optimal solution wins."""
    prob = build_problem(case, objective, scenario)
    sol = None
    for start in starts:
        sol = solve(prob, start, options)
        if sol.ok:
            return sol
    return sol


def _point(case, request, interval, side, sol, fallback=None) -> BoundaryPoint:
    status = "optimal"
    if (sol is None or not sol.ok) and fallback is not None:
        sol, status = fallback, "endpoint"
    if sol is None or not sol.ok:
        return BoundaryPoint(interval, side, sol.status if sol else "not_run", None, None)
    p, q = sol.ref_injection
    kw = case.kw_per_unit
    return BoundaryPoint(interval, side, status, float(p * kw), float(q * kw))


def _solve_interval(args):
    case, request, ref_bus, interval, target, eps, warm, options = args
    _, (d_max, d_min) = _directions(request.sweep_axis)
    box = EpsilonBox(request.sweep_axis, target, eps)
    scenario = replace(request.scenario, epsilon_box=box)
    out = []
    for side, d, w in (("max", d_max, warm[0]), ("min", d_min, warm[1])):
        obj = ObjectiveSpec(d[0], d[1], ref_bus, request.ref_phase)
        starts = [w, None] if w is not None else [None]
        out.append(_attempt(case, obj, scenario, starts, options))
    return out


def _chord_bound(prev, a, b, nxt) -> float:
    """Upper bound on how far a locally convex curve through ``a`` and ``b``
    can bulge past the chord: height of the triangle closed by the
    neighbouring edges extended beyond ``a`` and ``b``."""
    ab = b - a
    length = float(np.hypot(*ab))
    if length == 0.0:
        return 0.0
    d1, d2 = a - prev, b - nxt
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-14:
        return 0.0 if abs(ab[0] * d1[1] - ab[1] * d1[0]) < 1e-14 else 0.5 * length
    w = b - a
    s = (w[0] * d2[1] - w[1] * d2[0]) / den
    t = (w[0] * d1[1] - w[1] * d1[0]) / den
    if s < 0 or t < 0:
        # inflection: no enclosing triangle
        return 0.5 * length
    c = a + s * d1 - a
    return float(abs(ab[0] * c[1] - ab[1] * c[0]) / length)


def _interval_errors(targets, results) -> np.ndarray:
    """Chord-error bound per gap between consecutive (sorted) targets, in
    coordinates normalised by the current bounding box."""
    n = len(targets)
    verts = []  # (side, index, point) around the closed polygon
    for side, order in ((0, range(n)), (1, range(n - 1, -1, -1))):
        for i in order:
            sol = results[targets[i]][side]
            if sol is not None and sol.ok:
                verts.append((side, i, np.array(sol.ref_injection, dtype=float)))
    err = np.zeros(n - 1)
    if len(verts) < 3:
        return err + 1.0
    pts = np.array([v[2] for v in verts])
    scale = np.maximum(pts.max(axis=0) - pts.min(axis=0), 1e-12)
    pts = pts / scale
    m = len(verts)
    for e in range(m):
        (sa, ia, _), (sb, ib, _) = verts[e], verts[(e + 1) % m]
        if sa != sb:
            continue  # end caps are not refined by a new target
        h = _chord_bound(pts[e - 1], pts[e], pts[(e + 1) % m], pts[(e + 2) % m])
        lo_i, hi_i = min(ia, ib), max(ia, ib)
        # a bridged gap charges every interval it spans
        err[lo_i:hi_i] = np.maximum(err[lo_i:hi_i], h)
    return err


def _nearest_warm(solved, t, default):
    if not solved:
        return default
    near = min(solved, key=lambda s: (abs(s - t), s))
    return tuple(r.x if r.ok else d for r, d in zip(solved[near], default))


def trace_boundary(
    case: NetworkCase, request: FlexAreaRequest, jobs: int = 1, options: IPMOptions | None = None
) -> FlexBoundary:
    """Trace the ``2k``-point boundary described by ``request``.

    Raises :class:`DegenerateBoundaryError` (carrying the partial boundary)
    when fewer than three distinct feasible points are found, and
    :class:`BoundarySolveError` when the range solves fail for reasons other
    than infeasibility.
    """
    ref_bus = _ref_bus(case, request.ref_bus)
    base = compute_base_point(case, ref_bus, request.ref_phase)
    kw = case.kw_per_unit
    net = compile_network(case)

    def degenerate(points, infeasible=(), rng=None, eps=None):
        b = FlexBoundary(points, base, 0.0, list(infeasible), [], request, rng, eps)
        return DegenerateBoundaryError(b)

    if not net.flex_slots:
        raise degenerate([BoundaryPoint(0, "base", "optimal", base[0], base[1])])

    (d_lo, d_hi), _ = _directions(request.sweep_axis)
    lo = _attempt(case, ObjectiveSpec(*d_lo, ref_bus, request.ref_phase), request.scenario, [None], options)
    hi = _attempt(case, ObjectiveSpec(*d_hi, ref_bus, request.ref_phase), request.scenario, [lo.x, None], options)
    for s in (lo, hi):
        if not s.ok:
            if s.status == "infeasible":
                raise degenerate([], range(request.k))
            raise BoundarySolveError(f"range solve along {request.sweep_axis} ended with status {s.status}")
    axis = 0 if request.sweep_axis == "P" else 1
    vmin, vmax = lo.ref_injection[axis], hi.ref_injection[axis]
    span = vmax - vmin
    eps = request.epsilon if request.epsilon is not None else (span / (1000 * request.k) if span > 0 else 1e-9)
    k = request.k
    adaptive = request.spacing == "adaptive"
    first = sweep_targets(vmin, vmax, max(2, (k + 1) // 2) if adaptive else k, "cosine" if adaptive else request.spacing)

    solved: dict = {}
    pool = ProcessPoolExecutor(max_workers=jobs) if jobs > 1 else None

    def run(batch):
        batch = sorted(batch)
        if pool is not None:
            # independent intervals with flat starts
            tasks = [(case, request, ref_bus, None, t, eps, (None, None), options) for t in batch]
            for t, res in zip(batch, pool.map(_solve_interval, tasks)):
                solved[t] = res
            return
        for t in batch:
            warm = _nearest_warm(solved, t, (lo.x, lo.x))
            solved[t] = _solve_interval((case, request, ref_bus, None, t, eps, warm, options))

    try:
        run(list(first))
        # adaptive: split the gaps with the largest chord-error bound, in halving rounds
        while len(solved) < k:
            ts = sorted(solved)
            err = _interval_errors(ts, solved)
            need = k - len(solved)
            order = sorted(range(len(err)), key=lambda i: (-err[i], i))
            run([0.5 * (ts[i] + ts[i + 1]) for i in order[: (need + 1) // 2]])
    finally:
        if pool is not None:
            pool.shutdown()

    targets = sorted(solved)
    results = [solved[t] for t in targets]
    ends = {0: lo, k - 1: hi}
    max_side = [_point(case, request, i, "max", r[0], ends.get(i)) for i, r in enumerate(results)]
    min_side = [_point(case, request, i, "min", r[1], ends.get(i)) for i, r in enumerate(results)]
    points = max_side + min_side[::-1]
    infeasible = [i for i in range(k) if not (max_side[i].ok or min_side[i].ok)]

    # gaps: consecutive feasible vertices with skipped points between them
    feas_idx = [j for j, p in enumerate(points) if p.ok]
    gaps = []
    for a, (i, j) in enumerate(zip(feas_idx, feas_idx[1:] + feas_idx[:1])):
        skipped = (j - i - 1) % len(points) if len(feas_idx) > 1 else 0
        if skipped:
            gaps.append([a, (a + 1) % len(feas_idx)])

    rng = (vmin * kw, vmax * kw)
    boundary = FlexBoundary(points, base, 0.0, infeasible, gaps, request, rng, eps * kw)
    poly = boundary.polygon()
    if len(_dedupe(poly)) < 3:
        raise DegenerateBoundaryError(boundary)
    boundary.simple = is_simple(poly)
    boundary.area = polygon_area(poly, check=False)
    return boundary


# ---------------------------------------------------------------------------
# export


def _request_dict(request: FlexAreaRequest | None):
    if request is None:
        return None
    d = asdict(request)
    return d


def boundary_to_dict(boundary: FlexBoundary) -> dict:
    return {
        "request": _request_dict(boundary.request),
        "base_point": {"P_kW": boundary.base_point[0], "Q_kVAr": boundary.base_point[1]},
        "area_kVAr2": boundary.area,
        "sweep_range_kW": list(boundary.sweep_range) if boundary.sweep_range else None,
        "epsilon_kW": boundary.epsilon,
        "simple": boundary.simple,
        "infeasible_intervals": list(boundary.infeasible_intervals),
        "gaps": [list(g) for g in boundary.gaps],
        "points": [asdict(p) for p in boundary.points],
    }


def boundary_from_dict(doc: dict) -> FlexBoundary:
    try:
        points = [BoundaryPoint(**p) for p in doc["points"]]
        base = (float(doc["base_point"]["P_kW"]), float(doc["base_point"]["Q_kVAr"]))
        return FlexBoundary(
            points=points,
            base_point=base,
            area=float(doc["area_kVAr2"]),
            infeasible_intervals=list(doc.get("infeasible_intervals", [])),
            gaps=[list(g) for g in doc.get("gaps", [])],
            sweep_range=tuple(doc["sweep_range_kW"]) if doc.get("sweep_range_kW") else None,
            epsilon=doc.get("epsilon_kW"),
            simple=bool(doc.get("simple", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FlexMapError(f"malformed boundary document: {exc}") from exc


def write_boundary_json(boundary: FlexBoundary, path) -> None:
    with open(path, "w") as fh:
        json.dump(boundary_to_dict(boundary), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_boundary_json(path) -> FlexBoundary:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FlexMapError(f"cannot read boundary file {path}: {exc}") from exc
    return boundary_from_dict(doc)


def _fmt(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6f}"


def write_boundary_csv(boundary: FlexBoundary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval", "side", "P_kW", "Q_kVAr", "status"])
        for p in boundary.points:
            w.writerow([p.interval, p.side, _fmt(p.p_kw), _fmt(p.q_kvar), p.status])
