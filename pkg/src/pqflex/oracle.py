"""Brute-force validation of traced boundaries.

Flex setpoints are sampled inside the unit boxes and pushed through the
Newton power flow; every operating constraint is then re-checked with
power-flow quantities only. Feasible samples give a cloud of reference-bus
(P, Q) points, and a traced boundary is sound if no such point lies
meaningfully outside it.
"""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .flexmap import FlexBoundary, PolygonError, _dedupe
from .netmodel import NetworkCase
from .opf import ScenarioConfig
from .powerflow import Setpoints, branch_flows_batch, compile_network, solve_newton, solve_newton_batch, vuf_batch

FAMILIES = ("nonconverged", "voltage_min", "voltage_max", "thermal", "flex_box", "vuf")
# constraint slack allowed when re-checking converged samples (per-unit)
CHECK_TOL = 1e-6
# fraction of the sample budget spent on box vertices
CORNER_SHARE = 0.1


@dataclass
class OracleReport:
    samples_total: int
    samples_feasible: int
    points: np.ndarray
    violated_constraint_histogram: dict
    max_outside_distance: float | None = None
    tolerance: float | None = None
    samples: np.ndarray = field(default=None, repr=False)
    feasible: np.ndarray = field(default=None, repr=False)
    seed: int | None = None
    ref_bus: str | None = None
    ref_phase: str | None = None

    @property
    def feasible_fraction(self) -> float:
        return self.samples_feasible / self.samples_total if self.samples_total else 0.0

    @property
    def passed(self) -> bool | None:
        if self.max_outside_distance is None or self.tolerance is None:
            return None
        return self.max_outside_distance <= self.tolerance


# ---------------------------------------------------------------------------
# sampling


def _slot_groups(net, scenario: ScenarioConfig, ref_phase: str):
    """Independent sampling groups: lists of slots that share one (p, q) draw,
    with bounds; off-phase slots under per-unit coordination are left out."""
    case = net.case
    restricted = scenario.coordination == "phase_restricted"
    per_unit = scenario.coordination_mode == "per_unit_zero"
    groups = []
    for ui, u in enumerate(case.flex_units):
        slots = [k for k, (uj, _) in enumerate(net.flex_slots) if uj == ui]
        if restricted and per_unit:
            slots = [k for k in slots if net.flex_slots[k][1] == ref_phase]
        if not slots:
            continue
        if u.balanced:
            groups.append(slots)
        else:
            groups.extend([k] for k in slots)
    return groups


def _aggregate_project(net, fp, fq, ref_phase, groups):
    """Shift off-phase unbalanced slots so each off phase sums to zero, then
    shrink towards zero until every slot is back inside its box."""
    bounds = net.flex_bounds
    free = {k for g in groups if len(g) == 1 for k in g}
    for ph in {p for _, p in net.flex_slots} - {ref_phase}:
        on = [k for k, (_, p) in enumerate(net.flex_slots) if p == ph]
        movable = [k for k in on if k in free]
        for x in (fp, fq):
            total = x[:, on].sum(axis=1)
            if movable:
                x[:, movable] -= (total / len(movable))[:, None]
            else:
                x[:, on] = 0.0
    lo_p, hi_p, lo_q, hi_q = bounds.T
    scale = np.ones(len(fp))
    for x, lo, hi in ((fp, lo_p, hi_p), (fq, lo_q, hi_q)):
        with np.errstate(divide="ignore", invalid="ignore"):
            up = np.where(x > hi, hi / x, 1.0)
            dn = np.where(x < lo, lo / x, 1.0)
        scale = np.minimum(scale, np.nan_to_num(np.minimum(up, dn), nan=0.0, posinf=1.0).min(axis=1))
    scale = np.clip(scale, 0.0, 1.0)
    fp *= scale[:, None]
    fq *= scale[:, None]


def draw_setpoints(case: NetworkCase, scenario: ScenarioConfig, n: int, seed: int, ref_phase: str = "a", corners: bool = True):
    """``(flex_p, flex_q)`` arrays of shape ``(n, slots)``; box vertices first."""
    net = compile_network(case)
    rng = np.random.default_rng(seed)
    groups = _slot_groups(net, scenario, ref_phase)
    nslots = len(net.flex_slots)
    fp = np.zeros((n, nslots))
    fq = np.zeros((n, nslots))
    if not groups:
        return fp, fq
    lead = [g[0] for g in groups]
    b = net.flex_bounds[lead]
    # free dimensions: p then q of each group
    lo = np.concatenate([b[:, 0], b[:, 2]])
    hi = np.concatenate([b[:, 1], b[:, 3]])
    u = rng.uniform(lo, hi, size=(n, len(lo)))

    if corners:
        n_dim = len(lo)
        budget = int(CORNER_SHARE * n)
        if n_dim <= 20 and 2**n_dim <= budget:
            verts = np.array(list(itertools.product((0, 1), repeat=n_dim)), dtype=float)
        else:
            verts = rng.integers(0, 2, size=(budget, n_dim)).astype(float)
        m = min(len(verts), n)
        u[:m] = lo + verts[:m] * (hi - lo)

    ng = len(groups)
    for gi, g in enumerate(groups):
        fp[:, g] = u[:, [gi]]
        fq[:, g] = u[:, [ng + gi]]
    if scenario.coordination == "phase_restricted" and scenario.coordination_mode == "aggregate_zero":
        _aggregate_project(net, fp, fq, ref_phase, groups)
    return fp, fq


def sample_feasible(
    case: NetworkCase,
    scenario: ScenarioConfig | None = None,
    n: int = 10_000,
    seed: int = 0,
    ref_bus=None,
    ref_phase: str = "a",
    corners: bool = True,
) -> OracleReport:
    """Sample ``n`` setpoint vectors and keep the (P, Q) of those passing every check."""
    if n < 1:
        raise ValueError("n must be at least 1")
    scenario = scenario or ScenarioConfig()
    net = compile_network(case)
    ref_bus = case.reference_bus.id if ref_bus is None else str(ref_bus)
    r = net.node(ref_bus, ref_phase)
    fp, fq = draw_setpoints(case, scenario, n, seed, ref_phase, corners)

    try:
        v0 = solve_newton(case, Setpoints.zero(net)).v
    except Exception:
        v0 = None
    V, status = solve_newton_batch(case, fp, fq, v0=v0)
    conv = status == 0
    hist = {f: 0 for f in FAMILIES}
    hist["nonconverged"] = int((~conv).sum())

    ok = conv.copy()
    Vc = np.where(conv[:, None], V, 1.0)
    var = net.var_nodes
    vm = np.abs(Vc[:, var])
    bus = [case.bus(net.nodes[k][0]) for k in var]
    vmin = np.array([b.v_min for b in bus])
    vmax = np.array([b.v_max for b in bus])
    checks = {
        "voltage_min": (vm < vmin - CHECK_TOL).any(axis=1),
        "voltage_max": (vm > vmax + CHECK_TOL).any(axis=1),
    }
    s_from, s_to = branch_flows_batch(net, Vc)
    smax = net.br_smax
    checks["thermal"] = (np.maximum(np.abs(s_from), np.abs(s_to)) > smax + CHECK_TOL).any(axis=1)
    bnd = net.flex_bounds
    checks["flex_box"] = (
        (fp < bnd[:, 0] - CHECK_TOL) | (fp > bnd[:, 1] + CHECK_TOL) | (fq < bnd[:, 2] - CHECK_TOL) | (fq > bnd[:, 3] + CHECK_TOL)
    ).any(axis=1)
    if scenario.vuf_limit is not None and len(net.monitored_nodes):
        vu = vuf_batch(Vc[:, net.monitored_nodes])
        checks["vuf"] = (~(vu <= scenario.vuf_limit + CHECK_TOL)).any(axis=1)
    for fam, bad in checks.items():
        bad = bad & conv
        hist[fam] = int(bad.sum())
        ok &= ~bad

    s_ref = Vc[:, r] * np.conj(Vc @ net.ybus_dense[r]) * case.kw_per_unit
    pq = np.column_stack([s_ref.real, s_ref.imag])
    pq[~conv] = np.nan
    return OracleReport(
        samples_total=n,
        samples_feasible=int(ok.sum()),
        points=pq[ok],
        violated_constraint_histogram=hist,
        samples=pq,
        feasible=ok,
        seed=seed,
        ref_bus=ref_bus,
        ref_phase=ref_phase,
    )


# ---------------------------------------------------------------------------
# geometry


def _inside(points, poly) -> np.ndarray:
    """Even-odd rule; points exactly on an edge may land either way (distance is 0 then)."""
    x, y = points[:, 0][:, None], points[:, 1][:, None]
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    straddle = (y1 > y) != (y2 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
    return (straddle & (x < xc)).sum(axis=1) % 2 == 1


def _edge_distance(points, poly) -> np.ndarray:
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    ap = points[:, None, :] - a[None, :, :]
    denom = (ab**2).sum(axis=1)
    t = np.clip((ap * ab).sum(axis=2) / np.where(denom > 0, denom, 1.0), 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.sqrt(((points[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)


def signed_distance(points, polygon) -> np.ndarray:
    """Distance to the polygon boundary, positive outside and negative inside."""
    poly = _dedupe(polygon)
    if len(poly) < 3:
        raise PolygonError("degenerate polygon")
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros(0)
    d = _edge_distance(pts, poly)
    return np.where(_inside(pts, poly), -d, d)


def verify_boundary(boundary: FlexBoundary, report: OracleReport, tolerance: float | None = None) -> OracleReport:
    """Attach the worst outside distance (kVA) of feasible samples to ``report``.

    The default tolerance is 1% of the boundary's bounding-box diagonal.
    """
    poly = boundary.polygon()
    if len(_dedupe(poly)) < 3:
        raise PolygonError("degenerate boundary cannot be verified")
    pts = report.points
    d = signed_distance(pts, poly) if len(pts) else np.zeros(0)
    report.max_outside_distance = float(max(0.0, d.max(initial=0.0)))
    report.tolerance = 0.01 * boundary.bbox_diagonal() if tolerance is None else float(tolerance)
    return report


# ---------------------------------------------------------------------------
# export


def report_to_dict(report: OracleReport) -> dict:
    return {
        "samples_total": report.samples_total,
        "samples_feasible": report.samples_feasible,
        "feasible_fraction": report.feasible_fraction,
        "max_outside_distance_kVA": report.max_outside_distance,
        "tolerance_kVA": report.tolerance,
        "passed": report.passed,
        "violated_constraint_histogram": dict(report.violated_constraint_histogram),
        "seed": report.seed,
        "ref_bus": report.ref_bus,
        "ref_phase": report.ref_phase,
    }


def write_report_json(report: OracleReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_samples_csv(report: OracleReport, path) -> None:
    samples = report.samples if report.samples is not None else report.points
    feasible = report.feasible if report.feasible is not None else np.ones(len(samples), dtype=bool)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["P_kW", "Q_kVAr", "feasible"])
        for (p, q), f in zip(samples, feasible):
            w.writerow(["" if np.isnan(p) else f"{p:.6f}", "" if np.isnan(q) else f"{q:.6f}", int(bool(f))])
