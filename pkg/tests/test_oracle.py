import csv
import json

import numpy as np
import pytest

from pqflex.flexmap import BoundaryPoint, FlexBoundary, PolygonError, compute_base_point
from pqflex.opf import ScenarioConfig
from pqflex.oracle import (
    FAMILIES,
    OracleReport,
    draw_setpoints,
    sample_feasible,
    signed_distance,
    verify_boundary,
    write_report_json,
    write_samples_csv,
)
from pqflex.powerflow import compile_network

from .conftest import small_case

SQUARE = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)


def square_boundary():
    pts = [BoundaryPoint(i, "max", "optimal", float(p), float(q)) for i, (p, q) in enumerate(SQUARE)]
    return FlexBoundary(pts, (0.5, 0.5), 1.0, [])


def report_of(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return OracleReport(len(pts), len(pts), pts, {f: 0 for f in FAMILIES})


def test_signed_distance_geometry():
    d = signed_distance([(0.5, 0.5), (2.0, 0.5), (0.5, -0.25), (1.0, 1.0)], SQUARE)
    assert d == pytest.approx([-0.5, 1.0, 0.25, 0.0])
    with pytest.raises(PolygonError):
        signed_distance([(0, 0)], SQUARE[:2])


def test_verify_all_inside_is_zero():
    rep = verify_boundary(square_boundary(), report_of([(0.2, 0.3), (0.9, 0.9)]))
    assert rep.max_outside_distance == 0.0
    assert rep.tolerance == pytest.approx(0.01 * np.sqrt(2))
    assert rep.passed


def test_verify_one_point_outside_square():
    rep = verify_boundary(square_boundary(), report_of([(0.5, 0.5), (2.0, 0.5)]))
    assert rep.max_outside_distance == pytest.approx(1.0)
    assert not rep.passed


def test_verify_rejects_degenerate():
    b = FlexBoundary([BoundaryPoint(0, "base", "optimal", 0.0, 0.0)], (0.0, 0.0), 0.0, [])
    with pytest.raises(PolygonError):
        verify_boundary(b, report_of([(0, 0)]))


def test_no_flex_single_point():
    case = small_case(3, loads=[(2, {"a": (10.0, 3.0)})])
    rep = sample_feasible(case, n=100, seed=0)
    assert rep.samples_feasible == 100
    assert len(np.unique(np.round(rep.points, 9), axis=0)) == 1
    assert rep.points[0] == pytest.approx(compute_base_point(case), abs=1e-9)


def test_no_flex_infeasible_base_gives_no_points():
    case = small_case(2, y=1 - 2j, loads=[(2, {ph: (200.0, 80.0) for ph in "abc"})], v_min=0.999)
    rep = sample_feasible(case, n=50, seed=0)
    assert rep.samples_feasible == 0
    assert rep.violated_constraint_histogram["voltage_min"] == 50


def test_balanced_fraction_frozen(case5):
    rep = sample_feasible(case5, n=10_000, seed=1)
    assert rep.samples_total == 10_000
    assert rep.samples_feasible == 9047
    assert set(rep.violated_constraint_histogram) == set(FAMILIES)


def test_tighter_vuf_smaller_fraction(case5_1ph):
    kw = dict(n=4000, seed=3, ref_phase="b")
    loose = sample_feasible(case5_1ph, ScenarioConfig(vuf_limit=1.0, coordination="phase_restricted"), **kw)
    tight = sample_feasible(case5_1ph, ScenarioConfig(vuf_limit=0.1, coordination="phase_restricted"), **kw)
    assert tight.feasible_fraction < loose.feasible_fraction
    assert tight.violated_constraint_histogram["vuf"] > 0


def test_reproducible(case5_1ph):
    a = sample_feasible(case5_1ph, n=500, seed=9)
    b = sample_feasible(case5_1ph, n=500, seed=9)
    assert np.array_equal(a.points, b.points)
    assert a.violated_constraint_histogram == b.violated_constraint_histogram
    c = sample_feasible(case5_1ph, n=500, seed=10)
    assert not np.array_equal(a.samples[50:], c.samples[50:])


def test_balanced_ties_respected(case5):
    fp, fq = draw_setpoints(case5, ScenarioConfig(), 200, 0)
    assert np.all(fp == fp[:, [0]]) and np.all(fq == fq[:, [0]])


def test_per_unit_zero_draws(case5_1ph):
    net = compile_network(case5_1ph)
    fp, fq = draw_setpoints(case5_1ph, ScenarioConfig(coordination="phase_restricted"), 300, 0, ref_phase="b")
    off = [k for k, (_, ph) in enumerate(net.flex_slots) if ph != "b"]
    assert np.all(fp[:, off] == 0) and np.all(fq[:, off] == 0)
    on = [k for k, (_, ph) in enumerate(net.flex_slots) if ph == "b"]
    assert np.abs(fp[:, on]).max() > 0


def test_aggregate_zero_draws():
    case = small_case(3, flex=[("U1", 2, "a", 5.0, False), ("U2", 3, "a", 3.0, False), ("U3", 3, "b", 5.0, False)])
    net = compile_network(case)
    scen = ScenarioConfig(coordination="phase_restricted", coordination_mode="aggregate_zero")
    fp, fq = draw_setpoints(case, scen, 500, 2, ref_phase="b")
    on_a = [k for k, (_, ph) in enumerate(net.flex_slots) if ph == "a"]
    assert np.abs(fp[:, on_a].sum(axis=1)).max() < 1e-12
    assert np.abs(fq[:, on_a].sum(axis=1)).max() < 1e-12
    lo, hi = net.flex_bounds[:, 0], net.flex_bounds[:, 1]
    assert np.all(fp >= lo - 1e-15) and np.all(fp <= hi + 1e-15)


def test_corner_samples(case5_1ph):
    net = compile_network(case5_1ph)
    fp, fq = draw_setpoints(case5_1ph, ScenarioConfig(), 1000, 0)
    hi = net.flex_bounds[:, 1]
    # 6 free dimensions -> all 64 vertices lead the sample set
    corners = np.column_stack([fp[:64], fq[:64]])
    assert np.all(np.isclose(np.abs(corners), hi[0]))
    assert len(np.unique(corners, axis=0)) == 64


def test_feasible_points_pass_independent_checks(case5_1ph):
    rep = sample_feasible(case5_1ph, ScenarioConfig(vuf_limit=0.5), n=300, seed=4)
    assert rep.samples_feasible > 0
    assert np.isfinite(rep.points).all()
    assert rep.samples_feasible + sum(rep.violated_constraint_histogram.values()) >= rep.samples_total


def test_exports(tmp_path, case5_1ph):
    rep = sample_feasible(case5_1ph, n=50, seed=0)
    write_report_json(rep, tmp_path / "r.json")
    doc = json.loads((tmp_path / "r.json").read_text())
    assert doc["samples_total"] == 50
    assert doc["passed"] is None
    write_samples_csv(rep, tmp_path / "s.csv")
    rows = list(csv.reader((tmp_path / "s.csv").open()))
    assert rows[0] == ["P_kW", "Q_kVAr", "feasible"]
    assert len(rows) == 51
    assert sum(int(r[2]) for r in rows[1:]) == rep.samples_feasible


def test_bad_n(case5):
    with pytest.raises(ValueError):
        sample_feasible(case5, n=0)
