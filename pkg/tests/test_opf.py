import numpy as np
import pytest

from pqflex.opf import (
    EpsilonBox,
    ObjectiveSpec,
    ProblemError,
    ScenarioConfig,
    build_problem,
    check_derivatives,
    solve,
)
from pqflex.powerflow import compile_network, residuals, sequence_components, solve_newton, vuf

from .conftest import small_case

MAX_P = ObjectiveSpec(1.0, 0.0)
MIN_P = ObjectiveSpec(-1.0, 0.0)


def random_states(prob, rng, n=10):
    x0 = prob.initial_point()
    nv = prob.n_v
    for _ in range(n):
        x = x0.copy()
        x[: 2 * nv] += 0.02 * rng.normal(size=2 * nv)
        x[2 * nv :] += 0.02 * rng.normal(size=len(x) - 2 * nv)
        yield x


# -- construction -----------------------------------------------------------


def test_counts_single_phase_units(case5_1ph):
    prob = build_problem(case5_1ph, MAX_P)
    c = prob.counts
    assert c["balance"] == 2 * 12
    assert c["voltage"] == 12
    assert c["flex_box"] == 6
    assert c["vuf"] == 0
    assert c["coordination"] == 0
    assert c["variables"] == 2 * 12 + 2 * 3


def test_counts_balanced_unit(case5):
    c = build_problem(case5, MAX_P).counts
    # two free variables (P, Q of the leading phase), four ties for the others
    assert c["flex_box"] == 2
    assert c["balanced_tie"] == 4
    assert c["variables"] == 2 * 12 + 2 * 3


def test_vuf_row_per_monitored_bus(case5_1ph):
    prob = build_problem(case5_1ph, MAX_P, ScenarioConfig(vuf_limit=1.3))
    assert prob.counts["vuf"] == len(case5_1ph.vu_monitored) == 5
    assert len(prob.h(prob.initial_point())) == len(prob.ineq_labels)


def test_phase_restricted_fixes_off_phase(case5_1ph):
    prob = build_problem(case5_1ph, ObjectiveSpec(1.0, 0.0, ref_phase="b"), ScenarioConfig(coordination="phase_restricted"))
    assert prob.counts["coordination"] == 4
    sol = solve(prob)
    assert sol.ok
    net = prob.network
    for k, (_, ph) in enumerate(net.flex_slots):
        if ph != "b":
            assert abs(sol.flex_setpoints.flex_p[k]) < 1e-9
            assert abs(sol.flex_setpoints.flex_q[k]) < 1e-9


def test_aggregate_zero_semantics():
    # two units on phase a so the aggregate can be zero with nonzero parts
    case = small_case(
        3,
        loads=[(2, {ph: (20.0, 8.0) for ph in "abc"}), (3, {ph: (20.0, 8.0) for ph in "abc"})],
        flex=[("U1", 2, "a", 10.0, False), ("U2", 3, "a", 10.0, False), ("U3", 3, "b", 10.0, False)],
        v_min=0.9,
    )
    scen = ScenarioConfig(coordination="phase_restricted", coordination_mode="aggregate_zero")
    sol = solve(build_problem(case, ObjectiveSpec(0.3, 1.0, ref_phase="b"), scen))
    assert sol.ok
    net = compile_network(case)
    on_a = [k for k, (_, ph) in enumerate(net.flex_slots) if ph == "a"]
    assert abs(sol.flex_setpoints.flex_p[on_a].sum()) < 1e-9
    assert abs(sol.flex_setpoints.flex_q[on_a].sum()) < 1e-9


def test_bad_inputs(case5):
    with pytest.raises(ProblemError):
        ObjectiveSpec(0.0, 0.0)
    with pytest.raises(ProblemError):
        build_problem(case5, ObjectiveSpec(1.0, 0.0, ref_bus="9"))
    with pytest.raises(ProblemError):
        ScenarioConfig(vuf_limit=0.0)
    with pytest.raises(ProblemError):
        EpsilonBox("P", 0.0, 0.0)
    unmonitored = small_case(2, flex=[("U", 2, "abc", 5.0, True)])
    with pytest.raises(ProblemError, match="vu_monitored"):
        build_problem(unmonitored, MAX_P, ScenarioConfig(vuf_limit=1.0))


# -- derivatives -------------------------------------------------------------


@pytest.mark.parametrize(
    "scenario",
    [
        ScenarioConfig(),
        ScenarioConfig(vuf_limit=0.5),
        ScenarioConfig(vuf_limit=0.1, coordination="phase_restricted"),
        ScenarioConfig(epsilon_box=EpsilonBox("P", 0.05, 1e-3)),
        ScenarioConfig(epsilon_box=EpsilonBox("Q", -0.02, 1e-3), vuf_limit=1.0),
    ],
)
def test_derivatives_vs_central_differences(case5_1ph, rng, scenario):
    prob = build_problem(case5_1ph, ObjectiveSpec(0.6, -0.8, ref_phase="b"), scenario)
    errs = [check_derivatives(prob, x, seed=i) for i, x in enumerate(random_states(prob, rng))]
    assert max(errs) < 1e-5


def test_vuf_rows_derivatives_only(case5_unb, rng):
    prob = build_problem(case5_unb, MAX_P, ScenarioConfig(vuf_limit=0.5))
    rows = prob.ineq_labels == "vuf"
    assert rows.sum() == 5
    h = 1e-6
    for x in random_states(prob, rng):
        J = prob.dh(x).toarray()[rows]
        fd = np.zeros_like(J)
        for i in range(len(x)):
            e = np.zeros(len(x))
            e[i] = h
            fd[:, i] = (prob.h(x + e)[rows] - prob.h(x - e)[rows]) / (2 * h)
        scale = np.maximum(np.abs(J).max(axis=1), 1e-12)
        assert (np.abs(J - fd).max(axis=1) / scale).max() < 1e-5


def test_linear_rows_exact(case5, rng):
    prob = build_problem(case5, MAX_P)
    x = next(random_states(prob, rng, 1))
    boxes = np.isin(prob.ineq_labels, ["flex_box"])
    J = prob.dh(x).toarray()[boxes]
    assert set(np.unique(J)) <= {-1.0, 0.0, 1.0}


# -- solving -----------------------------------------------------------------


def test_no_flex_is_base_power_flow():
    case = small_case(3, loads=[(2, {"a": (10.0, 4.0)}), (3, {"b": (6.0, 2.0)})])
    sol = solve(build_problem(case, MAX_P))
    assert sol.ok
    base = solve_newton(case)
    ra = compile_network(case).node("1", "a")
    assert sol.ref_injection[0] == pytest.approx(base.s_inj[ra].real, abs=1e-8)


def test_balanced_unit_shifts_reference_by_about_8kw(case5):
    sol_max = solve(build_problem(case5, MAX_P))
    sol_min = solve(build_problem(case5, MIN_P))
    base = solve_newton(case5)
    ra = compile_network(case5).node("1", "a")
    kw = case5.kw_per_unit
    p0 = base.s_inj[ra].real * kw
    assert sol_max.ok and sol_min.ok
    # injection at the slack in generator convention: ±8 kW per phase plus loss change
    for sol in (sol_max, sol_min):
        shift = abs(sol.ref_injection[0] * kw - p0)
        assert 6.0 < shift < 10.0
        assert abs(sol.flex_setpoints.flex_p[0]) <= 8.0 / kw + 1e-8


def test_solution_verified_by_power_flow(case5_1ph):
    prob = build_problem(case5_1ph, ObjectiveSpec(0.3, 0.9, ref_phase="c"), ScenarioConfig(vuf_limit=0.5))
    sol = solve(prob)
    assert sol.ok
    assert sol.kkt_residual < 1e-6 and sol.max_violation < 1e-6
    r = residuals(case5_1ph, sol.flex_setpoints, sol.state.v)
    assert np.abs(r).max() < 1e-6
    for bus in case5_1ph.vu_monitored:
        va, vb, vc = sol.state.bus_voltages(bus)
        assert vuf(sequence_components(va, vb, vc)) <= 0.5 + 1e-6


def test_direction_scaling_invariance(case5_1ph):
    a = solve(build_problem(case5_1ph, ObjectiveSpec(1.0, 2.0, ref_phase="b")))
    b = solve(build_problem(case5_1ph, ObjectiveSpec(7.0, 14.0, ref_phase="b")))
    assert a.ok and b.ok
    assert np.allclose(a.x, b.x, atol=1e-7)


def test_solve_is_deterministic(case5_1ph):
    prob = build_problem(case5_1ph, MIN_P, ScenarioConfig(vuf_limit=1.0))
    assert np.array_equal(solve(prob).x, solve(prob).x)


LIMITS = (None, 1.0, 0.5, 0.1)
# two local optima for -P on phase b: the unconstrained solve lands on
# -0.29636 pu while the VUF 1.0 solve finds -0.29643 pu with different setpoints
LOCAL_OPTIMA = pytest.mark.xfail(reason="non-convex program, solver returns a worse local optimum", strict=False)


@pytest.mark.parametrize("alpha", [(1.0, 0.0), pytest.param((-1.0, 0.0), marks=LOCAL_OPTIMA), (0.0, 1.0), (0.7, -0.7)])
def test_nesting_of_objectives(case5_1ph, alpha):
    obj = ObjectiveSpec(*alpha, ref_phase="b")
    vals = []
    for lim in LIMITS:
        sol = solve(build_problem(case5_1ph, obj, ScenarioConfig(vuf_limit=lim)))
        assert sol.ok
        vals.append(sol.objective_value)
    # tighter limits never improve the minimum
    assert all(b >= a - 1e-6 for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("alpha", [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.7, -0.7)])
def test_nesting_of_feasible_sets(case5_1ph, alpha):
    obj = ObjectiveSpec(*alpha, ref_phase="b")
    probs = [build_problem(case5_1ph, obj, ScenarioConfig(vuf_limit=lim)) for lim in LIMITS]
    for i, tight in enumerate(probs):
        sol = solve(tight)
        assert sol.ok
        # a solution under a tighter limit satisfies every looser program
        for loose in probs[:i]:
            assert loose.max_violation(sol.x) < 1e-6
    full = solve(build_problem(case5_1ph, obj)).objective_value
    pr = solve(build_problem(case5_1ph, obj, ScenarioConfig(coordination="phase_restricted"))).objective_value
    assert pr >= full - 1e-6


def test_epsilon_box_out_of_range_infeasible(case5):
    kw = case5.kw_per_unit
    box = EpsilonBox("P", 500.0 / kw, 1e-3)
    sol = solve(build_problem(case5, ObjectiveSpec(0.0, 1.0), ScenarioConfig(epsilon_box=box)))
    assert sol.status == "infeasible"


def test_epsilon_box_holds(case5):
    base = solve_newton(case5)
    ra = compile_network(case5).node("1", "a")
    p0 = base.s_inj[ra].real
    eps = 1e-4
    sol = solve(build_problem(case5, ObjectiveSpec(0.0, 1.0), ScenarioConfig(epsilon_box=EpsilonBox("P", p0 + 0.02, eps))))
    assert sol.ok
    assert abs(sol.ref_injection[0] - (p0 + 0.02)) <= eps + 1e-6


def test_warm_start_forms(case5):
    prob = build_problem(case5, MAX_P)
    cold = solve(prob)
    assert solve(prob, warm_start=cold).ok
    assert solve(prob, warm_start=(cold.state, cold.flex_setpoints)).ok
    assert solve(prob, warm_start=cold.x).ok
