import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pqflex.powerflow import (
    A_OP,
    PowerFlowDiverged,
    SequenceTriple,
    Setpoints,
    UndefinedVUF,
    branch_flow,
    compile_network,
    residual_jacobian,
    residuals,
    sequence_components,
    solve_newton,
    solve_newton_batch,
    vuf,
    vuf_batch,
)

from .conftest import small_case

BAL = np.exp(1j * np.deg2rad([0.0, -120.0, 120.0]))


# -- symmetrical components -------------------------------------------------


def test_balanced_positive_set():
    s = sequence_components(*BAL)
    assert s.v1 == pytest.approx(1.0, abs=1e-15)
    assert abs(s.v2) < 1e-15
    assert abs(s.v0) < 1e-15
    assert vuf(s) < 1e-10


def test_pure_negative_set():
    s = sequence_components(BAL[0], BAL[2], BAL[1])
    assert abs(s.v1) < 1e-15
    assert s.v2 == pytest.approx(1.0, abs=1e-15)


def test_single_phase_sag():
    s = sequence_components(BAL[0], BAL[1], 0.95 * BAL[2])
    assert abs(s.v1) == pytest.approx(0.98333, abs=1e-5)
    assert abs(s.v2) == pytest.approx(0.016667, abs=1e-6)
    assert vuf(s) == pytest.approx(1.6949, abs=1e-4)
    assert vuf(s) == pytest.approx(100 * (0.05 / 3) / (1 - 0.05 / 3), rel=1e-12)


def test_vuf_undefined_for_zero_positive_sequence():
    with pytest.raises(UndefinedVUF):
        vuf(SequenceTriple(0j, 0j, 0.1 + 0j))


def test_vuf_batch_matches_scalar(rng):
    v = rng.normal(size=(20, 3)) + 1j * rng.normal(size=(20, 3)) + BAL
    expect = [vuf(sequence_components(*row)) for row in v]
    assert vuf_batch(v) == pytest.approx(expect, rel=1e-12)
    assert np.isnan(vuf_batch(np.zeros((1, 3))))[0]


phasor = st.builds(
    complex,
    st.floats(-2, 2, allow_nan=False),
    st.floats(-2, 2, allow_nan=False),
)


@settings(max_examples=200)
@given(phasor, phasor, phasor)
def test_fortescue_reconstruction(va, vb, vc):
    s = sequence_components(va, vb, vc)
    a, a2 = A_OP, A_OP**2
    assert abs(s.v0 + s.v1 + s.v2 - va) < 1e-12
    assert abs(s.v0 + a2 * s.v1 + a * s.v2 - vb) < 1e-12
    assert abs(s.v0 + a * s.v1 + a2 * s.v2 - vc) < 1e-12


@settings(max_examples=100)
@given(st.floats(0.1, 2.0), st.floats(-np.pi, np.pi))
def test_vuf_invariant_under_common_scaling_and_rotation(scale, angle):
    v = np.array([1.0, 0.97 * BAL[1], 1.02 * BAL[2]])
    base = vuf(sequence_components(*v))
    w = v * scale * np.exp(1j * angle)
    assert vuf(sequence_components(*w)) == pytest.approx(base, rel=1e-10)


# -- branch flows -----------------------------------------------------------


def test_branch_flow_hand_value():
    y = np.diag([10 - 100j] * 3)
    s = branch_flow(np.ones(3), 0.99 * np.ones(3), y)
    assert s == pytest.approx(np.full(3, 0.1 + 1.0j), abs=1e-12)


def test_branch_flow_zero_cases(rng):
    v = rng.normal(size=3) + 1j * rng.normal(size=3)
    y = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.allclose(branch_flow(v, v, y), 0)
    assert np.allclose(branch_flow(v, 0.9 * v, np.zeros((3, 3))), 0)


def test_branch_flow_coupled_matches_definition(rng):
    vi = BAL * 1.01
    vj = BAL * (0.98 + 0.01j)
    y = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    y = y + y.T
    expect = vi * np.conj(y @ (vi - vj))
    assert branch_flow(vi, vj, y) == pytest.approx(expect, abs=1e-12)


# -- residuals and Newton ---------------------------------------------------


def test_unloaded_network():
    case = small_case(3)
    net = compile_network(case)
    v = net.flat_start()
    assert np.abs(residuals(case, None, v)).max() == 0.0
    state = solve_newton(case)
    assert np.allclose(state.v, np.tile(BAL, 3))
    assert np.allclose(state.s_from, 0)


def test_two_bus_single_phase_load():
    # 0.01 + 0.005j p.u. on phase a at bus 2 (base 1 MVA -> 10 kW, 5 kVAr)
    case = small_case(2, loads=[(2, {"a": (10.0, 5.0)})])
    state = solve_newton(case)
    va = state.voltage("2", "a")
    assert 0.98 < abs(va) < 1.0
    assert abs(state.voltage("2", "b")) == pytest.approx(1.0, abs=1e-12)
    assert abs(state.voltage("2", "c")) == pytest.approx(1.0, abs=1e-12)
    # independent oracle: the scalar two-bus equation V = 1 - conj(s / V) / y,
    # solved by fixed-point iteration on the high-voltage branch
    y, s = 10 - 100j, 0.01 + 0.005j
    v = 1.0 + 0j
    for _ in range(200):
        v = 1 - np.conj(s / v) / y
    assert va == pytest.approx(v, abs=1e-9)


def test_5bus_residuals_at_solution(case5):
    state = solve_newton(case5)
    assert np.abs(residuals(case5, None, state.v)).max() < 1e-8


def test_unbalanced_5bus_phase_voltages_differ(case5_unb):
    state = solve_newton(case5_unb)
    mags = np.abs(state.bus_voltages("2"))
    assert mags.max() - mags.min() > 1e-4


def test_balanced_5bus_is_symmetric(case5):
    state = solve_newton(case5)
    for bus in ("2", "3", "4", "5"):
        va, vb, vc = state.bus_voltages(bus)
        assert vb == pytest.approx(va * BAL[1], abs=1e-10)
        assert vc == pytest.approx(va * BAL[2], abs=1e-10)
        assert state.vuf(bus) < 1e-8


def test_5bus_unbalanced_frozen_voltages(case5_unb):
    """Regression values from the Newton solution itself, cross-checked
    against the dense and sparse kernels."""
    state = solve_newton(case5_unb)
    dense = solve_newton_batch(case5_unb, np.zeros((1, 3)), np.zeros((1, 3)))[0][0]
    assert np.allclose(state.v, dense, atol=1e-9)
    mag = [0.95213879, 0.96636123, 0.97459338, 0.93145759, 0.94632458, 0.95485603, 0.92685502, 0.9418661, 0.95046491]
    ang = [0.55643975, -120.20743203, 120.58438185, 0.75074359, -120.03805127, 120.77615987, 0.79511022, -119.99946209, 120.81987877]
    assert np.allclose(np.abs(state.v[3:12]), mag, atol=1e-7)
    assert np.allclose(np.degrees(np.angle(state.v[3:12])), ang, atol=1e-6)
    # buses 4 and 5 are identical taps off bus 3
    assert np.allclose(state.v[12:15], state.v[9:12])


def test_perturbation_is_local(case5):
    state = solve_newton(case5)
    net = compile_network(case5)
    v = state.v.copy()
    k = net.node("4", "a")
    v[k] += 0.01
    r = residuals(case5, None, v) - residuals(case5, None, state.v)
    m = len(net.var_nodes)
    changed = {net.nodes[net.var_nodes[i % m]][0] for i in np.flatnonzero(np.abs(r) > 1e-12)}
    assert changed == {"3", "4"}


def test_energy_bookkeeping(case5_unb):
    state = solve_newton(case5_unb)
    line_losses = (state.s_from + state.s_to).sum()
    assert abs(state.s_inj.sum() - line_losses) < 1e-8


def test_residual_jacobian_vs_central_differences(case5_unb, rng):
    net = compile_network(case5_unb)
    var = net.var_nodes
    h = 1e-6
    for _ in range(10):
        v = net.flat_start() * (1 + 0.05 * rng.normal(size=net.n_nodes)) + 0.02j * rng.normal(size=net.n_nodes)
        v[net.ref_nodes] = net.v_ref
        J = residual_jacobian(case5_unb, v).toarray()
        m = len(var)
        fd = np.zeros_like(J)
        for i in range(2 * m):
            dv = np.zeros(net.n_nodes, dtype=complex)
            dv[var[i % m]] = h if i < m else 1j * h
            fd[:, i] = (residuals(case5_unb, None, v + dv) - residuals(case5_unb, None, v - dv)) / (2 * h)
        err = np.abs(J - fd).max() / np.abs(J).max()
        assert err < 1e-5


def test_singular_or_diverged_reported():
    # a 50 MW load on a weak line has no power-flow solution
    case = small_case(2, y=1 - 1j, loads=[(2, {"a": (5e4, 0.0)})])
    with pytest.raises(PowerFlowDiverged) as exc:
        solve_newton(case)
    assert exc.value.residual_norm > 0


def test_newton_is_deterministic(case5_1ph):
    a = solve_newton(case5_1ph).v
    b = solve_newton(case5_1ph).v
    assert np.array_equal(a, b)


def test_setpoints_enter_injection(case5_1ph):
    net = compile_network(case5_1ph)
    sp = Setpoints.from_units(net, {"Fa": {"a": (0.05, 0.0)}})
    base = solve_newton(case5_1ph)
    state = solve_newton(case5_1ph, sp)
    ra = net.node("1", "a")
    # positive flex output reduces the draw from the grid
    assert (state.s_inj[ra] - base.s_inj[ra]).real < -0.04


@settings(max_examples=25, deadline=None)
@given(
    n_bus=st.integers(2, 5),
    p=st.lists(st.floats(0.0, 40.0), min_size=3, max_size=3),
    pf=st.floats(0.8, 1.0),
)
def test_newton_converges_on_random_small_cases(n_bus, p, pf):
    tan = np.tan(np.arccos(pf))
    loads = [(b, {ph: (pk, pk * tan) for ph, pk in zip("abc", p)}) for b in range(2, n_bus + 1)]
    case = small_case(n_bus, loads=loads)
    state = solve_newton(case)
    assert np.abs(residuals(case, None, state.v)).max() < 1e-8
    assert np.abs(state.v[compile_network(case).ref_nodes] - BAL).max() == 0.0


def test_batch_matches_single(case5_1ph, rng):
    net = compile_network(case5_1ph)
    fp = rng.uniform(-0.08, 0.08, size=(6, 3))
    fq = rng.uniform(-0.08, 0.08, size=(6, 3))
    V, status = solve_newton_batch(case5_1ph, fp, fq)
    assert (status == 0).all()
    for i in range(6):
        v = solve_newton(case5_1ph, Setpoints(fp[i], fq[i], np.zeros(0), np.zeros(0))).v
        assert np.allclose(V[i], v, atol=1e-9)
    assert len(net.flex_slots) == 3
