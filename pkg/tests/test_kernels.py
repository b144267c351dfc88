import numpy as np
import pytest

from pqflex import _pykernels, kernels
from pqflex.powerflow import Setpoints, compile_network

compiled = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled kernels not built")


def problem(case, rng, n=8):
    net = compile_network(case)
    base = net.net_injection(Setpoints.zero(net))[net.var_nodes]
    s = np.tile(base, (n, 1)) * (1 + 0.3 * rng.normal(size=(n, len(base))))
    return net.ybus_dense, net.flat_start(), net.var_nodes, s


def test_backend_switch():
    before = kernels.backend()
    try:
        kernels.use_backend("python")
        assert kernels.backend() == "python"
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")
    finally:
        kernels.use_backend(before)


@compiled
def test_single_parity(case5_unb, rng):
    from pqflex import _ckernels

    Y, v0, var, S = problem(case5_unb, rng)
    for s in S:
        a = _pykernels.newton_dense(Y, v0, var, s, 1e-10, 50)
        b = _ckernels.newton_dense(Y, v0, var, s, 1e-10, 50)
        assert a[3] == b[3] == 0
        assert np.abs(a[0] - b[0]).max() < 1e-10


@compiled
def test_batch_parity(case5_1ph, rng):
    from pqflex import _ckernels

    Y, v0, var, S = problem(case5_1ph, rng, 20)
    va, ita, _, sa = _pykernels.newton_dense_batch(Y, v0, var, S, 1e-10, 50)
    vb, itb, _, sb = _ckernels.newton_dense_batch(Y, v0, var, S, 1e-10, 50)
    assert np.array_equal(np.asarray(sa), np.asarray(sb))
    assert np.abs(va - vb).max() < 1e-10


@compiled
def test_status_codes_agree_on_divergence(case5, rng):
    from pqflex import _ckernels

    Y, v0, var, S = problem(case5, rng, 1)
    huge = S[0] * 1e4
    a = _pykernels.newton_dense(Y, v0, var, huge, 1e-8, 15)
    b = _ckernels.newton_dense(Y, v0, var, huge, 1e-8, 15)
    assert a[3] != 0 and b[3] != 0


def test_python_backend_solves(case5_unb):
    from pqflex.powerflow import solve_newton

    before = kernels.backend()
    try:
        kernels.use_backend("python")
        v_py = solve_newton(case5_unb).v
    finally:
        kernels.use_backend(before)
    assert np.abs(solve_newton(case5_unb).v - v_py).max() < 1e-10
