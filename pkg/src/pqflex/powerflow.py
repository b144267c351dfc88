"""Bus-injection three-phase power flow, symmetrical components and VUF.

Flow convention: ``s_ij`` is the complex power leaving bus ``i`` towards
``j`` on each phase, ``diag[V_i (V_i - V_j)^H Y_ij^H]``. The nodal injection
``s_i`` is the sum of flows leaving ``i`` over all incident lines, so
summing injections over every node gives the series losses.

Voltages are handled in rectangular coordinates. The reference bus is a
balanced source fixed at ``1∠0°, 1∠-120°, 1∠120°`` and is not a Newton
unknown.
"""
from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .netmodel import PHASE_INDEX, PHASES, NetworkCase

A_OP = np.exp(2j * np.pi / 3)
SLACK_PHASORS = {"a": 1.0 + 0j, "b": np.exp(-2j * np.pi / 3), "c": np.exp(2j * np.pi / 3)}
VUF_GUARD = 1e-6
# above this many unknown nodes the sparse Newton path is used
DENSE_MAX_NODES = 150


class PowerFlowError(Exception):
    pass


class PowerFlowDiverged(PowerFlowError):
    def __init__(self, residual_norm: float, iterations: int):
        self.residual_norm = residual_norm
        self.iterations = iterations
        super().__init__(f"power flow did not converge after {iterations} iterations (residual {residual_norm:.3e})")


class SingularJacobian(PowerFlowError):
    def __init__(self, iterations: int):
        self.iterations = iterations
        super().__init__(f"singular power-flow Jacobian at iteration {iterations}")


class UndefinedVUF(ValueError):
    """Positive-sequence voltage too small for a meaningful unbalance factor."""


# ---------------------------------------------------------------------------
# compiled network


@dataclass(eq=False)
class Network:
    """Index maps and sparse matrices derived once from a per-unit case."""

    case: NetworkCase
    nodes: list
    node_index: dict
    ref_nodes: np.ndarray
    var_nodes: np.ndarray
    v_ref: np.ndarray
    ybus: sp.csr_matrix
    br_line: np.ndarray
    br_phase: list
    cf: sp.csr_matrix
    ct: sp.csr_matrix
    yf: sp.csr_matrix
    yt: sp.csr_matrix
    br_smax: np.ndarray
    s_load: np.ndarray
    flex_slots: list
    flex_node: np.ndarray
    flex_bounds: np.ndarray
    gen_slots: list
    gen_node: np.ndarray
    gen_bounds: np.ndarray
    monitored: list
    monitored_nodes: np.ndarray
    _dense: np.ndarray = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def ybus_dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.ybus.toarray()
        return self._dense

    def node(self, bus: str, phase: str) -> int:
        return self.node_index[(bus, phase)]

    def flat_start(self) -> np.ndarray:
        return np.array([SLACK_PHASORS[ph] for _, ph in self.nodes], dtype=complex)

    def net_injection(self, setpoints: "Setpoints") -> np.ndarray:
        """Specified complex injection per node: generation + flex - load."""
        s = -self.s_load.copy()
        np.add.at(s, self.flex_node, setpoints.flex_p + 1j * setpoints.flex_q)
        np.add.at(s, self.gen_node, setpoints.gen_p + 1j * setpoints.gen_q)
        return s


_networks: "weakref.WeakKeyDictionary[NetworkCase, Network]" = weakref.WeakKeyDictionary()


def compile_network(case: NetworkCase) -> Network:
    """Build (and cache per case object) the matrices used by the solvers."""
    if not case.per_unit:
        raise ValueError("solvers need a per-unit case (see load_case / to_per_unit)")
    cached = _networks.get(case)
    if cached is not None:
        return cached

    ref_id = case.reference_bus.id
    nodes = [(b.id, ph) for b in case.buses for ph in PHASES if ph in b.phases]
    node_index = {nd: k for k, nd in enumerate(nodes)}
    N = len(nodes)
    ref_nodes = np.array([k for k, (b, _) in enumerate(nodes) if b == ref_id], dtype=np.intp)
    var_nodes = np.array([k for k, (b, _) in enumerate(nodes) if b != ref_id], dtype=np.intp)
    v_ref = np.array([SLACK_PHASORS[nodes[k][1]] for k in ref_nodes], dtype=complex)

    rows_f, cols_f, vals_f = [], [], []
    rows_t, cols_t, vals_t = [], [], []
    cf_r, cf_c, ct_r, ct_c = [], [], [], []
    br_line, br_phase, br_smax = [], [], []
    r = 0
    for li, ln in enumerate(case.lines):
        common = [ph for ph in PHASES if ph in case.bus(ln.from_bus).phases and ph in case.bus(ln.to_bus).phases]
        for ph in common:
            pi = PHASE_INDEX[ph]
            for ps in common:
                y = ln.y_series[pi, PHASE_INDEX[ps]]
                if y == 0:
                    continue
                fi, ti = node_index[(ln.from_bus, ps)], node_index[(ln.to_bus, ps)]
                rows_f += [r, r]
                cols_f += [fi, ti]
                vals_f += [y, -y]
                rows_t += [r, r]
                cols_t += [ti, fi]
                vals_t += [y, -y]
            cf_r.append(r)
            cf_c.append(node_index[(ln.from_bus, ph)])
            ct_r.append(r)
            ct_c.append(node_index[(ln.to_bus, ph)])
            br_line.append(li)
            br_phase.append(ph)
            br_smax.append(ln.s_max[pi])
            r += 1
    nbr = r
    yf = sp.csr_matrix((np.array(vals_f, dtype=complex), (rows_f, cols_f)), shape=(nbr, N))
    yt = sp.csr_matrix((np.array(vals_t, dtype=complex), (rows_t, cols_t)), shape=(nbr, N))
    cf = sp.csr_matrix((np.ones(nbr), (cf_r, cf_c)), shape=(nbr, N))
    ct = sp.csr_matrix((np.ones(nbr), (ct_r, ct_c)), shape=(nbr, N))
    ybus = (cf.T @ yf + ct.T @ yt).tocsr()
    ybus.sum_duplicates()
    # keep an explicit diagonal so Jacobian sparsity patterns are stable
    ybus = (ybus + sp.diags(np.zeros(N, dtype=complex))).tocsr()

    s_load = np.zeros(N, dtype=complex)
    for ld in case.loads:
        for ph in ld.phases:
            s_load[node_index[(ld.bus, ph)]] += ld.p.get(ph, 0.0) + 1j * ld.q.get(ph, 0.0)

    flex_slots, flex_node, flex_bounds = [], [], []
    for ui, u in enumerate(case.flex_units):
        for ph in u.phases:
            flex_slots.append((ui, ph))
            flex_node.append(node_index[(u.bus, ph)])
            flex_bounds.append((u.p_min[ph], u.p_max[ph], u.q_min[ph], u.q_max[ph]))
    gen_slots, gen_node, gen_bounds = [], [], []
    for gi, g in enumerate(case.generators):
        for ph in g.phases:
            gen_slots.append((gi, ph))
            gen_node.append(node_index[(g.bus, ph)])
            gen_bounds.append((g.p_min[ph], g.p_max[ph], g.q_min[ph], g.q_max[ph]))

    monitored = list(case.vu_monitored)
    monitored_nodes = np.array(
        [[node_index[(b, ph)] for ph in PHASES] for b in monitored], dtype=np.intp
    ).reshape(len(monitored), 3)

    net = Network(
        case=case,
        nodes=nodes,
        node_index=node_index,
        ref_nodes=ref_nodes,
        var_nodes=var_nodes,
        v_ref=v_ref,
        ybus=ybus,
        br_line=np.array(br_line, dtype=np.intp),
        br_phase=br_phase,
        cf=cf,
        ct=ct,
        yf=yf,
        yt=yt,
        br_smax=np.array(br_smax, dtype=float),
        s_load=s_load,
        flex_slots=flex_slots,
        flex_node=np.array(flex_node, dtype=np.intp),
        flex_bounds=np.array(flex_bounds, dtype=float).reshape(-1, 4),
        gen_slots=gen_slots,
        gen_node=np.array(gen_node, dtype=np.intp),
        gen_bounds=np.array(gen_bounds, dtype=float).reshape(-1, 4),
        monitored=monitored,
        monitored_nodes=monitored_nodes,
    )
    _networks[case] = net
    return net


@dataclass
class Setpoints:
    """Per-unit P/Q per flex slot and generator slot (slot order of :class:`Network`)."""

    flex_p: np.ndarray
    flex_q: np.ndarray
    gen_p: np.ndarray
    gen_q: np.ndarray

    @classmethod
    def zero(cls, net: Network) -> "Setpoints":
        nf, ng = len(net.flex_slots), len(net.gen_slots)
        gb = net.gen_bounds
        gp = np.clip(0.0, gb[:, 0], gb[:, 1]) if ng else np.zeros(0)
        gq = np.clip(0.0, gb[:, 2], gb[:, 3]) if ng else np.zeros(0)
        return cls(np.zeros(nf), np.zeros(nf), np.asarray(gp, float), np.asarray(gq, float))

    @classmethod
    def from_units(cls, net: Network, flex: dict) -> "Setpoints":
        """``flex`` maps unit id to ``{phase: (p, q)}`` in per-unit; missing slots are zero."""
        sp_ = cls.zero(net)
        ids = [u.id for u in net.case.flex_units]
        for k, (ui, ph) in enumerate(net.flex_slots):
            p, q = flex.get(ids[ui], {}).get(ph, (0.0, 0.0))
            sp_.flex_p[k] = p
            sp_.flex_q[k] = q
        return sp_


@dataclass
class PhasorState:
    """Complex voltages, injections and branch flows of one operating condition."""

    network: Network
    v: np.ndarray
    s_inj: np.ndarray
    s_from: np.ndarray
    s_to: np.ndarray
    iterations: int = 0
    residual_norm: float = 0.0

    @classmethod
    def from_voltages(cls, net: Network, v: np.ndarray, **kw) -> "PhasorState":
        v = np.asarray(v, dtype=complex)
        s_inj = v * np.conj(net.ybus @ v)
        s_from = (net.cf @ v) * np.conj(net.yf @ v)
        s_to = (net.ct @ v) * np.conj(net.yt @ v)
        return cls(net, v, s_inj, s_from, s_to, **kw)

    def voltage(self, bus: str, phase: str) -> complex:
        return complex(self.v[self.network.node(bus, phase)])

    def bus_voltages(self, bus: str) -> np.ndarray:
        """Phasors ``[va, vb, vc]``; NaN for phases absent at the bus."""
        out = np.full(3, np.nan + 0j)
        for ph in PHASES:
            k = self.network.node_index.get((bus, ph))
            if k is not None:
                out[PHASE_INDEX[ph]] = self.v[k]
        return out

    def injection(self, bus: str, phase: str) -> complex:
        return complex(self.s_inj[self.network.node(bus, phase)])

    def vuf(self, bus: str) -> float:
        va, vb, vc = self.bus_voltages(bus)
        return vuf(sequence_components(va, vb, vc))

    def losses(self) -> complex:
        return complex(self.s_inj.sum())


# ---------------------------------------------------------------------------
# elementary relations


def branch_flow(v_i, v_j, y_ij) -> np.ndarray:
    """Per-phase complex power leaving the ``i`` terminal of a line."""
    v_i = np.asarray(v_i, dtype=complex)
    v_j = np.asarray(v_j, dtype=complex)
    y = np.asarray(y_ij, dtype=complex)
    # diag[V_i (V_i - V_j)^H Y^H] evaluated row-wise
    return np.diag(np.outer(v_i, np.conj(v_i - v_j)) @ np.conj(y).T)


@dataclass(frozen=True)
class SequenceTriple:
    v0: complex
    v1: complex
    v2: complex


def sequence_components(va, vb, vc) -> SequenceTriple:
    a, a2 = A_OP, A_OP * A_OP
    return SequenceTriple(
        v0=(va + vb + vc) / 3,
        v1=(va + a * vb + a2 * vc) / 3,
        v2=(va + a2 * vb + a * vc) / 3,
    )


def vuf(seq: SequenceTriple) -> float:
    """Voltage unbalance factor in percent."""
    m1 = abs(seq.v1)
    if not m1 > VUF_GUARD:
        raise UndefinedVUF(f"|v1| = {m1:.3e} p.u. is below the guard {VUF_GUARD:g}")
    return 100.0 * abs(seq.v2) / m1


def vuf_batch(vabc: np.ndarray) -> np.ndarray:
    """VUF in percent for an array of shape ``(..., 3)``; NaN where undefined."""
    vabc = np.asarray(vabc, dtype=complex)
    a, a2 = A_OP, A_OP * A_OP
    v1 = np.abs(vabc[..., 0] + a * vabc[..., 1] + a2 * vabc[..., 2]) / 3
    v2 = np.abs(vabc[..., 0] + a2 * vabc[..., 1] + a * vabc[..., 2]) / 3
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v1 > VUF_GUARD, 100.0 * v2 / v1, np.nan)


# ---------------------------------------------------------------------------
# power-flow equations


def _full_voltage(net: Network, v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.shape != (net.n_nodes,):
        raise ValueError(f"voltage vector needs {net.n_nodes} entries (one per bus-phase), got {v.shape}")
    return v


def residuals(case: NetworkCase, setpoints: Setpoints | None, v) -> np.ndarray:
    """Balance mismatch ``[P...; Q...]`` for every non-reference bus-phase.

    Each entry is specified injection (generation - load + flex) minus the
    computed injection ``Re/Im(s_i)``.
    """
    net = compile_network(case)
    v = _full_voltage(net, v)
    setpoints = setpoints or Setpoints.zero(net)
    d = (net.net_injection(setpoints) - v * np.conj(net.ybus @ v))[net.var_nodes]
    return np.concatenate([d.real, d.imag])


def injection_derivatives(net: Network, v: np.ndarray):
    """Sparse ``dS/de`` and ``dS/df`` over all nodes (rectangular coordinates)."""
    i = net.ybus @ v
    dv = sp.diags(v)
    ci = sp.diags(np.conj(i))
    yc = net.ybus.conj()
    dsde = ci + dv @ yc
    dsdf = 1j * ci - 1j * (dv @ yc)
    return dsde.tocsr(), dsdf.tocsr()


def residual_jacobian(case: NetworkCase, v) -> sp.csr_matrix:
    """Jacobian of :func:`residuals` w.r.t. ``[e_var; f_var]``."""
    net = compile_network(case)
    v = _full_voltage(net, v)
    dsde, dsdf = injection_derivatives(net, v)
    var = net.var_nodes
    a = dsde[var][:, var]
    b = dsdf[var][:, var]
    return -sp.bmat([[a.real, b.real], [a.imag, b.imag]], format="csr")


def _newton_sparse(net: Network, v0, sspec, tol, max_iter):
    v = v0.copy()
    var = net.var_nodes
    m = len(var)
    norm = np.inf
    for it in range(max_iter + 1):
        d = sspec - (v * np.conj(net.ybus @ v))[var]
        r = np.concatenate([d.real, d.imag])
        norm = float(np.abs(r).max()) if m else 0.0
        if not np.isfinite(norm):
            return v, it, norm, 3
        if norm < tol:
            return v, it, norm, 0
        if it == max_iter:
            break
        dsde, dsdf = injection_derivatives(net, v)
        a = dsde[var][:, var]
        b = dsdf[var][:, var]
        jac = sp.bmat([[a.real, b.real], [a.imag, b.imag]], format="csc")
        try:
            dx = spla.splu(jac).solve(r)
        except RuntimeError:
            return v, it, norm, 2
        v[var] += dx[:m] + 1j * dx[m:]
    return v, max_iter, norm, 1


def solve_newton(
    case: NetworkCase,
    setpoints: Setpoints | None = None,
    *,
    tol: float = 1e-8,
    max_iter: int = 50,
    v0=None,
) -> PhasorState:
    """Newton-Raphson power flow with every injection fixed.

    Raises :class:`PowerFlowDiverged` or :class:`SingularJacobian`.
    """
    net = compile_network(case)
    setpoints = setpoints or Setpoints.zero(net)
    v_init = net.flat_start() if v0 is None else np.array(v0, dtype=complex)
    v_init[net.ref_nodes] = net.v_ref
    sspec = net.net_injection(setpoints)[net.var_nodes]
    if len(net.var_nodes) <= DENSE_MAX_NODES:
        v, it, norm, status = kernels.newton_dense(net.ybus_dense, v_init, net.var_nodes, sspec, tol, max_iter)
    else:
        v, it, norm, status = _newton_sparse(net, v_init, sspec, tol, max_iter)
    if status == 2:
        raise SingularJacobian(it)
    if status != 0:
        raise PowerFlowDiverged(norm, it)
    return PhasorState.from_voltages(net, v, iterations=int(it), residual_norm=float(norm))


def solve_newton_batch(case: NetworkCase, flex_p, flex_q, *, tol: float = 1e-8, max_iter: int = 50, v0=None):
    """One power flow per row of ``flex_p``/``flex_q`` (shape ``(n, n_flex_slots)``).

    Returns ``(V, status)``: full voltage vectors (one row per sample) and the
    kernel status codes (0 converged, 1 iteration limit, 2 singular, 3 NaN).
    Failures are reported per row instead of raised.
    """
    net = compile_network(case)
    flex_p = np.atleast_2d(np.asarray(flex_p, dtype=float))
    flex_q = np.atleast_2d(np.asarray(flex_q, dtype=float))
    n = flex_p.shape[0]
    base = net.net_injection(Setpoints.zero(net))
    s = np.tile(base, (n, 1))
    if len(net.flex_node):
        inc = sp.csr_matrix(
            (np.ones(len(net.flex_node)), (np.arange(len(net.flex_node)), net.flex_node)),
            shape=(len(net.flex_node), net.n_nodes),
        )
        s = s + (flex_p + 1j * flex_q) @ inc
    sspec = s[:, net.var_nodes]
    v_init = net.flat_start() if v0 is None else np.array(v0, dtype=complex)
    v_init[net.ref_nodes] = net.v_ref
    if len(net.var_nodes) <= DENSE_MAX_NODES:
        V, _, _, status = kernels.newton_dense_batch(net.ybus_dense, v_init, net.var_nodes, sspec, tol, max_iter)
        return V, np.asarray(status)
    V = np.empty((n, net.n_nodes), dtype=complex)
    status = np.zeros(n, dtype=np.int32)
    for i in range(n):
        V[i], _, _, status[i] = _newton_sparse(net, v_init, sspec[i], tol, max_iter)
    return V, status


def branch_flows_batch(net: Network, V) -> tuple[np.ndarray, np.ndarray]:
    """``(s_from, s_to)`` per branch-phase for each row of ``V``."""
    V = np.atleast_2d(V)
    s_from = (V @ net.cf.T.toarray()) * np.conj(V @ net.yf.T.toarray())
    s_to = (V @ net.ct.T.toarray()) * np.conj(V @ net.yt.T.toarray())
    return s_from, s_to
