"""Nonlinear flexibility-estimation program for one objective direction.

Variables are rectangular voltages of every non-reference bus-phase plus
P/Q of every flex-unit slot and generator slot. All constraint families are
evaluated here with their own first and second derivatives; nothing is
shared with the power-flow module beyond the compiled network matrices.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ..netmodel import PHASES, NetworkCase
from ..powerflow import (
    A_OP,
    Network,
    PhasorState,
    PowerFlowError,
    Setpoints,
    compile_network,
    solve_newton,
)

COORDINATION = ("full", "phase_restricted")
COORDINATION_MODES = ("per_unit_zero", "aggregate_zero")


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectiveSpec:
    """Minimise ``alpha_p * P + alpha_q * Q`` of the injection at the reference bus/phase."""

    alpha_p: float
    alpha_q: float
    ref_bus: str | None = None
    ref_phase: str = "a"

    def __post_init__(self):
        if self.alpha_p == 0 and self.alpha_q == 0:
            raise ProblemError("objective direction (alpha_p, alpha_q) must be non-zero")
        if self.ref_phase not in PHASES:
            raise ProblemError(f"unknown phase {self.ref_phase!r}")

    def normalized(self) -> tuple[float, float]:
        n = np.hypot(self.alpha_p, self.alpha_q)
        return self.alpha_p / n, self.alpha_q / n


@dataclass(frozen=True)
class EpsilonBox:
    """Keep the reference P (or Q) within ``value ± epsilon`` (per-unit)."""

    target: str
    value: float
    epsilon: float

    def __post_init__(self):
        if self.target not in ("P", "Q"):
            raise ProblemError("epsilon box target must be 'P' or 'Q'")
        if not self.epsilon > 0:
            raise ProblemError("epsilon must be positive")


@dataclass(frozen=True)
class ScenarioConfig:
    vuf_limit: float | None = None
    coordination: str = "full"
    coordination_mode: str = "per_unit_zero"
    epsilon_box: EpsilonBox | None = None

    def __post_init__(self):
        if self.vuf_limit is not None and not self.vuf_limit > 0:
            raise ProblemError("vuf_limit must be positive when given")
        if self.coordination not in COORDINATION:
            raise ProblemError(f"coordination must be one of {COORDINATION}")
        if self.coordination_mode not in COORDINATION_MODES:
            raise ProblemError(f"coordination_mode must be one of {COORDINATION_MODES}")


class _Coo:
    """Accumulates COO triplets for a (rows x cols) block."""

    def __init__(self):
        self.r, self.c, self.d = [], [], []

    def add(self, r, c, d):
        self.r.append(np.asarray(r))
        self.c.append(np.asarray(c))
        self.d.append(np.asarray(d, dtype=float))

    def quad(self, i, j, a, nv):
        """Hessian of ``Re(V^T A conj(V))`` over ``[e; f]`` given ``A[i, j] = a``
        (indices already restricted to var nodes)."""
        ar, ai = a.real, a.imag
        for di, dj in ((0, 0), (nv, nv)):
            self.add(i + di, j + dj, ar)
            self.add(j + di, i + dj, ar)
        self.add(i, j + nv, ai)
        self.add(j, i + nv, -ai)
        self.add(j + nv, i, ai)
        self.add(i + nv, j, -ai)

    def build(self, shape) -> sp.csr_matrix:
        if not self.r:
            return sp.csr_matrix(shape)
        return sp.coo_matrix(
            (np.concatenate(self.d), (np.concatenate(self.r), np.concatenate(self.c))), shape=shape
        ).tocsr()


class _Pattern:
    """Index structure reused by every evaluation of one problem."""

    def __init__(self, prob):
        net = prob.network
        var = net.var_nodes
        nv = len(var)
        pos = np.full(net.n_nodes, -1, dtype=np.intp)
        pos[var] = np.arange(nv)
        self.pos = pos

        yvv = net.ybus[var][:, var].tocoo()
        self.y_i, self.y_j, self.y_conj = yvv.row, yvv.col, np.conj(yvv.data)

        # reference-bus row of Ybus
        yr = net.ybus[prob.ref_node].tocoo()
        self.yr_cols, self.yr_vals = yr.col, yr.data
        self.yr_var = pos[yr.col]

        idx = prob.thermal_idx
        self.yb = sp.vstack([net.yf[idx], net.yt[idx]]).tocsr()
        self.tnode = np.concatenate([net.cf[idx].indices, net.ct[idx].indices]) if len(idx) else np.zeros(0, dtype=np.intp)
        self.tvar = pos[self.tnode]
        ybv = self.yb[:, var].tocoo()
        self.b_i, self.b_j, self.b_conj = ybv.row, ybv.col, np.conj(ybv.data)
        self.smax2 = np.tile(net.br_smax[idx] ** 2, 2)
        self.t_has = self.tvar >= 0

        bus = [net.case.bus(net.nodes[k][0]) for k in var]
        self.vmin2 = np.array([b.v_min for b in bus]) ** 2
        self.vmax2 = np.array([b.v_max for b in bus]) ** 2

        # monitored buses: node triples and their var positions
        self.vuf_nodes = [np.asarray(n) for n in net.monitored_nodes] if prob.vuf_h else []
        self.vuf_pos = [pos[n] for n in self.vuf_nodes]

        # constant part of dg: flex/gen incidence in the balance rows plus the linear rows
        o = 2 * nv
        nf, ng = prob.n_f, prob.n_g
        const = _Coo()
        for nodes, pcol, qcol in (
            (net.flex_node, o + np.arange(nf), o + nf + np.arange(nf)),
            (net.gen_node, o + 2 * nf + np.arange(ng), o + 2 * nf + ng + np.arange(ng)),
        ):
            pr = pos[np.asarray(nodes, dtype=np.intp)] if len(nodes) else np.zeros(0, dtype=np.intp)
            ok = pr >= 0
            const.add(pr[ok], pcol[ok], np.ones(ok.sum()))
            const.add(pr[ok] + nv, qcol[ok], np.ones(ok.sum()))
        al = prob.a_lin.tocoo()
        const.add(al.row + 2 * nv, al.col + o, al.data)
        self.dg_const = (np.concatenate(const.r), np.concatenate(const.c), np.concatenate(const.d))

        nb = len(prob.box_var)
        self.box_coo = (np.arange(nb), prob.box_var + o, prob.box_sign)


@dataclass
class _Eval:
    x: np.ndarray
    v: np.ndarray
    i: np.ndarray
    s_ref: complex
    vt: np.ndarray
    ib: np.ndarray
    sb: np.ndarray


@dataclass(eq=False)
class ProblemDescription:
    network: Network
    objective: ObjectiveSpec
    scenario: ScenarioConfig
    ref_node: int
    alpha: tuple[float, float]
    n_v: int
    n_f: int
    n_g: int
    a_lin: sp.csr_matrix
    b_lin: np.ndarray
    lin_labels: list
    box_rows: list
    box_var: np.ndarray
    box_sign: np.ndarray
    box_bound: np.ndarray
    thermal_idx: np.ndarray
    vuf_h: list
    eq_labels: np.ndarray = field(default=None)
    ineq_labels: np.ndarray = field(default=None)
    counts: dict = field(default_factory=dict)
    _pat: _Pattern = field(default=None, repr=False)
    _last: _Eval = field(default=None, repr=False)

    # -- layout --------------------------------------------------------
    @property
    def n_x(self) -> int:
        return 2 * self.n_v + 2 * self.n_f + 2 * self.n_g

    @property
    def case(self) -> NetworkCase:
        return self.network.case

    def _slices(self):
        nv, nf, ng = self.n_v, self.n_f, self.n_g
        o = 2 * nv
        return (
            slice(0, nv),
            slice(nv, o),
            slice(o, o + nf),
            slice(o + nf, o + 2 * nf),
            slice(o + 2 * nf, o + 2 * nf + ng),
            slice(o + 2 * nf + ng, o + 2 * nf + 2 * ng),
        )

    def unpack(self, x):
        se, sf, sp_, sq, sgp, sgq = self._slices()
        net = self.network
        v = np.zeros(net.n_nodes, dtype=complex)
        v[net.ref_nodes] = net.v_ref
        v[net.var_nodes] = x[se] + 1j * x[sf]
        return v, Setpoints(x[sp_].copy(), x[sq].copy(), x[sgp].copy(), x[sgq].copy())

    def pack(self, v, setpoints: Setpoints) -> np.ndarray:
        vv = np.asarray(v)[self.network.var_nodes]
        return np.concatenate(
            [vv.real, vv.imag, setpoints.flex_p, setpoints.flex_q, setpoints.gen_p, setpoints.gen_q]
        ).astype(float)

    def initial_point(self) -> np.ndarray:
        """Base-case power flow (flex at zero); flat voltages if it fails."""
        net = self.network
        setpoints = Setpoints.zero(net)
        try:
            v = solve_newton(net.case, setpoints).v
        except PowerFlowError:
            v = net.flat_start()
        return self.pack(v, setpoints)

    # -- shared pieces -------------------------------------------------
    @property
    def pattern(self) -> _Pattern:
        if self._pat is None:
            self._pat = _Pattern(self)
        return self._pat

    def _at(self, x) -> _Eval:
        # the solver evaluates every function at the same iterate, so keep the last one
        last = self._last
        if last is not None and last.x.shape == np.shape(x) and np.array_equal(last.x, x):
            return last
        x = np.array(x, dtype=float)
        net = self.network
        pat = self.pattern
        v, _ = self.unpack(x)
        i = net.ybus @ v
        r = self.ref_node
        vt = v[pat.tnode]
        ib = pat.yb @ v
        self._last = _Eval(x, v, i, complex(v[r] * np.conj(i[r])), vt, ib, vt * np.conj(ib))
        return self._last

    def _spec_injection(self, x):
        net = self.network
        _, _, sp_, sq, sgp, sgq = self._slices()
        s = -net.s_load.astype(complex)
        np.add.at(s, net.flex_node, x[sp_] + 1j * x[sq])
        np.add.at(s, net.gen_node, x[sgp] + 1j * x[sgq])
        return s

    def ref_injection(self, x) -> complex:
        return self._at(x).s_ref

    def _ref_grad(self, ev):
        """Gradients of Re/Im of the reference injection over the voltage block."""
        pat = self.pattern
        r = self.ref_node
        nv = self.n_v
        # dS_r/de_m = V_r conj(Y_rm) + delta_rm conj(I_r); dS_r/df_m = j (delta_rm conj(I_r) - V_r conj(Y_rm))
        dse = np.zeros(nv, dtype=complex)
        dsf = np.zeros(nv, dtype=complex)
        ok = pat.yr_var >= 0
        t = ev.v[r] * np.conj(pat.yr_vals[ok])
        np.add.at(dse, pat.yr_var[ok], t)
        np.add.at(dsf, pat.yr_var[ok], -1j * t)
        k = pat.pos[r]
        if k >= 0:
            dse[k] += np.conj(ev.i[r])
            dsf[k] += 1j * np.conj(ev.i[r])
        return np.concatenate([dse.real, dsf.real]), np.concatenate([dse.imag, dsf.imag])

    # -- objective -----------------------------------------------------
    def f(self, x) -> float:
        s = self._at(x).s_ref
        ap, aq = self.alpha
        return ap * s.real + aq * s.imag

    def df(self, x) -> np.ndarray:
        gp, gq = self._ref_grad(self._at(x))
        ap, aq = self.alpha
        out = np.zeros(self.n_x)
        out[: 2 * self.n_v] = ap * gp + aq * gq
        return out

    # -- equalities ----------------------------------------------------
    def g(self, x) -> np.ndarray:
        ev = self._at(x)
        var = self.network.var_nodes
        d = (self._spec_injection(ev.x) - ev.v * np.conj(ev.i))[var]
        lin = self.a_lin @ ev.x[2 * self.n_v :] - self.b_lin
        return np.concatenate([d.real, d.imag, lin])

    def _bus_jac(self, ev):
        """Complex dS_var/de and dS_var/df as COO data on the Ybus var pattern plus the diagonal."""
        pat = self.pattern
        var = self.network.var_nodes
        a = ev.v[var][pat.y_i] * pat.y_conj
        ci = np.conj(ev.i[var])
        return a, ci

    def dg(self, x) -> sp.csr_matrix:
        ev = self._at(x)
        pat = self.pattern
        nv = self.n_v
        a, ci = self._bus_jac(ev)
        d = np.arange(nv)
        out = _Coo()
        i, j = pat.y_i, pat.y_j
        # g = spec - S, so the voltage block is -dS
        out.add(i, j, -a.real)
        out.add(i, j + nv, -(-1j * a).real)
        out.add(i + nv, j, -a.imag)
        out.add(i + nv, j + nv, -(-1j * a).imag)
        out.add(d, d, -ci.real)
        out.add(d, d + nv, -(1j * ci).real)
        out.add(d + nv, d, -ci.imag)
        out.add(d + nv, d + nv, -(1j * ci).imag)
        out.add(*pat.dg_const)
        return out.build((2 * nv + len(self.b_lin), self.n_x))

    # -- inequalities --------------------------------------------------
    def h(self, x) -> np.ndarray:
        ev = self._at(x)
        pat = self.pattern
        vv = ev.v[self.network.var_nodes]
        vm2 = vv.real**2 + vv.imag**2
        parts = [pat.vmin2 - vm2, vm2 - pat.vmax2, np.abs(ev.sb) ** 2 - pat.smax2]
        xb = ev.x[2 * self.n_v :]
        parts.append(self.box_sign * xb[self.box_var] - self.box_bound)
        if self.vuf_h:
            parts.append(np.array([np.real(np.conj(ev.v[n]) @ (hm @ ev.v[n])) for hm, n in zip(self.vuf_h, pat.vuf_nodes)]))
        box = self.scenario.epsilon_box
        if box is not None:
            val = ev.s_ref.real if box.target == "P" else ev.s_ref.imag
            parts.append(np.array([val - (box.value + box.epsilon), (box.value - box.epsilon) - val]))
        return np.concatenate(parts)

    def _thermal_jac(self, ev):
        """Complex dS_branch/de and dS_branch/df as COO triplets over var columns."""
        pat = self.pattern
        a = ev.vt[pat.b_i] * pat.b_conj
        t = pat.t_has
        rows = np.concatenate([pat.b_i, np.flatnonzero(t)])
        cols = np.concatenate([pat.b_j, pat.tvar[t]])
        dse = np.concatenate([a, np.conj(ev.ib[t])])
        dsf = np.concatenate([-1j * a, 1j * np.conj(ev.ib[t])])
        return rows, cols, dse, dsf

    def dh(self, x) -> sp.csr_matrix:
        ev = self._at(x)
        pat = self.pattern
        var = self.network.var_nodes
        nv = self.n_v
        vv = ev.v[var]
        d = np.arange(nv)
        out = _Coo()
        out.add(d, d, -2 * vv.real)
        out.add(d, d + nv, -2 * vv.imag)
        out.add(d + nv, d, 2 * vv.real)
        out.add(d + nv, d + nv, 2 * vv.imag)
        m = 2 * nv
        nt = len(ev.sb)
        if nt:
            rows, cols, dse, dsf = self._thermal_jac(ev)
            sc = np.conj(ev.sb[rows])
            out.add(rows + m, cols, 2 * (sc * dse).real)
            out.add(rows + m, cols + nv, 2 * (sc * dsf).real)
        m += nt
        br, bc, bd = pat.box_coo
        out.add(br + m, bc, bd)
        m += len(br)
        for hm, nodes, p in zip(self.vuf_h, pat.vuf_nodes, pat.vuf_pos):
            hv = hm @ ev.v[nodes]
            ok = p >= 0
            out.add(np.full(ok.sum(), m), p[ok], 2 * hv[ok].real)
            out.add(np.full(ok.sum(), m), p[ok] + nv, 2 * hv[ok].imag)
            m += 1
        box = self.scenario.epsilon_box
        if box is not None:
            gp, gq = self._ref_grad(ev)
            gr = gp if box.target == "P" else gq
            nz = np.flatnonzero(gr)
            out.add(np.full(len(nz), m), nz, gr[nz])
            out.add(np.full(len(nz), m + 1), nz, -gr[nz])
            m += 2
        return out.build((m, self.n_x))

    # -- second derivatives -------------------------------------------
    def hess(self, x, lam, mu, cost_mult: float = 1.0) -> sp.csr_matrix:
        """Hessian of ``cost_mult * f + lam' g + mu' h``."""
        ev = self._at(x)
        pat = self.pattern
        net = self.network
        var = net.var_nodes
        nv = self.n_v
        N = net.n_nodes
        n = self.n_x
        out = _Coo()

        # complex node weights c such that the bus terms read Re(sum_k c_k S_k)
        c = np.zeros(N, dtype=complex)
        c[var] += -lam[:nv] + 1j * lam[nv : 2 * nv]
        ap, aq = self.alpha
        r = self.ref_node
        c[r] += cost_mult * (ap - 1j * aq)

        w = mu[nv : 2 * nv] - mu[:nv]
        m = 2 * nv
        nt = len(ev.sb)
        mb = mu[m : m + nt]
        m += nt + len(self.box_var)
        mv = mu[m : m + len(self.vuf_h)]
        m += len(self.vuf_h)
        box = self.scenario.epsilon_box
        if box is not None:
            wb = mu[m] - mu[m + 1]
            c[r] += wb if box.target == "P" else -1j * wb

        out.quad(pat.y_i, pat.y_j, c[var][pat.y_i] * pat.y_conj, nv)
        d = np.arange(2 * nv)
        out.add(d, d, np.concatenate([2 * w, 2 * w]))

        if nt:
            # |S|^2 = P^2 + Q^2: Gauss-Newton part plus the curvature of S itself
            rows, cols, dse, dsf = self._thermal_jac(ev)
            jc = sp.csr_matrix(
                (np.concatenate([dse, dsf]), (np.concatenate([rows, rows]), np.concatenate([cols, cols + nv]))),
                shape=(nt, 2 * nv),
            )
            gn = (jc.conj().T @ sp.diags(2 * mb) @ jc).real.tocoo()
            out.add(gn.row, gn.col, gn.data)
            cw = 2 * mb * np.conj(ev.sb)
            tv = pat.tvar[pat.b_i]
            ok = tv >= 0
            out.quad(tv[ok], pat.b_j[ok], (cw[pat.b_i] * pat.b_conj)[ok], nv)

        for k, (hm, p) in enumerate(zip(self.vuf_h, pat.vuf_pos)):
            ok = np.flatnonzero(p >= 0)
            if not len(ok):
                continue
            hs = mv[k] * hm[np.ix_(ok, ok)]
            pi, pj = np.meshgrid(p[ok], p[ok], indexing="ij")
            pi, pj = pi.ravel(), pj.ravel()
            hr, hi = 2 * hs.real.ravel(), 2 * hs.imag.ravel()
            out.add(pi, pj, hr)
            out.add(pi, pj + nv, -hi)
            out.add(pi + nv, pj, hi)
            out.add(pi + nv, pj + nv, hr)

        return out.build((n, n))

    # -- reporting -----------------------------------------------------
    def max_violation(self, x) -> float:
        g = self.g(x)
        h = self.h(x)
        return float(max(np.abs(g).max(initial=0.0), h.max(initial=0.0), 0.0))



def _independent_rows(a: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    if a.shape[0] == 0:
        return np.zeros(0, dtype=int)
    _, r, piv = sla.qr(a.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(r))
    rank = int((d > tol * max(1.0, d.max(initial=0.0))).sum())
    return np.sort(piv[:rank])


def build_problem(case: NetworkCase, objective: ObjectiveSpec, scenario: ScenarioConfig | None = None) -> ProblemDescription:
    """Assemble the program for one direction; see :class:`ProblemDescription`."""
    scenario = scenario or ScenarioConfig()
    net = compile_network(case)
    ref_bus = objective.ref_bus if objective.ref_bus is not None else case.reference_bus.id
    if (ref_bus, objective.ref_phase) not in net.node_index:
        raise ProblemError(f"phase {objective.ref_phase} is not present at bus {ref_bus}")
    if scenario.vuf_limit is not None and not net.monitored:
        raise ProblemError("vuf_limit is set but the case monitors no buses (vu_monitored is empty)")
    ref_node = net.node(ref_bus, objective.ref_phase)

    nv = len(net.var_nodes)
    nf = len(net.flex_slots)
    ng = len(net.gen_slots)
    nrest = 2 * nf + 2 * ng
    ref_phase = objective.ref_phase

    # columns inside the flex/gen block
    col_fp = np.arange(nf)
    col_fq = nf + np.arange(nf)
    col_gp = 2 * nf + np.arange(ng)
    col_gq = 2 * nf + ng + np.arange(ng)

    rows, rhs, labels = [], [], []

    def add_row(entries, value, label):
        row = np.zeros(nrest)
        for col, coef in entries:
            row[col] += coef
        rows.append(row)
        rhs.append(value)
        labels.append(label)

    slot_of = {s: k for k, s in enumerate(net.flex_slots)}
    for ui, u in enumerate(case.flex_units):
        if u.balanced and len(u.phases) > 1:
            k0 = slot_of[(ui, u.phases[0])]
            for ph in u.phases[1:]:
                k = slot_of[(ui, ph)]
                add_row([(col_fp[k], 1.0), (col_fp[k0], -1.0)], 0.0, "balanced_tie")
                add_row([(col_fq[k], 1.0), (col_fq[k0], -1.0)], 0.0, "balanced_tie")
    if scenario.coordination == "phase_restricted":
        if scenario.coordination_mode == "per_unit_zero":
            for k, (_, ph) in enumerate(net.flex_slots):
                if ph != ref_phase:
                    add_row([(col_fp[k], 1.0)], 0.0, "coordination")
                    add_row([(col_fq[k], 1.0)], 0.0, "coordination")
        else:
            for ph in PHASES:
                if ph == ref_phase:
                    continue
                ks = [k for k, (_, p) in enumerate(net.flex_slots) if p == ph]
                if ks:
                    add_row([(col_fp[k], 1.0) for k in ks], 0.0, "coordination")
                    add_row([(col_fq[k], 1.0) for k in ks], 0.0, "coordination")

    box_rows, box_var, box_sign, box_bound = [], [], [], []
    n_boxes = {"flex_box": 0, "gen_box": 0}

    def add_box(col, lo, hi, family):
        n_boxes[family] += 1
        if hi - lo <= 1e-12:
            add_row([(col, 1.0)], lo, family + "_fixed")
            return
        box_var.extend([col, col])
        box_sign.extend([1.0, -1.0])
        box_bound.extend([hi, -lo])
        box_rows.extend([family, family])

    # a balanced unit's trailing slots follow the leading one through the ties, so
    # bounding them again would only add linearly dependent active constraints
    tied = {
        slot_of[(ui, ph)]
        for ui, u in enumerate(case.flex_units)
        if u.balanced
        for ph in u.phases[1:]
    }
    for k in range(nf):
        if k in tied:
            continue
        pmin, pmax, qmin, qmax = net.flex_bounds[k]
        add_box(col_fp[k], pmin, pmax, "flex_box")
        add_box(col_fq[k], qmin, qmax, "flex_box")
    for k in range(ng):
        pmin, pmax, qmin, qmax = net.gen_bounds[k]
        add_box(col_gp[k], pmin, pmax, "gen_box")
        add_box(col_gq[k], qmin, qmax, "gen_box")

    a = np.array(rows).reshape(len(rows), nrest)
    b = np.array(rhs, dtype=float)
    keep = _independent_rows(a)
    a, b = a[keep], b[keep]
    lin_labels = [labels[i] for i in keep]

    thermal_idx = np.flatnonzero(np.isfinite(net.br_smax))

    vuf_h = []
    if scenario.vuf_limit is not None:
        lim = (scenario.vuf_limit / 100.0) ** 2
        a1 = np.array([1, A_OP, A_OP**2]) / 3
        a2 = np.array([1, A_OP**2, A_OP]) / 3
        # divided by lim so the row is O(|V1|^2) and feastol bounds the VUF error, not lim^2 times it
        hloc = np.outer(np.conj(a2), a2) / lim - np.outer(np.conj(a1), a1)
        vuf_h = [hloc.copy() for _ in net.monitored_nodes]

    prob = ProblemDescription(
        network=net,
        objective=objective,
        scenario=scenario,
        ref_node=ref_node,
        alpha=objective.normalized(),
        n_v=nv,
        n_f=nf,
        n_g=ng,
        a_lin=sp.csr_matrix(a.reshape(len(b), nrest)),
        b_lin=b,
        lin_labels=lin_labels,
        box_rows=box_rows,
        box_var=np.array(box_var, dtype=np.intp),
        box_sign=np.array(box_sign, dtype=float),
        box_bound=np.array(box_bound, dtype=float),
        thermal_idx=thermal_idx,
        vuf_h=vuf_h,
    )
    eq_labels = ["balance_p"] * nv + ["balance_q"] * nv + lin_labels
    ineq_labels = (
        ["voltage_min"] * nv
        + ["voltage_max"] * nv
        + ["thermal_from"] * len(thermal_idx)
        + ["thermal_to"] * len(thermal_idx)
        + box_rows
        + ["vuf"] * len(vuf_h)
        + (["epsilon_box"] * 2 if scenario.epsilon_box is not None else [])
    )
    prob.eq_labels = np.array(eq_labels)
    prob.ineq_labels = np.array(ineq_labels)
    prob.counts = {
        "variables": prob.n_x,
        "balance": 2 * nv,
        "voltage": nv,
        "thermal": 2 * len(thermal_idx),
        "flex_box": n_boxes["flex_box"],
        "gen_box": n_boxes["gen_box"],
        "vuf": len(vuf_h),
        "balanced_tie": lin_labels.count("balanced_tie"),
        "coordination": lin_labels.count("coordination"),
        "epsilon_box": int(scenario.epsilon_box is not None),
    }
    return prob
