"""Primal-dual interior-point method for ``min f(x) s.t. g(x) = 0, h(x) <= 0``.

Newton steps on the perturbed KKT conditions with a log barrier on the
inequality slacks, fraction-to-boundary step lengths and a barrier
parameter driven by average complementarity. The KKT system is solved as a
sparse saddle-point matrix. Because the program is nonconvex, the primal
block is regularised whenever the computed step has too little curvature
(an inertia-free test, so no symmetric-indefinite factorisation is needed).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class IPMOptions:
    feastol: float = 1e-6
    gradtol: float = 1e-6
    comptol: float = 1e-6
    costtol: float = 1e-6
    max_iter: int = 3000
    # multipliers beyond this size are taken as evidence of an empty feasible set
    divergence: float = 1e9
    xi: float = 0.99995
    sigma: float = 0.1
    z0: float = 1.0
    # curvature test dx'(M + delta I)dx >= kappa |dx|^2
    kappa: float = 1e-8
    delta_min: float = 1e-6
    delta_max: float = 1e8


@dataclass
class IPMResult:
    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    f: float
    status: str
    iterations: int
    feascond: float
    gradcond: float
    compcond: float
    message: str = ""

    @property
    def kkt_residual(self) -> float:
        return max(self.gradcond, self.compcond)


def _conditions(x, z, lam, mu, g, h, lx, f, f0):
    feas = max(np.abs(g).max(initial=0.0), h.max(initial=0.0), 0.0)
    xn = np.abs(x).max(initial=0.0)
    grad = np.abs(lx).max(initial=0.0) / (1 + max(np.abs(lam).max(initial=0.0), np.abs(mu).max(initial=0.0)))
    comp = float(z @ mu) / (1 + xn) if len(z) else 0.0
    cost = abs(f - f0) / (1 + abs(f0))
    return feas, grad, comp, cost


def ipm_solve(problem, x0, options: IPMOptions | None = None) -> IPMResult:
    """``problem`` provides ``f, df, g, dg, h, dh, hess`` (see ProblemDescription)."""
    opt = options or IPMOptions()
    x = np.array(x0, dtype=float)
    n = len(x)
    f = problem.f(x)
    df = problem.df(x)
    g, h = problem.g(x), problem.h(x)
    dg, dh = problem.dg(x), problem.dh(x)
    neq, niq = len(g), len(h)

    gamma = 1.0
    lam = np.zeros(neq)
    z = np.full(niq, opt.z0)
    mu = np.full(niq, opt.z0)
    k = h < -opt.z0
    z[k] = -h[k]
    k = gamma / z > opt.z0
    mu[k] = gamma / z[k]

    lx = df + dg.T @ lam + dh.T @ mu
    f0 = f
    feas, grad, comp, cost = _conditions(x, z, lam, mu, g, h, lx, f, f0)

    eye = sp.identity(n, format="csr")
    delta_last = 0.0

    def result(status, it, msg=""):
        return IPMResult(x, lam, mu, z, float(f), status, it, feas, grad, comp, msg)

    for it in range(1, opt.max_iter + 1):
        lxx = problem.hess(x, lam, mu)
        zinv = 1.0 / z
        dh_zinv = dh.T @ sp.diags(zinv)
        m = lxx + dh_zinv @ sp.diags(mu) @ dh
        nvec = lx + dh_zinv @ (mu * h + gamma)
        rhs = -np.concatenate([nvec, g])
        delta = 0.0
        while True:
            mr = m + delta * eye if delta else m
            kkt = sp.bmat([[mr, dg.T], [dg, None]], format="csc")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                try:
                    sol = spla.splu(kkt).solve(rhs)
                except RuntimeError:
                    sol = None
            ok = sol is not None and np.all(np.isfinite(sol))
            if ok:
                dx = sol[:n]
                ok = dx @ (mr @ dx) >= opt.kappa * (dx @ dx)
            if ok:
                break
            # grow from a fraction of the last successful shift (Ipopt-style)
            delta = max(opt.delta_min, delta_last / 3) if delta == 0 else 8 * delta
            if delta > opt.delta_max:
                if sol is None:
                    return result("numerical_failure", it, "singular KKT system")
                if not np.all(np.isfinite(sol)):
                    return result("numerical_failure", it, "non-finite Newton step")
                break
        if delta:
            delta_last = delta
        dx, dlam = sol[:n], sol[n:]
        dz = -h - z - dh @ dx
        dmu = -mu + zinv * (gamma - mu * dz)

        neg = dz < 0
        alphap = min(opt.xi * np.min(z[neg] / -dz[neg]), 1.0) if neg.any() else 1.0
        neg = dmu < 0
        alphad = min(opt.xi * np.min(mu[neg] / -dmu[neg]), 1.0) if neg.any() else 1.0

        x = x + alphap * dx
        z = z + alphap * dz
        lam = lam + alphad * dlam
        mu = mu + alphad * dmu
        if niq:
            gamma = opt.sigma * float(z @ mu) / niq

        f0 = f
        f = problem.f(x)
        df = problem.df(x)
        g, h = problem.g(x), problem.h(x)
        dg, dh = problem.dg(x), problem.dh(x)
        lx = df + dg.T @ lam + dh.T @ mu
        feas, grad, comp, cost = _conditions(x, z, lam, mu, g, h, lx, f, f0)

        if not (np.isfinite(f) and np.all(np.isfinite(x))):
            return result("numerical_failure", it, "non-finite iterate")
        if feas < opt.feastol and grad < opt.gradtol and comp < opt.comptol and cost < opt.costtol:
            return result("optimal", it)
        if max(np.abs(lam).max(initial=0.0), mu.max(initial=0.0)) > opt.divergence and feas > opt.feastol:
            return result("infeasible", it, "diverging multipliers")
    status = "infeasible" if feas > 1e3 * opt.feastol else "max_iter"
    return result(status, opt.max_iter, "iteration limit")
