"""Flexibility-estimation NLP: problem assembly, solver and derivative checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..powerflow import PhasorState, Setpoints
from .ipm import IPMOptions, IPMResult, ipm_solve
from .problem import (
    COORDINATION,
    COORDINATION_MODES,
    EpsilonBox,
    ObjectiveSpec,
    ProblemDescription,
    ProblemError,
    ScenarioConfig,
    build_problem,
)

STATUSES = ("optimal", "infeasible", "max_iter", "numerical_failure")


@dataclass
class OPFSolution:
    status: str
    state: PhasorState
    flex_setpoints: Setpoints
    objective_value: float
    ref_injection: tuple[float, float]
    kkt_residual: float
    max_violation: float
    iterations: int
    x: np.ndarray

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve(problem: ProblemDescription, warm_start=None, options: IPMOptions | None = None) -> OPFSolution:
    """Solve one direction from ``warm_start`` (an x vector, an OPFSolution, or
    a ``(PhasorState, Setpoints)`` pair); the base power flow otherwise."""
    if warm_start is None:
        x0 = problem.initial_point()
    elif isinstance(warm_start, OPFSolution):
        x0 = warm_start.x
    elif isinstance(warm_start, tuple):
        state, setpoints = warm_start
        x0 = problem.pack(state.v, setpoints)
    else:
        x0 = np.asarray(warm_start, dtype=float)
    res: IPMResult = ipm_solve(problem, x0, options)
    v, setpoints = problem.unpack(res.x)
    state = PhasorState.from_voltages(problem.network, v, iterations=res.iterations)
    s = problem.ref_injection(res.x)
    status = res.status
    viol = problem.max_violation(res.x)
    tol = (options or IPMOptions()).feastol
    if status == "optimal" and viol >= tol:
        status = "max_iter"
    return OPFSolution(
        status=status,
        state=state,
        flex_setpoints=setpoints,
        objective_value=res.f,
        ref_injection=(s.real, s.imag),
        kkt_residual=res.kkt_residual,
        max_violation=viol,
        iterations=res.iterations,
        x=res.x,
    )


def check_derivatives(problem: ProblemDescription, x, step: float = 1e-6, seed: int = 0) -> float:
    """Largest relative error between analytic and central-difference derivatives.

    Covers the objective gradient, both constraint Jacobians and the
    Lagrangian Hessian (with random multipliers drawn from ``seed``).
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    rng = np.random.default_rng(seed)
    lam = rng.standard_normal(len(problem.g(x)))
    mu = rng.random(len(problem.h(x)))

    def rel(a, b):
        # row-wise, so small-valued families (VUF rows) are not masked by large ones
        a = np.atleast_2d(a)
        b = np.atleast_2d(b)
        if a.size == 0:
            return 0.0
        scale = np.maximum(np.maximum(np.abs(a).max(axis=1), np.abs(b).max(axis=1)), 1e-6)
        return float((np.abs(a - b).max(axis=1) / scale).max())

    fd_df = np.zeros(n)
    fd_dg = np.zeros((len(lam), n))
    fd_dh = np.zeros((len(mu), n))
    fd_hess = np.zeros((n, n))

    def lag_grad(xx):
        return problem.df(xx) + problem.dg(xx).T @ lam + problem.dh(xx).T @ mu

    for i in range(n):
        e = np.zeros(n)
        e[i] = step
        fd_df[i] = (problem.f(x + e) - problem.f(x - e)) / (2 * step)
        fd_dg[:, i] = (problem.g(x + e) - problem.g(x - e)) / (2 * step)
        fd_dh[:, i] = (problem.h(x + e) - problem.h(x - e)) / (2 * step)
        fd_hess[:, i] = (lag_grad(x + e) - lag_grad(x - e)) / (2 * step)

    errs = [
        rel(problem.df(x), fd_df),
        rel(problem.dg(x).toarray(), fd_dg),
        rel(problem.dh(x).toarray(), fd_dh),
        rel(problem.hess(x, lam, mu).toarray(), fd_hess),
    ]
    return float(max(errs))


__all__ = [
    "COORDINATION",
    "COORDINATION_MODES",
    "EpsilonBox",
    "IPMOptions",
    "OPFSolution",
    "ObjectiveSpec",
    "ProblemDescription",
    "ProblemError",
    "ScenarioConfig",
    "build_problem",
    "check_derivatives",
    "solve",
]
