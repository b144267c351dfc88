"""Pure-numpy twins of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def _jacobian(Y, V, I, var):
    t = V[var, None] * np.conj(Y[np.ix_(var, var)])
    dse = t.copy()
    dsf = -1j * t
    ci = np.conj(I[var])
    idx = np.arange(len(var))
    dse[idx, idx] += ci
    dsf[idx, idx] += 1j * ci
    return np.block([[dse.real, dsf.real], [dse.imag, dsf.imag]])


def newton_dense(Y, v0, var, sspec, tol=1e-8, max_iter=50):
    """Solve one power flow; returns ``(v, iterations, residual_norm, status)``.

    status: 0 converged, 1 iteration limit, 2 singular Jacobian, 3 non-finite.
    """
    Y = np.asarray(Y, dtype=complex)
    V = np.array(v0, dtype=complex)
    var = np.asarray(var, dtype=np.intp)
    sspec = np.asarray(sspec, dtype=complex)
    m = len(var)
    for it in range(max_iter + 1):
        I = Y @ V
        d = sspec - V[var] * np.conj(I[var])
        r = np.concatenate([d.real, d.imag])
        norm = float(np.abs(r).max()) if m else 0.0
        if not np.isfinite(norm):
            return V, it, norm, 3
        if norm < tol:
            return V, it, norm, 0
        if it == max_iter:
            return V, it, norm, 1
        J = _jacobian(Y, V, I, var)
        try:
            dx = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            return V, it, norm, 2
        if not np.all(np.isfinite(dx)):
            return V, it, norm, 2
        V[var] += dx[:m] + 1j * dx[m:]
    return V, max_iter, norm, 1


def newton_dense_batch(Y, v0, var, sspec, tol=1e-8, max_iter=50):
    """Solve one power flow per row of ``sspec`` (shape ``(n, len(var))``), all from ``v0``."""
    S = np.atleast_2d(np.asarray(sspec, dtype=complex))
    n = S.shape[0]
    out_v = np.empty((n, len(v0)), dtype=complex)
    out_it = np.zeros(n, dtype=np.int32)
    out_res = np.zeros(n)
    out_status = np.zeros(n, dtype=np.int32)
    for i in range(n):
        out_v[i], out_it[i], out_res[i], out_status[i] = newton_dense(Y, v0, var, S[i], tol, max_iter)
    return out_v, out_it, out_res, out_status
