"""Compiled coordinate-descent kernels on a Gram matrix.

Both kernels minimize ``0.5 b'Sb - c'b + lam * ||b||_1`` where ``S`` is already in
standardized units (unit diagonal for nonzero columns).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _kkt(S, c, lam, beta, skip):
    p = c.shape[0]
    worst = 0.0
    for k in range(p):
        if k == skip or S[k, k] <= 0.0:
            continue
        g = -c[k]
        for m in range(p):
            if beta[m] != 0.0:
                g += S[k, m] * beta[m]
        if beta[k] > 0.0:
            v = abs(g + lam)
        elif beta[k] < 0.0:
            v = abs(g - lam)
        else:
            v = abs(g) - lam
            if v < 0.0:
                v = 0.0
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def _objective(c, lam, beta, grad):
    # 0.5 b'Sb - c'b = 0.5 b'(grad + c) - c'b with grad = Sb - c
    val = 0.0
    for k in range(c.shape[0]):
        val += 0.5 * beta[k] * (grad[k] - c[k]) + lam * abs(beta[k])
    return val


@njit(cache=True)
def _update(S, lam, beta, grad, k):
    skk = S[k, k]
    z = beta[k] - grad[k] / skk
    thr = lam / skk
    if z > thr:
        new = z - thr
    elif z < -thr:
        new = z + thr
    else:
        new = 0.0
    d = new - beta[k]
    if d != 0.0:
        for m in range(grad.shape[0]):
            grad[m] += S[m, k] * d
        beta[k] = new
    return abs(d)


@njit(cache=True)
def _chol_solve(A, rhs):
    """Solve ``A x = rhs`` for SPD ``A``; an empty result signals a (near) singular ``A``."""
    m = A.shape[0]
    Lm = np.zeros((m, m))
    floor = 0.0
    for i in range(m):
        if A[i, i] > floor:
            floor = A[i, i]
    floor *= 1e-10
    for j in range(m):
        d = A[j, j]
        for k in range(j):
            d -= Lm[j, k] * Lm[j, k]
        if d <= floor:
            return np.zeros(0)
        Lm[j, j] = np.sqrt(d)
        for i in range(j + 1, m):
            v = A[i, j]
            for k in range(j):
                v -= Lm[i, k] * Lm[j, k]
            Lm[i, j] = v / Lm[j, j]
    z = np.empty(m)
    for i in range(m):
        v = rhs[i]
        for k in range(i):
            v -= Lm[i, k] * z[k]
        z[i] = v / Lm[i, i]
    x = np.empty(m)
    for i in range(m - 1, -1, -1):
        v = z[i]
        for k in range(i + 1, m):
            v -= Lm[k, i] * x[k]
        x[i] = v / Lm[i, i]
    return x


@njit(cache=True)
def _polish(S, c, lam, beta, usable):
    """Solve the KKT equations on the current active set with its current signs.

    Accepts the solution only if every sign is preserved; returns True on success.
    """
    p = c.shape[0]
    m = 0
    for k in range(p):
        if usable[k] and beta[k] != 0.0:
            m += 1
    if m == 0:
        return False
    idx = np.empty(m, dtype=np.int64)
    i = 0
    for k in range(p):
        if usable[k] and beta[k] != 0.0:
            idx[i] = k
            i += 1
    A = np.empty((m, m))
    rhs = np.empty(m)
    for a in range(m):
        ka = idx[a]
        sgn = 1.0 if beta[ka] > 0.0 else -1.0
        rhs[a] = c[ka] - lam * sgn
        for b in range(m):
            A[a, b] = S[ka, idx[b]]
    x = _chol_solve(A, rhs)
    if x.shape[0] == 0:
        return False
    for a in range(m):
        if x[a] * beta[idx[a]] <= 0.0:
            return False
    for a in range(m):
        beta[idx[a]] = x[a]
    return True


@njit(cache=True)
def cd_gram(S, c, lam, beta, skip, tol, kkt_tol, max_sweeps, trace):
    """Cyclic coordinate descent accelerated by active-set solves.

    After every full pass the KKT equations restricted to the current active set
    and signs are solved directly. A sign-consistent solution never increases the
    objective, so it is kept; the loop ends as soon as the KKT residual is below
    ``kkt_tol``. Sign-inconsistent solves fall back to a few CD passes over the
    active set.

    ``beta`` is updated in place (warm start). ``skip`` pins one coordinate at zero
    (-1 for none). The objective after every pass is written to ``trace`` while
    there is room. Returns ``(sweeps, kkt_residual, converged)``.
    """
    p = c.shape[0]
    usable = np.zeros(p, dtype=np.bool_)
    for k in range(p):
        usable[k] = (k != skip) and S[k, k] > 0.0
        if not usable[k]:
            beta[k] = 0.0
    grad = S @ beta - c
    sweeps = 0
    kkt = np.inf
    while sweeps < max_sweeps:
        change = 0.0
        for k in range(p):
            if usable[k]:
                d = _update(S, lam, beta, grad, k)
                if d > change:
                    change = d
        sweeps += 1
        if _polish(S, c, lam, beta, usable):
            grad = S @ beta - c
            if sweeps - 1 < trace.shape[0]:
                trace[sweeps - 1] = _objective(c, lam, beta, grad)
            kkt = _kkt(S, c, lam, beta, skip)
            if kkt <= kkt_tol:
                return sweeps, kkt, True
            continue
        if sweeps - 1 < trace.shape[0]:
            trace[sweeps - 1] = _objective(c, lam, beta, grad)
        if change < tol:
            kkt = _kkt(S, c, lam, beta, skip)
            if kkt <= kkt_tol:
                return sweeps, kkt, True
            grad = S @ beta - c
        for _ in range(10):
            if sweeps >= max_sweeps:
                break
            change = 0.0
            for k in range(p):
                if usable[k] and beta[k] != 0.0:
                    d = _update(S, lam, beta, grad, k)
                    if d > change:
                        change = d
            if sweeps < trace.shape[0]:
                trace[sweeps] = _objective(c, lam, beta, grad)
            sweeps += 1
            if change < tol:
                break
    kkt = _kkt(S, c, lam, beta, skip)
    return sweeps, kkt, False


@njit(cache=True)
def nodewise_gram(Ss, lam, js, tol, kkt_tol, max_sweeps):
    """Lasso of standardized column ``j`` on all others, for every ``j`` in ``js``.

    Returns standardized-unit coefficients (row per j, entry j is zero), sweep
    counts, KKT residuals and convergence flags.
    """
    p = Ss.shape[0]
    m = js.shape[0]
    gammas = np.zeros((m, p))
    sweeps = np.zeros(m, dtype=np.int64)
    kkts = np.zeros(m)
    ok = np.zeros(m, dtype=np.bool_)
    empty = np.zeros(0)
    for i in range(m):
        j = js[i]
        c = Ss[:, j].copy()
        c[j] = 0.0
        beta = np.zeros(p)
        s, r, conv = cd_gram(Ss, c, lam, beta, j, tol, kkt_tol, max_sweeps, empty)
        gammas[i] = beta
        sweeps[i] = s
        kkts[i] = r
        ok[i] = conv
    return gammas, sweeps, kkts, ok
