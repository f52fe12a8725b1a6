"""Compiled inner loop for the primal active-set method.

Mirrors the pure-numpy iteration in qp.py exactly (same tie-breaking, same
ridge): the tests cross-check the two paths.  Falls back to None when numba
is unavailable; qp.py then keeps the interpreted path.
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:          # pragma: no cover - numba present in CI image
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap


@njit(cache=True)
def _tri_solve_multi(chol, b):
    """Solve (L L') X = B for lower-triangular chol, B of shape (n, k)."""
    n = chol.shape[0]
    k = b.shape[1]
    out = b.copy()
    for j in range(k):
        for i in range(n):
            acc = out[i, j]
            for t in range(i):
                acc -= chol[i, t] * out[t, j]
            out[i, j] = acc / chol[i, i]
        for i in range(n - 1, -1, -1):
            acc = out[i, j]
            for t in range(i + 1, n):
                acc -= chol[t, i] * out[t, j]
            out[i, j] = acc / chol[i, i]
    return out


@njit(cache=True)
def active_set_kernel(chol, f, g_all, h_all, x0, w0, max_iter,
                      opt_tol, step_tol):
    """Primal active-set iteration; returns (x, lam, work, nw, status, it).

    status 0 = Optimal, 1 = MaxIter.  lam is aligned with work[:nw].
    """
    n = x0.shape[0]
    m = g_all.shape[0]
    x = x0.copy()
    work = np.empty(m + 1, np.int64)
    in_work = np.zeros(m, np.bool_)
    nw = 0
    for i in range(w0.shape[0]):
        w = w0[i]
        if 0 <= w < m and not in_work[w]:
            work[nw] = w
            in_work[w] = True
            nw += 1
    lam = np.zeros(m + 1)
    gx = g_all @ x

    it = 0
    while it < max_iter:
        it += 1
        grad = chol @ (chol.T @ x) + f
        if nw > 0:
            rhs = np.empty((n, nw + 1))
            for a in range(nw):
                wa = work[a]
                for c in range(n):
                    rhs[c, a] = g_all[wa, c]
            for c in range(n):
                rhs[c, nw] = -grad[c]
            sol = _tri_solve_multi(chol, rhs)
            q = sol[:, nw].copy()
            s = np.empty((nw, nw))
            smax = 1.0
            for a in range(nw):
                wa = work[a]
                for b in range(nw):
                    acc = 0.0
                    for c in range(n):
                        acc += g_all[wa, c] * sol[c, b]
                    s[a, b] = acc
                if s[a, a] > smax:
                    smax = s[a, a]
            ridge = 1e-10 * smax
            for a in range(nw):
                s[a, a] += ridge
            rhs2 = np.empty(nw)
            for a in range(nw):
                wa = work[a]
                acc = 0.0
                for c in range(n):
                    acc += g_all[wa, c] * q[c]
                rhs2[a] = acc - (h_all[wa] - gx[wa])
            lamw = np.linalg.solve(s, rhs2)
            for a in range(nw):
                lam[a] = lamw[a]
            p = q.copy()
            for c in range(n):
                acc = 0.0
                for a in range(nw):
                    acc += sol[c, a] * lamw[a]
                p[c] = q[c] - acc
        else:
            b1 = np.empty((n, 1))
            for c in range(n):
                b1[c, 0] = -grad[c]
            p = _tri_solve_multi(chol, b1)[:, 0]

        pmax = 0.0
        xmax = 0.0
        for c in range(n):
            ap = abs(p[c])
            if ap > pmax:
                pmax = ap
            ax = abs(x[c])
            if ax > xmax:
                xmax = ax
        if pmax <= step_tol * (1.0 + xmax):
            if nw == 0:
                return x, lam, work, nw, 0, it
            lmin = 0
            lval = lam[0]
            for a in range(1, nw):
                if lam[a] < lval:
                    lval = lam[a]
                    lmin = a
            if lval >= -opt_tol:
                return x, lam, work, nw, 0, it
            # drop: most negative multiplier, ties to lowest row index
            drop_pos = lmin
            drop_row = work[lmin]
            for a in range(nw):
                if lam[a] <= lval + 1e-12 and work[a] < drop_row:
                    drop_row = work[a]
                    drop_pos = a
            in_work[work[drop_pos]] = False
            for a in range(drop_pos, nw - 1):
                work[a] = work[a + 1]
                lam[a] = lam[a + 1]
            nw -= 1
            continue

        alpha = 1.0
        blocking = -1
        if m > 0:
            gp = g_all @ p
            for i in range(m):
                if in_work[i] or gp[i] <= 1e-13:
                    continue
                slack = h_all[i] - gx[i]
                if slack < 0.0:
                    slack = 0.0
                ai = slack / gp[i]
                if ai < alpha - 1e-15:
                    alpha = ai
                    blocking = i
                elif blocking >= 0 and abs(ai - alpha) <= 1e-15 and i < blocking:
                    blocking = i
            for i in range(m):
                gx[i] += alpha * gp[i]
        for c in range(n):
            x[c] += alpha * p[c]
        if blocking >= 0:
            pos = nw
            for a in range(nw):
                if work[a] > blocking:
                    pos = a
                    break
            for a in range(nw, pos, -1):
                work[a] = work[a - 1]
                lam[a] = lam[a - 1]
            work[pos] = blocking
            lam[pos] = 0.0
            in_work[blocking] = True
            nw += 1

    return x, lam, work, nw, 1, max_iter
