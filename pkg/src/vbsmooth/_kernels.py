"""Compiled inner loops for the Kalman filter and RTS smoother.

Every kernel returns a status integer: -1 on success, otherwise the time
index at which a Cholesky factorization failed.  The Python wrappers in
:mod:`vbsmooth.lgss` turn the status into an exception.
"""
import numpy as np
from numba import njit

LOG_2PI = np.log(2.0 * np.pi)


@njit(cache=True)
def _chol(a, out):
    n = a.shape[0]
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not s > 0.0:
            return False
        d = np.sqrt(s)
        out[j, j] = d
        for i in range(j + 1, n):
            t = a[i, j]
            for k in range(j):
                t -= out[i, k] * out[j, k]
            out[i, j] = t / d
        for i in range(j):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def _cho_solve(chol, b):
    """Solve ``(L L^T) X = B`` for X, with L lower triangular."""
    n = chol.shape[0]
    m = b.shape[1]
    x = b.copy()
    for c in range(m):
        for i in range(n):
            s = x[i, c]
            for k in range(i):
                s -= chol[i, k] * x[k, c]
            x[i, c] = s / chol[i, i]
        for i in range(n - 1, -1, -1):
            s = x[i, c]
            for k in range(i + 1, n):
                s -= chol[k, i] * x[k, c]
            x[i, c] = s / chol[i, i]
    return x


@njit(cache=True)
def kalman_filter_kernel(A, C, Q, R, ys, m0, P0, joseph):
    n_steps = ys.shape[0]
    nx = m0.shape[0]
    ny = ys.shape[1]
    m_pred = np.empty((n_steps, nx))
    P_pred = np.empty((n_steps, nx, nx))
    m_filt = np.empty((n_steps, nx))
    P_filt = np.empty((n_steps, nx, nx))
    gains = np.empty((n_steps, nx, ny))
    chol = np.zeros((ny, ny))
    eye = np.eye(nx)
    loglik = 0.0

    m = m0.copy()
    P = P0.copy()
    for k in range(n_steps):
        m_pred[k] = m
        P_pred[k] = P
        Ck = np.ascontiguousarray(C[k])
        CP = Ck @ P
        S = CP @ Ck.T + R[k]
        S = 0.5 * (S + S.T)
        if not _chol(S, chol):
            return m_pred, P_pred, m_filt, P_filt, gains, loglik, k
        # K = P C^T S^-1  <=>  K^T = S^-1 C P
        gain = _cho_solve(chol, CP).T.copy()
        innov = ys[k] - Ck @ m
        white = np.ascontiguousarray(_cho_solve(chol, innov.reshape(ny, 1))[:, 0])
        logdet = 0.0
        for i in range(ny):
            logdet += 2.0 * np.log(chol[i, i])
        loglik -= 0.5 * (ny * LOG_2PI + logdet + innov @ white)

        m = m + gain @ innov
        if joseph:
            IKC = eye - gain @ Ck
            P = IKC @ P @ IKC.T + gain @ np.ascontiguousarray(R[k]) @ gain.T
        else:
            P = P - gain @ CP
        P = 0.5 * (P + P.T)
        m_filt[k] = m
        P_filt[k] = P
        gains[k] = gain
        if k < n_steps - 1:
            Ak = np.ascontiguousarray(A[k])
            m = Ak @ m
            P = Ak @ P @ Ak.T + Q[k]
            P = 0.5 * (P + P.T)
    return m_pred, P_pred, m_filt, P_filt, gains, loglik, -1


@njit(cache=True)
def rts_kernel(A, m_pred, P_pred, m_filt, P_filt):
    n_steps = m_filt.shape[0]
    nx = m_filt.shape[1]
    m_s = m_filt.copy()
    P_s = P_filt.copy()
    G = np.empty((max(n_steps - 1, 0), nx, nx))
    cross = np.empty((max(n_steps - 1, 0), nx, nx))
    chol = np.zeros((nx, nx))
    for k in range(n_steps - 2, -1, -1):
        Ak = np.ascontiguousarray(A[k])
        Pp = np.ascontiguousarray(P_pred[k + 1])
        if not _chol(Pp, chol):
            return m_s, P_s, G, cross, k
        # G = P_{k|k} A^T P_{k+1|k}^-1  <=>  G^T = P_{k+1|k}^-1 A P_{k|k}
        Pf = np.ascontiguousarray(P_filt[k])
        Gk = _cho_solve(chol, Ak @ Pf).T.copy()
        m_s[k] = m_filt[k] + Gk @ (m_s[k + 1] - m_pred[k + 1])
        Pk = Pf + Gk @ (P_s[k + 1] - Pp) @ Gk.T
        P_s[k] = 0.5 * (Pk + Pk.T)
        G[k] = Gk
        cross[k] = Gk @ P_s[k + 1]
    return m_s, P_s, G, cross, -1
