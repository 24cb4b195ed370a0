"""One GRU layer over a whole sequence, forward and reverse-mode backward.

Stacked gate layout along the first axis of ``Wx``, ``U`` and ``b`` is
``[update z; reset r; candidate h]``, each block ``d_h`` rows. The cell is

    z = sig(Wz x + Uz h + bz)
    r = sig(Wr x + Ur h + br)
    c = tanh(Wh x + Uh (r*h) + bh)
    h' = (1 - z) * h + z * c
"""
import numpy as np

from . import USE_NUMBA, njit

def _forward_body(X, Wx, U, b):
    T = X.shape[0]
    dh = U.shape[1]
    A = X @ Wx.T + b
    Uzr = np.ascontiguousarray(U[: 2 * dh])
    Uh = np.ascontiguousarray(U[2 * dh :])
    H = np.zeros((T, dh))
    Z = np.zeros((T, dh))
    R = np.zeros((T, dh))
    C = np.zeros((T, dh))
    h = np.zeros(dh)
    for t in range(T):
        zr = A[t, : 2 * dh] + Uzr @ h
        z = 1.0 / (1.0 + np.exp(-zr[:dh]))
        r = 1.0 / (1.0 + np.exp(-zr[dh:]))
        c = np.tanh(A[t, 2 * dh :] + Uh @ (r * h))
        h = (1.0 - z) * h + z * c
        H[t] = h
        Z[t] = z
        R[t] = r
        C[t] = c
    return H, Z, R, C

def _backward_body(X, Wx, U, H, Z, R, C, dH):
    T = X.shape[0]
    dh = U.shape[1]
    Uzr_T = np.ascontiguousarray(U[: 2 * dh].T)
    Uh_T = np.ascontiguousarray(U[2 * dh :].T)
    Hprev = np.zeros((T, dh))
    Hprev[1:] = H[:-1]
    DA = np.zeros((T, 3 * dh))
    carry = np.zeros(dh)
    for t in range(T - 1, -1, -1):
        g = dH[t] + carry
        z = Z[t]
        r = R[t]
        c = C[t]
        hp = Hprev[t]
        dac = g * z * (1.0 - c * c)
        drh = Uh_T @ dac
        daz = g * (c - hp) * z * (1.0 - z)
        dar = drh * hp * r * (1.0 - r)
        DA[t, :dh] = daz
        DA[t, dh : 2 * dh] = dar
        DA[t, 2 * dh :] = dac
        carry = g * (1.0 - z) + drh * r + Uzr_T @ DA[t, : 2 * dh]
    dX = DA @ Wx
    dWx = DA.T @ X
    db = DA.sum(axis=0)
    dU = np.zeros((3 * dh, dh))
    dU[: 2 * dh] = np.ascontiguousarray(DA[:, : 2 * dh].T) @ Hprev
    dU[2 * dh :] = np.ascontiguousarray(DA[:, 2 * dh :].T) @ (R * Hprev)
    return dX, dWx, dU, db

_forward_numba = njit(_forward_body)
_backward_numba = njit(_backward_body)

def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)

def gru_layer_forward(X, Wx, U, b):
    """Run one layer from a zero state; returns ``(H, Z, R, C)`` step caches."""
    if USE_NUMBA:
        return _forward_numba(_c(X), _c(Wx), _c(U), _c(b))
    return _forward_body(_c(X), _c(Wx), _c(U), _c(b))

def gru_layer_backward(X, Wx, U, H, Z, R, C, dH):
    """Backpropagate ``dH`` (loss gradient w.r.t. every output) through the layer.

    Returns ``(dX, dWx, dU, db)``.
    """
    args = tuple(_c(a) for a in (X, Wx, U, H, Z, R, C, dH))
    if USE_NUMBA:
        return _backward_numba(*args)
    return _backward_body(*args)
