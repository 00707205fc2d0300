"""Pure-numpy stencil kernels (fallback for the compiled ``_ckernels``).

All arrays are float64 with shape (n_theta, n_phi, n_k).  ``face_sin`` has
length n_theta + 1, ``half_inv_area`` and ``zonal`` length n_theta.
"""
import numpy as np


def h_div(ut, up, face_sin, half_inv_area, zonal):
    n = ut.shape[0]
    flux = np.zeros((n + 1,) + ut.shape[1:])
    flux[1:-1] = face_sin[1:-1, None, None] * (ut[:-1] + ut[1:])
    out = (flux[1:] - flux[:-1]) * half_inv_area[:, None, None]
    out += zonal[:, None, None] * (np.roll(up, -1, axis=1) - np.roll(up, 1, axis=1))
    return out


def h_grad(s, face_sin, half_inv_area, zonal):
    n = s.shape[0]
    jump = np.zeros((n + 1,) + s.shape[1:])
    jump[1:-1] = face_sin[1:-1, None, None] * (s[1:] - s[:-1])
    gt = (jump[1:] + jump[:-1]) * half_inv_area[:, None, None]
    gp = zonal[:, None, None] * (np.roll(s, -1, axis=1) - np.roll(s, 1, axis=1))
    return gt, gp


def tridiag_solve(lower, diag, upper, rhs):
    """Thomas algorithm for one shared tridiagonal matrix and many right-hand sides.

    ``rhs`` has shape (n_columns, n); row k of the system reads
    lower[k] x[k-1] + diag[k] x[k] + upper[k] x[k+1] = rhs[k].
    """
    n = diag.shape[0]
    cp = np.empty(n)
    piv = np.empty(n)
    piv[0] = diag[0]
    cp[0] = upper[0] / piv[0]
    for k in range(1, n):
        piv[k] = diag[k] - lower[k] * cp[k - 1]
        cp[k] = upper[k] / piv[k]
    x = np.empty_like(rhs)
    x[:, 0] = rhs[:, 0] / piv[0]
    for k in range(1, n):
        x[:, k] = (rhs[:, k] - lower[k] * x[:, k - 1]) / piv[k]
    for k in range(n - 2, -1, -1):
        x[:, k] = x[:, k] - cp[k] * x[:, k + 1]
    return x
