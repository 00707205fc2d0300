# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled stencil kernels; same contract and operation order as _pykernels."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def h_div(const double[:, :, ::1] ut, const double[:, :, ::1] up, const double[::1] face_sin,
          const double[::1] half_inv_area, const double[::1] zonal):
    cdef Py_ssize_t n = ut.shape[0], m = ut.shape[1], nk = ut.shape[2]
    cdef Py_ssize_t i, j, k, jp, jm
    cdef double fm, fp
    out_arr = np.empty((n, m, nk))
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(m):
                jp = j + 1 if j + 1 < m else 0
                jm = j - 1 if j > 0 else m - 1
                for k in range(nk):
                    fm = face_sin[i] * (ut[i - 1, j, k] + ut[i, j, k]) if i > 0 else 0.0
                    fp = face_sin[i + 1] * (ut[i, j, k] + ut[i + 1, j, k]) if i + 1 < n else 0.0
                    out[i, j, k] = (fp - fm) * half_inv_area[i] + zonal[i] * (up[i, jp, k] - up[i, jm, k])
    return out_arr


def h_grad(const double[:, :, ::1] s, const double[::1] face_sin, const double[::1] half_inv_area,
           const double[::1] zonal):
    cdef Py_ssize_t n = s.shape[0], m = s.shape[1], nk = s.shape[2]
    cdef Py_ssize_t i, j, k, jp, jm
    cdef double em, ep
    gt_arr = np.empty((n, m, nk))
    gp_arr = np.empty((n, m, nk))
    cdef double[:, :, ::1] gt = gt_arr
    cdef double[:, :, ::1] gp = gp_arr
    with nogil:
        for i in range(n):
            for j in range(m):
                jp = j + 1 if j + 1 < m else 0
                jm = j - 1 if j > 0 else m - 1
                for k in range(nk):
                    em = face_sin[i] * (s[i, j, k] - s[i - 1, j, k]) if i > 0 else 0.0
                    ep = face_sin[i + 1] * (s[i + 1, j, k] - s[i, j, k]) if i + 1 < n else 0.0
                    gt[i, j, k] = (ep + em) * half_inv_area[i]
                    gp[i, j, k] = zonal[i] * (s[i, jp, k] - s[i, jm, k])
    return gt_arr, gp_arr


def tridiag_solve(const double[::1] lower, const double[::1] diag, const double[::1] upper,
                  const double[:, ::1] rhs):
    cdef Py_ssize_t n = diag.shape[0], ncol = rhs.shape[0]
    cdef Py_ssize_t c, k
    cp_arr = np.empty(n)
    piv_arr = np.empty(n)
    cdef double[::1] cp = cp_arr
    cdef double[::1] piv = piv_arr
    x_arr = np.empty((ncol, n))
    cdef double[:, ::1] x = x_arr
    piv[0] = diag[0]
    cp[0] = upper[0] / piv[0]
    for k in range(1, n):
        piv[k] = diag[k] - lower[k] * cp[k - 1]
        cp[k] = upper[k] / piv[k]
    with nogil:
        for c in range(ncol):
            x[c, 0] = rhs[c, 0] / piv[0]
            for k in range(1, n):
                x[c, k] = (rhs[c, k] - lower[k] * x[c, k - 1]) / piv[k]
            for k in range(n - 2, -1, -1):
                x[c, k] = x[c, k] - cp[k] * x[c, k + 1]
    return x_arr
