# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled element kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline void _jacobian(const double[:, :, ::1] xe, const double[:, :, ::1] dN,
                           Py_ssize_t e, Py_ssize_t q, double* J) noexcept nogil:
    # J is row-major 3x2
    cdef Py_ssize_t a, d
    cdef Py_ssize_t nb = xe.shape[1]
    for d in range(6):
        J[d] = 0.0
    for a in range(nb):
        for d in range(3):
            J[2 * d] += xe[e, a, d] * dN[q, a, 0]
            J[2 * d + 1] += xe[e, a, d] * dN[q, a, 1]


def element_matrices(const double[:, :, ::1] xe, const double[:, ::1] N,
                     const double[:, :, ::1] dN, const double[::1] w):
    cdef Py_ssize_t E = xe.shape[0], nb = xe.shape[1], Q = N.shape[0]
    Me_arr = np.zeros((E, nb, nb))
    Ke_arr = np.zeros((E, nb, nb))
    det_arr = np.empty(E)
    cdef double[:, :, ::1] Me = Me_arr
    cdef double[:, :, ::1] Ke = Ke_arr
    cdef double[::1] det_min = det_arr
    cdef double J[6]
    cdef double g00, g01, g11, det, dA, i00, i01, i11, ma, sa0, sa1, ta0, ta1, v
    cdef Py_ssize_t e, q, a, b
    with nogil:
        for e in range(E):
            det_min[e] = 1e308
            for q in range(Q):
                _jacobian(xe, dN, e, q, J)
                g00 = J[0] * J[0] + J[2] * J[2] + J[4] * J[4]
                g01 = J[0] * J[1] + J[2] * J[3] + J[4] * J[5]
                g11 = J[1] * J[1] + J[3] * J[3] + J[5] * J[5]
                det = g00 * g11 - g01 * g01
                if det < det_min[e]:
                    det_min[e] = det
                if det <= 0.0:
                    continue
                dA = sqrt(det) * w[q]
                i00 = g11 / det
                i11 = g00 / det
                i01 = -g01 / det
                for a in range(nb):
                    ma = dA * N[q, a]
                    sa0 = dN[q, a, 0]
                    sa1 = dN[q, a, 1]
                    ta0 = dA * (i00 * sa0 + i01 * sa1)
                    ta1 = dA * (i01 * sa0 + i11 * sa1)
                    for b in range(a + 1):
                        Me[e, a, b] += ma * N[q, b]
                        Ke[e, a, b] += ta0 * dN[q, b, 0] + ta1 * dN[q, b, 1]
            for a in range(nb):
                for b in range(a):
                    Me[e, b, a] = Me[e, a, b]
                    Ke[e, b, a] = Ke[e, a, b]
    return Me_arr, Ke_arr, det_arr


def element_ax(const double[:, :, ::1] xe, const double[:, :, ::1] dN, const double[::1] w):
    cdef Py_ssize_t E = xe.shape[0], nb = xe.shape[1], Q = dN.shape[0]
    Ae_arr = np.zeros((E, nb, 3))
    det_arr = np.empty(E)
    cdef double[:, :, ::1] Ae = Ae_arr
    cdef double[::1] det_min = det_arr
    cdef double J[6]
    cdef double g00, g01, g11, det, dA, i00, i01, i11, sa0, sa1, ta0, ta1
    cdef Py_ssize_t e, q, a, d
    with nogil:
        for e in range(E):
            det_min[e] = 1e308
            for q in range(Q):
                _jacobian(xe, dN, e, q, J)
                g00 = J[0] * J[0] + J[2] * J[2] + J[4] * J[4]
                g01 = J[0] * J[1] + J[2] * J[3] + J[4] * J[5]
                g11 = J[1] * J[1] + J[3] * J[3] + J[5] * J[5]
                det = g00 * g11 - g01 * g01
                if det < det_min[e]:
                    det_min[e] = det
                if det <= 0.0:
                    continue
                dA = sqrt(det) * w[q]
                i00 = g11 / det
                i11 = g00 / det
                i01 = -g01 / det
                for a in range(nb):
                    sa0 = dN[q, a, 0]
                    sa1 = dN[q, a, 1]
                    ta0 = dA * (i00 * sa0 + i01 * sa1)
                    ta1 = dA * (i01 * sa0 + i11 * sa1)
                    for d in range(3):
                        Ae[e, a, d] += J[2 * d] * ta0 + J[2 * d + 1] * ta1
    return Ae_arr, det_arr


def element_mass_ax(const double[:, :, ::1] xe, const double[:, ::1] N,
                    const double[:, :, ::1] dN, const double[::1] w):
    cdef Py_ssize_t E = xe.shape[0], nb = xe.shape[1], Q = N.shape[0]
    Me_arr = np.zeros((E, nb, nb))
    Ae_arr = np.zeros((E, nb, 3))
    det_arr = np.empty(E)
    cdef double[:, :, ::1] Me = Me_arr
    cdef double[:, :, ::1] Ae = Ae_arr
    cdef double[::1] det_min = det_arr
    cdef double J[6]
    cdef double g00, g01, g11, det, dA, i00, i01, i11, ma, sa0, sa1, ta0, ta1
    cdef Py_ssize_t e, q, a, b, d
    with nogil:
        for e in range(E):
            det_min[e] = 1e308
            for q in range(Q):
                _jacobian(xe, dN, e, q, J)
                g00 = J[0] * J[0] + J[2] * J[2] + J[4] * J[4]
                g01 = J[0] * J[1] + J[2] * J[3] + J[4] * J[5]
                g11 = J[1] * J[1] + J[3] * J[3] + J[5] * J[5]
                det = g00 * g11 - g01 * g01
                if det < det_min[e]:
                    det_min[e] = det
                if det <= 0.0:
                    continue
                dA = sqrt(det) * w[q]
                i00 = g11 / det
                i11 = g00 / det
                i01 = -g01 / det
                for a in range(nb):
                    ma = dA * N[q, a]
                    sa0 = dN[q, a, 0]
                    sa1 = dN[q, a, 1]
                    ta0 = dA * (i00 * sa0 + i01 * sa1)
                    ta1 = dA * (i01 * sa0 + i11 * sa1)
                    for b in range(a + 1):
                        Me[e, a, b] += ma * N[q, b]
                    for d in range(3):
                        Ae[e, a, d] += J[2 * d] * ta0 + J[2 * d + 1] * ta1
            for a in range(nb):
                for b in range(a):
                    Me[e, b, a] = Me[e, a, b]
    return Me_arr, Ae_arr, det_arr


def pcg(const long[::1] indptr, const long[::1] indices, const double[::1] data, const double[::1] dinv,
        const double[:, ::1] B, double[:, ::1] X, double tol, long max_iter):
    """Jacobi-preconditioned CG on each column of ``B`` (at most 3 columns), in place on ``X``."""
    cdef Py_ssize_t n = B.shape[0], nc = B.shape[1], i, p, c
    if nc > 3:
        raise ValueError("at most 3 columns")
    R_arr = np.empty((n, nc))
    P_arr = np.empty((n, nc))
    AP_arr = np.empty((n, nc))
    its_arr = np.zeros(nc, dtype=np.int64)
    res_arr = np.zeros(nc)
    cdef double[:, ::1] R = R_arr
    cdef double[:, ::1] P = P_arr
    cdef double[:, ::1] AP = AP_arr
    cdef long[::1] its = its_arr
    cdef double[::1] res = res_arr
    cdef double bnorm[3]
    cdef double rz[3]
    cdef double rz_new[3]
    cdef double pap[3]
    cdef double alpha[3]
    cdef double rr[3]
    cdef double acc[3]
    cdef int active[3]
    cdef int any_active
    cdef double a, z
    with nogil:
        for c in range(nc):
            bnorm[c] = 0.0
            rz[c] = 0.0
            rr[c] = 0.0
        for i in range(n):
            for c in range(nc):
                acc[c] = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                a = data[p]
                for c in range(nc):
                    acc[c] += a * X[indices[p], c]
            for c in range(nc):
                R[i, c] = B[i, c] - acc[c]
                z = dinv[i] * R[i, c]
                P[i, c] = z
                rz[c] += R[i, c] * z
                rr[c] += R[i, c] * R[i, c]
                bnorm[c] += B[i, c] * B[i, c]
        any_active = 0
        for c in range(nc):
            bnorm[c] = sqrt(bnorm[c])
            if bnorm[c] == 0.0:
                bnorm[c] = 1.0
                active[c] = 0
            else:
                res[c] = sqrt(rr[c]) / bnorm[c]
                active[c] = res[c] > tol
            any_active = any_active or active[c]
        while any_active:
            for c in range(nc):
                pap[c] = 0.0
            for i in range(n):
                for c in range(nc):
                    acc[c] = 0.0
                for p in range(indptr[i], indptr[i + 1]):
                    a = data[p]
                    for c in range(nc):
                        acc[c] += a * P[indices[p], c]
                for c in range(nc):
                    AP[i, c] = acc[c]
                    pap[c] += P[i, c] * acc[c]
            for c in range(nc):
                alpha[c] = rz[c] / pap[c] if active[c] else 0.0
                rr[c] = 0.0
                rz_new[c] = 0.0
            for i in range(n):
                for c in range(nc):
                    X[i, c] += alpha[c] * P[i, c]
                    R[i, c] -= alpha[c] * AP[i, c]
                    rr[c] += R[i, c] * R[i, c]
                    rz_new[c] += R[i, c] * dinv[i] * R[i, c]
            any_active = 0
            for c in range(nc):
                if active[c]:
                    its[c] += 1
                    res[c] = sqrt(rr[c]) / bnorm[c]
                    active[c] = res[c] > tol and its[c] < max_iter
                    alpha[c] = rz_new[c] / rz[c] if active[c] else 0.0
                    rz[c] = rz_new[c]
                else:
                    alpha[c] = 0.0
                any_active = any_active or active[c]
            if any_active:
                for i in range(n):
                    for c in range(nc):
                        P[i, c] = dinv[i] * R[i, c] + alpha[c] * P[i, c]
    return np.asarray(X), its_arr
