"""Pure-numpy element kernels (fallback for the compiled ``_core``)."""

import numpy as np


def _metric(xe, dN):
    J = np.einsum("ead,qai->eqdi", xe, dN)
    g = np.einsum("eqdi,eqdj->eqij", J, J)
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    return J, g, det


def _ginv(g, det):
    ginv = np.empty_like(g)
    ginv[..., 0, 0] = g[..., 1, 1] / det
    ginv[..., 1, 1] = g[..., 0, 0] / det
    ginv[..., 0, 1] = -g[..., 0, 1] / det
    ginv[..., 1, 0] = ginv[..., 0, 1]
    return ginv


def element_matrices(xe, N, dN, w):
    """Local mass and stiffness matrices.

    Returns ``(Me, Ke, det_min)`` with ``Me, Ke`` of shape ``(E, nb, nb)``
    and ``det_min`` the smallest metric determinant per element.
    """
    _, g, det = _metric(xe, dN)
    det_min = det.min(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        dA = np.sqrt(np.maximum(det, 0.0)) * w
        ginv = _ginv(g, det)
    Me = np.einsum("eq,qa,qb->eab", dA, N, N)
    t = np.einsum("eqij,qbj->eqbi", ginv, dN)
    Ke = np.einsum("eq,qai,eqbi->eab", dA, dN, t)
    Ke = 0.5 * (Ke + Ke.transpose(0, 2, 1))
    return Me, Ke, det_min


def element_ax(xe, dN, w):
    """Local contributions of ``A(x) x``: the integral of each basis gradient.

    Returns ``(Ae, det_min)`` with ``Ae`` of shape ``(E, nb, 3)``.
    """
    J, g, det = _metric(xe, dN)
    det_min = det.min(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        dA = np.sqrt(np.maximum(det, 0.0)) * w
        ginv = _ginv(g, det)
    t = np.einsum("eqij,qaj->eqai", ginv, dN)
    Ae = np.einsum("eq,eqdi,eqai->ead", dA, J, t)
    return Ae, det_min


def element_mass_ax(xe, N, dN, w):
    """Local mass matrices and ``A(x) x`` contributions in one geometry pass.

    Returns ``(Me, Ae, det_min)``.
    """
    J, g, det = _metric(xe, dN)
    det_min = det.min(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        dA = np.sqrt(np.maximum(det, 0.0)) * w
        ginv = _ginv(g, det)
    Me = np.einsum("eq,qa,qb->eab", dA, N, N)
    t = np.einsum("eqij,qaj->eqai", ginv, dN)
    Ae = np.einsum("eq,eqdi,eqai->ead", dA, J, t)
    return Me, Ae, det_min


def pcg(indptr, indices, data, dinv, B, X, tol, max_iter):
    """Jacobi-preconditioned CG on each column of ``B``, in place on ``X``.

    Columns share the matrix products but keep their own step lengths and
    stopping tests. Returns ``(X, iterations_per_column)``.
    """
    import scipy.sparse as sp

    n = B.shape[0]
    matrix = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    bnorm = np.linalg.norm(B, axis=0)
    safe = np.where(bnorm > 0, bnorm, 1.0)
    R = B - matrix @ X
    Z = dinv[:, None] * R
    P = Z.copy()
    rz = np.einsum("ic,ic->c", R, Z)
    its = np.zeros(B.shape[1], dtype=np.int64)
    active = (bnorm > 0) & (np.linalg.norm(R, axis=0) / safe > tol)
    while active.any():
        AP = matrix @ P
        pap = np.einsum("ic,ic->c", P, AP)
        alpha = np.where(active, rz / np.where(active, pap, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        its += active
        active &= (np.linalg.norm(R, axis=0) / safe > tol) & (its < max_iter)
        Z = dinv[:, None] * R
        rz_new = np.einsum("ic,ic->c", R, Z)
        beta = np.where(active, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new
    return X, its
