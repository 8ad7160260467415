"""Mass and stiffness matrices on the discrete surface ``Gamma_h[x]``.

The block matrices ``M_ij = I_3 * m_ij`` and ``A_ij = I_3 * a_ij`` are stored
as scalar sparse matrices acting on each coordinate column of an ``(N, 3)``
nodal array.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import GeometryError
from .femspace import DEGENERATE_TOL, tables
from .mesh import SurfaceMesh

logger = logging.getLogger(__name__)


def _pattern(mesh: SurfaceMesh):
    """CSR structure of the element connectivity, cached on the mesh.

    Returns ``(indptr, indices, slot)`` where ``slot`` maps each entry of the
    flattened ``(E, nb, nb)`` local array to its position in the CSR data, so
    scattering is one ``bincount`` in a fixed, deterministic order.
    """
    cache = mesh._cache
    if "pattern" not in cache:
        el = mesh.elements
        nb = el.shape[1]
        n = mesh.node_count
        rows = np.repeat(el, nb, axis=1).ravel().astype(np.int64)
        cols = np.tile(el, (1, nb)).ravel().astype(np.int64)
        keys, slot = np.unique(rows * n + cols, return_inverse=True)
        r, c = np.divmod(keys, n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, r + 1, 1)
        cache["pattern"] = (np.cumsum(indptr), c, slot.ravel())
    return cache["pattern"]


def _element_nodes(mesh, x):
    return np.ascontiguousarray(np.asarray(x, dtype=float)[mesh.elements])


def _check_det(det_min, xe):
    scale = np.abs(xe).max() ** 4 if xe.size else 1.0
    bad = np.flatnonzero(~(det_min > DEGENERATE_TOL * max(scale, 1e-300)))
    if bad.size:
        e = int(bad[0])
        raise GeometryError(f"degenerate element {e}: metric determinant {det_min[e]:.3e}", element=e)


def _scatter(mesh, local):
    indptr, indices, slot = _pattern(mesh)
    n = mesh.node_count
    data = np.bincount(slot, weights=local.ravel(), minlength=indices.size)
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def _gather_rows(mesh, local):
    idx = mesh.elements.ravel()
    flat = local.reshape(-1, 3)
    return np.stack([np.bincount(idx, weights=flat[:, d], minlength=mesh.node_count) for d in range(3)], axis=1)


def element_matrices(mesh: SurfaceMesh, x, quad=None):
    """Local mass and stiffness matrices, shape ``(E, nb, nb)`` each."""
    tb = tables(mesh.degree, quad)
    xe = _element_nodes(mesh, x)
    Me, Ke, det_min = kernels.element_matrices(xe, tb.N, np.ascontiguousarray(tb.dN), tb.quad.weights)
    _check_det(det_min, xe)
    return Me, Ke


def mass_matrix(mesh: SurfaceMesh, x, quad=None) -> sp.csr_matrix:
    """Scalar mass matrix ``m_ij = int phi_i phi_j`` on ``Gamma_h[x]``.

    ``quad`` is the quadrature exactness degree (default ``2k + 2``).
    """
    return mass_and_ax(mesh, x, quad)[0]


def stiffness_matrix(mesh: SurfaceMesh, x, quad=None) -> sp.csr_matrix:
    """Scalar stiffness matrix ``a_ij = int grad phi_i . grad phi_j`` on ``Gamma_h[x]``."""
    _, Ke = element_matrices(mesh, x, quad)
    return _scatter(mesh, Ke)


def mass_and_stiffness(mesh: SurfaceMesh, x, quad=None):
    Me, Ke = element_matrices(mesh, x, quad)
    return _scatter(mesh, Me), _scatter(mesh, Ke)


def apply_Ax(mesh: SurfaceMesh, x, quad=None) -> np.ndarray:
    """``A(x) x`` without forming the matrix.

    Row i equals the integral of the tangential gradient of ``phi_i``, because
    the tangential gradient of the identity is the projector ``P`` and basis
    gradients are tangential.
    """
    tb = tables(mesh.degree, quad)
    xe = _element_nodes(mesh, x)
    Ae, det_min = kernels.element_ax(xe, np.ascontiguousarray(tb.dN), tb.quad.weights)
    _check_det(det_min, xe)
    return _gather_rows(mesh, Ae)


def mass_and_ax(mesh: SurfaceMesh, x, quad=None):
    """``M(x)`` and ``A(x) x`` from a single pass over the elements."""
    tb = tables(mesh.degree, quad)
    xe = _element_nodes(mesh, x)
    Me, Ae, det_min = kernels.element_mass_ax(xe, tb.N, np.ascontiguousarray(tb.dN), tb.quad.weights)
    _check_det(det_min, xe)
    return _scatter(mesh, Me), _gather_rows(mesh, Ae)


def surface_area(mesh: SurfaceMesh, x, quad=None) -> float:
    """Quadrature area of ``Gamma_h[x]`` (equals ``1^T M 1``)."""
    tb = tables(mesh.degree, quad)
    xe = _element_nodes(mesh, x)
    J = np.einsum("ead,qai->eqdi", xe, tb.dN)
    cr = np.cross(J[..., 0], J[..., 1])
    return float(np.sum(np.linalg.norm(cr, axis=-1) @ tb.quad.weights))


def intermediate_nodal(x_star, x, theta: float) -> np.ndarray:
    """Nodal vector ``(1 - theta) x* + theta x`` of the intermediate surface."""
    x_star = np.asarray(x_star, dtype=float)
    x = np.asarray(x, dtype=float)
    if x_star.shape != x.shape:
        raise ValueError(f"shape mismatch {x_star.shape} vs {x.shape}")
    return x_star + theta * (x - x_star)


def _quadratic_norm(K, w, name):
    w = np.asarray(w, dtype=float)
    val = float(np.einsum("ic,ic->", w, K @ w))
    if val < 0:
        warnings.warn(f"{name}: negative quadratic form {val:.3e} from roundoff, clipped at 0")
        val = 0.0
    return np.sqrt(val)


def norm_M(mesh: SurfaceMesh, x, w, quad=None) -> float:
    """Discrete L2 norm ``sqrt(w^T M(x) w)``."""
    return _quadratic_norm(mass_matrix(mesh, x, quad), w, "norm_M")


def seminorm_A(mesh: SurfaceMesh, x, w, quad=None) -> float:
    """Discrete H1 seminorm ``sqrt(w^T A(x) w)``."""
    return _quadratic_norm(stiffness_matrix(mesh, x, quad), w, "seminorm_A")


def dump_coo(matrix: sp.spmatrix, path) -> None:
    """Write a matrix as ``row col value`` lines (0-based indices)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {v:.17e}\n")
