"""Reference Lagrange elements, triangle quadrature and curved-element frames.

The reference triangle has corners (0, 0), (1, 0), (0, 1); a point with
barycentrics ``(l0, l1, l2)`` has reference coordinates ``(l1, l2)``.
Tangential gradients use the chart formula ``grad_G u = J g^{-1} grad_ref u``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import CapacityError, GeometryError
from .mesh import DEGREE_CAP, lattice_barycentrics

QUADRATURE_CAP = 40
DEGENERATE_TOL = 1e-24


def _factor(m, k, lam):
    """Value and derivative of prod_{i<m} (k*lam - i) / (i + 1)."""
    val = np.ones_like(lam)
    der = np.zeros_like(lam)
    for i in range(m):
        f = (k * lam - i) / (i + 1)
        der = der * f + val * (k / (i + 1))
        val = val * f
    return val, der


@dataclass(frozen=True)
class ReferenceElement:
    """Degree-k Lagrange element on the equispaced barycentric lattice."""

    degree: int
    lattice: np.ndarray  # integer barycentric triples, shape (nb, 3)

    @property
    def node_barycentrics(self) -> np.ndarray:
        return self.lattice / self.degree

    @property
    def n_basis(self) -> int:
        return len(self.lattice)

    def basis(self, bary) -> np.ndarray:
        """Basis values at barycentric points, shape ``(P, nb)``."""
        bary = np.atleast_2d(np.asarray(bary, dtype=float))
        out = np.ones((bary.shape[0], self.n_basis))
        for c in range(3):
            for n, m in enumerate(self.lattice[:, c]):
                out[:, n] *= _factor(m, self.degree, bary[:, c])[0]
        return out

    def gradients(self, bary) -> np.ndarray:
        """Reference gradients ``d/d(xi, eta)`` at barycentric points, shape ``(P, nb, 2)``."""
        bary = np.atleast_2d(np.asarray(bary, dtype=float))
        P = bary.shape[0]
        out = np.empty((P, self.n_basis, 2))
        k = self.degree
        for n, (a, b, c) in enumerate(self.lattice):
            v0, d0 = _factor(a, k, bary[:, 0])
            v1, d1 = _factor(b, k, bary[:, 1])
            v2, d2 = _factor(c, k, bary[:, 2])
            dl0 = d0 * v1 * v2
            out[:, n, 0] = v0 * d1 * v2 - dl0
            out[:, n, 1] = v0 * v1 * d2 - dl0
        return out


@lru_cache(maxsize=None)
def make_reference(degree: int) -> ReferenceElement:
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    if degree > DEGREE_CAP:
        raise CapacityError(f"degree {degree} exceeds the cap of {DEGREE_CAP}")
    lat = lattice_barycentrics(degree)
    lat.setflags(write=False)
    return ReferenceElement(degree, lat)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # barycentric, shape (Q, 3)
    weights: np.ndarray  # sum to 1/2
    exactness_degree: int

    @property
    def reference_points(self) -> np.ndarray:
        return self.points[:, 1:]

    def integrate(self, f) -> float:
        """Integrate ``f(xi, eta)`` over the reference triangle."""
        xi, eta = self.points[:, 1], self.points[:, 2]
        return float(np.dot(self.weights, f(xi, eta)))


# Fully symmetric rules with positive weights and interior points (Dunavant).
# Orbits: ("c", w) centroid; ("a", w, a) the 3 permutations of (a, a, 1 - 2a);
# ("ab", w, a, b) the 6 permutations of (a, b, 1 - a - b). Weights sum to 1.
_SYMMETRIC_RULES = {
    1: [("c", 1.0)],
    2: [("a", 1 / 3, 1 / 6)],
    4: [("a", 0.223381589678011, 0.445948490915965), ("a", 0.109951743655322, 0.091576213509771)],
    5: [("c", 0.225), ("a", 0.132394152788506, 0.470142064105115), ("a", 0.125939180544827, 0.101286507323456)],
    6: [
        ("a", 0.116786275726379, 0.249286745170910),
        ("a", 0.050844906370207, 0.063089014491502),
        ("ab", 0.082851075618374, 0.053145049844817, 0.310352451033784),
    ],
    8: [
        ("c", 0.144315607677787),
        ("a", 0.095091634267285, 0.459292588292723),
        ("a", 0.103217370534718, 0.170569307751760),
        ("a", 0.032458497623198, 0.050547228317031),
        ("ab", 0.027230314174435, 0.008394777409958, 0.263112829634638),
    ],
}


def _expand_orbits(orbits):
    pts, wts = [], []
    for orbit in orbits:
        kind, w = orbit[0], orbit[1]
        if kind == "c":
            perms = [(1 / 3, 1 / 3, 1 / 3)]
        elif kind == "a":
            a = orbit[2]
            perms = [(a, a, 1 - 2 * a), (a, 1 - 2 * a, a), (1 - 2 * a, a, a)]
        else:
            a, b = orbit[2], orbit[3]
            c = 1 - a - b
            perms = [(a, b, c), (b, c, a), (c, a, b), (b, a, c), (a, c, b), (c, b, a)]
        pts.extend(perms)
        wts.extend([w] * len(perms))
    return np.array(pts), np.array(wts) / 2


def _collapsed_rule(p):
    n = max(1, (p + 3) // 2)
    g, gw = np.polynomial.legendre.leggauss(n)
    g = (g + 1) / 2
    gw = gw / 2
    s, t = np.meshgrid(g, g, indexing="ij")
    ws = np.outer(gw, gw) * (1 - t)
    xi = (s * (1 - t)).ravel()
    eta = t.ravel()
    bary = np.stack([1 - xi - eta, xi, eta], axis=1)
    w = ws.ravel()
    pts = np.concatenate([bary, bary[:, [1, 2, 0]], bary[:, [2, 0, 1]]])
    wts = np.concatenate([w, w, w]) / 3
    return pts, wts


@lru_cache(maxsize=None)
def make_quadrature(exactness_degree: int) -> QuadratureRule:
    """Quadrature rule on the reference triangle exact up to the given degree.

    Degrees up to 8 use the smallest tabulated fully symmetric rule that is
    exact enough. Higher degrees use a collapsed Gauss-Legendre rule: the
    Duffy map ``(s, t) -> (s (1 - t), t)`` turns a degree-p polynomial into
    one of degree p in s and p + 1 in t (Jacobian ``1 - t``), so
    ``ceil((p + 2) / 2)`` points per direction are exact; the rule is then
    averaged over the three cyclic relabelings of the corners so that it is
    invariant under element rotation, like the symmetric rules.
    """
    p = int(exactness_degree)
    if p < 0:
        raise ValueError("exactness degree must be non-negative")
    if p > QUADRATURE_CAP:
        raise CapacityError(f"quadrature exactness {p} exceeds the cap of {QUADRATURE_CAP}")
    tabulated = [d for d in sorted(_SYMMETRIC_RULES) if d >= p]
    if tabulated:
        pts, wts = _expand_orbits(_SYMMETRIC_RULES[tabulated[0]])
        p = tabulated[0]
    else:
        pts, wts = _collapsed_rule(p)
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, p)


def triangle_moment(a: int, b: int) -> float:
    """Exact integral of ``xi^a eta^b`` over the reference triangle: a! b! / (a + b + 2)!."""
    from math import factorial

    return factorial(a) * factorial(b) / factorial(a + b + 2)


@dataclass(frozen=True)
class ElementPointFrame:
    jacobian: np.ndarray  # (3, 2)
    metric: np.ndarray  # (2, 2)
    inverse_metric: np.ndarray
    area_element: float
    normal: np.ndarray  # (3,)
    projector: np.ndarray  # (3, 3)
    field_gradient: np.ndarray | None = None  # (3, 3), column j = grad of component j


def frame_at(ref: ReferenceElement, element_node_positions, point, field_coefficients=None) -> ElementPointFrame:
    """Geometry of a curved element at one reference point (barycentric)."""
    xe = np.asarray(element_node_positions, dtype=float)[None]
    dN = ref.gradients(point)
    geo = element_geometry(xe, dN, check=True)
    E = None
    if field_coefficients is not None:
        c = np.asarray(field_coefficients, dtype=float)[None]
        E = geo.field_gradient(dN, c)[0, 0]
    return ElementPointFrame(
        jacobian=geo.jacobian[0, 0],
        metric=geo.metric[0, 0],
        inverse_metric=geo.inverse_metric[0, 0],
        area_element=float(geo.area_element[0, 0]),
        normal=geo.normal[0, 0],
        projector=geo.projector()[0, 0],
        field_gradient=E,
    )


@dataclass(frozen=True)
class ElementGeometry:
    """Batched frames: arrays over (element, quadrature point)."""

    jacobian: np.ndarray  # (E, Q, 3, 2)
    metric: np.ndarray  # (E, Q, 2, 2)
    inverse_metric: np.ndarray
    area_element: np.ndarray  # (E, Q)
    normal: np.ndarray  # (E, Q, 3)

    def projector(self) -> np.ndarray:
        n = self.normal
        return np.eye(3) - n[..., :, None] * n[..., None, :]

    def basis_gradients(self, dN: np.ndarray) -> np.ndarray:
        """Tangential gradients of the basis functions, shape ``(E, Q, nb, 3)``."""
        t = np.einsum("eqij,qaj->eqai", self.inverse_metric, dN)
        return np.einsum("eqdi,eqai->eqad", self.jacobian, t)

    def field_gradient(self, dN: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
        """Tangential gradient matrix of a vector field, shape ``(E, Q, 3, c)``.

        ``coeffs`` holds per-element nodal values, shape ``(E, nb, c)``;
        column j of the result is the tangential gradient of component j.
        """
        gref = np.einsum("qai,eac->eqic", dN, coeffs)
        t = np.einsum("eqij,eqjc->eqic", self.inverse_metric, gref)
        return np.einsum("eqdi,eqic->eqdc", self.jacobian, t)

    def divergence(self, dN, coeffs) -> np.ndarray:
        return np.trace(self.field_gradient(dN, coeffs), axis1=-2, axis2=-1)


def element_geometry(xe: np.ndarray, dN: np.ndarray, check: bool = True) -> ElementGeometry:
    """Frames of all elements at the quadrature points.

    Parameters
    ----------
    xe : ndarray, shape (E, nb, 3)
        Element node positions.
    dN : ndarray, shape (Q, nb, 2)
        Reference basis gradients at the quadrature points.
    """
    J = np.einsum("ead,qai->eqdi", xe, dN)
    g = np.einsum("eqdi,eqdj->eqij", J, J)
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] * g[..., 1, 0]
    if check:
        scale = np.max(np.abs(g), axis=(-2, -1))
        bad = det <= DEGENERATE_TOL * np.maximum(scale, 1e-300) ** 2
        if np.any(bad):
            e = int(np.argwhere(bad)[0, 0])
            raise GeometryError(f"degenerate element {e}: rank-deficient jacobian", element=e)
    ginv = np.empty_like(g)
    ginv[..., 0, 0] = g[..., 1, 1] / det
    ginv[..., 1, 1] = g[..., 0, 0] / det
    ginv[..., 0, 1] = -g[..., 0, 1] / det
    ginv[..., 1, 0] = -g[..., 1, 0] / det
    cr = np.cross(J[..., 0], J[..., 1])
    area = np.linalg.norm(cr, axis=-1)
    normal = cr / area[..., None]
    return ElementGeometry(J, g, ginv, np.sqrt(det), normal)


def positions_at(xe: np.ndarray, N: np.ndarray) -> np.ndarray:
    """Physical points of all elements at reference points, shape ``(E, Q, 3)``."""
    return np.einsum("qa,ead->eqd", N, xe)


@dataclass(frozen=True)
class Tables:
    """Basis tables of one reference element at one quadrature rule."""

    ref: ReferenceElement
    quad: QuadratureRule
    N: np.ndarray  # (Q, nb)
    dN: np.ndarray  # (Q, nb, 2)


@lru_cache(maxsize=None)
def tables(degree: int, exactness: int | None = None) -> Tables:
    """Basis tables at the default (2k + 2) or given quadrature exactness."""
    ref = make_reference(degree)
    quad = make_quadrature(2 * degree + 2 if exactness is None else exactness)
    N = ref.basis(quad.points)
    dN = ref.gradients(quad.points)
    N.setflags(write=False)
    dN.setflags(write=False)
    return Tables(ref, quad, N, dN)
