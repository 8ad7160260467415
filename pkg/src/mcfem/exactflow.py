"""Shrinking sphere: exact mean curvature flow and geometric error measures.

A sphere of radius ``R0`` centred at the origin stays a sphere with
``R(t)^2 = R0^2 - 4 t`` (mean curvature ``H = 2 / R``, normal speed ``-H``),
so the flow map is the radial scaling ``X(p, t) = (R(t) / R0) p``. The lift
from a discrete surface to the exact sphere is radial projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, SingularTimeError
from .femspace import element_geometry, positions_at, tables
from .mesh import SurfaceMesh, lattice_barycentrics, mesh_size


@dataclass(frozen=True)
class SphereSolution:
    initial_radius: float = 1.0

    def __post_init__(self):
        if not self.initial_radius > 0:
            raise ValueError("initial radius must be positive")

    @property
    def singular_time(self) -> float:
        return self.initial_radius**2 / 4.0

    def check_time(self, t: float) -> None:
        if t < 0:
            raise ValueError(f"negative time {t}")
        if t >= self.singular_time:
            raise SingularTimeError(f"t = {t} is at or beyond the extinction time {self.singular_time}")

    def radius(self, t: float) -> float:
        self.check_time(t)
        return float(np.sqrt(self.initial_radius**2 - 4.0 * t))

    def mean_curvature(self, t: float) -> float:
        return 2.0 / self.radius(t)


def sphere_radius(solution: SphereSolution, t: float) -> float:
    return solution.radius(t)


def _check_on_sphere(x0, solution, tol=1e-12):
    x0 = np.asarray(x0, dtype=float)
    r = np.linalg.norm(x0, axis=-1)
    dev = np.max(np.abs(r - solution.initial_radius)) / solution.initial_radius
    if dev > tol:
        raise ValueError(f"nodes are not on the initial sphere (relative deviation {dev:.2e})")
    return x0


def exact_nodal(x0, solution: SphereSolution, t: float) -> np.ndarray:
    """Nodes moving with the exact flow, ``x*_j(t) = X(p_j, t)``."""
    x0 = _check_on_sphere(x0, solution)
    return (solution.radius(t) / solution.initial_radius) * x0


def exact_velocity(x0, solution: SphereSolution, t: float) -> np.ndarray:
    """Nodal velocities ``d/dt x*_j(t) = -(2 / R(t)^2) x*_j(t)``."""
    x0 = _check_on_sphere(x0, solution)
    R = solution.radius(t)
    return -(2.0 / (R * solution.initial_radius)) * x0


def lift_to_sphere(point, solution: SphereSolution, t: float) -> np.ndarray:
    """Radial projection onto the exact sphere at time t (works on arrays of points)."""
    p = np.asarray(point, dtype=float)
    nrm = np.linalg.norm(p, axis=-1, keepdims=True)
    if np.any(nrm == 0):
        raise GeometryError("lift undefined at the sphere centre")
    return solution.radius(t) * p / nrm


@dataclass(frozen=True)
class GeometricErrorReport:
    sup_one_minus_delta: float
    sup_normal_error: float
    interp_L2_error: float
    h: float


def _lifted_area_ratio(F, J):
    """delta_h = (area element of the radially projected patch) / (discrete area element).

    For the lift ``y = R F / |F|`` the projected tangent vectors are
    ``(R / |F|) (I - u u^T) J`` with ``u = F / |F|``; the cross product of the
    two projected columns is ``(R / |F|)^2 (u . (J1 x J2)) u``.
    """
    r = np.linalg.norm(F, axis=-1)
    u = F / r[..., None]
    cr = np.cross(J[..., 0], J[..., 1])
    dA_h = np.linalg.norm(cr, axis=-1)
    return np.abs(np.einsum("...d,...d->...", u, cr)) / (r**2 * dA_h), u, cr / dA_h[..., None], dA_h


def _sample_points(degree: int, quad_points: np.ndarray) -> np.ndarray:
    """Quadrature points plus a degree-4k lattice (corners and edges included)."""
    lat = lattice_barycentrics(4 * degree) / (4.0 * degree)
    return np.concatenate([quad_points, lat])


def geometric_errors(mesh: SurfaceMesh, x_star, solution: SphereSolution, t: float,
                     probe_field=None, quad=None) -> GeometricErrorReport:
    """Area-element, normal and lifted interpolation errors of ``Gamma_h[x*]``.

    ``probe_field`` maps points of shape ``(..., 3)`` to scalar values
    (default ``x_1^2``). Suprema are discrete maxima over the quadrature
    points and a degree-4k lattice on every element; the L2 error uses the
    quadrature rule.
    """
    if probe_field is None:
        probe_field = _x1_squared
    x_star = np.asarray(x_star, dtype=float)
    R = solution.radius(t)
    tb = tables(mesh.degree, quad)
    xe = x_star[mesh.elements]

    pts = _sample_points(mesh.degree, tb.quad.points)
    N_s = tb.ref.basis(pts)
    dN_s = tb.ref.gradients(pts)
    geo_s = element_geometry(xe, dN_s)
    # the lift scales by R/|F|: fold R into the ratio
    delta_s, u_s, n_s, _ = _lifted_area_ratio(positions_at(xe, N_s) / R, geo_s.jacobian / R)
    normal_err = np.linalg.norm(n_s - u_s, axis=-1)

    geo = element_geometry(xe, tb.dN)
    delta, u, _, _ = _lifted_area_ratio(positions_at(xe, tb.N) / R, geo.jacobian / R)
    vals = probe_field(x_star)[mesh.elements]
    interp = np.einsum("qa,ea->eq", tb.N, vals)
    exact = probe_field(R * u)
    w = tb.quad.weights
    l2 = np.sqrt(np.sum((exact - interp) ** 2 * delta * geo.area_element * w))
    h_max, _, _ = mesh_size(mesh, x_star)
    return GeometricErrorReport(
        sup_one_minus_delta=float(np.max(np.abs(1.0 - delta_s))),
        sup_normal_error=float(np.max(normal_err)),
        interp_L2_error=float(l2),
        h=h_max,
    )


def _x1_squared(p):
    return p[..., 0] ** 2


def flowmap_error(mesh: SurfaceMesh, x0, x_t, solution: SphereSolution, t: float, quad=None):
    """Error of the discrete flow map against the exact radial scaling.

    ``X_h(., t)`` is the FE function on ``Gamma_h[x0]`` with nodal values
    ``x_t``; it is compared with ``X(p, t) = (R(t) / R0) p`` at the quadrature
    points ``p`` of ``Gamma_h[x0]`` (the scaling map is defined on all of
    space, so the domain mismatch between ``Gamma_h[x0]`` and the exact
    initial sphere only enters through the integration domain, an
    ``O(h^{k+1})`` effect).

    Returns
    -------
    l2_error : float
        ``|| X_h(., t) - X(., t) ||_{L2(Gamma_h[x0])}``.
    max_nodal_error : float
        ``max_j |x_j(t) - x*_j(t)|``.
    """
    x0 = np.asarray(x0, dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    scale = solution.radius(t) / solution.initial_radius
    tb = tables(mesh.degree, quad)
    xe0 = x0[mesh.elements]
    geo = element_geometry(xe0, tb.dN)
    p = positions_at(xe0, tb.N)
    Xh = positions_at(x_t[mesh.elements], tb.N)
    diff2 = np.sum((Xh - scale * p) ** 2, axis=-1)
    l2 = float(np.sqrt(np.sum(diff2 * geo.area_element * tb.quad.weights)))
    nodal = float(np.max(np.linalg.norm(x_t - scale * x0, axis=1)))
    return l2, nodal
