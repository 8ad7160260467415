"""Numerical checks of the matrix-difference identities, the monotone
decomposition, the trace functional, norm equivalence across the surface
family ``x^theta = (1 - theta) x* + theta x``, the defect of the interpolated
exact solution, and experimental orders of convergence.

Throughout, ``e = x - x*`` and, on the intermediate surface ``Gamma_h^theta``,
``E = grad e`` is the 3x3 tangential gradient with column j the gradient of
component j. Surface integrals use the element quadrature; the theta integral
uses Gauss-Legendre on ``[0, 1]``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .assembly import apply_Ax, intermediate_nodal, mass_matrix, norm_M, surface_area
from .errors import HypothesisError
from .exactflow import SphereSolution, exact_nodal, exact_velocity
from .femspace import element_geometry, positions_at, tables
from .mesh import SurfaceMesh, mesh_size, validate_nodal
from .solver import solve_spd

THETA_ORDER = 16
RESIDUAL_FLOOR = 1e-13
HYPOTHESIS_BOUND = 0.5


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _csv_line(values) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(values)
    return buf.getvalue().rstrip("\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


@dataclass
class IdentityReport:
    """Both sides of an identity with residuals and named sub-integrals."""

    name: str
    lhs: float
    rhs: float
    abs_residual: float
    rel_residual: float
    theta_quadrature_order: int
    surface_quadrature_exactness: int
    breakdown: dict = field(default_factory=dict)
    degree: int = 0
    level: int = 0
    h: float = float("nan")
    scale: float = 0.0
    theta_curve: dict = field(default_factory=dict)

    CSV_FIELDS = (
        "identity", "degree", "level", "h", "theta_order", "surface_exactness",
        "lhs", "rhs", "abs_residual", "rel_residual", "trace_part", "normal_part",
    )

    def to_dict(self) -> dict:
        return _json_ready(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)

    def csv_values(self) -> list:
        return [
            self.name, self.degree, self.level, self.h, self.theta_quadrature_order,
            self.surface_quadrature_exactness, self.lhs, self.rhs, self.abs_residual, self.rel_residual,
            self.breakdown.get("trace_part", float("nan")), self.breakdown.get("normal_part", float("nan")),
        ]

    def csv_row(self) -> str:
        return _csv_line([_fmt(v) for v in self.csv_values()])


@dataclass
class DefectReport:
    t: float
    defect_vector: np.ndarray
    norm_M_defect: float
    h: float
    solve_residual: float = 0.0
    degree: int = 0
    level: int = 0

    CSV_FIELDS = ("degree", "level", "h", "t", "norm_M_defect", "solve_residual")

    def to_dict(self, include_vector: bool = False) -> dict:
        d = asdict(self)
        if not include_vector:
            d.pop("defect_vector")
        return _json_ready(d)

    def to_json(self, include_vector: bool = False) -> str:
        return json.dumps(self.to_dict(include_vector))

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)

    def csv_values(self) -> list:
        return [self.degree, self.level, self.h, self.t, self.norm_M_defect, self.solve_residual]

    def csv_row(self) -> str:
        return _csv_line([_fmt(v) for v in self.csv_values()])


@dataclass
class EOCTable:
    """Mesh sizes, values and the observed orders between consecutive rows."""

    h: list
    values: list
    orders: list
    name: str = ""

    def to_dict(self) -> dict:
        return _json_ready(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @staticmethod
    def csv_header() -> str:
        return "name,h,value,order"

    def csv_rows(self) -> list[str]:
        rows = []
        for i, (h, v) in enumerate(zip(self.h, self.values)):
            order = self.orders[i - 1] if i > 0 else float("nan")
            rows.append(_csv_line([self.name, _fmt(float(h)), _fmt(float(v)), _fmt(float(order))]))
        return rows

    def csv_row(self) -> str:
        """One line: name, then all orders."""
        return _csv_line([self.name] + [_fmt(float(o)) for o in self.orders])


@dataclass
class NormEquivalenceReport:
    hypothesis_value: float
    thetas: list
    trials: int
    max_linf_value_ratio: float
    min_linf_value_ratio: float
    max_linf_gradient_ratio: float
    min_linf_gradient_ratio: float
    max_l2_value_ratio: float
    min_l2_value_ratio: float
    max_l2_gradient_ratio: float
    min_l2_gradient_ratio: float
    l2_value_ratio_by_theta: dict = field(default_factory=dict)
    bound: float = 2.0

    def to_dict(self) -> dict:
        return _json_ready(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    CSV_FIELDS = (
        "hypothesis_value", "trials", "max_linf_value_ratio", "min_linf_value_ratio", "max_linf_gradient_ratio",
        "min_linf_gradient_ratio", "max_l2_value_ratio", "min_l2_value_ratio", "max_l2_gradient_ratio",
        "min_l2_gradient_ratio", "bound",
    )

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.CSV_FIELDS)

    def csv_values(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]

    def csv_row(self) -> str:
        return _csv_line([_fmt(v) for v in self.csv_values()])


def gauss_theta(order: int):
    """Gauss-Legendre nodes and weights on ``[0, 1]``."""
    if order < 1:
        raise ValueError("theta order must be >= 1")
    t, w = np.polynomial.legendre.leggauss(order)
    return (t + 1) / 2, w / 2


def _frames(mesh, x, tb, coeff_fields):
    """Geometry at quadrature points and tangential gradients of nodal fields."""
    xe = np.asarray(x, dtype=float)[mesh.elements]
    geo = element_geometry(xe, tb.dN)
    grads = [geo.field_gradient(tb.dN, np.asarray(f, dtype=float)[mesh.elements]) for f in coeff_fields]
    return geo, grads


def _integrate(geo, tb, integrand):
    return float(np.sum(integrand * geo.area_element * tb.quad.weights))


def _theta_integral(mesh, x_star, x, theta_order, quad, pointwise):
    """``int_0^1 int_{Gamma_h^theta} f dtheta`` for each named pointwise term.

    ``pointwise(geo, E, tb)`` returns a dict of arrays over
    (element, quadrature point). Also returns the integral of the absolute
    sum, used as the problem scale.
    """
    tb = tables(mesh.degree, quad)
    e = np.asarray(x, dtype=float) - np.asarray(x_star, dtype=float)
    nodes, weights = gauss_theta(theta_order)
    totals: dict = {}
    scale = 0.0
    for th, wt in zip(nodes, weights):
        xt = intermediate_nodal(x_star, x, th)
        geo, (E,) = _frames(mesh, xt, tb, [e])
        parts = pointwise(geo, E, tb)
        absolute = 0.0
        for name, val in parts.items():
            totals[name] = totals.get(name, 0.0) + wt * _integrate(geo, tb, val)
            absolute = absolute + val
        scale += wt * _integrate(geo, tb, np.abs(absolute))
    return totals, scale, tb.quad.exactness_degree


def _report(name, mesh, x_star, lhs, rhs, scale, theta_order, exactness, breakdown=None):
    abs_res = abs(lhs - rhs)
    denom = max(abs(lhs), abs(rhs), RESIDUAL_FLOOR * max(scale, 1e-300))
    h, _, _ = mesh_size(mesh, x_star)
    return IdentityReport(
        name=name,
        lhs=float(lhs),
        rhs=float(rhs),
        abs_residual=float(abs_res),
        rel_residual=float(abs_res / denom),
        theta_quadrature_order=int(theta_order),
        surface_quadrature_exactness=int(exactness),
        breakdown=dict(breakdown or {}),
        degree=mesh.degree,
        level=mesh.level,
        h=float(h),
        scale=float(scale),
    )


def _with_curve(fn, curve_orders, report, *args):
    if curve_orders:
        report.theta_curve = {int(q): fn(*args, theta_order=q).rel_residual for q in curve_orders}
    return report


def _prepare(mesh, x_star, x):
    return validate_nodal(mesh, x_star), validate_nodal(mesh, x)


def mass_difference_identity(mesh: SurfaceMesh, x_star, x, w, z, theta_order: int = THETA_ORDER, quad=None,
                             curve_orders=None) -> IdentityReport:
    """``w^T (M(x) - M(x*)) z`` against ``int_0^1 int w_h z_h div(e_h) dtheta``."""
    x_star, x = _prepare(mesh, x_star, x)
    w = validate_nodal(mesh, w)
    z = validate_nodal(mesh, z)
    dM = mass_matrix(mesh, x, quad) - mass_matrix(mesh, x_star, quad)
    lhs = float(np.einsum("ic,ic->", w, dM @ z))

    def pointwise(geo, E, tb):
        wz = np.einsum("eqc,eqc->eq", positions_at(w[mesh.elements], tb.N), positions_at(z[mesh.elements], tb.N))
        return {"integral": wz * np.trace(E, axis1=-2, axis2=-1)}

    totals, scale, ex = _theta_integral(mesh, x_star, x, theta_order, quad, pointwise)
    report = _report("massdiff", mesh, x_star, lhs, totals["integral"], scale, theta_order, ex)
    return _with_curve(mass_difference_identity, curve_orders, report, mesh, x_star, x, w, z)


def _stiffness_terms(w_field):
    """Pointwise ``grad w : (D e) P`` and ``grad w : E`` with ``D e = tr(E) I - (E + E^T)``."""

    def pointwise(geo, E, tb, mesh):
        W = geo.field_gradient(tb.dN, w_field[mesh.elements])
        P = geo.projector()
        trE = np.trace(E, axis1=-2, axis2=-1)
        D = trE[..., None, None] * np.eye(3) - (E + np.swapaxes(E, -1, -2))
        return {
            "deformation_part": np.einsum("eqij,eqij->eq", W, D @ P),
            "gradient_part": np.einsum("eqij,eqij->eq", W, E),
        }

    return pointwise


def stiffness_difference_identity(mesh: SurfaceMesh, x_star, x, w, theta_order: int = THETA_ORDER, quad=None,
                                  curve_orders=None) -> IdentityReport:
    """``w^T (A(x) x - A(x*) x*)`` against
    ``int_0^1 int grad w : (D e) P + grad w : E dtheta``."""
    x_star, x = _prepare(mesh, x_star, x)
    w = validate_nodal(mesh, w)
    lhs = float(np.einsum("ic,ic->", w, apply_Ax(mesh, x, quad) - apply_Ax(mesh, x_star, quad)))
    terms = _stiffness_terms(w)
    totals, scale, ex = _theta_integral(mesh, x_star, x, theta_order, quad,
                                        lambda geo, E, tb: terms(geo, E, tb, mesh))
    rhs = totals["deformation_part"] + totals["gradient_part"]
    report = _report("stiffdiff", mesh, x_star, lhs, rhs, scale, theta_order, ex, totals)
    return _with_curve(stiffness_difference_identity, curve_orders, report, mesh, x_star, x, w)


def _monotone_pointwise(geo, E, tb):
    n = geo.normal
    trE = np.trace(E, axis1=-2, axis2=-1)
    EE = np.einsum("eqij,eqji->eq", E, E)
    En = np.einsum("eqij,eqj->eqi", E, n)
    return {"trace_part": trE**2 - EE, "normal_part": np.einsum("eqi,eqi->eq", En, En)}


def monotone_decomposition(mesh: SurfaceMesh, x_star, x, theta_order: int = THETA_ORDER, quad=None,
                           curve_orders=None) -> IdentityReport:
    """``(A(x) x - A(x*) x*) . (x - x*)`` against ``trace_part + normal_part``.

    ``trace_part = int_0^1 int tr(E)^2 - tr(E E)`` and
    ``normal_part = int_0^1 int |E n|^2 = int_0^1 int tr(E^T E (I - P))``.
    The breakdown reports both; ``trace_part`` is not assumed to vanish.
    """
    x_star, x = _prepare(mesh, x_star, x)
    e = x - x_star
    lhs = float(np.einsum("ic,ic->", e, apply_Ax(mesh, x, quad) - apply_Ax(mesh, x_star, quad)))
    totals, scale, ex = _theta_integral(mesh, x_star, x, theta_order, quad, _monotone_pointwise)
    rhs = totals["trace_part"] + totals["normal_part"]
    report = _report("monotone", mesh, x_star, lhs, rhs, scale, theta_order, ex, totals)
    return _with_curve(monotone_decomposition, curve_orders, report, mesh, x_star, x)


def trace_functional(mesh: SurfaceMesh, x_surface, e, quad=None) -> float:
    """``T = int_{Gamma_h[x]} tr(E)^2 - tr(E E)`` for the field with nodal values ``e``."""
    x_surface = validate_nodal(mesh, x_surface)
    e = validate_nodal(mesh, e)
    tb = tables(mesh.degree, quad)
    geo, (E,) = _frames(mesh, x_surface, tb, [e])
    trE = np.trace(E, axis1=-2, axis2=-1)
    EE = np.einsum("eqij,eqji->eq", E, E)
    return _integrate(geo, tb, trE**2 - EE)


def trace_report(mesh: SurfaceMesh, x_surface, e, quad=None, identity_field: bool = False) -> IdentityReport:
    """Trace functional as a report.

    With ``identity_field`` the right side is ``2 * area`` (``E = P``
    pointwise); otherwise it is the claimed value 0, kept for reporting only.
    """
    T = trace_functional(mesh, x_surface, e, quad)
    area = surface_area(mesh, x_surface, quad)
    rhs = 2.0 * area if identity_field else 0.0
    ex = tables(mesh.degree, quad).quad.exactness_degree
    return _report("trace", mesh, x_surface, T, rhs, abs(T) + 2 * area, 0, ex,
                   {"trace_part": T, "area": area})


def _linf_gradient(mesh, x, e, quad=None):
    """Max of the Frobenius norm of ``grad e`` over quadrature points and element nodes."""
    tb = tables(mesh.degree, quad)
    pts = np.concatenate([tb.quad.points, tb.ref.node_barycentrics])
    dN = tb.ref.gradients(pts)
    xe = np.asarray(x, dtype=float)[mesh.elements]
    geo = element_geometry(xe, dN)
    G = geo.field_gradient(dN, np.asarray(e, dtype=float)[mesh.elements])
    return float(np.sqrt(np.einsum("eqij,eqij->eq", G, G)).max())


def gradient_linf(mesh: SurfaceMesh, x, e, quad=None) -> float:
    """Discrete ``||grad_{Gamma_h[x]} e_h||_{L-infinity}`` (Frobenius norm pointwise)."""
    return _linf_gradient(mesh, validate_nodal(mesh, x), validate_nodal(mesh, e), quad)


def _norms_on(mesh, x, fields, quad):
    """L-inf and L2 norms of values and gradients of several scalar fields.

    ``fields`` has shape ``(N, m)``; L-inf maxima run over quadrature points
    and element nodes.
    """
    tb = tables(mesh.degree, quad)
    pts = np.concatenate([tb.quad.points, tb.ref.node_barycentrics])
    Nq = tb.ref.basis(pts)
    dNq = tb.ref.gradients(pts)
    nq = tb.quad.points.shape[0]
    xe = np.asarray(x, dtype=float)[mesh.elements]
    geo = element_geometry(xe, dNq)
    fe = fields[mesh.elements]  # (E, nb, m)
    vals = np.einsum("qa,eam->eqm", Nq, fe)
    grads = geo.field_gradient(dNq, fe)  # (E, Q, 3, m)
    gnorm2 = np.einsum("eqim,eqim->eqm", grads, grads)
    wdA = (geo.area_element[:, :nq] * tb.quad.weights)[..., None]
    return {
        "linf_value": np.abs(vals).max(axis=(0, 1)),
        "linf_gradient": np.sqrt(gnorm2.max(axis=(0, 1))),
        "l2_value": np.sqrt(np.sum(vals[:, :nq] ** 2 * wdA, axis=(0, 1))),
        "l2_gradient": np.sqrt(np.sum(gnorm2[:, :nq] * wdA, axis=(0, 1))),
    }


def norm_equivalence_probe(mesh: SurfaceMesh, x_star, e, trials: int = 100,
                           thetas=(0.0, 0.25, 0.5, 0.75, 1.0), seed: int = 0, quad=None,
                           bound: float = HYPOTHESIS_BOUND) -> NormEquivalenceReport:
    """Ratios of norms of random fields on ``Gamma_h^theta`` and ``Gamma_h[x*]``.

    Raises :class:`HypothesisError` if ``||grad e||_inf`` on ``Gamma_h[x*]``
    exceeds ``bound``. Random fields are scalar with i.i.d. standard normal
    nodal values; values at the same reference point agree on every surface
    of the family, so the value L-inf ratio is 1 by construction.
    """
    x_star = validate_nodal(mesh, x_star)
    e = validate_nodal(mesh, e)
    hyp = _linf_gradient(mesh, x_star, e, quad)
    if hyp > bound:
        raise HypothesisError(f"||grad e||_inf = {hyp:.4f} exceeds {bound}")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((mesh.node_count, trials))
    base = _norms_on(mesh, x_star, W, quad)
    ratios = {k: [] for k in base}
    l2_by_theta = {}
    for th in thetas:
        cur = _norms_on(mesh, x_star + th * e, W, quad)
        for k in base:
            with np.errstate(divide="ignore", invalid="ignore"):
                r = np.where(base[k] > 0, cur[k] / np.where(base[k] > 0, base[k], 1.0), 1.0)
            ratios[k].append(r)
        l2_by_theta[float(th)] = float(np.median(ratios["l2_value"][-1]))
    r = {k: np.concatenate(v) for k, v in ratios.items()}
    return NormEquivalenceReport(
        hypothesis_value=hyp,
        thetas=[float(t) for t in thetas],
        trials=int(trials),
        max_linf_value_ratio=float(r["linf_value"].max()),
        min_linf_value_ratio=float(r["linf_value"].min()),
        max_linf_gradient_ratio=float(r["linf_gradient"].max()),
        min_linf_gradient_ratio=float(r["linf_gradient"].min()),
        max_l2_value_ratio=float(r["l2_value"].max()),
        min_l2_value_ratio=float(r["l2_value"].min()),
        max_l2_gradient_ratio=float(r["l2_gradient"].max()),
        min_l2_gradient_ratio=float(r["l2_gradient"].min()),
        l2_value_ratio_by_theta=l2_by_theta,
    )


def defect(mesh: SurfaceMesh, x0, solution: SphereSolution, t: float, quad=None, tol: float = 1e-12,
           max_iter: int = 10_000) -> DefectReport:
    """Defect ``d`` of the interpolated exact solution in the semidiscrete system.

    Solves ``M(x*) d = M(x*) x*' + A(x*) x*`` and reports ``||d||_{M(x*)}``.
    """
    x_star = exact_nodal(x0, solution, t)
    v_star = exact_velocity(x0, solution, t)
    M = mass_matrix(mesh, x_star, quad)
    Ax = apply_Ax(mesh, x_star, quad)
    correction = solve_spd(M, Ax, tol, max_iter, check=False)
    d = v_star + correction
    # relative to the solved system; M x*' + A x* itself nearly cancels
    res = float(np.linalg.norm(M @ correction - Ax) / max(np.linalg.norm(Ax), 1e-300))
    h, _, _ = mesh_size(mesh, x_star)
    return DefectReport(
        t=float(t),
        defect_vector=d,
        norm_M_defect=norm_M(mesh, x_star, d, quad),
        h=float(h),
        solve_residual=res,
        degree=mesh.degree,
        level=mesh.level,
    )


def eoc(rows, name: str = "") -> EOCTable:
    """Observed orders ``log(v_i / v_{i+1}) / log(h_i / h_{i+1})``.

    ``rows`` is a sequence of ``(h, value)`` pairs with strictly decreasing h
    and positive values.
    """
    rows = [(float(h), float(v)) for h, v in rows]
    if len(rows) < 2:
        raise ValueError("need at least two rows")
    hs = np.array([r[0] for r in rows])
    vs = np.array([r[1] for r in rows])
    if not np.all(np.isfinite(vs)) or np.any(vs <= 0):
        raise ValueError("values must be positive and finite")
    if np.any(hs <= 0) or np.any(np.diff(hs) >= 0):
        raise ValueError("h must be positive and strictly decreasing")
    orders = np.log2(vs[:-1] / vs[1:]) / np.log2(hs[:-1] / hs[1:])
    return EOCTable(h=hs.tolist(), values=vs.tolist(), orders=orders.tolist(), name=name)


def random_perturbation(mesh: SurfaceMesh, amplitude: float, rng) -> np.ndarray:
    """Nodal field with i.i.d. Gaussian directions scaled so ``max_j |e_j| = amplitude``."""
    e = rng.standard_normal((mesh.node_count, 3))
    return amplitude * e / np.linalg.norm(e, axis=1).max()
