"""Time integration of ``M(x) x' + A(x) x = 0``.

Three integrators share one driver (:func:`run_flow`):

* ``semidiscrete_rk4``: classical explicit RK4 on ``x' = -M(x)^{-1} A(x) x``.
* ``semidiscrete_rkc``: second-order Runge-Kutta-Chebyshev with damping
  ``2/13``; the stage count grows with ``sqrt(tau * lambda_max)`` so the
  step size is set by accuracy, not by the ``O(h^-2)`` stiffness.
* ``linearly_implicit_euler``: ``(M(x^{n-1}) + tau A(x^{n-1})) x^n = M(x^{n-1}) x^{n-1}``.

Matrices are reassembled at every stage and substep.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .assembly import element_matrices, mass_and_ax, mass_and_stiffness, surface_area
from .errors import ConvergenceError, GeometryError
from .exactflow import SphereSolution
from .mesh import DEGENERACY_THRESHOLD, SurfaceMesh, mesh_size

logger = logging.getLogger(__name__)

SCHEMES = ("semidiscrete_rk4", "semidiscrete_rkc", "linearly_implicit_euler")
RK4_STABILITY = 2.785  # real stability interval of classical RK4
RKC_DAMPING = 2.0 / 13.0
RKC_SAFETY = 1.1


def _check_spd(matrix):
    d = matrix.diagonal()
    if np.any(d <= 0):
        raise ValueError("matrix is not SPD: non-positive diagonal entry")
    asym = abs(matrix - matrix.T)
    scale = abs(matrix).max()
    if asym.nnz and asym.max() > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")
    ones = np.ones(matrix.shape[0])
    row = matrix @ ones
    if np.linalg.norm(row) <= 1e-10 * scale * np.sqrt(matrix.shape[0]):
        raise ValueError("matrix is not SPD: constants lie in its kernel")


def solve_spd(matrix, rhs, tol: float = 1e-12, max_iter: int = 10_000, x0=None, check: bool = True,
              return_info: bool = False):
    """Jacobi-preconditioned conjugate gradients, applied per column.

    Raises :class:`ConvergenceError` when a column misses ``tol`` (relative
    residual) within ``max_iter`` iterations.
    """
    matrix = sp.csr_matrix(matrix)
    if check:
        _check_spd(matrix)
    b = np.asarray(rhs, dtype=float)
    vector = b.ndim == 1
    B = b[:, None] if vector else b
    if x0 is None:
        X = np.zeros_like(B)
    else:
        X = np.array(x0, dtype=float).reshape(B.shape)
    dinv = 1.0 / matrix.diagonal()
    indptr = matrix.indptr.astype(np.int64)
    indices = matrix.indices.astype(np.int64)
    X = np.ascontiguousarray(X)
    X, its = kernels.pcg(indptr, indices, matrix.data, dinv, np.ascontiguousarray(B), X, tol, max_iter)
    bnorm = np.linalg.norm(B, axis=0)
    X[:, bnorm == 0] = 0.0
    res = np.linalg.norm(B - matrix @ X, axis=0) / np.where(bnorm > 0, bnorm, 1.0)
    bad = np.flatnonzero(res > 10 * tol)
    if bad.size:
        c = int(bad[0])
        raise ConvergenceError(
            f"CG did not converge on column {c}: relative residual {res[c]:.3e} after {its[c]} iterations",
            residual=float(res[c]),
            iterations=int(its[c]),
        )
    result = X[:, 0] if vector else X
    if return_info:
        return result, {"iterations": int(its.sum()), "residual": float(res.max())}
    return result


@dataclass
class FlowConfig:
    scheme: str = "semidiscrete_rk4"
    t_end: float = 0.05
    tau: float = 1e-4
    cg_tolerance: float = 1e-12
    cg_max_iterations: int = 10_000
    quality_abort_threshold: float = DEGENERACY_THRESHOLD
    snapshot_stride: int = 0  # 0: keep only initial and final states
    quad: int | None = None

    def validate(self, solution: SphereSolution | None = None) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if not (0 < self.tau <= self.t_end):
            raise ValueError(f"time step must satisfy 0 < tau <= t_end, got tau={self.tau}, t_end={self.t_end}")
        if solution is not None and self.t_end >= solution.singular_time:
            raise ValueError(
                f"t_end={self.t_end} is not below the extinction time {solution.singular_time} of the exact sphere"
            )

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.t_end / self.tau - 1e-9))

    @property
    def step(self) -> float:
        """Uniform step actually used: ``t_end / n_steps`` (never larger than tau)."""
        return self.t_end / self.n_steps


@dataclass
class FlowTrajectory:
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    snapshot_times: list = field(default_factory=list)
    areas: list = field(default_factory=list)
    min_quality: list = field(default_factory=list)
    cg_iterations: list = field(default_factory=list)
    degenerate: bool = False
    message: str = ""

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    def csv_rows(self):
        for i, t in enumerate(self.times):
            yield i, t, self.areas[i], self.min_quality[i], self.cg_iterations[i]


def _velocity(mesh, x, quad, tol, max_iter, guess=None):
    M, Ax = mass_and_ax(mesh, x, quad)
    rhs = -Ax
    v, info = solve_spd(M, rhs, tol, max_iter, x0=guess, check=False, return_info=True)
    return v, info["iterations"]


def semidiscrete_rhs(mesh: SurfaceMesh, x, quad=None, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    """Nodal velocity ``x' = -M(x)^{-1} A(x) x``."""
    return _velocity(mesh, x, quad, tol, max_iter)[0]


def step_rk4(mesh: SurfaceMesh, x, tau: float, quad=None, tol: float = 1e-12, max_iter: int = 10_000,
             return_iterations: bool = False):
    """One classical RK4 step of the semidiscrete system."""
    x = np.asarray(x, dtype=float)
    if tau == 0:
        return (x.copy(), 0) if return_iterations else x.copy()
    k1, i1 = _velocity(mesh, x, quad, tol, max_iter)
    k2, i2 = _velocity(mesh, x + 0.5 * tau * k1, quad, tol, max_iter, guess=k1)
    k3, i3 = _velocity(mesh, x + 0.5 * tau * k2, quad, tol, max_iter, guess=k2)
    k4, i4 = _velocity(mesh, x + tau * k3, quad, tol, max_iter, guess=k3)
    new = x + (tau / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return (new, i1 + i2 + i3 + i4) if return_iterations else new


def step_limplicit_euler(mesh: SurfaceMesh, x_prev, tau: float, quad=None, tol: float = 1e-12,
                         max_iter: int = 10_000, return_iterations: bool = False):
    """One linearly implicit Euler step.

    Solves ``(M + tau A) x^n = M x^{n-1}`` with matrices on ``Gamma_h[x^{n-1}]``,
    written for the increment ``(M + tau A)(x^n - x^{n-1}) = -tau A x^{n-1}``
    so that the CG tolerance is relative to the motion, not the position.
    """
    x_prev = np.asarray(x_prev, dtype=float)
    M, A = mass_and_stiffness(mesh, x_prev, quad)
    K = (M + tau * A).tocsr()
    rhs = -tau * (A @ x_prev)
    d, info = solve_spd(K, rhs, tol, max_iter, check=False, return_info=True)
    new = x_prev + d
    return (new, info["iterations"]) if return_iterations else new


def spectral_bound(mesh: SurfaceMesh, x, quad=None) -> float:
    """Upper bound for the largest eigenvalue of ``M(x)^{-1} A(x)``.

    The largest generalized eigenvalue of the assembled pair never exceeds
    the largest one over the element pairs ``(Me, Ke)``.
    """
    Me, Ke = element_matrices(mesh, x, quad)
    L = np.linalg.cholesky(Me)
    Linv = np.linalg.inv(L)
    S = Linv @ Ke @ Linv.transpose(0, 2, 1)
    return float(np.linalg.eigvalsh(0.5 * (S + S.transpose(0, 2, 1)))[:, -1].max())


def rk4_stable_step(mesh: SurfaceMesh, x, quad=None, safety: float = 0.8) -> float:
    """A stable RK4 step ``safety * 2.785 / lambda`` from :func:`spectral_bound`."""
    return safety * RK4_STABILITY / spectral_bound(mesh, x, quad)


def _chebyshev(s, w0):
    T = np.zeros(s + 1)
    dT = np.zeros(s + 1)
    d2T = np.zeros(s + 1)
    T[0], T[1], dT[1] = 1.0, w0, 1.0
    for j in range(2, s + 1):
        T[j] = 2 * w0 * T[j - 1] - T[j - 2]
        dT[j] = 2 * T[j - 1] + 2 * w0 * dT[j - 1] - dT[j - 2]
        d2T[j] = 4 * dT[j - 1] + 2 * w0 * d2T[j - 1] - d2T[j - 2]
    return T, dT, d2T


def rkc_coefficients(stages: int, damping: float = RKC_DAMPING):
    """Coefficients of the s-stage second-order RKC method.

    Returns ``(w0, w1, b, T, beta)`` where ``beta`` is the length of the real
    stability interval ``[-beta, 0]``.
    """
    s = int(stages)
    if s < 2:
        raise ValueError("RKC needs at least 2 stages")
    w0 = 1.0 + damping / s**2
    T, dT, d2T = _chebyshev(s, w0)
    w1 = dT[s] / d2T[s]
    b = np.empty(s + 1)
    b[2:] = d2T[2:] / dT[2:] ** 2
    b[0] = b[1] = b[2]
    beta = (w0 + 1.0) * d2T[s] / dT[s]
    return w0, w1, b, T, beta


def rkc_stages(tau_lambda: float) -> int:
    """Fewest stages whose stability interval covers ``RKC_SAFETY * tau * lambda``."""
    target = RKC_SAFETY * tau_lambda
    s = max(2, math.ceil(math.sqrt(target / 0.65)))
    while rkc_coefficients(s)[4] < target:
        s += 1
    while s > 2 and rkc_coefficients(s - 1)[4] >= target:
        s -= 1
    return s


def step_rkc(mesh: SurfaceMesh, x, tau: float, stages: int | None = None, quad=None, tol: float = 1e-12,
             max_iter: int = 10_000, return_iterations: bool = False):
    """One Runge-Kutta-Chebyshev step of the semidiscrete system.

    ``stages`` defaults to the count that makes the step stable for the
    current :func:`spectral_bound`.
    """
    x = np.asarray(x, dtype=float)
    if tau == 0:
        return (x.copy(), 0) if return_iterations else x.copy()
    if stages is None:
        stages = rkc_stages(tau * spectral_bound(mesh, x, quad))
    w0, w1, b, T, _ = rkc_coefficients(stages)
    F0, iters = _velocity(mesh, x, quad, tol, max_iter)
    prev2 = x
    prev = x + b[1] * w1 * tau * F0
    F = F0
    for j in range(2, stages + 1):
        F, it = _velocity(mesh, prev, quad, tol, max_iter, guess=F)
        iters += it
        mu = 2 * b[j] * w0 / b[j - 1]
        nu = -b[j] / b[j - 2]
        mu_t = 2 * b[j] * w1 / b[j - 1]
        gamma_t = -(1 - b[j - 1] * T[j - 1]) * mu_t
        new = (1 - mu - nu) * x + mu * prev + nu * prev2 + mu_t * tau * F + gamma_t * tau * F0
        prev2, prev = prev, new
    return (prev, iters) if return_iterations else prev


def run_flow(mesh: SurfaceMesh, x0, config: FlowConfig, solution: SphereSolution | None = None,
             on_step=None) -> FlowTrajectory:
    """Integrate from ``x0`` to ``config.t_end`` with uniform steps.

    The run stops early (``degenerate = True``) when the minimum element
    quality falls below ``config.quality_abort_threshold``. ``on_step(n, t, x)``
    is called after the initial state (n = 0) and every accepted step.
    """
    config.validate(solution)
    x = np.array(x0, dtype=float)
    tau = config.step
    traj = FlowTrajectory()
    _, _, q = mesh_size(mesh, x)
    traj.times.append(0.0)
    traj.areas.append(surface_area(mesh, x, config.quad))
    traj.min_quality.append(q)
    traj.cg_iterations.append(0)
    traj.snapshots.append(x.copy())
    traj.snapshot_times.append(0.0)
    if on_step is not None:
        on_step(0, 0.0, x)
    kw = dict(quad=config.quad, tol=config.cg_tolerance, max_iter=config.cg_max_iterations, return_iterations=True)
    for n in range(1, config.n_steps + 1):
        try:
            if config.scheme == "semidiscrete_rk4":
                x, it = step_rk4(mesh, x, tau, **kw)
            elif config.scheme == "linearly_implicit_euler":
                x, it = step_limplicit_euler(mesh, x, tau, **kw)
            else:
                x, it = step_rkc(mesh, x, tau, **kw)
        except GeometryError as exc:
            traj.degenerate = True
            traj.message = f"step {n}: {exc}"
            break
        t = n * tau
        _, _, q = mesh_size(mesh, x)
        traj.times.append(t)
        traj.areas.append(surface_area(mesh, x, config.quad))
        traj.min_quality.append(q)
        traj.cg_iterations.append(it)
        if on_step is not None:
            on_step(n, t, x)
        last = n == config.n_steps
        if last or (config.snapshot_stride and n % config.snapshot_stride == 0):
            traj.snapshots.append(x.copy())
            traj.snapshot_times.append(t)
        if q < config.quality_abort_threshold:
            traj.degenerate = True
            traj.message = f"step {n}: element quality {q:.3e} below {config.quality_abort_threshold}"
            if not last:
                traj.snapshots.append(x.copy())
                traj.snapshot_times.append(t)
            logger.warning(traj.message)
            break
    return traj
