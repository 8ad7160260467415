"""Convergence studies on the shrinking sphere.

Each (degree, level) cell integrates the semidiscrete system from the
projected icosphere to ``t_end`` and compares with the exact radial flow.
The step starts at ``tau_factor * h^2`` and is halved until halving it once
more changes the L2 flow-map error by less than ``guard`` (relative), so the
reported errors are spatial errors of the time-continuous system.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import GeometryError
from .exactflow import SphereSolution, flowmap_error, geometric_errors
from .mesh import build_icosphere, mesh_size
from .solver import FlowConfig, rk4_stable_step, run_flow
from .verify import defect, eoc

logger = logging.getLogger(__name__)

SEMIDISCRETE_SCHEMES = ("semidiscrete_rkc", "semidiscrete_rk4")
STUDY_COLUMNS = (
    "l2_error", "max_nodal_error", "defect_norm", "sup_one_minus_delta", "sup_normal_error",
    "interp_L2_error", "area_error",
)


@dataclass
class StudyConfig:
    degrees: tuple = (1, 2, 3)
    levels: tuple = (1, 2, 3, 4)
    radius: float = 1.0
    t_end: float = 0.05
    scheme: str = "semidiscrete_rkc"
    tau_factor: float = 0.125
    guard: float = 0.01
    max_halvings: int = 8
    quad: int | None = None
    cg_tolerance: float = 1e-12

    def validate(self) -> None:
        if self.scheme not in SEMIDISCRETE_SCHEMES:
            raise ValueError(f"convergence studies need a semidiscrete scheme {SEMIDISCRETE_SCHEMES}")
        if not self.degrees or not self.levels:
            raise ValueError("degrees and levels must be non-empty")
        if any(int(k) < 1 for k in self.degrees):
            raise ValueError("degrees must be >= 1")
        if any(int(L) < 0 for L in self.levels):
            raise ValueError("levels must be >= 0")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError("levels must be distinct")
        if not self.tau_factor > 0:
            raise ValueError("tau factor must be positive")
        if not 0 < self.guard < 1:
            raise ValueError("guard must lie in (0, 1)")
        if self.max_halvings < 1:
            raise ValueError("max_halvings must be >= 1")
        solution = SphereSolution(self.radius)
        FlowConfig(scheme=self.scheme, t_end=self.t_end, tau=self.t_end).validate(solution)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["degrees"] = list(self.degrees)
        d["levels"] = list(self.levels)
        return d


@dataclass
class TimeConvergedRun:
    tau: float
    n_steps: int
    guard_ratio: float
    guard_met: bool
    l2_error: float
    max_nodal_error: float
    final: np.ndarray
    final_area: float
    area_monotone: bool
    halvings: int
    taus: list = field(default_factory=list)
    errors: list = field(default_factory=list)


def _areas_monotone(areas) -> bool:
    a = np.asarray(areas)
    return bool(np.all(np.diff(a) <= 0.0))


def time_converged_run(mesh, x0, solution: SphereSolution, scheme: str, tau0: float, t_end: float,
                       guard: float = 0.01, max_halvings: int = 8, quad=None,
                       cg_tolerance: float = 1e-12) -> TimeConvergedRun:
    """Halve the step until the L2 flow-map error changes by less than ``guard``.

    The finer of the last two runs is reported; ``guard_met`` is False when
    ``max_halvings`` halvings did not reach the guard.
    """

    def one(tau):
        cfg = FlowConfig(scheme=scheme, t_end=t_end, tau=tau, quad=quad, cg_tolerance=cg_tolerance)
        traj = run_flow(mesh, x0, cfg, solution)
        if traj.degenerate:
            raise GeometryError(f"degenerate mesh during flow: {traj.message}")
        l2, nodal = flowmap_error(mesh, x0, traj.final, solution, t_end, quad)
        return cfg, traj, l2, nodal

    tau = min(tau0, t_end)
    cfg, traj, l2, nodal = one(tau)
    monotone = _areas_monotone(traj.areas)
    taus, errors = [cfg.step], [l2]
    ratio = math.inf
    for halving in range(1, max_halvings + 1):
        tau = cfg.step / 2
        cfg, traj, l2_new, nodal = one(tau)
        monotone &= _areas_monotone(traj.areas)
        taus.append(cfg.step)
        errors.append(l2_new)
        ratio = abs(l2 - l2_new) / l2_new
        l2 = l2_new
        if ratio < guard:
            break
    return TimeConvergedRun(
        tau=cfg.step,
        n_steps=cfg.n_steps,
        guard_ratio=float(ratio),
        guard_met=bool(ratio < guard),
        l2_error=float(l2),
        max_nodal_error=float(nodal),
        final=traj.final,
        final_area=float(traj.areas[-1]),
        area_monotone=bool(monotone),
        halvings=halving,
        taus=taus,
        errors=errors,
    )


def initial_step(mesh, x0, scheme: str, tau_factor: float, quad=None) -> float:
    """``tau_factor * h^2``, capped by the RK4 stability limit for RK4."""
    h, _, _ = mesh_size(mesh, x0)
    tau = tau_factor * h * h
    if scheme == "semidiscrete_rk4":
        stable = rk4_stable_step(mesh, x0, quad)
        if tau > stable:
            logger.info("RK4 step %.3e capped at the stability limit %.3e", tau, stable)
            tau = stable
    return tau


def convergence_cell(degree: int, level: int, cfg: StudyConfig) -> dict:
    """All tracked errors of one (degree, level) cell."""
    solution = SphereSolution(cfg.radius)
    mesh, x0 = build_icosphere(level, degree, cfg.radius)
    h, _, _ = mesh_size(mesh, x0)
    tau0 = initial_step(mesh, x0, cfg.scheme, cfg.tau_factor, cfg.quad)
    run = time_converged_run(mesh, x0, solution, cfg.scheme, tau0, cfg.t_end, cfg.guard, cfg.max_halvings,
                             cfg.quad, cfg.cg_tolerance)
    geo = geometric_errors(mesh, x0, solution, 0.0, quad=cfg.quad)
    d = defect(mesh, x0, solution, cfg.t_end, cfg.quad, cfg.cg_tolerance)
    exact_area = 4.0 * math.pi * solution.radius(cfg.t_end) ** 2
    return {
        "degree": degree,
        "level": level,
        "h": h,
        "nodes": mesh.node_count,
        "tau": run.tau,
        "n_steps": run.n_steps,
        "halvings": run.halvings,
        "guard_ratio": run.guard_ratio,
        "guard_met": run.guard_met,
        "l2_error": run.l2_error,
        "max_nodal_error": run.max_nodal_error,
        "defect_norm": d.norm_M_defect,
        "sup_one_minus_delta": geo.sup_one_minus_delta,
        "sup_normal_error": geo.sup_normal_error,
        "interp_L2_error": geo.interp_L2_error,
        "final_area": run.final_area,
        "area_error": abs(run.final_area - exact_area),
        "area_monotone": run.area_monotone,
    }


def worker_count(n_tasks: int) -> int:
    """Process count: ``MCF_THREADS`` (default: CPU count), at most ``n_tasks``."""
    raw = os.environ.get("MCF_THREADS")
    if raw is None or raw == "":
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise ValueError(f"MCF_THREADS must be a positive integer, got {raw!r}") from None
        if cap < 1:
            raise ValueError(f"MCF_THREADS must be a positive integer, got {raw!r}")
    return max(1, min(cap, n_tasks))


def _cell_args(args):
    return convergence_cell(*args)


def run_study(cfg: StudyConfig, workers: int | None = None) -> list[dict]:
    """Run every cell; rows are returned in (degree, level) order."""
    cfg.validate()
    tasks = [(int(k), int(L), cfg) for k in cfg.degrees for L in sorted(cfg.levels)]
    if workers is None:
        workers = worker_count(len(tasks))
    if workers <= 1:
        return [convergence_cell(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell_args, tasks))


def study_eoc_tables(rows: list[dict], columns=STUDY_COLUMNS) -> dict:
    """EOC tables keyed by ``(degree, column)``."""
    tables = {}
    for k in sorted({r["degree"] for r in rows}):
        cells = sorted((r for r in rows if r["degree"] == k), key=lambda r: -r["h"])
        if len(cells) < 2:
            continue
        for col in columns:
            pairs = [(r["h"], r[col]) for r in cells]
            if all(v > 0 for _, v in pairs):
                tables[(k, col)] = eoc(pairs, name=f"k{k}_{col}")
    return tables
