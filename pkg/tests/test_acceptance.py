"""Acceptance criteria, one test each.

Every check of a criterion is evaluated, a single PASS/FAIL line is printed
and collected for the terminal summary, and the test then fails if any check
did not hold. Orders are checked on every successive pair of levels.
"""

import math
import time

import numpy as np
import pytest

from mcfem.assembly import mass_and_stiffness, norm_M, surface_area
from mcfem.exactflow import SphereSolution, geometric_errors, lift_to_sphere
from mcfem.femspace import make_quadrature, triangle_moment
from mcfem.mesh import build_icosphere, check_structure, equivariance_defect, mesh_size, symmetry_permutations
from mcfem.solver import FlowConfig, run_flow
from mcfem.study import StudyConfig, run_study, study_eoc_tables
from mcfem.verify import (
    defect,
    eoc,
    gradient_linf,
    mass_difference_identity,
    monotone_decomposition,
    norm_equivalence_probe,
    random_perturbation,
    stiffness_difference_identity,
    trace_report,
)

UNIT = SphereSolution(1.0)
LEVELS = (1, 2, 3, 4)
THETA_ORDERS = (2, 4, 8, 16)
FLOOR = 1e-13


class Checks:
    """Collects named boolean checks so that all of them are evaluated."""

    def __init__(self):
        self.failed = []
        self.notes = []

    def check(self, ok, message):
        if not ok:
            self.failed.append(message)
        return ok

    def note(self, message):
        self.notes.append(message)


@pytest.fixture
def criterion(acceptance_log):
    def run(number, title, body):
        checks = Checks()
        start = time.perf_counter()
        body(checks)
        elapsed = time.perf_counter() - start
        passed = not checks.failed
        detail = "; ".join(checks.failed + checks.notes) + f" [{elapsed:.1f}s]"
        acceptance_log.append((number, title, passed, detail))
        print(f"[{'PASS' if passed else 'FAIL'}] A{number} {title}: {detail}", flush=True)
        assert passed, f"A{number}: " + "; ".join(checks.failed)
    return run


def orders_str(orders):
    return "[" + ", ".join(f"{o:.2f}" for o in orders) + "]"


def trial_set():
    """10 seeded perturbations with ||e||_inf = 0.05 h on (k=1, level 2) and (k=2, level 2)."""
    for degree in (1, 2):
        mesh, xs = build_icosphere(2, degree)
        h = mesh_size(mesh, xs)[0]
        for seed in range(10):
            rng = np.random.default_rng(seed)
            e = random_perturbation(mesh, 0.05 * h, rng)
            w = rng.standard_normal(xs.shape)
            z = rng.standard_normal(xs.shape)
            yield degree, seed, mesh, xs, xs + e, w, z


def non_increasing_to_floor(curve):
    values = [curve[q] for q in THETA_ORDERS]
    return all(b <= a or b <= FLOOR for a, b in zip(values, values[1:]))


def test_a1_geometric_orders(criterion):
    def body(c):
        start = time.perf_counter()
        for k in (1, 2):
            rows = []
            for L in LEVELS:
                mesh, x0 = build_icosphere(L, k)
                rows.append(geometric_errors(mesh, x0, UNIT, 0.0))
            for name, target in (("sup_one_minus_delta", k + 1), ("sup_normal_error", k),
                                 ("interp_L2_error", k + 1)):
                orders = eoc([(r.h, getattr(r, name)) for r in rows]).orders
                c.note(f"k={k} {name} EOC {orders_str(orders)}")
                c.check(all(abs(o - target) <= 0.3 for o in orders),
                        f"k={k} {name} EOC {orders_str(orders)} not {target}+-0.3")
        elapsed = time.perf_counter() - start
        c.check(elapsed < 60, f"runtime {elapsed:.1f}s >= 60s")

    criterion(1, "geometric approximation orders", body)


def test_a2_matrix_difference_identities(criterion):
    def body(c):
        start = time.perf_counter()
        worst = {"massdiff": 0.0, "stiffdiff": 0.0}
        for degree, seed, mesh, xs, x, w, z in trial_set():
            for rep in (mass_difference_identity(mesh, xs, x, w, z, curve_orders=THETA_ORDERS),
                        stiffness_difference_identity(mesh, xs, x, w, curve_orders=THETA_ORDERS)):
                worst[rep.name] = max(worst[rep.name], rep.rel_residual)
                c.check(rep.rel_residual <= 1e-8,
                        f"k={degree} seed {seed} {rep.name} residual {rep.rel_residual:.2e} > 1e-8")
                c.check(non_increasing_to_floor(rep.theta_curve),
                        f"k={degree} seed {seed} {rep.name} residual rises with theta order "
                        f"{[f'{rep.theta_curve[q]:.1e}' for q in THETA_ORDERS]}")
        c.note(f"worst massdiff {worst['massdiff']:.2e}, stiffdiff {worst['stiffdiff']:.2e}")
        elapsed = time.perf_counter() - start
        c.check(elapsed < 60, f"runtime {elapsed:.1f}s >= 60s")

    criterion(2, "matrix-difference identities", body)


def test_a3_monotone_decomposition(criterion):
    def body(c):
        worst = 0.0
        key_trace, key_gap = 0.0, 0.0
        for degree, seed, mesh, xs, x, _, _ in trial_set():
            r = monotone_decomposition(mesh, xs, x)
            tp, npart = r.breakdown["trace_part"], r.breakdown["normal_part"]
            gap = abs(r.lhs - (tp + npart))
            scale = max(abs(r.lhs), npart)
            worst = max(worst, gap / scale)
            c.check(gap <= 1e-8 * scale, f"k={degree} seed {seed} decomposition gap {gap / scale:.2e}")
            # claimed by the key lemma: trace_part = 0 and lhs = normal_part; reported only
            key_trace = max(key_trace, abs(tp) / abs(r.lhs))
            key_gap = max(key_gap, abs(r.lhs - npart) / abs(r.lhs))
        c.note(f"worst gap {worst:.2e}")
        c.note(f"reported: max |trace_part|/|lhs| {key_trace:.3f}, max |lhs-normal_part|/|lhs| {key_gap:.3f}")

        s = 0.01
        for degree in (1, 2):
            mesh, xs = build_icosphere(2, degree)
            r = monotone_decomposition(mesh, xs, (1 + s) * xs)
            area = surface_area(mesh, xs)
            c.check(r.breakdown["normal_part"] <= 1e-12 * abs(r.lhs),
                    f"k={degree} scaling normal_part {r.breakdown['normal_part']:.2e}")
            rel = abs(r.lhs - 2 * s * s * area) / (2 * s * s * area)
            c.check(rel <= 1e-6, f"k={degree} scaling lhs off by {rel:.2e}")

            tol = 1e-10 if degree == 1 else 1e-8
            rng = np.random.default_rng(degree)
            x = xs + random_perturbation(mesh, 0.05 * mesh_size(mesh, xs)[0], rng)
            for surface, label in ((xs, "x*"), (x, "x")):
                t = trace_report(mesh, surface, surface, identity_field=True)
                c.check(t.rel_residual <= tol, f"k={degree} trace on {label}: T/(2 area)-1 = {t.rel_residual:.2e}")
                c.note(f"k={degree} T/(2 area) on {label} = {t.lhs / t.rhs:.15f}")

    criterion(3, "monotone decomposition", body)


@pytest.fixture(scope="module")
def study():
    start = time.perf_counter()
    rows = run_study(StudyConfig(degrees=(1, 2, 3), levels=LEVELS))
    return rows, time.perf_counter() - start


def test_a4_flow_convergence(criterion, study):
    rows, elapsed = study

    def body(c):
        c.check(all(r["guard_met"] for r in rows),
                f"time-step guard not met in {[(r['degree'], r['level']) for r in rows if not r['guard_met']]}")
        tables = study_eoc_tables(rows)
        for k in (1, 2, 3):
            cells = [r for r in rows if r["degree"] == k]
            errs = [r["l2_error"] for r in cells]
            c.check(all(b < a for a, b in zip(errs, errs[1:])), f"k={k} L2 error not strictly decreasing {errs}")
            orders = tables[(k, "l2_error")].orders
            bound = 1.0 if k == 1 else k - 1 - 0.3
            c.check(all(o >= bound for o in orders), f"k={k} L2 EOC {orders_str(orders)} below {bound}")
            nodal = tables[(k, "max_nodal_error")].orders
            c.note(f"k={k} L2 {errs[-1]:.2e} EOC {orders_str(orders)}, max-nodal EOC {orders_str(nodal)}")
        c.check(elapsed < 600, f"runtime {elapsed:.1f}s >= 600s")
        c.note(f"study {elapsed:.0f}s")

    criterion(4, "flow convergence on the shrinking sphere", body)


def test_a5_defect_estimate(criterion):
    def body(c):
        start = time.perf_counter()
        for k in (2, 3):
            rows = []
            for L in LEVELS:
                mesh, x0 = build_icosphere(L, k)
                rows.append(defect(mesh, x0, UNIT, 0.05))
            orders = eoc([(r.h, r.norm_M_defect) for r in rows]).orders
            c.note(f"k={k} defect EOC {orders_str(orders)}")
            c.check(all(o >= k - 1 - 0.3 for o in orders), f"k={k} defect EOC {orders_str(orders)} below {k - 1.3}")
        elapsed = time.perf_counter() - start
        c.check(elapsed < 120, f"runtime {elapsed:.1f}s >= 120s")

    criterion(5, "defect estimate", body)


def test_a6_area_monotonicity(criterion, study):
    rows, _ = study

    def body(c):
        bad = [(r["degree"], r["level"]) for r in rows if not r["area_monotone"]]
        c.check(not bad, f"area increased in cells {bad}")
        cells = [r for r in rows if r["degree"] == 1]
        exact = 4 * math.pi * (1 - 4 * 0.05)
        for r in cells:
            c.check(r["area_error"] == pytest.approx(abs(r["final_area"] - exact), rel=1e-12),
                    "area error column inconsistent")
        orders = eoc([(r["h"], r["area_error"]) for r in cells]).orders
        c.note(f"all {len(rows)} cells monotone; k=1 area EOC {orders_str(orders)}")
        c.check(all(abs(o - 2) <= 0.3 for o in orders), f"k=1 area EOC {orders_str(orders)} not 2+-0.3")

    criterion(6, "energy/area monotonicity", body)


def test_a7_norm_equivalence(criterion):
    def body(c):
        start = time.perf_counter()
        mesh, xs = build_icosphere(2, 2)
        worst_value, worst_grad, worst_hyp = 0.0, 0.0, 0.0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            e = rng.standard_normal(xs.shape)
            e *= rng.uniform(0.05, 0.5) / gradient_linf(mesh, xs, e)
            r = norm_equivalence_probe(mesh, xs, e, trials=10, seed=seed)
            worst_hyp = max(worst_hyp, r.hypothesis_value)
            worst_value = max(worst_value, r.max_linf_value_ratio, 1 / r.min_linf_value_ratio)
            worst_grad = max(worst_grad, r.max_linf_gradient_ratio, 1 / r.min_linf_gradient_ratio)
        c.check(worst_hyp <= 0.5, f"gradient hypothesis {worst_hyp:.4f} > 0.5")
        c.check(worst_value <= 2.05, f"max L-inf value ratio {worst_value:.4f} > 2.05")
        c.note(f"max L-inf value ratio {worst_value:.4f}, gradient ratio {worst_grad:.4f} (reported)")
        elapsed = time.perf_counter() - start
        c.check(elapsed < 60, f"runtime {elapsed:.1f}s >= 60s")

    criterion(7, "norm equivalence", body)


def test_a8_linearly_implicit_euler(criterion):
    def body(c):
        start = time.perf_counter()
        t_end = 0.05
        mesh, x0 = build_icosphere(3, 2)
        perms = symmetry_permutations(x0)

        def semidiscrete(tau):
            return run_flow(mesh, x0, FlowConfig(scheme="semidiscrete_rkc", t_end=t_end, tau=tau), UNIT).final

        ref, finer = semidiscrete(2.5e-4), semidiscrete(1.25e-4)

        steps, errors = [], []
        spread = {"all": 0.0, "orbit": 0.0, "equivariance": 0.0}

        def watch(n, t, x):
            r = np.linalg.norm(x, axis=1)
            spread["all"] = max(spread["all"], (r.max() - r.min()) / r.max())
            lo, hi = r.copy(), r.copy()
            for p in perms:
                lo, hi = np.minimum(lo, r[p]), np.maximum(hi, r[p])
            spread["orbit"] = max(spread["orbit"], float(np.max((hi - lo) / r.max())))
            spread["equivariance"] = max(spread["equivariance"], equivariance_defect(x, perms))

        for tau in (4e-3, 2e-3, 1e-3):
            cfg = FlowConfig(scheme="linearly_implicit_euler", t_end=t_end, tau=tau)
            traj = run_flow(mesh, x0, cfg, UNIT, on_step=watch)
            steps.append(cfg.step)
            errors.append(norm_M(mesh, ref, traj.final - ref))
        ref_change = norm_M(mesh, ref, finer - ref)
        c.check(ref_change <= 0.01 * min(errors),
                f"reference not converged in time: change {ref_change:.2e} vs error {min(errors):.2e}")
        orders = eoc(list(zip(steps, errors))).orders
        c.note(f"temporal EOC {orders_str(orders)} at steps {[f'{s:.3e}' for s in steps]}")
        c.check(all(abs(o - 1) <= 0.2 for o in orders), f"temporal EOC {orders_str(orders)} not 1+-0.2")
        c.check(spread["orbit"] <= 1e-12, f"radii within symmetry orbits differ by {spread['orbit']:.2e}")
        c.check(spread["all"] <= 1e-12, f"node radii differ by {spread['all']:.2e} relative")
        c.note(f"orbit radius spread {spread['orbit']:.1e}, equivariance defect {spread['equivariance']:.1e}")
        elapsed = time.perf_counter() - start
        c.check(elapsed < 120, f"runtime {elapsed:.1f}s >= 120s")

    criterion(8, "linearly implicit Euler", body)


def test_a9_structural_suite(criterion):
    def body(c):
        rng = np.random.default_rng(9)
        for k in (1, 2, 3):
            for L in (0, 1, 2):
                mesh, x0 = build_icosphere(L, k)
                problems = check_structure(mesh, x0)
                c.check(not problems, f"k={k} L={L} structure: {problems}")
                c.check(mesh.euler_characteristic() == 2, f"k={k} L={L} Euler characteristic")
                x = x0 + 0.01 * mesh_size(mesh, x0)[0] * rng.standard_normal(x0.shape)
                M, A = mass_and_stiffness(mesh, x)
                c.check(abs(M - M.T).max() <= 1e-15 * abs(M).max(), f"k={k} L={L} M not symmetric")
                probes = rng.standard_normal((mesh.node_count, 20))
                c.check(np.all(np.einsum("ij,ij->j", probes, M @ probes) > 0), f"k={k} L={L} M not SPD")
                ones = np.ones(mesh.node_count)
                c.check(np.abs(A @ ones).max() <= 1e-12 * abs(A).max(), f"k={k} L={L} A1 != 0")
                energy = float(np.einsum("ic,ic->", x, A @ x))
                area = surface_area(mesh, x)
                c.check(abs(energy - 2 * area) <= 1e-12 * area, f"k={k} L={L} x^T A x != 2 area")
        c.check(abs(triangle_moment(1, 1) - 1 / 24) <= 1e-15, "moment 1/24")
        c.check(abs(triangle_moment(2, 2) - 1 / 180) <= 1e-15, "moment 1/180")
        c.check(abs(make_quadrature(2).integrate(lambda s, t: s * t) - 1 / 24) <= 1e-15, "quadrature 1/24")
        c.check(abs(make_quadrature(4).integrate(lambda s, t: s * s * t * t) - 1 / 180) <= 1e-15,
                "quadrature 1/180")
        for p in rng.standard_normal((50, 3)) * 3:
            once = lift_to_sphere(p, UNIT, 0.1)
            c.check(np.abs(lift_to_sphere(once, UNIT, 0.1) - once).max() <= 1e-14, "lift not idempotent")
        c.note("structure, SPD, A1=0, x^T A x = 2 area, moments, lift idempotence")

    criterion(9, "structural suite", body)
