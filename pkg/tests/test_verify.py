import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mcfem.assembly import mass_matrix, norm_M, stiffness_matrix, surface_area
from mcfem.errors import HypothesisError
from mcfem.exactflow import SphereSolution, exact_nodal, exact_velocity
from mcfem.mesh import mesh_size
from mcfem.verify import (
    DefectReport,
    EOCTable,
    IdentityReport,
    defect,
    eoc,
    gauss_theta,
    gradient_linf,
    mass_difference_identity,
    monotone_decomposition,
    norm_equivalence_probe,
    random_perturbation,
    stiffness_difference_identity,
    trace_functional,
    trace_report,
)

UNIT = SphereSolution(1.0)


def trial(sphere, level, degree, seed, factor=0.05):
    mesh, xs = sphere(level, degree)
    rng = np.random.default_rng(seed)
    h = mesh_size(mesh, xs)[0]
    e = random_perturbation(mesh, factor * h, rng)
    w = rng.standard_normal(xs.shape)
    z = rng.standard_normal(xs.shape)
    return mesh, np.array(xs), xs + e, w, z


def test_gauss_theta():
    t, w = gauss_theta(5)
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.all((t > 0) & (t < 1))
    for p in range(10):
        assert np.dot(w, t**p) == pytest.approx(1 / (p + 1), abs=1e-15)
    with pytest.raises(ValueError):
        gauss_theta(0)


def test_random_perturbation_amplitude(sphere):
    mesh, _ = sphere(1, 2)
    e = random_perturbation(mesh, 0.3, np.random.default_rng(1))
    assert np.linalg.norm(e, axis=1).max() == pytest.approx(0.3, rel=1e-14)


@pytest.mark.parametrize("name", ["mass", "stiffness", "monotone"])
def test_identities_vanish_without_perturbation(sphere, name):
    mesh, xs = sphere(1, 2)
    w = np.random.default_rng(0).standard_normal(xs.shape)
    if name == "mass":
        r = mass_difference_identity(mesh, xs, xs, w, w)
    elif name == "stiffness":
        r = stiffness_difference_identity(mesh, xs, xs, w)
    else:
        r = monotone_decomposition(mesh, xs, xs)
        assert r.breakdown["trace_part"] == 0.0 and r.breakdown["normal_part"] == 0.0
    assert r.lhs == 0.0 and r.rhs == 0.0


@pytest.mark.parametrize("degree, level", [(1, 2), (2, 1), (3, 1)])
@pytest.mark.parametrize("seed", [0, 1])
def test_mass_difference_identity(sphere, degree, level, seed):
    mesh, xs, x, w, z = trial(sphere, level, degree, seed)
    r = mass_difference_identity(mesh, xs, x, w, z, curve_orders=(2, 4, 8, 16))
    assert r.rel_residual <= 1e-8
    assert r.abs_residual == abs(r.lhs - r.rhs)
    curve = [r.theta_curve[q] for q in (2, 4, 8, 16)]
    assert all(b <= max(a, 1e-13) for a, b in zip(curve, curve[1:]))


@pytest.mark.parametrize("degree, level", [(1, 2), (2, 1), (3, 1)])
def test_stiffness_difference_identity(sphere, degree, level):
    mesh, xs, x, w, _ = trial(sphere, level, degree, 3)
    r = stiffness_difference_identity(mesh, xs, x, w, curve_orders=(2, 4, 8, 16))
    assert r.rel_residual <= 1e-8
    assert r.rhs == pytest.approx(r.breakdown["deformation_part"] + r.breakdown["gradient_part"], rel=1e-14)


@pytest.mark.parametrize("degree", [1, 2])
def test_stiffness_identity_scaling_case(sphere, degree):
    mesh, xs = sphere(2, degree)
    s = 0.01
    r = stiffness_difference_identity(mesh, xs, (1 + s) * xs, xs)
    # A(lambda x) = A(x), so lhs = s x*^T A x* = 2 s area
    expected = 2 * s * surface_area(mesh, xs)
    assert r.lhs == pytest.approx(expected, rel=1e-10)
    assert r.rhs == pytest.approx(expected, rel=1e-10)


@pytest.mark.parametrize("degree, level", [(1, 2), (2, 1)])
def test_monotone_decomposition(sphere, degree, level):
    mesh, xs, x, _, _ = trial(sphere, level, degree, 4)
    r = monotone_decomposition(mesh, xs, x)
    tp, npart = r.breakdown["trace_part"], r.breakdown["normal_part"]
    assert npart >= 0
    assert abs(r.lhs - (tp + npart)) <= 1e-8 * max(abs(r.lhs), npart)


@pytest.mark.parametrize("degree", [1, 2])
def test_monotone_scaling_case(sphere, degree):
    mesh, xs = sphere(2, degree)
    s = 0.01
    r = monotone_decomposition(mesh, xs, (1 + s) * xs)
    area = surface_area(mesh, xs)
    assert r.breakdown["normal_part"] <= 1e-12 * abs(r.lhs)
    assert r.lhs == pytest.approx(2 * s**2 * area, rel=1e-8)
    assert r.breakdown["trace_part"] == pytest.approx(r.lhs, rel=1e-8)


def test_trace_functional_constant_field(sphere):
    mesh, xs = sphere(1, 2)
    c = np.tile([0.3, -0.2, 1.0], (mesh.node_count, 1))
    assert abs(trace_functional(mesh, xs, c)) <= 1e-14


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_trace_functional_identity_field(sphere, degree, rng):
    mesh, xs = sphere(2, degree)
    x = xs + 0.01 * rng.standard_normal(xs.shape)
    r = trace_report(mesh, x, x, identity_field=True)
    assert r.lhs == pytest.approx(2 * surface_area(mesh, x), rel=1e-12)
    assert r.rel_residual <= 1e-12


def test_trace_report_without_identity_compares_with_zero(sphere, rng):
    mesh, xs = sphere(1, 1)
    e = rng.standard_normal(xs.shape)
    r = trace_report(mesh, xs, e)
    assert r.rhs == 0.0
    assert r.lhs == pytest.approx(trace_functional(mesh, xs, e))


def test_norm_equivalence_zero_field(sphere):
    mesh, xs = sphere(1, 2)
    r = norm_equivalence_probe(mesh, xs, np.zeros_like(xs), trials=10)
    for v in (r.max_linf_value_ratio, r.min_linf_value_ratio, r.max_l2_value_ratio,
              r.min_l2_gradient_ratio, r.max_linf_gradient_ratio):
        assert v == pytest.approx(1.0, abs=1e-14)


@given(s=st.floats(0.0, 0.2))
def test_norm_equivalence_scaling_field(sphere, s):
    mesh, xs = sphere(1, 1)
    r = norm_equivalence_probe(mesh, xs, s * np.asarray(xs), trials=5)
    for th, ratio in r.l2_value_ratio_by_theta.items():
        assert ratio == pytest.approx(1 + th * s, abs=1e-12)


def test_norm_equivalence_rejects_large_gradient(sphere, rng):
    mesh, xs = sphere(2, 2)
    e = rng.standard_normal(xs.shape)
    assert gradient_linf(mesh, xs, e) > 0.5
    with pytest.raises(HypothesisError):
        norm_equivalence_probe(mesh, xs, e, trials=2)


def test_norm_equivalence_admissible_field(sphere, rng):
    mesh, xs = sphere(2, 2)
    e = rng.standard_normal(xs.shape)
    e *= 0.45 / gradient_linf(mesh, xs, e)
    r = norm_equivalence_probe(mesh, xs, e, trials=20)
    assert r.hypothesis_value <= 0.5
    assert 0.5 - 0.05 <= r.min_l2_value_ratio and r.max_l2_value_ratio <= 2.05
    assert r.max_linf_value_ratio <= 2.05


def test_gradient_linf_of_identity(sphere):
    mesh, xs = sphere(1, 2)
    # |P|_F = sqrt(2) pointwise
    assert gradient_linf(mesh, xs, xs) == pytest.approx(math.sqrt(2), rel=1e-12)


@pytest.mark.parametrize("degree", [1, 2])
def test_defect_self_consistency(sphere, degree):
    mesh, x0 = sphere(2, degree)
    rep = defect(mesh, x0, UNIT, 0.05)
    assert rep.solve_residual <= 1e-10
    xs = exact_nodal(x0, UNIT, 0.05)
    assert rep.norm_M_defect == pytest.approx(norm_M(mesh, xs, rep.defect_vector), rel=1e-14)
    # direct check of M d = M x*' + A x*
    M, A = mass_matrix(mesh, xs), stiffness_matrix(mesh, xs)
    res = M @ rep.defect_vector - (M @ exact_velocity(x0, UNIT, 0.05) + A @ xs)
    assert np.abs(res).max() <= 1e-10 * np.abs(A @ xs).max()


def test_eoc_examples():
    assert eoc([(1, 1), (0.5, 0.25)]).orders == pytest.approx([2.0])
    assert eoc([(1, 1), (0.5, 0.5), (0.25, 0.25)]).orders == pytest.approx([1.0, 1.0])
    hs = [0.3, 0.2, 0.1, 0.05]
    assert eoc([(h, 7 * h**3) for h in hs]).orders == pytest.approx([3, 3, 3], abs=1e-12)
    with pytest.raises(ValueError):
        eoc([(1, 1)])
    with pytest.raises(ValueError):
        eoc([(1, 1), (0.5, 0.0)])
    with pytest.raises(ValueError):
        eoc([(0.5, 1), (1, 0.5)])


@given(p=st.floats(0.5, 6), c=st.floats(1e-3, 1e3))
def test_eoc_recovers_power_laws(p, c):
    hs = [2.0 ** -i for i in range(4)]
    orders = eoc([(h, c * h**p) for h in hs]).orders
    assert np.allclose(orders, p, atol=1e-9)


def test_report_serialization(sphere):
    mesh, xs, x, w, z = trial(sphere, 1, 1, 0)
    r = mass_difference_identity(mesh, xs, x, w, z)
    d = json.loads(r.to_json())
    assert d["name"] == "massdiff" and d["theta_quadrature_order"] == 16
    header = IdentityReport.csv_header().split(",")
    row = r.csv_row().split(",")
    assert len(header) == len(row)
    assert row[0] == "massdiff"
    assert "e" in row[6]  # scientific notation

    table = eoc([(1, 1), (0.5, 0.25)], name="demo")
    assert isinstance(table, EOCTable)
    assert json.loads(table.to_json())["orders"] == [2.0]

    rep = defect(mesh, np.array(xs), UNIT, 0.01)
    assert isinstance(rep, DefectReport)
    assert len(rep.csv_row().split(",")) == len(DefectReport.csv_header().split(","))
    assert "defect_vector" not in json.loads(rep.to_json())
    assert len(json.loads(rep.to_json(include_vector=True))["defect_vector"]) == mesh.node_count
