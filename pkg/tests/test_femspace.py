import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from mcfem.assembly import surface_area
from mcfem.errors import CapacityError, GeometryError
from mcfem.femspace import (
    element_geometry,
    frame_at,
    make_quadrature,
    make_reference,
    tables,
    triangle_moment,
)
from mcfem.mesh import build_icosphere, mesh_size
from mcfem.verify import eoc

DEGREES = [1, 2, 3, 4, 5, 6]


def random_barycentric(rng, n):
    b = rng.dirichlet(np.ones(3), size=n)
    return b


@pytest.mark.parametrize("degree", DEGREES)
def test_lagrange_property(degree):
    ref = make_reference(degree)
    V = ref.basis(ref.node_barycentrics)
    np.testing.assert_allclose(V, np.eye(ref.n_basis), atol=1e-12)


def test_linear_basis_at_vertex():
    np.testing.assert_allclose(make_reference(1).basis([1.0, 0.0, 0.0])[0], [1.0, 0.0, 0.0], atol=0)


def test_quadratic_edge_node():
    ref = make_reference(2)
    lat = ref.lattice
    edge = [i for i, b in enumerate(lat) if sorted(b) == [0, 1, 1]][0]
    vals = ref.basis(ref.node_barycentrics)[:, edge]
    assert vals[edge] == pytest.approx(1.0, abs=1e-14)
    assert np.max(np.abs(np.delete(vals, edge))) <= 1e-14


@pytest.mark.parametrize("degree", DEGREES)
def test_partition_of_unity(degree, rng):
    ref = make_reference(degree)
    pts = random_barycentric(rng, 50)
    assert np.max(np.abs(ref.basis(pts).sum(axis=1) - 1.0)) <= 1e-13
    assert np.max(np.abs(ref.gradients(pts).sum(axis=1))) <= 1e-11


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_reference_gradients_match_finite_differences(degree, rng):
    ref = make_reference(degree)
    b = np.array([[0.2, 0.3, 0.5]])
    g = ref.gradients(b)[0]
    eps = 1e-6
    for i, d in enumerate(([-1, 1, 0], [-1, 0, 1])):
        d = np.array(d, dtype=float)
        fd = (ref.basis(b + eps * d) - ref.basis(b - eps * d))[0] / (2 * eps)
        np.testing.assert_allclose(g[:, i], fd, atol=1e-7)


def test_reference_cap():
    with pytest.raises(CapacityError):
        make_reference(7)
    with pytest.raises(ValueError):
        make_reference(0)


@pytest.mark.parametrize("p", list(range(0, 21)))
def test_quadrature_moments(p):
    rule = make_quadrature(p)
    assert rule.exactness_degree >= p
    assert abs(rule.weights.sum() - 0.5) <= 1e-14
    assert np.all(rule.points >= -1e-15)
    for a in range(p + 1):
        for b in range(p + 1 - a):
            got = rule.integrate(lambda x, y: x**a * y**b)
            assert abs(got - triangle_moment(a, b)) <= 1e-13, (a, b)


def test_quadrature_named_moments():
    assert make_quadrature(2).integrate(lambda x, y: x * y) == pytest.approx(1 / 24, abs=1e-15)
    assert make_quadrature(0).integrate(lambda x, y: np.ones_like(x)) == pytest.approx(0.5, abs=1e-15)
    assert make_quadrature(4).integrate(lambda x, y: x**2 * y**2) == pytest.approx(1 / 180, abs=1e-15)


def test_triangle_moment_closed_form():
    assert triangle_moment(1, 1) == pytest.approx(1 / 24)
    assert triangle_moment(2, 2) == pytest.approx(1 / 180)
    assert triangle_moment(0, 0) == 0.5


def test_quadrature_cap():
    with pytest.raises(CapacityError):
        make_quadrature(41)
    assert make_quadrature(40).exactness_degree == 40


FLAT = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


def test_flat_element_planar_gradient():
    f = frame_at(make_reference(1), FLAT, [1 / 3, 1 / 3, 1 / 3], field_coefficients=FLAT)
    np.testing.assert_allclose(f.normal, [0, 0, 1], atol=1e-15)
    # column 0 is the gradient of the x-coordinate
    np.testing.assert_allclose(f.field_gradient[:, 0], [1, 0, 0], atol=1e-15)


def test_constant_field_has_zero_gradient():
    c = np.tile([2.0, -1.0, 0.5], (3, 1))
    f = frame_at(make_reference(1), FLAT, [0.2, 0.3, 0.5], field_coefficients=c)
    assert np.max(np.abs(f.field_gradient)) <= 1e-15


def curved_elements(degree, level=1):
    mesh, x = build_icosphere(level, degree)
    return mesh, x, x[mesh.elements]


@pytest.mark.parametrize("degree", [1, 2, 3, 4])
def test_frame_invariants(degree, rng):
    mesh, x, xe = curved_elements(degree)
    ref = make_reference(degree)
    for f in rng.choice(mesh.n_elements, 5, replace=False):
        pt = random_barycentric(rng, 1)[0]
        e = rng.standard_normal((ref.n_basis, 3))
        fr = frame_at(ref, xe[f], pt, field_coefficients=e)
        n, P, E = fr.normal, fr.projector, fr.field_gradient
        assert abs(np.linalg.norm(n) - 1.0) <= 1e-13
        assert np.max(np.abs(P @ n)) <= 1e-12
        assert np.max(np.abs(P @ P - P)) <= 1e-12
        assert np.max(np.abs(P @ E - E)) <= 1e-11 * np.max(np.abs(E))
        # outward orientation on the sphere
        centre = (ref.basis(pt) @ xe[f])[0]
        assert np.dot(n, centre) > 0
        idf = frame_at(ref, xe[f], pt, field_coefficients=xe[f]).field_gradient
        assert np.max(np.abs(idf - P)) <= 1e-11
        assert np.trace(idf) == pytest.approx(2.0, abs=1e-12)
        assert np.max(np.abs(idf @ n)) <= 1e-12


def test_degenerate_frame_rejected():
    collapsed = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    with pytest.raises(GeometryError):
        frame_at(make_reference(1), collapsed, [1 / 3, 1 / 3, 1 / 3])


@given(
    a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3),
    seed=st.integers(0, 2**31 - 1),
)
def test_linear_function_on_flat_element(a, b, c, seed):
    rng = np.random.default_rng(seed)
    corners = rng.standard_normal((3, 3))
    cr = np.cross(corners[1] - corners[0], corners[2] - corners[0])
    if np.linalg.norm(cr) < 1e-2:
        return
    g = np.array([a, b, c])
    vals = corners @ g
    fr = frame_at(make_reference(1), corners, random_barycentric(rng, 1)[0], field_coefficients=vals[:, None])
    expected = fr.projector @ g
    assert np.max(np.abs(fr.field_gradient[:, 0] - expected)) <= 1e-12 * max(1.0, np.linalg.norm(g))


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_dirichlet_energy_is_rotation_invariant(degree, rng):
    mesh, x, xe = curved_elements(degree)
    tb = tables(degree)
    u = rng.standard_normal(mesh.node_count)
    R = Rotation.random(random_state=7).as_matrix()

    def energy(pos):
        geo = element_geometry(pos[mesh.elements], tb.dN)
        G = geo.field_gradient(tb.dN, u[mesh.elements][..., None])[..., 0]
        return np.sum(np.einsum("eqi,eqi->eq", G, G) * geo.area_element * tb.quad.weights, axis=1)

    e0, e1 = energy(x), energy(x @ R.T)
    assert np.max(np.abs(e0 - e1) / np.abs(e0)) <= 1e-12


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_area_converges_with_order_k_plus_1(degree):
    rows = []
    for level in range(1, 5):
        mesh, x = build_icosphere(level, degree)
        rows.append((mesh_size(mesh, x)[0], abs(surface_area(mesh, x) - 4 * math.pi)))
    orders = eoc(rows).orders
    # even degrees gain one order on the sphere (symmetric error cancellation)
    assert orders[-1] >= degree + 1 - 0.3
