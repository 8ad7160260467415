"""Degree-k triangulations of the sphere.

Meshes are pure combinatorics (:class:`SurfaceMesh`); coordinates live in a
separate ``(N, 3)`` array, the nodal vector. Local node order inside an
element is: the three corners, then the ``k - 1`` nodes of each edge
(0->1, 1->2, 2->0), then interior nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CapacityError, GeometryError

LEVEL_CAP = 7
DEGREE_CAP = 6
DEGENERACY_THRESHOLD = 1e-3


def lattice_barycentrics(degree: int) -> np.ndarray:
    """Integer barycentric triples of the equispaced degree-k lattice.

    Returned in local node order (corners, edges, interior) with shape
    ``((k+1)(k+2)/2, 3)``; every row sums to ``k``.
    """
    k = degree
    nodes = [(k, 0, 0), (0, k, 0), (0, 0, k)]
    for a, b in ((0, 1), (1, 2), (2, 0)):
        for i in range(1, k):
            t = [0, 0, 0]
            t[a] = k - i
            t[b] = i
            nodes.append(tuple(t))
    for j in range(1, k):
        for i in range(1, k - j):
            nodes.append((k - i - j, i, j))
    return np.array(nodes, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Connectivity of a closed degree-k triangulation.

    Attributes
    ----------
    degree : int
        Polynomial degree k of the elements.
    elements : ndarray of int, shape (F, (k+1)(k+2)/2)
        Global node indices per element, in local node order.
    node_count : int
        Number of global nodes N.
    level : int
        Refinement depth relative to the base icosahedron.
    """

    degree: int
    elements: np.ndarray
    node_count: int
    level: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.elements.setflags(write=False)

    @property
    def reference_layout(self) -> np.ndarray:
        """Barycentric coordinates of the local Lagrange nodes."""
        return lattice_barycentrics(self.degree) / self.degree

    @property
    def corners(self) -> np.ndarray:
        return self.elements[:, :3]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def nodes_per_element(self) -> int:
        return self.elements.shape[1]

    def vertex_count(self) -> int:
        return np.unique(self.corners).size

    def edges(self) -> np.ndarray:
        """Sorted undirected corner edges, one row per edge."""
        if "edges" not in self._cache:
            c = self.corners
            e = np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])
            self._cache["edges"] = np.unique(np.sort(e, axis=1), axis=0)
        return self._cache["edges"]

    def euler_characteristic(self) -> int:
        return self.vertex_count() - len(self.edges()) + self.n_elements


def _lagrange_connectivity(corners: np.ndarray, degree: int):
    """Build degree-k element node lists from corner triangles.

    Returns ``(elements, node_count, edge_table)``. Corner vertices keep
    their indices; edge nodes are numbered per undirected edge running from
    the smaller to the larger vertex index, so neighbouring elements see
    the same node sequence up to reversal.
    """
    k = degree
    corners = np.asarray(corners, dtype=np.int64)
    F = corners.shape[0]
    n_vertices = int(corners.max()) + 1
    nb = (k + 1) * (k + 2) // 2
    elements = np.empty((F, nb), dtype=np.int64)
    elements[:, :3] = corners

    local_edges = ((0, 1), (1, 2), (2, 0))
    all_edges = np.concatenate([corners[:, list(le)] for le in local_edges])
    sorted_edges = np.sort(all_edges, axis=1)
    uniq, inverse = np.unique(sorted_edges, axis=0, return_inverse=True)
    inverse = inverse.reshape(3, F)
    n_edges = len(uniq)

    base = n_vertices
    col = 3
    for le_idx, (a, b) in enumerate(local_edges):
        eid = inverse[le_idx]
        forward = corners[:, a] < corners[:, b]
        for i in range(1, k):
            along = np.where(forward, i, k - i)
            elements[:, col] = base + eid * (k - 1) + (along - 1)
            col += 1
    base += n_edges * (k - 1)
    n_interior = (k - 1) * (k - 2) // 2
    for j in range(n_interior):
        elements[:, col] = base + np.arange(F) * n_interior + j
        col += 1
    node_count = base + F * n_interior
    return elements, node_count


_PHI = (1.0 + np.sqrt(5.0)) / 2.0

_ICOSA_VERTICES = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ]
)

_ICOSA_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def _project(points: np.ndarray, radius: float) -> np.ndarray:
    return radius * points / np.linalg.norm(points, axis=-1, keepdims=True)


def _split_corners(corners: np.ndarray, n_vertices: int):
    """Four-way split of corner triangles; returns new corners and midpoint edges."""
    F = corners.shape[0]
    e = np.concatenate([corners[:, [0, 1]], corners[:, [1, 2]], corners[:, [2, 0]]])
    uniq, inverse = np.unique(np.sort(e, axis=1), axis=0, return_inverse=True)
    mid = n_vertices + inverse.reshape(3, F)
    m01, m12, m20 = mid
    c0, c1, c2 = corners.T
    new = np.empty((4 * F, 3), dtype=np.int64)
    new[0::4] = np.stack([c0, m01, m20], axis=1)
    new[1::4] = np.stack([m01, c1, m12], axis=1)
    new[2::4] = np.stack([m20, m12, c2], axis=1)
    new[3::4] = np.stack([m01, m12, m20], axis=1)
    return new, uniq


def build_icosphere(level: int, degree: int, radius: float = 1.0):
    """Projected icosphere with degree-k Lagrange nodes.

    The icosahedron is split ``level`` times with vertices pushed radially to
    the sphere after each split; Lagrange nodes are placed on the flat
    lattice of each corner triangle and projected radially as well. All nodes
    lie on the sphere of the given radius and elements are oriented outward.

    Returns
    -------
    mesh : SurfaceMesh
    x0 : ndarray, shape (N, 3)
    """
    _check_level_degree(level, degree)
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    verts = _project(_ICOSA_VERTICES, 1.0)
    corners = _ICOSA_FACES.copy()
    for _ in range(level):
        corners, mids = _split_corners(corners, len(verts))
        verts = np.concatenate([verts, _project(verts[mids[:, 0]] + verts[mids[:, 1]], 1.0)])

    elements, N = _lagrange_connectivity(corners, degree)
    bary = lattice_barycentrics(degree) / degree
    x = np.empty((N, 3))
    flat = np.einsum("nl,fld->fnd", bary, verts[corners])
    x[elements.ravel()] = flat.reshape(-1, 3)
    x = _project(x, radius)
    mesh = SurfaceMesh(degree=degree, elements=elements, node_count=N, level=level)
    return mesh, x


def _axis_rotation(axis, angle):
    u = np.asarray(axis, dtype=float)
    u = u / np.linalg.norm(u)
    K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def icosahedral_rotations() -> np.ndarray:
    """The 60 rotations mapping the base icosahedron onto itself, shape ``(60, 3, 3)``."""
    v = _ICOSA_VERTICES
    gens = [
        _axis_rotation(v[0], 2 * np.pi / 5),
        _axis_rotation(v[_ICOSA_FACES[0]].sum(axis=0), 2 * np.pi / 3),
    ]
    group = {tuple(np.round(np.eye(3), 8).ravel()): np.eye(3)}
    frontier = [np.eye(3)]
    while frontier:
        nxt = []
        for g in frontier:
            for s in gens:
                h = s @ g
                key = tuple(np.round(h, 8).ravel())
                if key not in group:
                    group[key] = h
                    nxt.append(h)
        frontier = nxt
    return np.array(list(group.values()))


def symmetry_permutations(positions: np.ndarray, rotations: np.ndarray | None = None, tol: float = 1e-9):
    """Node permutations induced by rotations: ``R_g x_i = x_{perm[g, i]}``.

    Raises ``ValueError`` when a rotated node has no partner within ``tol``
    (relative to the largest node norm).
    """
    from scipy.spatial import cKDTree

    if rotations is None:
        rotations = icosahedral_rotations()
    x = np.asarray(positions, dtype=float)
    scale = np.abs(x).max()
    tree = cKDTree(x)
    perms = np.empty((len(rotations), len(x)), dtype=np.int64)
    for g, R in enumerate(rotations):
        dist, idx = tree.query(x @ R.T)
        if dist.max() > tol * scale:
            raise ValueError(f"rotation {g} is not a symmetry of the node set (mismatch {dist.max():.2e})")
        perms[g] = idx
    return perms


def equivariance_defect(positions: np.ndarray, perms: np.ndarray, rotations: np.ndarray | None = None) -> float:
    """``max_g max_i |R_g x_i - x_{perm[g, i]}|`` relative to the largest node norm."""
    if rotations is None:
        rotations = icosahedral_rotations()
    x = np.asarray(positions, dtype=float)
    scale = np.linalg.norm(x, axis=1).max()
    worst = 0.0
    for R, p in zip(rotations, perms):
        worst = max(worst, float(np.linalg.norm(x @ R.T - x[p], axis=1).max()))
    return worst / scale


def _check_level_degree(level, degree):
    if not isinstance(level, (int, np.integer)) or level < 0:
        raise ValueError(f"level must be a non-negative integer, got {level!r}")
    if not isinstance(degree, (int, np.integer)) or degree < 1:
        raise ValueError(f"degree must be a positive integer, got {degree!r}")
    if level > LEVEL_CAP:
        raise CapacityError(f"level {level} exceeds the cap of {LEVEL_CAP}")
    if degree > DEGREE_CAP:
        raise CapacityError(f"degree {degree} exceeds the cap of {DEGREE_CAP}")


def refine(mesh: SurfaceMesh, positions: np.ndarray, project_radius: float | None = None):
    """Split every element into four children.

    New node positions are obtained by evaluating the parent element's
    degree-k parametrization at the children's lattice points, so existing
    nodes keep their coordinates. With ``project_radius`` the new nodes are
    pushed radially onto that sphere.
    """
    from .femspace import make_reference

    positions = np.asarray(positions, dtype=float)
    _check_level_degree(mesh.level + 1, mesh.degree)
    k = mesh.degree
    corner_pos = positions[mesh.corners]
    area2 = np.linalg.norm(
        np.cross(corner_pos[:, 1] - corner_pos[:, 0], corner_pos[:, 2] - corner_pos[:, 0]), axis=1
    )
    bad = np.flatnonzero(area2 <= 1e-14 * max(np.abs(corner_pos).max(), 1e-300) ** 2)
    if bad.size:
        raise GeometryError(f"degenerate parent element {int(bad[0])} (zero area)")

    n_vertices = int(mesh.corners.max()) + 1
    new_corners, _ = _split_corners(mesh.corners, n_vertices)
    elements, N = _lagrange_connectivity(new_corners, k)

    # Child corner barycentrics in the parent (rows: child, corner, parent bary).
    P = np.eye(3)
    m01, m12, m20 = (P[0] + P[1]) / 2, (P[1] + P[2]) / 2, (P[2] + P[0]) / 2
    children = np.array([[P[0], m01, m20], [m01, P[1], m12], [m20, m12, P[2]], [m01, m12, m20]])
    bary = lattice_barycentrics(k) / k
    parent_bary = np.einsum("nl,clp->cnp", bary, children)  # (4, nb, 3)

    ref = make_reference(k)
    basis = ref.basis(parent_bary.reshape(-1, 3)).reshape(4, len(bary), -1)
    parent_x = positions[mesh.elements]  # (F, nb, 3)
    child_x = np.einsum("cna,fad->fcnd", basis, parent_x).reshape(-1, len(bary), 3)

    new_x = np.empty((N, 3))
    new_x[elements.ravel()] = child_x.reshape(-1, 3)
    # Old nodes sit on the finer lattice: copy them instead of trusting the
    # re-evaluated values.
    is_old = _copy_old_nodes(mesh, positions, elements, new_x)
    if project_radius is not None:
        new_x[~is_old] = _project(new_x[~is_old], project_radius)
    return SurfaceMesh(degree=k, elements=elements, node_count=N, level=mesh.level + 1), new_x


def _child_local_map(k):
    """For each child and child-local node, the parent-local node it coincides with (or -1)."""
    P = np.eye(3)
    m01, m12, m20 = (P[0] + P[1]) / 2, (P[1] + P[2]) / 2, (P[2] + P[0]) / 2
    children = np.array([[P[0], m01, m20], [m01, P[1], m12], [m20, m12, P[2]], [m01, m12, m20]])
    bary = lattice_barycentrics(k)
    parent_lat = np.rint(np.einsum("nl,clp->cnp", bary / k, children) * k * 2).astype(np.int64)
    parent_nodes = {tuple(2 * b): i for i, b in enumerate(bary)}
    out = np.full((4, len(bary)), -1, dtype=np.int64)
    for c in range(4):
        for n in range(len(bary)):
            out[c, n] = parent_nodes.get(tuple(parent_lat[c, n]), -1)
    return out


def _copy_old_nodes(mesh, positions, elements, new_x):
    """Copy coordinates of nodes inherited from the parent mesh; return their mask."""
    cmap = _child_local_map(mesh.degree)
    child_el = elements.reshape(mesh.n_elements, 4, -1)
    c_idx, n_idx = np.nonzero(cmap >= 0)
    new_ids = child_el[:, c_idx, n_idx].ravel()
    old_ids = mesh.elements[:, cmap[c_idx, n_idx]].ravel()
    new_x[new_ids] = positions[old_ids]
    mask = np.zeros(len(new_x), dtype=bool)
    mask[new_ids] = True
    return mask


def mesh_size(mesh: SurfaceMesh, positions: np.ndarray):
    """Element diameters and shape quality from the corner triangles.

    Returns
    -------
    h_max, h_min : float
        Largest and smallest element diameter (longest corner edge).
    quality : float
        ``min(inradius / diameter)`` over elements; 0 for a collapsed element.
    """
    diam, q = _corner_metrics(positions[mesh.corners])
    return float(diam.max()), float(diam.min()), float(q.min())


def is_degenerate(quality: float, threshold: float = DEGENERACY_THRESHOLD) -> bool:
    return quality < threshold


def _corner_metrics(tri: np.ndarray):
    a = np.linalg.norm(tri[:, 1] - tri[:, 2], axis=1)
    b = np.linalg.norm(tri[:, 2] - tri[:, 0], axis=1)
    c = np.linalg.norm(tri[:, 0] - tri[:, 1], axis=1)
    diam = np.maximum(np.maximum(a, b), c)
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    s = 0.5 * (a + b + c)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(diam > 0, (area / np.where(s > 0, s, 1.0)) / np.where(diam > 0, diam, 1.0), 0.0)
    return diam, q


def check_structure(mesh: SurfaceMesh, positions: np.ndarray | None = None) -> list[str]:
    """Structural checks; returns a list of violations (empty when valid).

    Covers index range and coverage, conforming shared edges, closedness,
    consistent orientation, Euler characteristic 2 and (given positions)
    outward orientation.
    """
    problems = []
    el = mesh.elements
    if el.min() < 0 or el.max() >= mesh.node_count:
        problems.append("node index out of range")
    if np.unique(el).size != mesh.node_count:
        problems.append("unreferenced nodes")

    k = mesh.degree
    c = mesh.corners
    directed = np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])
    und, counts = np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)
    if np.any(counts != 2):
        problems.append("mesh not closed: some edge is not shared by exactly two elements")
    if np.unique(directed, axis=0).shape[0] != directed.shape[0]:
        problems.append("inconsistent orientation: directed edge repeated")

    # Edge node sequences must agree up to reversal.
    seqs = {}
    col = 3
    for le_idx, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
        block = el[:, col:col + k - 1]
        col += k - 1
        for f in range(el.shape[0]):
            va, vb = int(c[f, a]), int(c[f, b])
            seq = tuple(block[f]) if va < vb else tuple(block[f][::-1])
            key = (min(va, vb), max(va, vb))
            prev = seqs.setdefault(key, seq)
            if prev != seq:
                problems.append(f"non-conforming edge {key}")
                break
    if mesh.euler_characteristic() != 2:
        problems.append(f"Euler characteristic {mesh.euler_characteristic()} != 2")

    if positions is not None:
        tri = positions[c]
        nrm = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        centroid = positions.mean(axis=0)
        signed = np.einsum("fd,fd->f", nrm, tri.mean(axis=1) - centroid)
        if np.any(signed <= 0):
            problems.append("element normals not outward")
    return problems


def validate_nodal(mesh: SurfaceMesh, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (mesh.node_count, 3):
        raise ValueError(f"nodal vector has shape {x.shape}, expected ({mesh.node_count}, 3)")
    if not np.all(np.isfinite(x)):
        raise ValueError("nodal vector has non-finite entries")
    return x


def mesh_to_dict(mesh: SurfaceMesh, positions: np.ndarray) -> dict:
    return {
        "degree": int(mesh.degree),
        "level": int(mesh.level),
        "nodes": np.asarray(positions, dtype=float).tolist(),
        "elements": mesh.elements.tolist(),
    }


def mesh_from_dict(data: dict):
    elements = np.asarray(data["elements"], dtype=np.int64)
    nodes = np.asarray(data["nodes"], dtype=float)
    mesh = SurfaceMesh(
        degree=int(data["degree"]), elements=elements, node_count=len(nodes), level=int(data.get("level", 0))
    )
    return mesh, nodes


def save_mesh(path, mesh: SurfaceMesh, positions: np.ndarray) -> None:
    Path(path).write_text(json.dumps(mesh_to_dict(mesh, positions)))


def load_mesh(path):
    return mesh_from_dict(json.loads(Path(path).read_text()))
