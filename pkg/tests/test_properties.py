import io

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mhdvem.forms import local_advection, local_bilinear_forms
from mhdvem.geometry import cell_quadrature, entity_measures
from mhdvem.mesh import PolyMesh, build_cube_mesh, build_tet_mesh, load_mesh, read_poly_mesh, validate, write_poly_mesh
from mhdvem.projectors import build_element_operators, element_operators
from mhdvem.spaces import curl_edge_to_face, divergence_from_dofs, interpolate
from oracles import tet_rule

MESHES = {"cube": build_cube_mesh(2), "tet": build_tet_mesh(2), "voro": load_mesh("tests/data/voro.pm")}
GEOMS = {k: entity_measures(m) for k, m in MESHES.items()}
OPS = {k: build_element_operators(g) for k, g in GEOMS.items()}

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
family = st.sampled_from(sorted(MESHES))
settings.register_profile("mhdvem", max_examples=30, deadline=None)
settings.load_profile("mhdvem")


def affine(mesh, A, b):
    return PolyMesh(mesh.vertices @ A.T + b, mesh.edges, mesh.face_edges, mesh.face_edge_signs,
                    mesh.cell_faces, mesh.cell_face_signs)


@given(family, st.data())
def test_div_curl_vanishes(name, data):
    g = GEOMS[name]
    E = data.draw(arrays(float, g.mesh.n_edges, elements=finite))
    div = divergence_from_dofs("face", curl_edge_to_face(E, g), g)
    assert np.abs(div).max() <= 1e-13 * (1 + np.abs(E).max())


@given(family, arrays(float, (3, 4), elements=finite), st.integers(0, 7))
def test_p1_reproduction(name, coef, k):
    ops = OPS[name]
    op = ops[k % len(ops)]
    w = op.velocity_dof_matrix @ coef.ravel()
    scale = 1 + np.abs(coef).max()
    assert np.abs(np.einsum("iad,d->ia", op.pi_nabla, w) - coef).max() <= 1e-11 * scale
    assert np.abs(np.einsum("iad,d->ia", op.pi_zero, w) - coef).max() <= 1e-11 * scale


@given(family, st.integers(0, 7), st.data())
def test_advection_is_skew(name, k, data):
    op = OPS[name][k % len(OPS[name])]
    ub = data.draw(arrays(float, op.cell.n_velocity, elements=finite))
    u = data.draw(arrays(float, op.cell.n_velocity, elements=finite))
    K = local_advection(op, ub)
    assert abs(u @ K @ u) <= 1e-12 * (1 + np.abs(K).max()) * (1 + u @ u)


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite),
       st.floats(-3, 3), st.floats(-3, 3))
def test_interpolation_linear(a, b, alpha, beta):
    g = GEOMS["tet"]
    f1 = lambda x: np.outer(np.sin(x @ a), [1.0, 0.0, 2.0])
    f2 = lambda x: x * b
    for space in ("velocity", "edge", "face"):
        lhs = interpolate(space, lambda x: alpha * f1(x) + beta * f2(x), g)
        rhs = alpha * interpolate(space, f1, g) + beta * interpolate(space, f2, g)
        assert np.allclose(lhs, rhs, atol=1e-11)


@given(st.integers(1, 4))
def test_cube_counts_formula(n):
    nv, ne, nf, nc = build_cube_mesh(n).counts()
    assert (nv, ne, nf, nc) == ((n + 1) ** 3, 3 * n * (n + 1) ** 2, 3 * n * n * (n + 1), n ** 3)


@given(st.sampled_from([build_cube_mesh, build_tet_mesh]), st.integers(1, 3))
def test_round_trip(builder, n):
    m = builder(n)
    buf = io.StringIO()
    write_poly_mesh(m, buf)
    r = read_poly_mesh(io.StringIO(buf.getvalue()))
    assert np.array_equal(r.vertices, m.vertices) and np.array_equal(r.edges, m.edges)
    assert all(np.array_equal(a, b) for a, b in zip(r.cell_faces, m.cell_faces))


rotation = st.tuples(st.floats(0, 6.28), st.floats(0, 6.28), st.floats(0, 6.28))


def rot(angles):
    a, b, c = angles
    Rz = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
    Ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
    Rx = np.array([[1, 0, 0], [0, np.cos(c), -np.sin(c)], [0, np.sin(c), np.cos(c)]])
    return Rz @ Ry @ Rx


@given(rotation, arrays(float, 3, elements=st.floats(-50, 50)), st.floats(0.05, 20))
def test_rigid_motion_invariance(angles, shift, scale):
    # moving and scaling a cell leaves the local forms unchanged up to the scaling law
    mesh = MESHES["voro"]
    c = 3
    ref = local_bilinear_forms(element_operators(GEOMS["voro"], c))
    moved = affine(mesh, scale * rot(angles), shift)
    assert validate(moved).ok
    fm = local_bilinear_forms(element_operators(entity_measures(moved), c))
    # velocity DoFs are vector valued, so compare through the rotation
    R = rot(angles)
    nv = len(element_operators(GEOMS["voro"], c).cell.vertices)
    Q = np.eye(fm.A.shape[0])
    for v in range(nv):
        Q[3 * v:3 * v + 3, 3 * v:3 * v + 3] = R

    def close(a, b):
        return bool(np.abs(a - b).max() <= 1e-9 * np.abs(b).max())

    # a_h scales like length, the mass-type products like volume
    assert close(Q.T @ fm.A @ Q, scale * ref.A)
    assert close(Q.T @ fm.M @ Q, scale ** 3 * ref.M)
    assert close(fm.Medge, scale ** 3 * ref.Medge)
    assert close(fm.Mface, scale ** 3 * ref.Mface)


@given(arrays(float, (4, 3), elements=st.floats(-2, 2)), st.integers(0, 4), st.integers(0, 4), st.integers(0, 4))
def test_tet_quadrature_exact_on_random_tets(v, a, b, c):
    if a + b + c > 4:
        return
    vol = abs(np.linalg.det(v[1:] - v[0])) / 6
    if vol < 1e-2:
        return
    if np.linalg.det(v[1:] - v[0]) < 0:
        v = v[[0, 2, 1, 3]]
    loops = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]
    from mhdvem.mesh import mesh_from_polyhedra
    m = mesh_from_polyhedra(v, [loops])
    g = entity_measures(m)
    q = cell_quadrature(g, 0, 4)
    e = np.array([a, b, c])
    rp, rw = tet_rule(v, 6)
    ref = rw @ np.prod(rp ** e, axis=1)
    got = q.weights @ np.prod(q.points ** e, axis=1)
    assert abs(got - ref) <= 1e-12 * (1 + abs(ref))
