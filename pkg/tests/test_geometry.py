import itertools
import math

import numpy as np
import pytest

from mhdvem.geometry import (MAX_DEGREE, ScaledMonomials, cell_quadrature, entity_measures,
                             face_quadrature, monomial_gram)
from mhdvem.mesh import build_cube_mesh, build_tet_mesh, load_mesh
from oracles import tet_rule


def exps(d):
    return [e for e in itertools.product(range(d + 1), repeat=3) if sum(e) <= d]


@pytest.fixture(scope="module")
def cube():
    return entity_measures(build_cube_mesh(1))


def test_unit_cube_measures(cube):
    assert cube.cell_volume[0] == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(cube.cell_center[0], [0.5, 0.5, 0.5], atol=1e-14)
    assert cube.cell_diameter[0] == pytest.approx(math.sqrt(3))
    np.testing.assert_allclose(cube.face_area, 1.0)
    np.testing.assert_allclose(cube.face_diameter, math.sqrt(2))
    np.testing.assert_allclose(cube.edge_length, 1.0)


def test_kuhn_tet_volumes():
    g = entity_measures(build_tet_mesh(1))
    np.testing.assert_allclose(g.cell_volume, 1 / 6, rtol=1e-14)


def test_face_frames_right_handed(cube):
    for f in range(6):
        fr = cube.frame(f)
        R = np.array([fr.t1, fr.t2, fr.n])
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)
        assert np.linalg.det(R) == pytest.approx(1.0)


def test_frame_round_trip():
    mesh = load_mesh("tests/data/voro.pm")
    g = entity_measures(mesh)
    for f in range(mesh.n_faces):
        fr = g.frame(f)
        p = mesh.vertices[mesh.face_vertices[f]]
        np.testing.assert_allclose(fr.to_global(fr.to_local(p)), p, atol=1e-14)


def test_face_normals_match_loop_orientation():
    mesh = build_cube_mesh(1)
    g = entity_measures(mesh)
    for f in range(6):
        p = mesh.vertices[mesh.face_vertices[f]]
        assert np.cross(p[1] - p[0], p[2] - p[1]) @ g.face_normal[f] > 0


def test_cube_integrals(cube):
    for deg in range(MAX_DEGREE + 1):
        assert cube_quad_integral(cube, deg, lambda x: np.ones(len(x))) == pytest.approx(1.0, rel=1e-14)
    xyz = cube_quad_integral(cube, 3, lambda x: x[:, 0] * x[:, 1] * x[:, 2])
    assert xyz == pytest.approx(1 / 8, rel=1e-13)


def cube_quad_integral(g, deg, fn):
    q = cell_quadrature(g, 0, deg)
    return float(q.weights @ fn(q.points))


def test_face_integral_x_squared(cube):
    f = int(np.flatnonzero(np.abs(cube.face_center[:, 2]) < 1e-14)[0])
    q = face_quadrature(cube, f, 2)
    assert q.weights @ q.points[:, 0] ** 2 == pytest.approx(1 / 3, rel=1e-14)


@pytest.mark.parametrize("deg", range(MAX_DEGREE + 1))
def test_cube_monomial_exactness(deg):
    g = entity_measures(build_cube_mesh(2))
    for c in range(g.mesh.n_cells):
        q = cell_quadrature(g, c, deg)
        lo = g.cell_center[c] - 0.25
        for e in exps(deg):
            exact = np.prod([((lo[i] + 0.5) ** (e[i] + 1) - lo[i] ** (e[i] + 1)) / (e[i] + 1)
                             for i in range(3)])
            val = q.weights @ np.prod(q.points ** np.array(e), axis=1)
            assert val == pytest.approx(exact, rel=1e-13, abs=1e-16)


@pytest.mark.parametrize("deg", range(MAX_DEGREE + 1))
def test_tet_monomial_exactness(deg):
    mesh = build_tet_mesh(1)
    g = entity_measures(mesh)
    for c in range(mesh.n_cells):
        q = cell_quadrature(g, c, deg)
        ref_p, ref_w = tet_rule(mesh.vertices[mesh.cell_vertices(c)], n=6)
        for e in exps(deg):
            ev = np.array(e)
            exact = ref_w @ np.prod(ref_p ** ev, axis=1)
            val = q.weights @ np.prod(q.points ** ev, axis=1)
            assert val == pytest.approx(exact, rel=1e-13, abs=1e-16)


def test_unit_simplex_closed_form():
    mesh = build_tet_mesh(1)
    g = entity_measures(mesh)
    # the Kuhn tet (0,0,0),(1,0,0),(1,1,0),(1,1,1) is {0 <= z <= y <= x <= 1}
    target = {0, 1, 1 + 2, 1 + 2 + 4}
    c = next(c for c in range(6) if set(mesh.cell_vertices(c).tolist()) == target)
    q = cell_quadrature(g, c, 4)
    # int z^a over {z <= y <= x <= 1} = 1 / ((a+1)(a+2)(a+3))
    for a in range(5):
        assert q.weights @ q.points[:, 2] ** a == pytest.approx(1 / ((a + 1) * (a + 2) * (a + 3)), rel=1e-13)


def test_divergence_volume_matches_fan_volume(voro_path):
    g = entity_measures(load_mesh(voro_path))
    for c in range(g.mesh.n_cells):
        q = cell_quadrature(g, c, 0)
        assert q.weights.sum() == pytest.approx(g.cell_volume[c], rel=1e-12)
        assert not q.inverted
    assert g.cell_volume.sum() == pytest.approx(1.0, rel=1e-12)


def test_degree_cap(cube):
    with pytest.raises(ValueError):
        cell_quadrature(cube, 0, MAX_DEGREE + 1)
    with pytest.raises(ValueError):
        face_quadrature(cube, 0, MAX_DEGREE + 1)


def test_quadrature_weights_positive_on_convex_cells(voro_path):
    g = entity_measures(load_mesh(voro_path))
    for c in range(g.mesh.n_cells):
        assert np.all(cell_quadrature(g, c, 4).weights > 0)
    for f in range(g.mesh.n_faces):
        assert np.all(face_quadrature(g, f, 4).weights > 0)


def test_scaled_monomials_definition():
    b = ScaledMonomials(np.array([0.5, 0.5, 0.5]), 2.0, 3, 2)
    x = np.array([[1.5, 0.0, 2.5]])
    m = np.array([0.5, -0.25, 1.0])
    expected = [1.0, *m] + [m[i] * m[j] for i in range(3) for j in range(i, 3)]
    np.testing.assert_allclose(sorted(b(x)[0]), sorted(expected))
    assert b.size == 10


def test_cube_gram(cube):
    G = monomial_gram(cell_quadrature(cube, 0, 2), cube.cell_monomials(0))
    assert G[0, 0] == pytest.approx(1.0)
    np.testing.assert_allclose(np.diag(G)[1:], 1 / 36, rtol=1e-13)
    off = G - np.diag(np.diag(G))
    np.testing.assert_allclose(off, 0, atol=1e-15)
    assert np.all(np.linalg.eigvalsh(G) > 0)


def test_face_gram_is_spd():
    g = entity_measures(load_mesh("tests/data/voro.pm"))
    for f in range(g.mesh.n_faces):
        G = monomial_gram(face_quadrature(g, f, 2), g.face_monomials(f), g.frame(f))
        assert G[0, 0] == pytest.approx(g.face_area[f], rel=1e-13)
        assert np.all(np.linalg.eigvalsh(G) > 0)
