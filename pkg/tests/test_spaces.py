import numpy as np
import pytest

from mhdvem.geometry import entity_measures
from mhdvem.manufactured import magnetic
from mhdvem.mesh import build_cube_mesh, build_tet_mesh, load_mesh
from mhdvem.spaces import (build_dof_layouts, curl_edge_to_face, curl_matrix, divergence_from_dofs,
                           divergence_matrix, interpolate, l2_norm_cellwise)


@pytest.fixture(scope="module")
def g1():
    return entity_measures(build_cube_mesh(1))


@pytest.fixture(scope="module")
def g2():
    return entity_measures(build_cube_mesh(2))


def test_layout_counts_cube1():
    L = build_dof_layouts(build_cube_mesh(1))
    assert (L.dim("velocity"), L.dim("edge"), L.dim("face"), L.dim("pressure")) == (30, 12, 6, 1)
    assert L.velocity_boundary.all() and L.edge_boundary.all() and L.face_boundary.all()


def test_layout_counts_cube2():
    L = build_dof_layouts(build_cube_mesh(2))
    assert L.dim("face") == 36 and L.face_boundary.sum() == 24
    assert L.dim("velocity") == 3 * 27 + 36
    # one interior vertex, 12 interior faces
    assert (~L.velocity_boundary).sum() == 3 + 12
    assert (~L.edge_boundary).sum() == 6


def test_layout_masks_are_read_only():
    L = build_dof_layouts(build_cube_mesh(1))
    with pytest.raises(ValueError):
        L.face_boundary[0] = False


def test_constant_interpolants(g2):
    c = np.array([0.3, -1.2, 2.0])
    const = lambda x: np.broadcast_to(c, x.shape)
    np.testing.assert_allclose(interpolate("edge", const, g2), g2.edge_tangent @ c, atol=1e-14)
    np.testing.assert_allclose(interpolate("face", const, g2), g2.face_normal @ c, atol=1e-14)


def test_identity_field_face_dofs(g1):
    dofs = interpolate("face", lambda x: x, g1)
    # normals point along +axis, so the far faces carry 1 and the near faces 0
    far = np.einsum("fi,fi->f", g1.face_center, g1.face_normal) > 0.75
    np.testing.assert_allclose(dofs, np.where(far, 1.0, 0.0), atol=1e-14)
    assert sorted(dofs.round(12)) == [0, 0, 0, 1, 1, 1]


def test_velocity_interpolant_vertex_values(g2):
    fn = lambda x: np.column_stack([x[:, 1], x[:, 2] ** 2, np.sin(x[:, 0])])
    u = interpolate("velocity", fn, g2)
    np.testing.assert_array_equal(u[:3 * 27].reshape(-1, 3), fn(g2.mesh.vertices))


def test_pressure_interpolant_is_cell_mean(g2):
    p = interpolate("pressure", lambda x: x[:, 0] ** 2, g2)
    lo = g2.cell_center[:, 0] - 0.25
    np.testing.assert_allclose(p, ((lo + 0.5) ** 3 - lo ** 3) / 3 / 0.5, rtol=1e-13)


def test_unknown_space(g1):
    with pytest.raises(ValueError):
        interpolate("nodal", lambda x: x, g1)
    with pytest.raises(ValueError):
        divergence_from_dofs("edge", np.zeros(12), g1)


@pytest.mark.parametrize("space", ["velocity", "face"])
def test_divergence_of_constant_and_identity(g2, space):
    const = lambda x: np.broadcast_to([1.0, 2.0, 3.0], x.shape)
    np.testing.assert_allclose(divergence_from_dofs(space, interpolate(space, const, g2), g2), 0, atol=1e-13)
    np.testing.assert_allclose(divergence_from_dofs(space, interpolate(space, lambda x: x, g2), g2), 3, rtol=1e-13)


def test_identity_field_div_norm(g2):
    div = divergence_from_dofs("face", interpolate("face", lambda x: x, g2), g2)
    assert l2_norm_cellwise(div, g2) == pytest.approx(3.0, rel=1e-13)


def test_manufactured_magnetic_field_is_discretely_solenoidal(g2):
    for t in (0.0, 0.37):
        B = interpolate("face", lambda x: magnetic(x, t), g2)
        assert np.abs(divergence_from_dofs("face", B, g2)).max() < 1e-13


def test_polynomial_solenoidal_velocity_interpolant():
    # u = curl(psi) with psi = (y^2 z, x z^3, x^2 y), so div u = 0 and
    # the face quadrature integrates its normal component exactly
    def u(x):
        X, Y, Z = x[:, 0], x[:, 1], x[:, 2]
        return np.column_stack([X * X - 3 * X * Z * Z, Y * Y - 2 * X * Y, Z ** 3 - 2 * Y * Z])
    for mesh in (build_cube_mesh(2), build_tet_mesh(2), load_mesh("tests/data/voro.pm")):
        g = entity_measures(mesh)
        div = divergence_from_dofs("velocity", interpolate("velocity", u, g), g)
        assert np.abs(div).max() < 1e-12


def test_curl_of_constant_vanishes(g2):
    E = interpolate("edge", lambda x: np.broadcast_to([1.0, -2.0, 0.5], x.shape), g2)
    np.testing.assert_allclose(curl_edge_to_face(E, g2), 0, atol=1e-14)


def test_curl_of_rotation(g1):
    E = interpolate("edge", lambda x: 0.5 * np.column_stack([-x[:, 1], x[:, 0], 0 * x[:, 0]]), g1)
    np.testing.assert_allclose(curl_edge_to_face(E, g1), g1.face_normal[:, 2], atol=1e-14)
    assert sorted(np.abs(g1.face_normal[:, 2]).round()) == [0, 0, 0, 0, 1, 1]


def test_div_curl_random(g2):
    rng = np.random.default_rng(0)
    E = rng.standard_normal(g2.mesh.n_edges)
    div = divergence_from_dofs("face", curl_edge_to_face(E, g2), g2)
    assert np.abs(div).max() <= 1e-14 * np.abs(E).max() * 10


def test_matrix_shapes(g2):
    assert curl_matrix(g2).shape == (36, 54)
    assert divergence_matrix(g2).shape == (8, 36)


def test_interpolation_is_linear(g2):
    f1 = lambda x: np.column_stack([x[:, 1] ** 2, x[:, 0], np.cos(x[:, 2])])
    f2 = lambda x: np.column_stack([x[:, 2], x[:, 0] * x[:, 1], x[:, 0]])
    for space in ("velocity", "edge", "face"):
        lhs = interpolate(space, lambda x: 2 * f1(x) - 3 * f2(x), g2)
        rhs = 2 * interpolate(space, f1, g2) - 3 * interpolate(space, f2, g2)
        np.testing.assert_allclose(lhs, rhs, atol=1e-13)
