"""DoF layouts, interpolants and the exact discrete div/curl maps.

Velocity DoFs are ordered ``3*v + i`` for the i-th component at vertex v,
followed by one normal-moment DoF per face.  Edge, face and pressure DoFs
follow the entity numbering of the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import MeshGeometry, edge_gauss3, mesh_cell_quadrature, mesh_face_quadrature
from .mesh import BoundaryTags, PolyMesh, classify_boundary

SPACES = ("velocity", "pressure", "edge", "face")


@dataclass(frozen=True)
class DofLayout:
    n_vertices: int
    n_edges: int
    n_faces: int
    n_cells: int
    velocity_boundary: np.ndarray
    edge_boundary: np.ndarray
    face_boundary: np.ndarray

    @property
    def n_velocity(self) -> int:
        return 3 * self.n_vertices + self.n_faces

    @property
    def n_pressure(self) -> int:
        return self.n_cells

    def dim(self, space: str) -> int:
        return {"velocity": self.n_velocity, "pressure": self.n_cells,
                "edge": self.n_edges, "face": self.n_faces}[space]

    def velocity_face_dof(self, f):
        return 3 * self.n_vertices + np.asarray(f)


def build_dof_layouts(mesh: PolyMesh, tags: BoundaryTags | None = None) -> DofLayout:
    tags = classify_boundary(mesh) if tags is None else tags
    mv, me, mf = tags.masks(mesh)
    vel = np.concatenate([np.repeat(mv, 3), mf])
    for a in (vel, me, mf):
        a.setflags(write=False)
    return DofLayout(mesh.n_vertices, mesh.n_edges, mesh.n_faces, mesh.n_cells, vel, me, mf)


def _as_field(values, n, width):
    v = np.asarray(values, float)
    if v.ndim == 0 or (width == 3 and v.shape == (3,)):
        v = np.broadcast_to(v, (n, width) if width > 1 else (n,))
    return v


def interpolate(space: str, field, geom: MeshGeometry) -> np.ndarray:
    """DoF interpolant of a pointwise-evaluable field.

    ``field`` maps an (N, 3) array of points to (N, 3) vectors (or (N,)
    scalars for the pressure).
    """
    mesh = geom.mesh
    if space == "velocity":
        out = np.empty(3 * mesh.n_vertices + mesh.n_faces)
        out[:3 * mesh.n_vertices] = _as_field(field(mesh.vertices), mesh.n_vertices, 3).ravel()
        out[3 * mesh.n_vertices:] = _face_normal_means(field, geom)
        return out
    if space == "face":
        return _face_normal_means(field, geom)
    if space == "edge":
        pts, w = edge_gauss3(geom)
        vals = _as_field(field(pts.reshape(-1, 3)), pts.shape[0] * 3, 3).reshape(-1, 3, 3)
        return np.einsum("q,eqi,ei->e", w, vals, geom.edge_tangent)
    if space == "pressure":
        q = mesh_cell_quadrature(geom, 4)
        vals = _as_field(field(q.points), len(q.weights), 1)
        return np.bincount(q.cell, q.weights * vals, mesh.n_cells) / geom.cell_volume
    raise ValueError(f"unknown space {space!r}")


def _face_normal_means(field, geom):
    q = mesh_face_quadrature(geom, 4)
    vals = _as_field(field(q.points), len(q.weights), 3)
    flux = np.einsum("qi,qi->q", vals, geom.face_normal[q.face])
    return np.bincount(q.face, q.weights * flux, geom.mesh.n_faces) / geom.face_area


def divergence_matrix(geom: MeshGeometry) -> sp.csr_matrix:
    """Cells x faces: div_P = (1/|P|) sum_F sigma_F |F| dof_F."""
    mesh = geom.mesh
    rows, cols, vals = [], [], []
    for c, (fs, ss) in enumerate(zip(mesh.cell_faces, mesh.cell_face_signs)):
        rows.append(np.full(len(fs), c))
        cols.append(fs)
        vals.append(ss * geom.face_area[fs] / geom.cell_volume[c])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(mesh.n_cells, mesh.n_faces))


def divergence_from_dofs(space: str, coefficients, geom: MeshGeometry) -> np.ndarray:
    """Cellwise constant divergence of a velocity or face-space field."""
    c = np.asarray(coefficients, float)
    if space == "velocity":
        c = c[3 * geom.mesh.n_vertices:]
    elif space != "face":
        raise ValueError(f"divergence is defined for 'velocity' and 'face', not {space!r}")
    return divergence_matrix(geom) @ c


def curl_matrix(geom: MeshGeometry) -> sp.csr_matrix:
    """Faces x edges: (curl E).n_F = (1/|F|) sum_e sigma_{F,e} h_e E_e."""
    mesh = geom.mesh
    rows, cols, vals = [], [], []
    for f, (es, ss) in enumerate(zip(mesh.face_edges, mesh.face_edge_signs)):
        rows.append(np.full(len(es), f))
        cols.append(es)
        vals.append(ss * geom.edge_length[es] / geom.face_area[f])
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(mesh.n_faces, mesh.n_edges))


def curl_edge_to_face(coefficients, geom: MeshGeometry) -> np.ndarray:
    return curl_matrix(geom) @ np.asarray(coefficients, float)


def l2_norm_cellwise(values, geom: MeshGeometry) -> float:
    """L2 norm of a piecewise constant: sqrt(sum |P| v_P^2)."""
    v = np.asarray(values, float)
    return float(np.sqrt(np.sum(geom.cell_volume * v * v)))
