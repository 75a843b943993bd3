"""Computable projections of the local virtual spaces.

All polynomial outputs are coefficients in the scaled monomial basis
(1, m_1, m_2, m_3) of the cell.  Vector-valued linear polynomials are stored
as arrays of shape (3, 4, ndof): component, monomial, local DoF.

Local velocity DoFs of a cell are ordered ``3*k + i`` for the i-th component
at the k-th cell vertex (in increasing global vertex order), followed by one
normal-moment DoF per cell face in the order of the cell's face list.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import MeshGeometry, cell_quadrature, face_quadrature, monomial_gram


class ProjectorError(np.linalg.LinAlgError):
    pass


def _solve(a, b, what):
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise ProjectorError(f"singular local system on {what}") from exc


@dataclass(frozen=True, eq=False)
class LocalCell:
    index: int
    vertices: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    face_signs: np.ndarray
    face_loops: tuple  # local vertex indices of each face loop
    face_edges: tuple  # local edge indices of each face, in loop order
    face_edge_signs: tuple

    @property
    def n_velocity(self) -> int:
        return 3 * len(self.vertices) + len(self.faces)

    def velocity_dofs(self, n_vertices: int) -> np.ndarray:
        vd = (3 * self.vertices[:, None] + np.arange(3)).ravel()
        return np.concatenate([vd, 3 * n_vertices + self.faces])


def local_cell(mesh, c: int) -> LocalCell:
    verts = mesh.cell_vertices(c)
    edges = mesh.cell_edges(c)
    fs = mesh.cell_faces[c]
    loops = tuple(np.searchsorted(verts, mesh.face_vertices[f]) for f in fs)
    fe = tuple(np.searchsorted(edges, mesh.face_edges[f]) for f in fs)
    fes = tuple(mesh.face_edge_signs[f] for f in fs)
    return LocalCell(c, verts, edges, fs, mesh.cell_face_signs[c], loops, fe, fes)


# ------------------------------------------------------------------ faces

@dataclass(frozen=True, eq=False)
class FaceProjector:
    """Elliptic projection on a face for scalar data given at the loop vertices.

    ``matrix`` maps the k vertex values to the coefficients of
    (1, xi_1/h_F, xi_2/h_F).
    """

    face: int
    xi: np.ndarray
    h: float
    area: float
    matrix: np.ndarray
    second_moments: np.ndarray  # int_F xi_a xi_b

    def evaluate(self, xi):
        xi = np.atleast_2d(xi)
        return np.column_stack([np.ones(len(xi)), xi / self.h])


def face_nodal_projector(geom: MeshGeometry, f: int) -> FaceProjector:
    mesh = geom.mesh
    frame = geom.frame(f)
    xi = frame.to_local(mesh.vertices[mesh.face_vertices[f]])
    h = float(geom.face_diameter[f])
    k = len(xi)
    d = xi[(np.arange(k) + 1) % k] - xi  # edge i runs from vertex i to i+1
    hl = np.linalg.norm(d, axis=1)
    out = np.column_stack([d[:, 1], -d[:, 0]])  # outward normal times h_e
    B = np.zeros((3, k))
    B[0] = 0.5 * (hl + np.roll(hl, 1))
    flux = out / (2 * h)
    B[1:] = (flux + np.roll(flux, 1, axis=0)).T
    D = np.column_stack([np.ones(k), xi / h])
    G = B @ D
    P = _solve(G, B, f"face {f}")
    q = face_quadrature(geom, f, 2)
    lx = frame.to_local(q.points)
    mom = (lx * q.weights[:, None]).T @ lx
    return FaceProjector(f, xi, h, float(geom.face_area[f]), P, mom)


# --------------------------------------------------------------- operators

@dataclass(frozen=True, eq=False)
class ElementOperators:
    cell: LocalCell
    volume: float
    center: np.ndarray
    h: float
    gram: np.ndarray          # 4x4 monomial Gram matrix
    pi_nabla: np.ndarray      # (3, 4, nd)
    pi_zero: np.ndarray       # (3, 4, nd)
    pi_zero_grad: np.ndarray  # (3, 3, nd)
    face_integrals: np.ndarray  # (nf, 3, nd): int_F w
    divergence: np.ndarray    # (nd,) cellwise div from DoFs
    velocity_dof_matrix: np.ndarray  # (nd, 12): DoFs of the monomial basis
    pi_zero_edge: np.ndarray  # (3, ne)
    edge_dof_matrix: np.ndarray  # (ne, 3)
    pi_zero_face: np.ndarray  # (3, nf)
    face_dof_matrix: np.ndarray  # (nf, 3)
    curl: np.ndarray          # (nf, ne) local edge-to-face curl
    S_a: np.ndarray
    S_m: np.ndarray
    S_edge: np.ndarray
    S_face: np.ndarray

    @property
    def mean_velocity(self) -> np.ndarray:
        """(3, nd): cell average of the velocity."""
        return self.pi_zero[:, 0, :]

    def pi_nabla_matrix(self):
        return self.pi_nabla.reshape(12, -1)

    def pi_zero_matrix(self):
        return self.pi_zero.reshape(12, -1)


def _cross_basis():
    # coefficient matrices of m x e_i for i = 0..2
    out = np.zeros((3, 3, 4))
    eye = np.eye(3)
    for i in range(3):
        for a in range(3):
            out[i][:, a + 1] = np.cross(eye[a], eye[i])
    return out


_CROSS = _cross_basis()
_PAIRS = [(a, b) for a in range(3) for b in range(a, 3)]


def velocity_cell_projectors(geom: MeshGeometry, cell: LocalCell, faces: dict | None = None):
    """Return (pi_nabla, pi_zero, pi_zero_grad, face_integrals, divergence, gram)."""
    c = cell.index
    nvl, nfl = len(cell.vertices), len(cell.faces)
    nd = 3 * nvl + nfl
    vol = float(geom.cell_volume[c])
    bp = geom.cell_center[c]
    h = float(geom.cell_diameter[c])
    basis = geom.cell_monomials(c)
    H = monomial_gram(cell_quadrature(geom, c, 2), basis)

    div = np.zeros(nd)
    IF = np.zeros((nfl, 3, nd))
    fps = []
    for k, f in enumerate(cell.faces):
        fp = faces[f] if faces is not None else face_nodal_projector(geom, f)
        fps.append(fp)
        n = geom.face_normal[f]
        T = np.eye(3) - np.outer(n, n)
        for j, lv in enumerate(cell.face_loops[k]):
            IF[k, :, 3 * lv:3 * lv + 3] += fp.area * fp.matrix[0, j] * T
        IF[k, :, 3 * nvl + k] += fp.area * n
        div[3 * nvl + k] = cell.face_signs[k] * fp.area / vol

    sig = cell.face_signs.astype(float)
    normals = geom.face_normal[cell.faces]
    # elliptic projection, componentwise
    G = np.zeros((4, 4))
    G[0] = (geom.face_area[cell.faces][:, None] * basis(geom.face_center[cell.faces])).sum(0)
    G[1:, 1:] = np.eye(3) * vol / h ** 2
    rhs = np.zeros((4, 3, nd))
    rhs[0] = IF.sum(0)
    rhs[1:] = np.einsum("k,kb,kid->bid", sig, normals, IF) / h
    pn = _solve(G, rhs.reshape(4, -1), f"cell {c}").reshape(4, 3, nd).transpose(1, 0, 2)

    grad0 = np.einsum("k,kj,kid->ijd", sig, normals, IF) / vol

    # L2 projection on P1^3 through gradients of quadratics and m x e_i
    psi = []
    rhs0 = []
    face_q = [face_quadrature(geom, f, 3) for f in cell.faces]
    qvals = [basis(q.points) for q in face_q]
    cen_vals = basis(geom.face_center[cell.faces])
    face_mono = []
    for k, f in enumerate(cell.faces):
        fp = fps[k]
        lx = geom.frame(f).to_local(face_q[k].points)
        face_mono.append(fp.evaluate(lx) @ fp.matrix)  # (nq, nloop): Pi w at quad points

    def grad_moment(svals_face, sval_center, s_int):
        """int_P w . h grad(s) as a row over local DoFs."""
        r = -s_int * div
        for k, f in enumerate(cell.faces):
            fp = fps[k]
            n = geom.face_normal[f]
            wq = face_q[k].weights * (svals_face[k] - sval_center[k])
            coeff = wq @ face_mono[k]  # per loop vertex
            row = np.zeros(nd)
            for j, lv in enumerate(cell.face_loops[k]):
                row[3 * lv:3 * lv + 3] += coeff[j] * n
            row[3 * nvl + k] += sval_center[k] * fp.area
            r = r + sig[k] * row
        return h * r

    for a in range(3):
        coef = np.zeros((3, 4))
        coef[a, 0] = 1.0
        psi.append(coef)
        rhs0.append(grad_moment([v[:, a + 1] for v in qvals], cen_vals[:, a + 1], H[0, a + 1]))
    for a, b in _PAIRS:
        coef = np.zeros((3, 4))
        coef[a, b + 1] += 1.0
        coef[b, a + 1] += 1.0
        psi.append(coef)
        rhs0.append(grad_moment([v[:, a + 1] * v[:, b + 1] for v in qvals],
                                cen_vals[:, a + 1] * cen_vals[:, b + 1], H[a + 1, b + 1]))
    for i in range(3):
        psi.append(_CROSS[i])
        rhs0.append(np.einsum("ia,ab,ibd->d", _CROSS[i], H, pn))
    psi = np.array(psi)
    Gpsi = np.einsum("kia,ab,lib->kl", psi, H, psi)
    d = _solve(Gpsi, np.array(rhs0), f"cell {c}")
    p0 = np.einsum("kia,kd->iad", psi, d)
    return pn, p0, grad0, IF, div, H


def edge_cell_projector(geom: MeshGeometry, cell: LocalCell, faces: dict | None = None) -> np.ndarray:
    """(3, n_edges) map from edge DoFs to the cell average of E."""
    c = cell.index
    mesh = geom.mesh
    bp = geom.cell_center[c]
    nel = len(cell.edges)
    out = np.zeros((3, nel))
    eye = np.eye(3)
    for k, f in enumerate(cell.faces):
        fp = faces[f] if faces is not None else face_nodal_projector(geom, f)
        n, t1, t2, bf = (geom.face_normal[f], geom.face_t1[f], geom.face_t2[f], geom.face_center[f])
        xi = fp.xi
        nxt = np.roll(xi, -1, axis=0)
        mid = 0.5 * (xi + nxt)
        le = geom.edge_length[mesh.face_edges[f]]
        sgn = cell.face_edge_signs[k]
        M = fp.second_moments
        for j in range(3):
            def p2(z):
                x = bf + z[0] * t1 + z[1] * t2
                p = np.cross(0.5 * np.cross(eye[j], x - bp), n)
                return np.array([p @ t1, p @ t2])

            p0 = p2(np.zeros(2))
            A = np.column_stack([p2(eye[0, :2]) - p0, p2(eye[1, :2]) - p0])
            alpha = 0.5 * np.trace(A)
            a, b, cc = A[0, 0] - alpha, A[0, 1], A[1, 0]

            def q(z):
                z = np.atleast_2d(z)
                return (-p0[1] * z[:, 0] + p0[0] * z[:, 1] + a * z[:, 0] * z[:, 1]
                        + 0.5 * b * z[:, 1] ** 2 - 0.5 * cc * z[:, 0] ** 2)

            int_q = a * M[0, 1] + 0.5 * b * M[1, 1] - 0.5 * cc * M[0, 0]
            edge_q = le / 6 * (q(xi) + 4 * q(mid) + q(nxt))
            coeff = sgn * (le / fp.area * int_q - edge_q)
            np.add.at(out[j], cell.face_edges[k], -cell.face_signs[k] * coeff)
    return out / geom.cell_volume[c]


def face_cell_projector(geom: MeshGeometry, cell: LocalCell) -> np.ndarray:
    """(3, n_faces) map from face DoFs to the cell average of B."""
    c = cell.index
    fs = cell.faces
    w = cell.face_signs * geom.face_area[fs]
    return (w[None, :] * (geom.face_center[fs] - geom.cell_center[c]).T) / geom.cell_volume[c]


def stabilization_matrices(geom: MeshGeometry, cell: LocalCell):
    """Diagonal dofi-dofi matrices (S_a, S_m, S_edge, S_face)."""
    c = cell.index
    h = float(geom.cell_diameter[c])
    nd = cell.n_velocity
    mult = np.zeros(len(cell.edges))
    for fe in cell.face_edges:
        np.add.at(mult, fe, 1.0)
    S_edge = np.diag(h * h * mult * geom.edge_length[cell.edges])
    S_face = np.diag(h * geom.face_area[cell.faces])
    return h * np.eye(nd), h ** 3 * np.eye(nd), S_edge, S_face


def velocity_dof_matrix(geom: MeshGeometry, cell: LocalCell) -> np.ndarray:
    """(nd, 12): DoFs of the basis functions m_a e_i, column index 4*i + a."""
    c = cell.index
    basis = geom.cell_monomials(c)
    mv = basis(geom.mesh.vertices[cell.vertices])
    mf = basis(geom.face_center[cell.faces])
    nvl = len(cell.vertices)
    D = np.zeros((cell.n_velocity, 12))
    for i in range(3):
        D[i:3 * nvl:3, 4 * i:4 * i + 4] = mv
        D[3 * nvl:, 4 * i:4 * i + 4] = mf * geom.face_normal[cell.faces][:, i:i + 1]
    return D


def local_curl(geom: MeshGeometry, cell: LocalCell) -> np.ndarray:
    C = np.zeros((len(cell.faces), len(cell.edges)))
    for k, f in enumerate(cell.faces):
        es = geom.mesh.face_edges[f]
        C[k, cell.face_edges[k]] = cell.face_edge_signs[k] * geom.edge_length[es] / geom.face_area[f]
    return C


def element_operators(geom: MeshGeometry, c: int, faces: dict | None = None) -> ElementOperators:
    cell = local_cell(geom.mesh, c)
    pn, p0, g0, IF, div, H = velocity_cell_projectors(geom, cell, faces)
    S_a, S_m, S_e, S_f = stabilization_matrices(geom, cell)
    return ElementOperators(
        cell=cell, volume=float(geom.cell_volume[c]), center=geom.cell_center[c],
        h=float(geom.cell_diameter[c]), gram=H, pi_nabla=pn, pi_zero=p0, pi_zero_grad=g0,
        face_integrals=IF, divergence=div, velocity_dof_matrix=velocity_dof_matrix(geom, cell),
        pi_zero_edge=edge_cell_projector(geom, cell, faces),
        edge_dof_matrix=geom.edge_tangent[cell.edges],
        pi_zero_face=face_cell_projector(geom, cell),
        face_dof_matrix=geom.face_normal[cell.faces],
        curl=local_curl(geom, cell), S_a=S_a, S_m=S_m, S_edge=S_e, S_face=S_f)


def build_element_operators(geom: MeshGeometry, threads: int = 1) -> list[ElementOperators]:
    """Operators for every cell, in cell order (bit-identical for any thread count)."""
    nf = geom.mesh.n_faces
    nc = geom.mesh.n_cells
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            fl = list(ex.map(lambda f: face_nodal_projector(geom, f), range(nf)))
            faces = dict(enumerate(fl))
            return list(ex.map(lambda c: element_operators(geom, c, faces), range(nc)))
    faces = {f: face_nodal_projector(geom, f) for f in range(nf)}
    return [element_operators(geom, c, faces) for c in range(nc)]
