"""Measures, face frames, scaled monomials and fan quadrature."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
from scipy.special import roots_jacobi

from .mesh import MeshError, PolyMesh

MAX_DEGREE = 4


@dataclass(frozen=True)
class FaceFrame:
    """Right-handed orthonormal frame (t1, t2, n) anchored at the face center."""

    origin: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    n: np.ndarray

    def to_local(self, x):
        d = np.asarray(x, float) - self.origin
        return np.stack([d @ self.t1, d @ self.t2], axis=-1)

    def to_global(self, xi):
        xi = np.asarray(xi, float)
        return self.origin + xi[..., :1] * self.t1 + xi[..., 1:2] * self.t2


@dataclass(frozen=True)
class Quadrature:
    points: np.ndarray
    weights: np.ndarray
    inverted: bool = False

    def integrate(self, values):
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class ScaledMonomials:
    """m_0 = 1, m_i = (x_i - b_i)/h and, at degree 2, the products m_i m_j."""

    center: np.ndarray
    h: float
    dim: int = 3
    degree: int = 1

    @property
    def exponents(self):
        return _exponents(self.dim, self.degree)

    @property
    def size(self) -> int:
        return len(self.exponents)

    def __call__(self, x):
        y = (np.atleast_2d(np.asarray(x, float)) - self.center) / self.h
        cols = [np.prod(y[:, list(e)], axis=1) if e else np.ones(len(y)) for e in self.exponents]
        return np.column_stack(cols)


@lru_cache(maxsize=None)
def _exponents(dim, degree):
    out = [()]
    for d in range(1, degree + 1):
        out += list(combinations_with_replacement(range(dim), d))
    return tuple(out)


# ------------------------------------------------------------ simplex rules

@lru_cache(maxsize=None)
def _gauss01(n, alpha):
    """Gauss rule on [0,1] for the weight u**alpha."""
    x, w = roots_jacobi(n, 0.0, alpha)
    return (1 + x) / 2, w / 2 ** (alpha + 1)


@lru_cache(maxsize=None)
def triangle_rule(degree: int):
    """Conical-product rule on the reference triangle (0,0),(1,0),(0,1).

    Returns barycentric-like coordinates (s, t) of the points and weights that
    sum to 1/2.
    """
    n = degree // 2 + 1
    u, wu = _gauss01(n, 1.0)
    v, wv = _gauss01(n, 0.0)
    s = np.repeat(1 - u, n)
    t = np.tile(v, n) * np.repeat(u, n)
    w = np.repeat(wu, n) * np.tile(wv, n)
    pts = np.column_stack([s, t])
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


@lru_cache(maxsize=None)
def tet_rule(degree: int):
    """Conical-product rule on the reference tetrahedron; weights sum to 1/6."""
    n = degree // 2 + 1
    a, wa = _gauss01(n, 2.0)
    b, wb = _gauss01(n, 1.0)
    c, wc = _gauss01(n, 0.0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    WA, WB, WC = np.meshgrid(wa, wb, wc, indexing="ij")
    x = 1 - A
    y = A * (1 - B)
    z = A * B * C
    pts = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    w = (WA * WB * WC).ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return pts, w


# ------------------------------------------------------------------ measures

@dataclass(frozen=True, eq=False)
class MeshGeometry:
    mesh: PolyMesh
    edge_length: np.ndarray
    edge_center: np.ndarray
    edge_tangent: np.ndarray
    face_area: np.ndarray
    face_center: np.ndarray
    face_diameter: np.ndarray
    face_normal: np.ndarray
    face_t1: np.ndarray
    face_t2: np.ndarray
    cell_volume: np.ndarray
    cell_center: np.ndarray
    cell_diameter: np.ndarray
    cache: dict = field(default_factory=dict, repr=False, compare=False)

    def frame(self, f: int) -> FaceFrame:
        return FaceFrame(self.face_center[f], self.face_t1[f], self.face_t2[f], self.face_normal[f])

    def face_monomials(self, f: int, degree: int = 1) -> ScaledMonomials:
        """Basis in the in-plane coordinates of ``frame(f)`` (origin at b_F)."""
        return ScaledMonomials(np.zeros(2), float(self.face_diameter[f]), 2, degree)

    def cell_monomials(self, c: int, degree: int = 1) -> ScaledMonomials:
        return ScaledMonomials(self.cell_center[c], float(self.cell_diameter[c]), 3, degree)

    @property
    def h(self) -> float:
        return float(self.cell_diameter.max())


def _diam(p):
    d = p[:, None, :] - p[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1).max()))


def entity_measures(mesh: PolyMesh) -> MeshGeometry:
    x = mesh.vertices
    ev = x[mesh.edges[:, 1]] - x[mesh.edges[:, 0]]
    elen = np.linalg.norm(ev, axis=1)
    if np.any(elen == 0):
        raise MeshError(f"edge {int(np.argmin(elen))} has zero length")
    nf, nc = mesh.n_faces, mesh.n_cells
    area = np.zeros(nf)
    fcen = np.zeros((nf, 3))
    fdiam = np.zeros(nf)
    normal = np.zeros((nf, 3))
    t1 = np.zeros((nf, 3))
    t2 = np.zeros((nf, 3))
    for f in range(nf):
        p = x[mesh.face_vertices[f]]
        q = np.roll(p, -1, axis=0)
        o = p.mean(0)
        av = 0.5 * np.cross(p - o, q - o).sum(0)
        a = np.linalg.norm(av)
        hf = _diam(p)
        if a <= 1e-14 * hf * hf:
            raise MeshError(f"face {f} is degenerate (zero area)")
        n = av / a
        tri = 0.5 * np.cross(p - o, q - o) @ n
        cen = (tri[:, None] * (o + p + q) / 3).sum(0) / tri.sum()
        e1 = p[1] - p[0]
        e1 = e1 - (e1 @ n) * n
        e1 /= np.linalg.norm(e1)
        area[f], fcen[f], fdiam[f], normal[f] = a, cen, hf, n
        t1[f], t2[f] = e1, np.cross(n, e1)

    vol = np.zeros(nc)
    ccen = np.zeros((nc, 3))
    cdiam = np.zeros(nc)
    for c in range(nc):
        fs, ss = mesh.cell_faces[c], mesh.cell_face_signs[c]
        vol[c] = np.sum(ss * area[fs] * np.einsum("ij,ij->i", fcen[fs], normal[fs])) / 3.0
        verts = x[mesh.cell_vertices(c)]
        o = verts.mean(0)
        # centroid: x_i moments from the divergence theorem on x_i^2/2
        mom = np.zeros(3)
        for f, s in zip(fs, ss):
            qd = _face_rule_points(x[mesh.face_vertices[f]], fcen[f], normal[f], 2)
            vals = 0.5 * (qd[0] - o) ** 2
            mom += s * normal[f] * (qd[1] @ vals)
        ccen[c] = o + mom / vol[c]
        cdiam[c] = _diam(verts)
        if vol[c] <= 0:
            raise MeshError(f"cell {c} has non-positive volume")
    return MeshGeometry(mesh, elen, 0.5 * (x[mesh.edges[:, 0]] + x[mesh.edges[:, 1]]),
                        ev / elen[:, None], area, fcen, fdiam, normal, t1, t2, vol, ccen, cdiam)


def _face_rule_points(p, center, n, degree):
    ref, w = triangle_rule(degree)
    q = np.roll(p, -1, axis=0)
    a = p - center
    b = q - center
    jac = np.cross(a, b) @ n  # twice the signed area of each fan triangle
    pts = center + ref[None, :, :1] * a[:, None, :] + ref[None, :, 1:] * b[:, None, :]
    wts = jac[:, None] * w[None, :]
    return pts.reshape(-1, 3), wts.ravel(), bool(np.any(jac <= 0))


def face_quadrature(geom: MeshGeometry, f: int, degree: int) -> Quadrature:
    if degree > MAX_DEGREE:
        raise ValueError(f"quadrature degree {degree} exceeds {MAX_DEGREE}")
    mesh = geom.mesh
    pts, wts, inv = _face_rule_points(mesh.vertices[mesh.face_vertices[f]], geom.face_center[f],
                                      geom.face_normal[f], degree)
    return Quadrature(pts, wts, inv)


def cell_quadrature(geom: MeshGeometry, c: int, degree: int) -> Quadrature:
    if degree > MAX_DEGREE:
        raise ValueError(f"quadrature degree {degree} exceeds {MAX_DEGREE}")
    mesh = geom.mesh
    ref, w = tet_rule(degree)
    bp = geom.cell_center[c]
    pts_all, w_all = [], []
    inverted = False
    for f, s in zip(mesh.cell_faces[c], mesh.cell_face_signs[c]):
        p = mesh.vertices[mesh.face_vertices[f]]
        q = np.roll(p, -1, axis=0)
        bf = geom.face_center[f]
        a, b, d = bf - bp, p - bp, q - bp
        jac = s * np.einsum("j,ij->i", a, np.cross(b, d))  # 6 * signed volume
        inverted |= bool(np.any(jac <= 0))
        pts = (bp + ref[None, :, :1] * a + ref[None, :, 1:2] * b[:, None, :]
               + ref[None, :, 2:] * d[:, None, :])
        pts_all.append(pts.reshape(-1, 3))
        w_all.append((jac[:, None] * w[None, :]).ravel())
    return Quadrature(np.concatenate(pts_all), np.concatenate(w_all), inverted)


def edge_gauss3(geom: MeshGeometry):
    """Three-point Gauss points on every edge: points (ne, 3, 3), weights (3,) on [0,1]."""
    x = geom.mesh.vertices
    a, b = x[geom.mesh.edges[:, 0]], x[geom.mesh.edges[:, 1]]
    s = np.array([0.5 - np.sqrt(15) / 10, 0.5, 0.5 + np.sqrt(15) / 10])
    w = np.array([5, 8, 5]) / 18
    return a[:, None, :] + s[None, :, None] * (b - a)[:, None, :], w


def monomial_gram(quad: Quadrature, basis: ScaledMonomials, frame: FaceFrame | None = None):
    """Gram matrix of the scaled monomials on a face or cell."""
    pts = quad.points if frame is None else frame.to_local(quad.points)
    m = basis(pts)
    return (m * quad.weights[:, None]).T @ m


@dataclass(frozen=True)
class CellQuadratureSet:
    """Concatenated cell quadrature over a whole mesh."""

    points: np.ndarray
    weights: np.ndarray
    cell: np.ndarray
    inverted_cells: np.ndarray


def mesh_cell_quadrature(geom: MeshGeometry, degree: int) -> CellQuadratureSet:
    key = ("cells", degree)
    if key not in geom.cache:
        geom.cache[key] = _mesh_cell_quadrature(geom, degree)
    return geom.cache[key]


def _mesh_cell_quadrature(geom, degree):
    pts, wts, ids, bad = [], [], [], []
    for c in range(geom.mesh.n_cells):
        q = cell_quadrature(geom, c, degree)
        pts.append(q.points)
        wts.append(q.weights)
        ids.append(np.full(len(q.weights), c))
        if q.inverted:
            bad.append(c)
    return CellQuadratureSet(np.concatenate(pts), np.concatenate(wts), np.concatenate(ids),
                             np.array(bad, np.int64))


@dataclass(frozen=True)
class FaceQuadratureSet:
    """Concatenated face quadrature over a whole mesh."""

    points: np.ndarray
    weights: np.ndarray
    face: np.ndarray


def mesh_face_quadrature(geom: MeshGeometry, degree: int) -> FaceQuadratureSet:
    key = ("faces", degree)
    if key not in geom.cache:
        pts, wts, ids = [], [], []
        for f in range(geom.mesh.n_faces):
            q = face_quadrature(geom, f, degree)
            pts.append(q.points)
            wts.append(q.weights)
            ids.append(np.full(len(q.weights), f))
        geom.cache[key] = FaceQuadratureSet(np.concatenate(pts), np.concatenate(wts), np.concatenate(ids))
    return geom.cache[key]
