"""Polyhedral meshes with signed incidence.

A mesh stores vertices, oriented edges, faces given as signed edge loops and
cells given as signed face lists.  A face sign inside a cell is +1 when the
stored face normal points out of the cell; an edge sign inside a face is +1
when the face loop runs along the stored edge direction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import permutations
from typing import IO, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PLANARITY_TOL = 1e-12


class MeshError(ValueError):
    """Raised for inconsistent mesh input."""


class MeshFormatError(MeshError):
    """Parse error in a mesh file; carries the offending line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PolyMesh:
    vertices: np.ndarray
    edges: np.ndarray
    face_edges: tuple
    face_edge_signs: tuple
    cell_faces: tuple
    cell_face_signs: tuple
    face_vertices: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", _frozen(self.vertices, float).reshape(-1, 3))
        object.__setattr__(self, "edges", _frozen(self.edges, np.int64).reshape(-1, 2))
        for name in ("face_edges", "face_edge_signs", "cell_faces", "cell_face_signs"):
            object.__setattr__(self, name, tuple(_frozen(x, np.int64) for x in getattr(self, name)))
        if len(self.face_edges) != len(self.face_edge_signs):
            raise MeshError("face edge lists and sign lists differ in length")
        if len(self.cell_faces) != len(self.cell_face_signs):
            raise MeshError("cell face lists and sign lists differ in length")
        loops = []
        for f, (es, ss) in enumerate(zip(self.face_edges, self.face_edge_signs)):
            if len(es) < 3 or len(es) != len(ss):
                raise MeshError(f"face {f}: needs at least 3 signed edges")
            if es.min() < 0 or es.max() >= len(self.edges):
                raise MeshError(f"face {f}: edge index out of range")
            loops.append(_frozen(_face_loop(self.edges, es, ss), np.int64))
        object.__setattr__(self, "face_vertices", tuple(loops))
        for c, fs in enumerate(self.cell_faces):
            if len(fs) < 4 or fs.min() < 0 or fs.max() >= len(self.face_edges):
                raise MeshError(f"cell {c}: bad face list")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_faces(self) -> int:
        return len(self.face_edges)

    @property
    def n_cells(self) -> int:
        return len(self.cell_faces)

    def counts(self) -> tuple[int, int, int, int]:
        return self.n_vertices, self.n_edges, self.n_faces, self.n_cells

    def cell_vertices(self, c: int) -> np.ndarray:
        """Sorted global vertex ids of cell ``c``."""
        return np.unique(np.concatenate([self.face_vertices[f] for f in self.cell_faces[c]]))

    def cell_edges(self, c: int) -> np.ndarray:
        return np.unique(np.concatenate([self.face_edges[f] for f in self.cell_faces[c]]))

    def face_cells(self) -> list[list[tuple[int, int]]]:
        """For every face, the list of (cell, sign) incidences."""
        out: list[list[tuple[int, int]]] = [[] for _ in range(self.n_faces)]
        for c, (fs, ss) in enumerate(zip(self.cell_faces, self.cell_face_signs)):
            for f, s in zip(fs, ss):
                out[f].append((c, int(s)))
        return out


def _face_loop(edges, es, ss):
    starts = np.where(ss > 0, edges[es, 0], edges[es, 1])
    ends = np.where(ss > 0, edges[es, 1], edges[es, 0])
    if not np.array_equal(np.roll(ends, 1), starts):
        raise MeshError("open face loop")
    return starts


def mesh_from_polyhedra(vertices, polyhedra: Sequence[Sequence[Sequence[int]]]) -> PolyMesh:
    """Build a mesh from cells given as outward-oriented vertex loops.

    Edges are stored from the smaller to the larger vertex index; a face
    keeps the orientation of the first cell that lists it.
    """
    edge_id: dict[tuple[int, int], int] = {}
    edges: list[tuple[int, int]] = []
    face_id: dict[tuple[int, ...], int] = {}
    face_loops: list[list[int]] = []
    cell_faces, cell_signs = [], []
    for poly in polyhedra:
        fs, ss = [], []
        for loop in poly:
            loop = [int(v) for v in loop]
            key = tuple(sorted(loop))
            if key in face_id:
                f = face_id[key]
                ref = face_loops[f]
                i = ref.index(loop[0])
                same = ref[(i + 1) % len(ref)] == loop[1]
                fs.append(f)
                ss.append(1 if same else -1)
            else:
                face_id[key] = len(face_loops)
                fs.append(len(face_loops))
                ss.append(1)
                face_loops.append(loop)
        cell_faces.append(fs)
        cell_signs.append(ss)
    face_edges, face_signs = [], []
    for loop in face_loops:
        es, sg = [], []
        for a, b in zip(loop, loop[1:] + loop[:1]):
            key = (min(a, b), max(a, b))
            if key not in edge_id:
                edge_id[key] = len(edges)
                edges.append(key)
            es.append(edge_id[key])
            sg.append(1 if a < b else -1)
        face_edges.append(es)
        face_signs.append(sg)
    return PolyMesh(np.asarray(vertices, float), np.array(edges, np.int64).reshape(-1, 2),
                    face_edges, face_signs, cell_faces, cell_signs)


def _lattice(n):
    g = np.arange(n + 1) / n
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    return np.column_stack([x.ravel(), y.ravel(), z.ravel()])


def _check_n(n):
    if int(n) != n or n < 1:
        raise ValueError(f"mesh resolution must be a positive integer, got {n!r}")
    return int(n)


def build_cube_mesh(n: int) -> PolyMesh:
    """Uniform n x n x n grid of cubes on [0,1]^3.

    Every face normal points along the positive coordinate axis and every
    edge along the positive axis direction.
    """
    n = _check_n(n)
    m = n + 1

    def vid(i, j, k):
        return i + m * (j + m * k)

    edges, edge_id = [], {}
    for axis in range(3):
        for k in range(m):
            for j in range(m):
                for i in range(m):
                    idx = [i, j, k]
                    if idx[axis] == n:
                        continue
                    a = vid(i, j, k)
                    idx[axis] += 1
                    b = vid(*idx)
                    edge_id[(a, b)] = len(edges)
                    edges.append((a, b))

    # In-plane axes ordered so that (first, second, axis) is right-handed.
    plane = {0: (1, 2), 1: (2, 0), 2: (0, 1)}
    face_edges, face_signs, face_id = [], [], {}
    for axis in range(3):
        p, q = plane[axis]
        for k in range(m):
            for j in range(m):
                for i in range(m):
                    idx = [i, j, k]
                    if idx[p] == n or idx[q] == n:
                        continue
                    corners = []
                    for dp, dq in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        c = list(idx)
                        c[p] += dp
                        c[q] += dq
                        corners.append(vid(*c))
                    es, sg = [], []
                    for a, b in zip(corners, corners[1:] + corners[:1]):
                        if (a, b) in edge_id:
                            es.append(edge_id[(a, b)])
                            sg.append(1)
                        else:
                            es.append(edge_id[(b, a)])
                            sg.append(-1)
                    face_id[(axis, i, j, k)] = len(face_edges)
                    face_edges.append(es)
                    face_signs.append(sg)

    cell_faces, cell_signs = [], []
    for k in range(n):
        for j in range(n):
            for i in range(n):
                fs, ss = [], []
                for axis in range(3):
                    lo = [i, j, k]
                    hi = list(lo)
                    hi[axis] += 1
                    fs += [face_id[(axis, *lo)], face_id[(axis, *hi)]]
                    ss += [-1, 1]
                cell_faces.append(fs)
                cell_signs.append(ss)
    return PolyMesh(_lattice(n), np.array(edges), face_edges, face_signs, cell_faces, cell_signs)


def _tet_faces(t, x):
    """Outward vertex loops of the tetrahedron with vertex ids ``t``."""
    loops = []
    for drop in range(4):
        tri = [t[i] for i in range(4) if i != drop]
        a, b, c = (x[v] for v in tri)
        if np.dot(np.cross(b - a, c - a), x[t[drop]] - a) > 0:
            tri = [tri[0], tri[2], tri[1]]
        loops.append(tri)
    return loops


def build_tet_mesh(n: int) -> PolyMesh:
    """Kuhn subdivision: each grid cube split into 6 tetrahedra sharing the
    diagonal from its lowest to its highest corner."""
    n = _check_n(n)
    m = n + 1
    x = _lattice(n)
    polys = []
    for k in range(n):
        for j in range(n):
            for i in range(n):
                for perm in permutations(range(3)):
                    c = [i, j, k]
                    path = [c[0] + m * (c[1] + m * c[2])]
                    for axis in perm:
                        c[axis] += 1
                        path.append(c[0] + m * (c[1] + m * c[2]))
                    polys.append(_tet_faces(path, x))
    return mesh_from_polyhedra(x, polys)


# ---------------------------------------------------------------- file format

def write_poly_mesh(mesh: PolyMesh, stream: IO[str]) -> None:
    nv, ne, nf, nc = mesh.counts()
    stream.write("polymesh 1\n")
    stream.write(f"{nv} {ne} {nf} {nc}\n")
    for p in mesh.vertices:
        stream.write(" ".join(format(float(c), ".17g") for c in p) + "\n")
    for a, b in mesh.edges:
        stream.write(f"{a + 1} {b + 1}\n")
    for es, ss in zip(mesh.face_edges, mesh.face_edge_signs):
        stream.write(" ".join([str(len(es))] + [str(int(s) * (int(e) + 1)) for e, s in zip(es, ss)]) + "\n")
    for fs, ss in zip(mesh.cell_faces, mesh.cell_face_signs):
        stream.write(" ".join([str(len(fs))] + [str(int(s) * (int(f) + 1)) for f, s in zip(fs, ss)]) + "\n")


def _lines(stream: IO[str]) -> Iterable[tuple[int, list[str]]]:
    for lineno, raw in enumerate(stream, start=1):
        text = raw.split("#", 1)[0].split()
        if text:
            yield lineno, text


def read_poly_mesh(stream: IO[str]) -> PolyMesh:
    """Parse the ASCII ``polymesh 1`` format (1-based signed indices)."""
    it = iter(_lines(stream))

    def take(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshFormatError(last[0] + 1, f"unexpected end of file, expected {what}") from None

    last = [0]

    def ints(lineno, tokens):
        try:
            return [int(t) for t in tokens]
        except ValueError:
            raise MeshFormatError(lineno, f"expected integers, got {' '.join(tokens)!r}") from None

    lineno, tok = take("header")
    last[0] = lineno
    if tok != ["polymesh", "1"]:
        raise MeshFormatError(lineno, "expected header 'polymesh 1'")
    lineno, tok = take("counts")
    last[0] = lineno
    counts = ints(lineno, tok)
    if len(counts) != 4 or min(counts) < 0:
        raise MeshFormatError(lineno, "expected four non-negative counts 'nv ne nf nc'")
    nv, ne, nf, nc = counts

    verts = np.empty((nv, 3))
    for i in range(nv):
        lineno, tok = take("vertex")
        last[0] = lineno
        if len(tok) != 3:
            raise MeshFormatError(lineno, "vertex line needs 3 coordinates")
        try:
            verts[i] = [float(t) for t in tok]
        except ValueError:
            raise MeshFormatError(lineno, "bad vertex coordinate") from None
    edges = np.empty((ne, 2), np.int64)
    for i in range(ne):
        lineno, tok = take("edge")
        last[0] = lineno
        ab = ints(lineno, tok)
        if len(ab) != 2 or min(ab) < 1 or max(ab) > nv or ab[0] == ab[1]:
            raise MeshFormatError(lineno, f"edge references vertices {ab} outside 1..{nv}")
        edges[i] = [ab[0] - 1, ab[1] - 1]

    def signed_list(kind, bound):
        lineno, tok = take(kind)
        last[0] = lineno
        vals = ints(lineno, tok)
        if not vals or vals[0] != len(vals) - 1 or vals[0] < 1:
            raise MeshFormatError(lineno, f"{kind} line length does not match its count")
        idx = vals[1:]
        if any(v == 0 or abs(v) > bound for v in idx):
            raise MeshFormatError(lineno, f"{kind} references index outside 1..{bound}")
        return lineno, [abs(v) - 1 for v in idx], [1 if v > 0 else -1 for v in idx]

    face_edges, face_signs = [], []
    for _ in range(nf):
        lineno, es, ss = signed_list("face", ne)
        if len(es) < 3:
            raise MeshFormatError(lineno, "face needs at least 3 edges")
        try:
            _face_loop(edges, np.array(es), np.array(ss))
        except MeshError:
            raise MeshFormatError(lineno, "face loop is not closed") from None
        face_edges.append(es)
        face_signs.append(ss)
    cell_faces, cell_signs = [], []
    for _ in range(nc):
        lineno, fs, ss = signed_list("cell", nf)
        if len(fs) < 4:
            raise MeshFormatError(lineno, "cell needs at least 4 faces")
        cell_faces.append(fs)
        cell_signs.append(ss)
    extra = next(it, None)
    if extra is not None:
        raise MeshFormatError(extra[0], "trailing data after last cell")
    return PolyMesh(verts, edges, face_edges, face_signs, cell_faces, cell_signs)


def load_mesh(path) -> PolyMesh:
    with open(path, encoding="ascii") as fh:
        return read_poly_mesh(fh)


def save_mesh(mesh: PolyMesh, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        write_poly_mesh(mesh, fh)


# ----------------------------------------------------------------- validation

@dataclass(frozen=True)
class BoundaryTags:
    boundary_vertices: np.ndarray
    boundary_edges: np.ndarray
    boundary_faces: np.ndarray

    def masks(self, mesh: PolyMesh):
        """Boolean masks (vertices, edges, faces)."""
        mv = np.zeros(mesh.n_vertices, bool)
        me = np.zeros(mesh.n_edges, bool)
        mf = np.zeros(mesh.n_faces, bool)
        mv[self.boundary_vertices] = True
        me[self.boundary_edges] = True
        mf[self.boundary_faces] = True
        return mv, me, mf


def classify_boundary(mesh: PolyMesh) -> BoundaryTags:
    """Boundary faces are those with exactly one incident cell."""
    count = np.zeros(mesh.n_faces, np.int64)
    for fs in mesh.cell_faces:
        np.add.at(count, fs, 1)
    bf = np.flatnonzero(count == 1)
    be = np.unique(np.concatenate([mesh.face_edges[f] for f in bf])) if len(bf) else np.zeros(0, np.int64)
    bv = np.unique(mesh.edges[be].ravel()) if len(be) else np.zeros(0, np.int64)
    return BoundaryTags(bv, be, bf)


@dataclass
class MeshReport:
    violations: list = field(default_factory=list)
    min_face_cell_ratio: np.ndarray = None  # per cell: min h_F / h_P
    min_edge_face_ratio: np.ndarray = None  # per face: min h_e / h_F
    max_planarity: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, entity: str, index: int, detail: str = ""):
        self.violations.append((kind, entity, int(index), detail))

    def summary(self) -> str:
        lines = [f"{len(self.violations)} violation(s)"]
        for kind, entity, index, detail in self.violations:
            lines.append(f"  {kind}: {entity} {index} {detail}".rstrip())
        return "\n".join(lines)


def _newell(p):
    p = p - p.mean(0)  # centred, so roundoff does not grow with |x|
    q = np.roll(p, -1, axis=0)
    return 0.5 * np.sum(np.cross(p, q), axis=0)


def _diameter(p):
    d = p[:, None, :] - p[None, :, :]
    return float(np.sqrt((d ** 2).sum(-1).max()))


def _simple_polygon(xy):
    k = len(xy)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    for i in range(k):
        a, b = xy[i], xy[(i + 1) % k]
        for j in range(i + 2, k):
            if i == 0 and j == k - 1:
                continue
            c, d = xy[j], xy[(j + 1) % k]
            d1, d2 = cross(a, b, c), cross(a, b, d)
            d3, d4 = cross(c, d, a), cross(c, d, b)
            if d1 * d2 < 0 and d3 * d4 < 0:
                return False
    return True


def validate(mesh: PolyMesh) -> MeshReport:
    """Check topological and geometric invariants; never raises."""
    rep = MeshReport()
    x = mesh.vertices
    nf = mesh.n_faces
    h_face = np.zeros(nf)
    area_vec = np.zeros((nf, 3))
    ratio_e = np.zeros(nf)
    elen = np.linalg.norm(x[mesh.edges[:, 1]] - x[mesh.edges[:, 0]], axis=1)
    for e in np.flatnonzero(elen == 0):
        rep.add("degenerate", "edge", e, "zero length")
    for f in range(nf):
        p = x[mesh.face_vertices[f]]
        h = _diameter(p)
        h_face[f] = h
        av = _newell(p)
        area_vec[f] = av
        a = np.linalg.norm(av)
        ratio_e[f] = elen[mesh.face_edges[f]].min() / h if h > 0 else 0.0
        if len(set(mesh.face_vertices[f].tolist())) != len(p):
            rep.add("loop", "face", f, "repeated vertex")
        if a <= 1e-14 * max(h, 1e-300) ** 2:
            rep.add("degenerate", "face", f, "zero area")
            continue
        n = av / a
        dev = np.abs((p - p.mean(0)) @ n).max()
        rep.max_planarity = max(rep.max_planarity, dev / h)
        if dev > PLANARITY_TOL * h:
            rep.add("planarity", "face", f, f"deviation {dev:.3e}")
        t1 = p[1] - p[0]
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        xy = np.column_stack([(p - p[0]) @ t1, (p - p[0]) @ t2])
        if not _simple_polygon(xy):
            rep.add("self-intersection", "face", f)

    inc = mesh.face_cells()
    for f, lst in enumerate(inc):
        if len(lst) == 0:
            rep.add("incidence", "face", f, "not used by any cell")
        elif len(lst) > 2:
            rep.add("incidence", "face", f, f"shared by {len(lst)} cells")
        elif len(lst) == 2 and lst[0][1] == lst[1][1]:
            rep.add("orientation", "face", f, "interior face has equal signs in both cells")

    ratio_f = np.zeros(mesh.n_cells)
    for c, (fs, ss) in enumerate(zip(mesh.cell_faces, mesh.cell_face_signs)):
        if len(set(fs.tolist())) != len(fs):
            rep.add("incidence", "cell", c, "repeated face")
        tally: dict[int, int] = {}
        uses: dict[int, int] = {}
        for f, s in zip(fs, ss):
            for e, se in zip(mesh.face_edges[f], mesh.face_edge_signs[f]):
                tally[int(e)] = tally.get(int(e), 0) + int(s * se)
                uses[int(e)] = uses.get(int(e), 0) + 1
        if any(v != 0 for v in tally.values()) or any(u != 2 for u in uses.values()):
            rep.add("orientation", "cell", c, "signed face boundary is not closed")
        verts = mesh.cell_vertices(c)
        euler = len(verts) - len(uses) + len(fs)
        if euler != 2:
            rep.add("euler", "cell", c, f"V-E+F = {euler}")
        sv = (ss[:, None] * area_vec[fs]).sum(0)
        scale = np.abs(area_vec[fs]).sum()
        if np.linalg.norm(sv) > 1e-12 * scale:
            rep.add("closure", "cell", c, "signed area vectors do not sum to zero")
        cent = np.array([x[mesh.face_vertices[f]].mean(0) for f in fs])
        vol = np.sum(ss * np.einsum("ij,ij->i", area_vec[fs], cent)) / 3.0
        if vol <= 0:
            rep.add("orientation", "cell", c, "non-positive signed volume")
        hp = _diameter(x[verts])
        ratio_f[c] = h_face[fs].min() / hp if hp > 0 else 0.0
    rep.min_face_cell_ratio = ratio_f
    rep.min_edge_face_ratio = ratio_e
    return rep
