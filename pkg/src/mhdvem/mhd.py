"""Global assembly, implicit Euler time stepping and Picard linearization.

Unknowns are ordered (u, p, lambda, E, B), where lambda is the scalar
multiplier enforcing a zero-mean pressure.  Each Picard sweep lags the
advecting velocity and the magnetic field inside every chi_h term, so the
inner problem is linear in all four fields.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .forms import batched_lagged_forms, local_bilinear_forms
from .geometry import entity_measures, mesh_cell_quadrature
from .mesh import PolyMesh, classify_boundary
from .projectors import build_element_operators
from .spaces import build_dof_layouts, curl_matrix, divergence_matrix, interpolate

log = logging.getLogger(__name__)

Field = Callable[[np.ndarray, float], np.ndarray]


FIXED_POINT_RESIDUAL = 1e-13


class SolverError(RuntimeError):
    pass


class PicardDivergence(SolverError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class MhdParameters:
    re: float = 1.0
    rem: float = 1.0
    s: float = 1.0

    def __post_init__(self):
        for name in ("re", "rem", "s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class PicardConfig:
    tol: float = 1e-8
    max_iter: int = 20


@dataclass(frozen=True)
class ProblemData:
    """Sources, boundary traces and initial data; ``None`` means zero."""

    f: Optional[Field] = None
    g: Optional[Field] = None
    u_boundary: Optional[Field] = None
    E_boundary: Optional[Field] = None
    B_boundary: Optional[Field] = None
    u0: Optional[Field] = None
    E0: Optional[Field] = None
    B0: Optional[Field] = None


@dataclass
class MhdState:
    t: float
    u: np.ndarray
    p: np.ndarray
    E: np.ndarray
    B: np.ndarray


@dataclass
class StepReport:
    step: int
    t: float
    picard_iterations: int
    final_increment: float
    residual: float
    div_u: float
    div_B: float
    energy: float
    history: list = field(default_factory=list)  # increment per sweep


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    fixed: np.ndarray   # Dirichlet mask over all unknowns
    values: np.ndarray  # Dirichlet values (zero elsewhere)
    offsets: dict

    @property
    def free(self):
        return ~self.fixed

    def reduced(self):
        free = self.free
        A = self.matrix[free]
        b = self.rhs[free] - A[:, self.fixed] @ self.values[self.fixed]
        return A[:, free].tocsc(), b

    def residual(self, x) -> float:
        """Relative residual of the reduced system at the full vector x."""
        A, b = self.reduced()
        r = A @ x[self.free] - b
        nb = np.linalg.norm(b)
        return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))


def _coo_indices(maps_r, maps_c):
    rows = np.concatenate([np.repeat(r, len(c)) for r, c in zip(maps_r, maps_c)])
    cols = np.concatenate([np.tile(c, len(r)) for r, c in zip(maps_r, maps_c)])
    return rows, cols


class Discretization:
    """Static operators of one mesh: element projectors and constant matrices."""

    def __init__(self, mesh: PolyMesh, threads: int = 1):
        self.mesh = mesh
        self.threads = max(1, int(threads))
        self.geom = entity_measures(mesh)
        self.tags = classify_boundary(mesh)
        self.layout = build_dof_layouts(mesh, self.tags)
        self.ops = build_element_operators(self.geom, self.threads)
        self.forms = self._map(local_bilinear_forms, self.ops)
        nv = mesh.n_vertices
        self.vmaps = [op.cell.velocity_dofs(nv) for op in self.ops]
        self.emaps = [op.cell.edges for op in self.ops]
        self.fmaps = [op.cell.faces for op in self.ops]
        L = self.layout
        self.n_u, self.n_p, self.n_E, self.n_B = L.n_velocity, L.n_cells, L.n_edges, L.n_faces
        self._uu = _coo_indices(self.vmaps, self.vmaps)
        self._ue = _coo_indices(self.vmaps, self.emaps)
        self._eu = _coo_indices(self.emaps, self.vmaps)
        self._ee = _coo_indices(self.emaps, self.emaps)
        self._ff = _coo_indices(self.fmaps, self.fmaps)
        self._fe = _coo_indices(self.fmaps, self.emaps)
        self.A = self._assemble(self._uu, [fm.A for fm in self.forms], self.n_u, self.n_u)
        self.M = self._assemble(self._uu, [fm.M for fm in self.forms], self.n_u, self.n_u)
        self.Medge = self._assemble(self._ee, [fm.Medge for fm in self.forms], self.n_E, self.n_E)
        self.Mface = self._assemble(self._ff, [fm.Mface for fm in self.forms], self.n_B, self.n_B)
        self.Curl = self._assemble(self._fe, [fm.Curl for fm in self.forms], self.n_B, self.n_E)
        rows = np.concatenate([np.full(len(m), c) for c, m in enumerate(self.vmaps)])
        self.Bdiv = sp.csr_matrix((np.concatenate([fm.Bdiv for fm in self.forms]),
                                   (rows, np.concatenate(self.vmaps))), shape=(self.n_p, self.n_u))
        self.curl = curl_matrix(self.geom)
        self.div_face = divergence_matrix(self.geom)
        self.volume = self.geom.cell_volume
        self._quad = mesh_cell_quadrature(self.geom, 4)
        q = self._quad
        h = self.geom.cell_diameter[q.cell]
        self._mono = np.column_stack([np.ones(len(q.weights)),
                                      (q.points - self.geom.cell_center[q.cell]) / h[:, None]])
        # load operators: cell moments -> global load vectors
        r, c, v = [], [], []
        for k, op in enumerate(self.ops):
            P = op.pi_zero.reshape(12, -1)
            r.append(np.tile(self.vmaps[k], 12))
            c.append(np.repeat(12 * k + np.arange(12), len(self.vmaps[k])))
            v.append(P.ravel())
        self._load_u = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                                     shape=(self.n_u, 12 * self.n_p))
        r, c, v = [], [], []
        for k, op in enumerate(self.ops):
            r.append(np.tile(self.emaps[k], 3))
            c.append(np.repeat(3 * k + np.arange(3), len(self.emaps[k])))
            v.append(op.pi_zero_edge.ravel())
        self._load_E = sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))),
                                     shape=(self.n_E, 3 * self.n_p))
        self.offsets = {"u": 0, "p": self.n_u, "lambda": self.n_u + self.n_p,
                        "E": self.n_u + self.n_p + 1, "B": self.n_u + self.n_p + 1 + self.n_E,
                        "end": self.n_u + self.n_p + 1 + self.n_E + self.n_B}

    def _map(self, fn, items):
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                return list(ex.map(fn, items))
        return [fn(x) for x in items]

    @staticmethod
    def _assemble(idx, blocks, n, m):
        vals = np.concatenate([b.ravel() for b in blocks])
        return sp.csr_matrix((vals, idx), shape=(n, m))

    # -- field evaluation -------------------------------------------------
    def interpolate(self, space, fn: Optional[Field], t: float):
        n = self.layout.dim(space)
        if fn is None:
            return np.zeros(n)
        return interpolate(space, lambda x: fn(x, t), self.geom)

    def velocity_load(self, f: Optional[Field], t: float):
        if f is None:
            return np.zeros(self.n_u)
        q = self._quad
        vals = f(q.points, t) * q.weights[:, None]
        mom = np.zeros((self.n_p, 3, 4))
        for i in range(3):
            for a in range(4):
                mom[:, i, a] = np.bincount(q.cell, vals[:, i] * self._mono[:, a], self.n_p)
        return self._load_u @ mom.ravel()

    def edge_load(self, g: Optional[Field], t: float):
        if g is None:
            return np.zeros(self.n_E)
        q = self._quad
        vals = g(q.points, t) * q.weights[:, None]
        ints = np.column_stack([np.bincount(q.cell, vals[:, i], self.n_p) for i in range(3)])
        return self._load_E @ ints.ravel()

    def projected_velocity(self, u):
        """(nc, 3, 4) coefficients of Pi0_1 u per cell."""
        return np.array([np.einsum("iad,d->ia", op.pi_zero, u[m]) for op, m in zip(self.ops, self.vmaps)])

    def cell_mean(self, space, x):
        if space == "velocity":
            return np.array([op.mean_velocity @ x[m] for op, m in zip(self.ops, self.vmaps)])
        if space == "edge":
            return np.array([op.pi_zero_edge @ x[m] for op, m in zip(self.ops, self.emaps)])
        if space == "face":
            return np.array([op.pi_zero_face @ x[m] for op, m in zip(self.ops, self.fmaps)])
        raise ValueError(space)

    # -- lagged blocks ----------------------------------------------------
    @cached_property
    def groups(self):
        """Cells batched by local DoF shape, with stacked operators."""
        keys = {}
        for k, (v, e, f) in enumerate(zip(self.vmaps, self.emaps, self.fmaps)):
            keys.setdefault((len(v), len(e), len(f)), []).append(k)
        groups = []
        for idx in keys.values():
            ops = [self.ops[k] for k in idx]
            groups.append((np.array(idx),
                           np.array([self.vmaps[k] for k in idx]),
                           np.array([self.fmaps[k] for k in idx]),
                           tuple(np.array([getattr(op, a) for op in ops]) for a in (
                               "pi_zero", "pi_zero_grad", "gram", "mean_velocity",
                               "pi_zero_edge", "pi_zero_face", "volume"))))
        return groups

    def lagged_blocks(self, ubar, Bbar, s: float):
        """Global advection + Lorentz blocks (uu, uE, Eu) at the lagged fields."""
        nc = len(self.ops)
        out = [[None] * nc for _ in range(3)]
        for idx, vm, fm, arrays in self.groups:
            K, Lvv, LvE, LEv = batched_lagged_forms(*arrays, ubar[vm], Bbar[fm])
            uu = K + s * Lvv
            LvE = s * LvE
            for j, k in enumerate(idx):
                out[0][k], out[1][k], out[2][k] = uu[j], LvE[j], LEv[j]
        uu = self._assemble(self._uu, out[0], self.n_u, self.n_u)
        ue = self._assemble(self._ue, out[1], self.n_u, self.n_E)
        eu = self._assemble(self._eu, out[2], self.n_E, self.n_u)
        return uu, ue, eu


def boundary_values(disc: Discretization, data: ProblemData, t: float) -> np.ndarray:
    """Full-length Dirichlet value vector (only boundary entries are used)."""
    o = disc.offsets
    vals = np.zeros(o["end"])
    L = disc.layout
    if data.u_boundary is not None:
        vals[: disc.n_u] = np.where(L.velocity_boundary, disc.interpolate("velocity", data.u_boundary, t), 0)
    if data.E_boundary is not None:
        vals[o["E"]:o["B"]] = np.where(L.edge_boundary, disc.interpolate("edge", data.E_boundary, t), 0)
    if data.B_boundary is not None:
        vals[o["B"]:] = np.where(L.face_boundary, disc.interpolate("face", data.B_boundary, t), 0)
    return vals


def fixed_mask(disc: Discretization) -> np.ndarray:
    o = disc.offsets
    m = np.zeros(o["end"], bool)
    L = disc.layout
    m[: disc.n_u] = L.velocity_boundary
    m[o["E"]:o["B"]] = L.edge_boundary
    m[o["B"]:] = L.face_boundary
    return m


def assemble_step(disc: Discretization, state_n: MhdState, lag: MhdState, dt: float,
                  params: MhdParameters, loads: tuple, bc_values: np.ndarray) -> SparseSystem:
    """Linearized implicit Euler system for the step ending at state_n.t + dt.

    ``loads`` holds the assembled (f, Pi0_1 v) and (g, Pi0 F) vectors at the
    new time level; ``bc_values`` is a full-length vector whose boundary
    entries are the Dirichlet data.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    o = disc.offsets
    if len(bc_values) != o["end"]:
        raise ValueError(f"boundary data has length {len(bc_values)}, expected {o['end']}")
    f_load, g_load = loads
    uu, ue, eu = disc.lagged_blocks(lag.u, lag.B, params.s)
    vol = sp.csr_matrix(disc.volume.reshape(-1, 1))
    K = sp.bmat([
        [disc.M / dt + disc.A / params.re + uu, disc.Bdiv.T, None, ue, None],
        [disc.Bdiv, None, vol, None, None],
        [None, vol.T, None, None, None],
        [eu, None, None, disc.Medge, -disc.Curl.T / params.rem],
        [None, None, None, disc.Curl, disc.Mface / dt],
    ], format="csr")
    rhs = np.concatenate([disc.M @ state_n.u / dt + f_load, np.zeros(disc.n_p + 1), g_load,
                          disc.Mface @ state_n.B / dt])
    fixed = fixed_mask(disc)
    return SparseSystem(K, rhs, fixed, np.where(fixed, bc_values, 0.0), dict(o))


def solve_system(system: SparseSystem, step: int | None = None) -> np.ndarray:
    A, b = system.reduced()
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SolverError(f"singular factorization at step {step}: {exc}") from exc
    x = system.values.copy()
    x[system.free] = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SolverError(f"non-finite solution at step {step}")
    return x


def unpack(disc: Discretization, x: np.ndarray, t: float) -> MhdState:
    o = disc.offsets
    return MhdState(t, x[: disc.n_u].copy(), x[o["p"]:o["lambda"]].copy(),
                    x[o["E"]:o["B"]].copy(), x[o["B"]:].copy())


def _norms(disc, u, B, rem):
    return float(u @ (disc.M @ u)) + float(B @ (disc.Mface @ B)) / rem


def solve_time_step(disc: Discretization, state_n: MhdState, dt: float, params: MhdParameters,
                    data: ProblemData, picard: PicardConfig = PicardConfig(), step: int = 0,
                    t: float | None = None):
    """One implicit Euler step with Picard iteration; returns (state, report).

    Iterate k is solved with the blocks lagged at iterate k - 1 (iterate 0 is
    state_n).  Sweeps stop when the relative increment in the combined
    (m_h, face) norm of (u, B) drops below ``picard.tol``, or earlier if the
    new iterate already solves the system reassembled at itself to roundoff
    (then further sweeps cannot move it, e.g. for a linear problem).
    """
    t = state_n.t + dt if t is None else t
    loads = (disc.velocity_load(data.f, t), disc.edge_load(data.g, t))
    bc = boundary_values(disc, data, t)
    system = assemble_step(disc, state_n, state_n, dt, params, loads, bc)
    prev = state_n
    history = []
    for k in range(1, picard.max_iter + 1):
        x = solve_system(system, step)
        new = unpack(disc, x, t)
        scale = _norms(disc, new.u, new.B, params.rem)
        diff = _norms(disc, new.u - prev.u, new.B - prev.B, params.rem)
        increment = float(np.sqrt(diff / scale)) if scale > 0 else float(np.sqrt(diff))
        system = assemble_step(disc, state_n, new, dt, params, loads, bc)
        res = system.residual(x)
        history.append(increment)
        log.debug("step %d picard %d increment %.3e residual %.3e", step, k, increment, res)
        if increment <= picard.tol or res <= FIXED_POINT_RESIDUAL:
            d = diagnostics(disc, new, params)
            return new, StepReport(step, t, k, increment, res, d["div_u"], d["div_B"],
                                   d["energy"], history)
        prev = new
    raise PicardDivergence(f"Picard iteration did not converge at step {step} (t={t:.6g}); "
                           f"increments {['%.2e' % r for r in history]}", history)


def diagnostics(disc: Discretization, state: MhdState, params: MhdParameters = MhdParameters()) -> dict:
    div_u = disc.div_face @ state.u[3 * disc.mesh.n_vertices:]
    div_B = disc.div_face @ state.B
    vol = disc.volume
    return {
        "div_u": float(np.sqrt(np.sum(vol * div_u ** 2))),
        "div_B": float(np.sqrt(np.sum(vol * div_B ** 2))),
        "energy": _norms(disc, state.u, state.B, params.rem),
    }


def initial_state(disc: Discretization, data: ProblemData, t0: float = 0.0) -> MhdState:
    return MhdState(t0, disc.interpolate("velocity", data.u0, t0), np.zeros(disc.n_p),
                    disc.interpolate("edge", data.E0, t0), disc.interpolate("face", data.B0, t0))


def step_count(T: float, dt: float) -> int:
    if not dt > 0 or not T > 0:
        raise ValueError("T and dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ValueError(f"T = {T} is not an integer multiple of dt = {dt}")
    return n


def run_transient(disc: Discretization, params: MhdParameters, data: ProblemData, dt: float, T: float,
                  picard: PicardConfig = PicardConfig(), state0: MhdState | None = None,
                  callback=None):
    """March from t = 0 (or state0.t) to T; returns (final state, reports)."""
    n = step_count(T, dt)
    state = initial_state(disc, data) if state0 is None else state0
    t0 = state.t
    reports = []
    for k in range(1, n + 1):
        t = t0 + k * dt
        try:
            state, rep = solve_time_step(disc, state, dt, params, data, picard, step=k, t=t)
        except PicardDivergence as exc:
            raise PicardDivergence(f"{exc} [t = {t:.6g}]", exc.history) from exc
        except SolverError as exc:
            raise SolverError(f"{exc} [t = {t:.6g}]") from exc
        reports.append(rep)
        log.info("step %d t=%.4f picard=%d div_u=%.2e div_B=%.2e energy=%.6e", k, t,
                 rep.picard_iterations, rep.div_u, rep.div_B, rep.energy)
        if callback is not None:
            callback(state, rep)
    return state, reports


STEP_FIELDS = ("step", "t", "picard_iters", "increment", "div_u", "div_B", "energy")


def write_step_csv(reports, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(STEP_FIELDS)
    for r in reports:
        w.writerow([r.step, repr(float(r.t)), r.picard_iterations, f"{r.final_increment:.6e}",
                    f"{r.div_u:.6e}", f"{r.div_B:.6e}", f"{r.energy:.12e}"])
