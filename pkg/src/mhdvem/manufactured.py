"""Manufactured MHD solution on the unit cube, error measures and rate studies.

Sources are frozen closed forms; tests cross-check them against symbolic
differentiation.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .mesh import build_cube_mesh, build_tet_mesh, load_mesh
from .mhd import Discretization, MhdParameters, PicardConfig, ProblemData, run_transient

log = logging.getLogger(__name__)

PI = np.pi


def _xyz(x):
    x = np.asarray(x, float)
    return x[..., 0], x[..., 1], x[..., 2]


def _trig(x):
    X, Y, Z = _xyz(x)
    return (np.sin(PI * X), np.cos(PI * X), np.sin(PI * Y), np.cos(PI * Y),
            np.sin(PI * Z), np.cos(PI * Z))


def velocity_profile(x):
    """Time-independent part U of u = cos(t) U."""
    sx, cx, sy, cy, sz, cz = _trig(x)
    return np.stack([sx * cy * cz, cx * sy * cz, -2 * cx * cy * sz], axis=-1)


def velocity_gradient_profile(x):
    """G[..., i, j] = d U_i / d x_j."""
    sx, cx, sy, cy, sz, cz = _trig(x)
    g = np.empty(np.shape(sx) + (3, 3))
    g[..., 0, :] = np.stack([cx * cy * cz, -sx * sy * cz, -sx * cy * sz], -1)
    g[..., 1, :] = np.stack([-sx * sy * cz, cx * cy * cz, -cx * sy * sz], -1)
    g[..., 2, :] = np.stack([2 * sx * cy * sz, 2 * cx * sy * sz, -2 * cx * cy * cz], -1)
    return PI * g


def velocity(x, t):
    return math.cos(t) * velocity_profile(x)


def pressure(x, t):
    X, Y, Z = _xyz(x)
    return (X ** 2 + Y * Z + Z - 13.0 / 12.0) * math.cos(t)


def magnetic(x, t):
    X, Y, Z = _xyz(x)
    return np.stack([4 * Y ** 3 - 4 * Z ** 3 - t * (24 * Y - 24 * Z),
                     -3 * X ** 2 + 6 * t + 0 * X,
                     -3 * Y ** 2 + 6 * t + 0 * X], axis=-1)


def electric(x, t):
    X, Y, Z = _xyz(x)
    return np.stack([6 * Y + 0 * X,
                     12 * Z ** 2 - 24 * t + 0 * X,
                     12 * Y ** 2 - 24 * t + 6 * X], axis=-1)


def curl_magnetic(x, t):
    X, Y, Z = _xyz(x)
    return np.stack([-6 * Y + 0 * X, -12 * Z ** 2 + 24 * t + 0 * X,
                     -6 * X - 12 * Y ** 2 + 24 * t], axis=-1)


def exact_fields(x, t):
    """(u, p, E, B) at points x of shape (..., 3)."""
    return velocity(x, t), pressure(x, t), electric(x, t), magnetic(x, t)


def current(x, t):
    return electric(x, t) + np.cross(velocity(x, t), magnetic(x, t))


def momentum_source(x, t, params: MhdParameters = MhdParameters()):
    U = velocity_profile(x)
    G = velocity_gradient_profile(x)
    X, Y, Z = _xyz(x)
    c = math.cos(t)
    conv = c * c * np.einsum("...ij,...j->...i", G, U)
    lap = -3 * PI ** 2 * c * U
    grad_p = c * np.stack([2 * X, Z, Y + 1], axis=-1)
    jxb = np.cross(current(x, t), magnetic(x, t))
    return -math.sin(t) * U + conv - lap / params.re - params.s * jxb + grad_p


def ohm_source(x, t, params: MhdParameters = MhdParameters()):
    return current(x, t) - curl_magnetic(x, t) / params.rem


def source_terms(x, t, params: MhdParameters = MhdParameters()):
    """(f, g) such that the exact fields solve the forced system."""
    return momentum_source(x, t, params), ohm_source(x, t, params)


@dataclass(frozen=True)
class ManufacturedSolution:
    params: MhdParameters = MhdParameters()

    def problem_data(self) -> ProblemData:
        p = self.params
        return ProblemData(
            f=lambda x, t: momentum_source(x, t, p),
            g=lambda x, t: ohm_source(x, t, p),
            u_boundary=velocity, E_boundary=electric, B_boundary=magnetic,
            u0=velocity, E0=electric, B0=magnetic,
        )


def problem_data(params: MhdParameters = MhdParameters()) -> ProblemData:
    return ManufacturedSolution(params).problem_data()


def error_norms(disc: Discretization, state, t: float) -> dict:
    """Relative L2 errors of Pi0_1 u_h, Pi0 E_h, Pi0 B_h and p_h at time t."""
    q = disc._quad
    w = q.weights
    mono = disc._mono
    u, p, E, B = exact_fields(q.points, t)
    coef = disc.projected_velocity(state.u)                   # (nc, 3, 4)
    uh = np.einsum("qia,qa->qi", coef[q.cell], mono)
    Eh = disc.cell_mean("edge", state.E)[q.cell]
    Bh = disc.cell_mean("face", state.B)[q.cell]
    ph = np.asarray(state.p)[q.cell]

    def rel(exact, approx):
        d = np.sum(w * np.sum(np.reshape((exact - approx) ** 2, (len(w), -1)), axis=1))
        n = np.sum(w * np.sum(np.reshape(exact ** 2, (len(w), -1)), axis=1))
        return float(np.sqrt(d / n)) if n > 0 else float(np.sqrt(d))

    return {"u": rel(u, uh), "E": rel(E, Eh), "B": rel(B, Bh), "p": rel(p, ph)}


def build_mesh(spec: str):
    """'cube:n', 'tet:n' or 'file:path'."""
    family, _, arg = spec.partition(":")
    if family == "cube":
        return build_cube_mesh(int(arg))
    if family == "tet":
        return build_tet_mesh(int(arg))
    if family == "file":
        return load_mesh(arg)
    raise ValueError(f"unknown mesh family {family!r} (expected cube, tet or file)")


@dataclass
class LevelResult:
    family: str
    level: int
    h: float
    dt: float
    errors: dict
    div_u: float
    div_B: float
    max_picard: int


def run_level(mesh, dt: float, T: float = 1.0, params: MhdParameters = MhdParameters(),
              picard: PicardConfig = PicardConfig(), threads: int = 1, family="", level=0):
    disc = Discretization(mesh, threads)
    data = problem_data(params)
    state, reports = run_transient(disc, params, data, dt, T, picard)
    err = error_norms(disc, state, T)
    res = LevelResult(family, level, float(disc.geom.cell_diameter.max()), dt, err,
                      max(r.div_u for r in reports), max(r.div_B for r in reports),
                      max(r.picard_iterations for r in reports))
    log.info("%s level %d h=%.4g dt=%.4g errors %s", family, level, res.h, dt, err)
    return res, reports


def convergence_rates(results) -> dict:
    """log2 error ratios between consecutive levels, per field."""
    rates = {}
    for k in ("u", "E", "B", "p"):
        rates[k] = [math.log(a.errors[k] / b.errors[k]) / math.log(a.h / b.h)
                    for a, b in zip(results[:-1], results[1:])]
    return rates


def convergence_study(family: str, levels, dts, T: float = 1.0,
                      params: MhdParameters = MhdParameters(),
                      picard: PicardConfig = PicardConfig(), threads: int = 1):
    """Run one manufactured solve per level; returns (results, rates)."""
    levels = list(levels)
    dts = list(dts)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two levels")
    if len(dts) != len(levels):
        raise ValueError("need one time step per level")
    results = []
    for n, dt in zip(levels, dts):
        res, _ = run_level(build_mesh(f"{family}:{n}"), dt, T, params, picard, threads, family, n)
        results.append(res)
    return results, convergence_rates(results)


CONVERGENCE_FIELDS = ("family", "level", "h", "dt", "err_u", "err_E", "err_B", "err_p", "div_u", "div_B")


def write_convergence_csv(results, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CONVERGENCE_FIELDS)
    for r in results:
        w.writerow([r.family, r.level, f"{r.h:.12e}", repr(float(r.dt))]
                   + [f"{r.errors[k]:.12e}" for k in ("u", "E", "B", "p")]
                   + [f"{r.div_u:.6e}", f"{r.div_B:.6e}"])
