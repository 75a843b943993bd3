"""Command line entry point: ``mhdvem run | convergence | mesh-info``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass

from .mesh import MeshError, PolyMesh, validate

log = logging.getLogger("mhdvem")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MESH = 4
EXIT_SOLVER = 5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mesh: str = "cube:2"
    T: float = 1.0
    dt: float = 0.25
    re: float = 1.0
    rem: float = 1.0
    hartmann: float = 1.0
    picard_tol: float = 1e-8
    picard_max: int = 20
    levels: tuple = ()
    out: str | None = None
    threads: int = 1
    manufactured: bool = False

    def check(self, need_time=True):
        for name in ("re", "rem", "hartmann"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive (got {getattr(self, name)})")
        if need_time:
            if not self.dt > 0:
                raise ConfigError(f"dt must be positive (got {self.dt})")
            if not self.T > 0:
                raise ConfigError(f"T must be positive (got {self.T})")
            if self.dt > self.T:
                raise ConfigError(f"dt = {self.dt} exceeds T = {self.T}")
        if not self.picard_tol > 0:
            raise ConfigError("picard_tol must be positive")
        if self.picard_max < 1:
            raise ConfigError("picard_max must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        return self


_CASTS = {"mesh": str, "T": float, "dt": float, "re": float, "rem": float, "hartmann": float,
          "picard_tol": float, "picard_max": int, "out": str, "threads": int}


def _parse_levels(text):
    try:
        return tuple(int(v) for v in str(text).replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"levels must be a list of integers (got {text!r})") from None


def _parse_bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"manufactured must be a boolean (got {text!r})")


def read_config_file(path) -> dict:
    """``key = value`` lines; '#' starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            out[key] = value.strip()
    return out


def build_config(values: dict) -> RunConfig:
    kw = {}
    for key, value in values.items():
        if value is None:
            continue
        if key == "levels":
            kw[key] = _parse_levels(value) if not isinstance(value, tuple) else value
        elif key == "manufactured":
            kw[key] = value if isinstance(value, bool) else _parse_bool(value)
        elif key in _CASTS:
            try:
                kw[key] = _CASTS[key](value)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {value!r}") from None
        else:
            raise ConfigError(f"unknown configuration key {key!r}")
    return RunConfig(**kw)


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mesh", help="cube:n, tet:n or file:path")
    common.add_argument("--dt", type=float)
    common.add_argument("--T", type=float)
    common.add_argument("--re", type=float)
    common.add_argument("--rem", type=float)
    common.add_argument("--hartmann", type=float)
    common.add_argument("--picard-tol", dest="picard_tol", type=float)
    common.add_argument("--picard-max", dest="picard_max", type=int)
    common.add_argument("--levels", help="comma separated refinement levels")
    common.add_argument("--out", help="CSV output path")
    common.add_argument("--threads", type=int)
    common.add_argument("--manufactured", action="store_true", default=None)
    common.add_argument("--config", help="key = value file; flags override it")

    p = argparse.ArgumentParser(prog="mhdvem", description="Virtual element solver for resistive MHD.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="single transient run")
    sub.add_parser("convergence", parents=[common], help="manufactured refinement study")
    mi = sub.add_parser("mesh-info", parents=[common], help="mesh counts and quality")
    mi.add_argument("target", nargs="?", help="cube:n, tet:n, file:path or a path")
    return p


def _config_from_args(args) -> RunConfig:
    values = {}
    if args.config:
        values.update(read_config_file(args.config))
    for key in list(_CASTS) + ["levels", "manufactured"]:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return build_config(values)


def load_mesh_spec(spec: str) -> PolyMesh:
    from .manufactured import build_mesh
    if ":" not in spec and spec not in ("cube", "tet"):
        spec = "file:" + spec
    try:
        return build_mesh(spec)
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise ConfigError(str(exc)) from None


def _check_mesh(mesh):
    report = validate(mesh)
    if not report.ok:
        raise MeshError("mesh validation failed:\n" + report.summary())
    return report


def _open_out(path):
    return open(path, "w", encoding="utf-8", newline="") if path else None


def cmd_run(cfg: RunConfig) -> int:
    from .manufactured import error_norms, problem_data
    from .mhd import Discretization, MhdParameters, PicardConfig, run_transient, step_count, write_step_csv

    cfg.check()
    if not cfg.manufactured:
        raise ConfigError("no problem selected: pass --manufactured")
    try:
        step_count(cfg.T, cfg.dt)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    params = MhdParameters(cfg.re, cfg.rem, cfg.hartmann)
    mesh = load_mesh_spec(cfg.mesh)
    _check_mesh(mesh)
    disc = Discretization(mesh, cfg.threads)
    state, reports = run_transient(disc, params, problem_data(params), cfg.dt, cfg.T,
                                   PicardConfig(cfg.picard_tol, cfg.picard_max))
    fh = _open_out(cfg.out)
    write_step_csv(reports, fh or sys.stdout)
    if fh:
        fh.close()
    info = sys.stdout if fh else sys.stderr
    err = error_norms(disc, state, state.t)
    print(f"steps {len(reports)}  t = {state.t:.6g}  max picard {max(r.picard_iterations for r in reports)}",
          file=info)
    print(f"div_u {max(r.div_u for r in reports):.3e}  div_B {max(r.div_B for r in reports):.3e}", file=info)
    print("relative errors  " + "  ".join(f"{k} {v:.6e}" for k, v in err.items()), file=info)
    return EXIT_OK


def cmd_convergence(cfg: RunConfig) -> int:
    from .manufactured import convergence_study, write_convergence_csv
    from .mhd import MhdParameters, PicardConfig

    cfg.check()
    levels = cfg.levels or (2, 4)
    if len(levels) < 2:
        raise ConfigError("levels: at least two refinement levels are required")
    family = cfg.mesh.partition(":")[0]
    if family not in ("cube", "tet"):
        raise ConfigError(f"mesh: convergence studies need the cube or tet family, not {family!r}")
    dts = [cfg.dt * levels[0] / n for n in levels]
    params = MhdParameters(cfg.re, cfg.rem, cfg.hartmann)
    results, rates = convergence_study(family, levels, dts, cfg.T, params,
                                       PicardConfig(cfg.picard_tol, cfg.picard_max), cfg.threads)
    fh = _open_out(cfg.out)
    write_convergence_csv(results, fh or sys.stdout)
    if fh:
        fh.close()
    info = sys.stdout if fh else sys.stderr
    for i, (a, b) in enumerate(zip(results[:-1], results[1:])):
        print(f"rate {a.level}->{b.level}  " + "  ".join(f"{k} {rates[k][i]:.3f}" for k in rates), file=info)
    return EXIT_OK


def cmd_mesh_info(cfg: RunConfig, target) -> int:
    from .geometry import entity_measures

    mesh = load_mesh_spec(target or cfg.mesh)
    nv, ne, nf, nc = mesh.counts()
    print(f"vertices {nv}\nedges {ne}\nfaces {nf}\ncells {nc}")
    report = validate(mesh)
    if report.ok:
        geom = entity_measures(mesh)
        print(f"h {geom.cell_diameter.max():.12g}")
        print(f"min face/cell diameter ratio {report.min_face_cell_ratio.min():.6g}")
        print(f"min edge/face diameter ratio {report.min_edge_face_ratio.min():.6g}")
        print(f"max planarity defect {report.max_planarity:.3e}")
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_MESH


def _setup_logging():
    level = os.environ.get("MHDVEM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    from .mhd import SolverError

    _setup_logging()
    args = _parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "convergence":
            return cmd_convergence(cfg)
        return cmd_mesh_info(cfg, args.target)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshError as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_MESH
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SolverError, ArithmeticError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
