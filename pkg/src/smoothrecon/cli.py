"""
Command-line driver: ``reconstruct``, ``metrics`` and ``synth``.

Settings for ``reconstruct`` come from, in increasing priority, the
defaults of :class:`ReconConfig`, an optional ``key = value`` file given
with ``--config`` and the command-line flags. The effective configuration is
echoed to the log in the same ``key = value`` form, so a log can be turned
back into a config file.

Logs go to stderr and tables to stdout. Failures exit with a one-line
diagnostic and a status that identifies the class of error.
"""

from __future__ import annotations

import argparse
import logging
import math
import re
import sys
import time
from dataclasses import fields, replace

from . import synthetic
from .metrics import format_table, format_tsv, report
from .pipeline import ReconConfig, reconstruct
from .pointcloud_io import FormatError, load_mesh, load_samples, save_mesh, save_samples
from .solver import SolverError

log = logging.getLogger("smoothrecon")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SOLVER = 4
EXIT_INTERNAL = 1


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config files

_ALIASES = {"lambda": "lam", "narrow_band_radius": "narrow_band", "margin_cells": "margin",
            "energy_model": "energy", "smoothing_passes": "passes"}
_FIELDS = {f.name: f for f in fields(ReconConfig)}


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_vector(text, n=3):
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_grid(text):
    parts = [p for p in re.split(r"[,x\s]+", str(text).strip()) if p]
    if len(parts) == 1:
        return int(parts[0])
    if len(parts) == 3:
        return tuple(int(p) for p in parts)
    raise ValueError(f"grid must be N or NX,NY,NZ, got {text!r}")


def _optional(parse):
    def inner(text):
        if str(text).strip().lower() in ("none", ""):
            return None
        return parse(text)
    return inner


_PARSERS = {
    "input": _optional(str), "output": _optional(str),
    "grid": _parse_grid, "energy": int, "lam": float, "levels": int, "tol": float,
    "max_sweeps": int, "clamp": _parse_bool, "narrow_band": _optional(float),
    "passes": int, "margin": int, "normalize_normals": _parse_bool,
    "const_normal": _optional(_parse_vector), "verbose": _parse_bool, "seed": int,
    "input_format": _optional(str), "output_format": _optional(str),
    "tv_eps": float, "tv_max_outer": int,
}


def canonical_key(key):
    k = key.strip().lower().replace("-", "_")
    return _ALIASES.get(k, k)


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` lines into a dict of ReconConfig fields."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        k = canonical_key(key)
        if k not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[k] = _PARSERS[k](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    return out


def load_config_file(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: config file not found") from None
    return parse_config_text(text, str(path))


def validate_config(cfg):
    if cfg.energy not in (1, 2, 3, 4):
        raise ConfigError(f"energy must be 1, 2, 3 or 4, got {cfg.energy}")
    grid = (cfg.grid,) * 3 if isinstance(cfg.grid, int) else tuple(cfg.grid)
    if any(g < 8 for g in grid):
        raise ConfigError(f"grid must be at least 8 per axis, got {cfg.grid}")
    if not (cfg.lam > 0 and math.isfinite(cfg.lam)):
        raise ConfigError(f"lambda must be positive, got {cfg.lam}")
    if cfg.levels < 1:
        raise ConfigError("levels must be >= 1")
    if not cfg.tol > 0:
        raise ConfigError("tol must be positive")
    if cfg.max_sweeps < 1:
        raise ConfigError("max_sweeps must be >= 1")
    if cfg.narrow_band is not None and not cfg.narrow_band > 0:
        raise ConfigError("narrow band radius must be positive")
    if cfg.passes < 1:
        raise ConfigError("passes must be >= 1")
    if cfg.margin < 0:
        raise ConfigError("margin must be >= 0")
    if cfg.const_normal is not None and not any(cfg.const_normal):
        raise ConfigError("constant normal must be nonzero")
    return cfg


def effective_config(args):
    """Defaults, then the config file, then explicit flags."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for name in _FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        cfg = replace(ReconConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# argument parsing

def _argtype(parse, what):
    def inner(text):
        try:
            return parse(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {what}: {text!r}") from None
    return inner


def _add_reconstruct(sub):
    p = sub.add_parser("reconstruct", help="oriented points to a triangle mesh",
                       description="Reconstruct a watertight mesh from an oriented point set.")
    # every default is None so that unset flags do not override the config file
    p.add_argument("--config", metavar="FILE", help="key = value settings file")
    p.add_argument("--input", "-i", help="point file (.ply, .xyz, .obj)")
    p.add_argument("--output", "-o", help="mesh file (.ply or .obj)")
    p.add_argument("--input-format", dest="input_format", choices=("ply", "xyz", "obj"))
    p.add_argument("--output-format", dest="output_format", choices=("ply", "obj"))
    p.add_argument("--grid", type=_argtype(_parse_grid, "grid"),
                   help="finest resolution, N or NX,NY,NZ (default 64)")
    p.add_argument("--energy", type=int, choices=(1, 2, 3, 4),
                   help="1 membrane, 2 total variation, 3 second order, "
                        "4 second order with mixed terms (default 4)")
    p.add_argument("--lambda", dest="lam", type=float, help="smoothness weight (default 0.2)")
    p.add_argument("--levels", type=int, help="multi-scale levels (default 3)")
    p.add_argument("--tol", type=float, help="stop when the max update is below this (1e-6)")
    p.add_argument("--max-sweeps", dest="max_sweeps", type=int, help="per level (default 2000)")
    p.add_argument("--clamp", dest="clamp", action="store_true", default=None,
                   help="project onto [-1, 1] (default)")
    p.add_argument("--no-clamp", dest="clamp", action="store_false")
    p.add_argument("--narrow-band", dest="narrow_band", type=float, metavar="R",
                   help="only update vertices within R cells of a sample")
    p.add_argument("--passes", type=int, help="box filter passes (default 3)")
    p.add_argument("--margin", type=int, help="empty cells around the data (default 6)")
    p.add_argument("--const-normal", dest="const_normal", metavar="X,Y,Z",
                   type=_argtype(_parse_vector, "vector"),
                   help="replace every normal by this direction")
    p.add_argument("--normalize-normals", dest="normalize_normals", action="store_true",
                   default=None)
    p.add_argument("--tv-eps", dest="tv_eps", type=float)
    p.add_argument("--tv-max-outer", dest="tv_max_outer", type=int)
    p.add_argument("--verbose", "-v", action="store_true", default=None,
                   help="log every sweep")
    p.add_argument("--seed", type=int)
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    p.set_defaults(func=cmd_reconstruct)


def _add_metrics(sub):
    p = sub.add_parser("metrics", help="distance and curvature table for a mesh",
                       description="RMS point-to-mesh distance and curvature statistics.")
    p.add_argument("points", help="point file the mesh was built from")
    p.add_argument("mesh", help="mesh file")
    p.add_argument("--label", default=None, help="row label (default: mesh file name)")
    p.add_argument("--format", choices=("text", "tsv"), default="text")
    p.add_argument("--units", default=None, help="length unit noted under the table")
    p.set_defaults(func=cmd_metrics)


def _add_synth(sub):
    p = sub.add_parser("synth", help="write a synthetic oriented point set",
                       description="Sample a primitive and optionally corrupt it.")
    p.add_argument("--output", "-o", required=True)
    p.add_argument("--format", choices=("ply", "xyz", "obj"), default=None)
    p.add_argument("--ascii", action="store_true", help="write ASCII PLY")
    p.add_argument("--shape", default="sphere",
                   choices=("sphere", "cylinder", "box", "torus", "bumpy", "scene"))
    p.add_argument("--r", type=float, default=1.0, help="radius (minor radius for torus)")
    p.add_argument("--R", type=float, default=None, help="torus major radius (default 2.5 r)")
    p.add_argument("--h", type=float, default=2.0, help="cylinder height")
    p.add_argument("--size", type=_argtype(_parse_vector, "size"), default=(1.0, 1.0, 1.0),
                   metavar="A,B,C", help="box edge lengths")
    p.add_argument("--amplitude", type=float, default=0.1, help="bumpy sphere relief")
    p.add_argument("--frequency", type=float, default=6.0, help="bumpy sphere frequency")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian sigma, world units")
    p.add_argument("--outliers", type=float, default=0.0, help="fraction in [0, 1]")
    p.add_argument("--holes", action="append", default=[], type=_argtype(parse_hole, "hole"),
                   metavar="SPEC", help="cap:+z:30deg or ball:x,y,z:r (repeatable)")
    p.add_argument("--density-split", dest="density_split", default=None,
                   type=_argtype(parse_density_split, "density split"), metavar="AXIS=OFF:KEEP",
                   help="keep only KEEP of the points with AXIS > OFF, e.g. x=0:0.02")
    p.add_argument("--orient", default=None, type=_argtype(parse_orient, "orientation"),
                   metavar="MODE", help="constant:X,Y,Z | halfspace:X,Y,Z:X,Y,Z | view:X,Y,Z")
    p.set_defaults(func=cmd_synth)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smoothrecon",
        description="Smooth implicit surface reconstruction from oriented points.")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_reconstruct(sub)
    _add_metrics(sub)
    _add_synth(sub)
    return parser


# ---------------------------------------------------------------------------
# synth option parsing

_AXES = {"x": (1.0, 0.0, 0.0), "y": (0.0, 1.0, 0.0), "z": (0.0, 0.0, 1.0)}


def _parse_direction(text):
    t = text.strip().lower()
    m = re.fullmatch(r"([+-]?)([xyz])", t)
    if m:
        sign = -1.0 if m.group(1) == "-" else 1.0
        return tuple(sign * c for c in _AXES[m.group(2)])
    return _parse_vector(t)


def _parse_angle(text):
    t = text.strip().lower()
    if t.endswith("deg"):
        return math.radians(float(t[:-3]))
    if t.endswith("rad"):
        return float(t[:-3])
    return math.radians(float(t))


def parse_hole(text):
    """``cap:DIR:ANGLE`` (angular radius around a direction) or
    ``ball:X,Y,Z:R`` (world-space ball)."""
    kind, _, rest = text.partition(":")
    where, _, size = rest.rpartition(":")
    if not where or not size:
        raise ValueError(text)
    if kind == "cap":
        angle = _parse_angle(size)
        if not 0 < angle < math.pi:
            raise ValueError(text)
        return synthetic.Hole(_parse_direction(where), angle, angular=True)
    if kind == "ball":
        return synthetic.Hole(_parse_vector(where), float(size), angular=False)
    raise ValueError(text)


def parse_density_split(text):
    """``AXIS=OFFSET:KEEP``, AXIS one of x, y, z or a vector ``a,b,c``."""
    lhs, _, keep = text.rpartition(":")
    axis, _, offset = lhs.partition("=")
    if not axis or not offset:
        raise ValueError(text)
    normal = _parse_direction(axis)
    k = float(keep)
    if not 0 <= k <= 1:
        raise ValueError(text)
    return synthetic.DensitySplit(normal, float(offset), k)


def parse_orient(text):
    mode, _, rest = text.partition(":")
    mode = mode.strip().lower()
    if mode == "constant":
        return ("constant", _parse_direction(rest))
    if mode in ("halfspace", "half_space"):
        a, _, b = rest.partition(":")
        return ("half_space", _parse_direction(a), _parse_direction(b))
    if mode == "view":
        return ("view", _parse_vector(rest))
    raise ValueError(text)


def _shape(args):
    if args.shape == "sphere":
        return synthetic.Sphere(args.r)
    if args.shape == "cylinder":
        return synthetic.Cylinder(args.r, args.h)
    if args.shape == "box":
        return synthetic.Box(*args.size)
    if args.shape == "torus":
        return synthetic.Torus(args.R if args.R is not None else 2.5 * args.r, args.r)
    if args.shape == "bumpy":
        return synthetic.BumpySphere(args.r, args.amplitude, args.frequency)
    return synthetic.primitive_scene()


# ---------------------------------------------------------------------------
# commands

def cmd_reconstruct(args):
    cfg = effective_config(args)
    if cfg.input is None:
        raise ConfigError("no input file (use --input or 'input =' in the config)")
    if cfg.output is None:
        raise ConfigError("no output file (use --output or 'output =' in the config)")
    if cfg.verbose:
        logging.getLogger("smoothrecon").setLevel(logging.DEBUG)
    log.info("effective configuration:\n%s", cfg.echo())

    start = time.perf_counter()
    samples = load_samples(cfg.input, cfg.input_format, cfg.const_normal,
                           cfg.normalize_normals)
    log.info("loaded %d samples from %s", len(samples), cfg.input)
    mesh, info = reconstruct(samples, cfg)
    save_mesh(mesh, cfg.output, cfg.output_format, binary=not args.ascii)
    log.info("gamma=%.10g", info.gamma)
    log.info("triangles=%d vertices=%d", mesh.n_triangles, mesh.n_vertices)
    log.info("wrote %s", cfg.output)
    log.info("wall_time=%.3fs", time.perf_counter() - start)
    return EXIT_OK


def cmd_metrics(args):
    samples = load_samples(args.points)
    mesh = load_mesh(args.mesh)
    label = args.label if args.label is not None else args.mesh
    table = report([(label, mesh, samples)])
    if args.format == "tsv":
        print(format_tsv(table))
    else:
        print(format_table(table, args.units))
    return EXIT_OK


def cmd_synth(args):
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    if not 0 <= args.outliers <= 1:
        raise ConfigError("--outliers must be in [0, 1]")
    if args.noise < 0:
        raise ConfigError("--noise must be nonnegative")
    try:
        shape = _shape(args)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    samples = synthetic.sample_primitive(shape, args.n, args.seed)
    samples = synthetic.corrupt(samples, noise_sigma=args.noise, outlier_fraction=args.outliers,
                                holes=tuple(args.holes), density_split=args.density_split,
                                seed=args.seed + 1)
    if args.orient is not None:
        mode, *params = args.orient
        samples = synthetic.coarsen_orientation(samples, mode, *params)
    save_samples(samples, args.output, args.format, binary=not args.ascii)
    log.info("wrote %d samples to %s", len(samples), args.output)
    return EXIT_OK


def _classify(exc):
    if isinstance(exc, ConfigError):
        return EXIT_USAGE, "config error"
    if isinstance(exc, FormatError):
        return EXIT_IO, "parse error"
    if isinstance(exc, OSError):
        return EXIT_IO, "I/O error"
    if isinstance(exc, SolverError):
        return EXIT_SOLVER, "solver error"
    if isinstance(exc, ValueError):
        return EXIT_USAGE, "invalid input"
    return EXIT_INTERNAL, "internal error"


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return exc.code
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("smoothrecon")
    saved = root.handlers[:], root.level, root.propagate
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO)
    root.propagate = False
    try:
        return args.func(args)
    except Exception as exc:  # one line per failure class
        status, what = _classify(exc)
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"smoothrecon: {what}: {msg}", file=sys.stderr)
        return status
    finally:
        # leave logging as we found it, main() may run in-process
        handler.flush()
        root.handlers[:], level, root.propagate = saved
        root.setLevel(level)


if __name__ == "__main__":
    sys.exit(main())
