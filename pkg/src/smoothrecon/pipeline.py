"""End-to-end reconstruction: oriented samples in, triangle mesh out."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .meshing import marching_cubes, select_isovalue
from .pointcloud_io import DEFAULT_MARGIN, fit_domain, to_grid
from .solver import EnergyModel, SolverParams, multiscale_solve
from .vector_field import DEFAULT_PASSES, build_divergence
from .volume import interpolate

log = logging.getLogger(__name__)


@dataclass
class ReconConfig:
    """Every knob of a reconstruction run, with its default."""

    input: str | None = None
    output: str | None = None
    grid: int | tuple = 64
    energy: int = 4
    lam: float = 0.2
    levels: int = 3
    tol: float = 1e-6
    max_sweeps: int = 2000
    clamp: bool = True
    narrow_band: float | None = None
    passes: int = DEFAULT_PASSES
    margin: int = DEFAULT_MARGIN
    normalize_normals: bool = False
    const_normal: tuple | None = None
    verbose: bool = False
    seed: int = 0
    input_format: str | None = None
    output_format: str | None = None
    tv_eps: float = 1e-4
    tv_max_outer: int = 30

    def solver_params(self):
        return SolverParams(lam=self.lam, tol=self.tol, max_sweeps=self.max_sweeps,
                            clamp=self.clamp, levels=self.levels,
                            narrow_band_radius=self.narrow_band, tv_eps=self.tv_eps,
                            tv_max_outer=self.tv_max_outer, verbose=self.verbose)

    def echo(self):
        """``key = value`` lines that can be fed back as a config file."""
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(c) for c in v)
            out.append(f"{f.name} = {v}")
        return "\n".join(out)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class ReconInfo:
    transform: object
    gamma: float
    flipped: bool
    levels: list
    seconds: float
    field: np.ndarray = field(repr=False, default=None)

    def summary(self):
        d = asdict(self)
        d.pop("field")
        return d


def orientation_sign(f, samples, step=1.0):
    """+1 if ``f`` is larger behind the samples (against their normals) than
    in front of them, else -1."""
    n = samples.normals
    length = np.linalg.norm(n, axis=1, keepdims=True)
    u = n / np.where(length > 0, length, 1.0)
    hi = np.array(f.shape) - 1
    behind = np.clip(samples.points - step * u, 0, hi)
    ahead = np.clip(samples.points + step * u, 0, hi)
    diff = interpolate(f, behind) - interpolate(f, ahead)
    return 1.0 if np.mean(diff) >= 0 else -1.0


def reconstruct(samples, config=None, **overrides):
    """Reconstruct a mesh (world coordinates) from world-space ``samples``.

    Returns ``(mesh, info)``.
    """
    cfg = config or ReconConfig()
    if overrides:
        cfg = ReconConfig(**{**asdict(cfg), **overrides})
    if len(samples) == 0:
        raise ValueError("no samples")
    start = time.perf_counter()
    model = EnergyModel(cfg.energy)
    params = cfg.solver_params()

    t = fit_domain(samples, cfg.grid, cfg.margin)
    gs = to_grid(samples, t)
    b = build_divergence(gs, t.resolution, cfg.passes)
    result = multiscale_solve(b, model, params, points=gs.points)
    f = result.x

    # The solver does not know which side is inside. The problem is odd in b
    # (and the clamp box is symmetric), so flipping b just negates f.
    sign = orientation_sign(f, gs)
    if sign < 0:
        f = -f
    gamma = select_isovalue(f, gs)
    mesh = marching_cubes(f, gamma, t)
    info = ReconInfo(t, gamma, sign < 0, [asdict(li) for li in result.levels],
                     time.perf_counter() - start, f)
    log.info("gamma=%.6g triangles=%d vertices=%d flipped=%s seconds=%.2f",
             gamma, mesh.n_triangles, mesh.n_vertices, sign < 0, info.seconds)
    return mesh, info
