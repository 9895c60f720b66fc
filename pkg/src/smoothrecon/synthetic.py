"""
Synthetic oriented point clouds with controllable corruption.

All generators take an explicit ``seed`` and draw from
``numpy.random.default_rng(seed)`` (PCG64), so a given set of parameters
always produces the same samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pointcloud_io import SampleSet


# ---------------------------------------------------------------------------
# primitives
#
# Every primitive provides area(), sample(rng, n) -> (points, normals) drawn
# uniformly by area with outward unit normals, and inside(points) for the
# union scene.

@dataclass(frozen=True)
class Sphere:
    r: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("sphere radius must be positive")

    def area(self):
        return 4 * np.pi * self.r ** 2

    def sample(self, rng, n):
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(self.center) + self.r * d, d

    def inside(self, p):
        return np.linalg.norm(p - np.asarray(self.center), axis=1) < self.r

    def gradient(self, p):
        return p - np.asarray(self.center)


@dataclass(frozen=True)
class Cylinder:
    """Closed cylinder along z, centred at ``center``, height ``h``."""

    r: float = 0.5
    h: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.r > 0 and self.h > 0):
            raise ValueError("cylinder radius and height must be positive")

    def area(self):
        return 2 * np.pi * self.r * self.h + 2 * np.pi * self.r ** 2

    def sample(self, rng, n):
        side = 2 * np.pi * self.r * self.h
        on_side = rng.random(n) < side / self.area()
        theta = rng.uniform(0, 2 * np.pi, n)
        z = rng.uniform(-self.h / 2, self.h / 2, n)
        rad = self.r * np.sqrt(rng.random(n))
        top = rng.random(n) < 0.5
        pts = np.empty((n, 3))
        nrm = np.zeros((n, 3))
        pts[:, 0] = np.where(on_side, self.r, rad) * np.cos(theta)
        pts[:, 1] = np.where(on_side, self.r, rad) * np.sin(theta)
        pts[:, 2] = np.where(on_side, z, np.where(top, self.h / 2, -self.h / 2))
        nrm[on_side, 0] = np.cos(theta[on_side])
        nrm[on_side, 1] = np.sin(theta[on_side])
        nrm[~on_side, 2] = np.where(top[~on_side], 1.0, -1.0)
        return pts + np.asarray(self.center), nrm

    def inside(self, p):
        q = p - np.asarray(self.center)
        return (q[:, 0] ** 2 + q[:, 1] ** 2 < self.r ** 2) & (np.abs(q[:, 2]) < self.h / 2)

    def gradient(self, p):
        q = p - np.asarray(self.center)
        radial = np.sqrt(q[:, 0] ** 2 + q[:, 1] ** 2) - self.r
        axial = np.abs(q[:, 2]) - self.h / 2
        g = np.zeros_like(q)
        side = radial >= axial
        g[side, 0], g[side, 1] = q[side, 0], q[side, 1]
        g[~side, 2] = np.sign(q[~side, 2])
        return g


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with side lengths ``a, b, c``."""

    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.c > 0):
            raise ValueError("box sides must be positive")

    @property
    def half(self):
        return np.array([self.a, self.b, self.c]) / 2

    def face_areas(self):
        a, b, c = self.a, self.b, self.c
        # faces -x, +x, -y, +y, -z, +z
        return np.array([b * c, b * c, a * c, a * c, a * b, a * b])

    def area(self):
        return float(self.face_areas().sum())

    def sample(self, rng, n):
        areas = self.face_areas()
        face = rng.choice(6, size=n, p=areas / areas.sum())
        axis = face // 2
        sign = np.where(face % 2 == 1, 1.0, -1.0)
        pts = rng.uniform(-1, 1, (n, 3)) * self.half
        rows = np.arange(n)
        pts[rows, axis] = sign * self.half[axis]
        nrm = np.zeros((n, 3))
        nrm[rows, axis] = sign
        return pts + np.asarray(self.center), nrm

    def face_of(self, p):
        """Index (as in :meth:`face_areas`) of the face each surface point lies on."""
        q = (p - np.asarray(self.center)) / self.half
        axis = np.argmax(np.abs(q), axis=1)
        return 2 * axis + (q[np.arange(len(q)), axis] > 0)

    def inside(self, p):
        q = np.abs(p - np.asarray(self.center))
        return np.all(q < self.half, axis=1)

    def gradient(self, p):
        q = (p - np.asarray(self.center)) / self.half
        axis = np.argmax(np.abs(q), axis=1)
        g = np.zeros_like(q)
        g[np.arange(len(q)), axis] = np.sign(q[np.arange(len(q)), axis])
        return g


@dataclass(frozen=True)
class Torus:
    """Torus around the z axis with major radius ``R`` and minor radius ``r``."""

    R: float = 1.0
    r: float = 0.3
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.R > self.r > 0):
            raise ValueError("torus needs R > r > 0")

    def area(self):
        return 4 * np.pi ** 2 * self.R * self.r

    def sample(self, rng, n):
        # the area element is proportional to R + r cos(v): rejection sample v
        v = np.empty(0)
        while len(v) < n:
            cand = rng.uniform(0, 2 * np.pi, 2 * n)
            keep = rng.random(2 * n) * (self.R + self.r) < self.R + self.r * np.cos(cand)
            v = np.concatenate([v, cand[keep]])
        v = v[:n]
        u = rng.uniform(0, 2 * np.pi, n)
        nrm = np.stack([np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v)], axis=1)
        ring = np.stack([self.R * np.cos(u), self.R * np.sin(u), np.zeros(n)], axis=1)
        return ring + self.r * nrm + np.asarray(self.center), nrm

    def inside(self, p):
        q = p - np.asarray(self.center)
        return (np.hypot(q[:, 0], q[:, 1]) - self.R) ** 2 + q[:, 2] ** 2 < self.r ** 2

    def gradient(self, p):
        q = p - np.asarray(self.center)
        rho = np.hypot(q[:, 0], q[:, 1])
        s = (rho - self.R) / np.where(rho > 0, rho, 1.0)
        return np.stack([q[:, 0] * s, q[:, 1] * s, q[:, 2]], axis=1)


@dataclass(frozen=True)
class BumpySphere:
    """Sphere whose radius is modulated by ``amplitude * cos(k x) cos(k y) cos(k z)``
    evaluated on the unit direction, with ``k = frequency``."""

    r: float = 1.0
    amplitude: float = 0.1
    frequency: float = 6.0
    center: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.r > 0 and 0 <= self.amplitude < 1):
            raise ValueError("bumpy sphere needs r > 0 and 0 <= amplitude < 1")

    def _radius(self, u):
        k = self.frequency
        c = np.cos(k * u)
        return self.r * (1 + self.amplitude * c[:, 0] * c[:, 1] * c[:, 2])

    def _radius_grad(self, u):
        k, a = self.frequency, self.amplitude
        c, s = np.cos(k * u), np.sin(k * u)
        return -self.r * a * k * np.stack([s[:, 0] * c[:, 1] * c[:, 2],
                                           c[:, 0] * s[:, 1] * c[:, 2],
                                           c[:, 0] * c[:, 1] * s[:, 2]], axis=1)

    def area(self):
        # upper bound only; used for weighting inside a Union
        return 4 * np.pi * (self.r * (1 + self.amplitude)) ** 2

    def sample(self, rng, n):
        # uniform directions with rejection on the surface area element
        out_p, out_n = [], []
        got = 0
        while got < n:
            u = rng.standard_normal((2 * n, 3))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            R = self._radius(u)
            p = u * R[:, None]
            g = self.gradient(p)
            # area element relative to the unit sphere: R^2 |grad| / <grad, u>
            jac = R ** 2 * np.linalg.norm(g, axis=1) / np.einsum("ij,ij->i", g, u)
            slope = self.amplitude * self.frequency / (1 - self.amplitude)
            bound = (self.r * (1 + self.amplitude)) ** 2 * np.sqrt(1 + 3 * slope ** 2)
            keep = rng.random(len(u)) * bound < jac
            out_p.append(p[keep])
            out_n.append(g[keep] / np.linalg.norm(g[keep], axis=1, keepdims=True))
            got += int(keep.sum())
        pts = np.concatenate(out_p)[:n] + np.asarray(self.center)
        return pts, np.concatenate(out_n)[:n]

    def inside(self, p):
        q = p - np.asarray(self.center)
        d = np.linalg.norm(q, axis=1)
        u = q / np.where(d > 0, d, 1.0)[:, None]
        return d < self._radius(u)

    def gradient(self, p):
        # implicit g(p) = |p| - R(p/|p|)
        q = p - np.asarray(self.center)
        d = np.linalg.norm(q, axis=1, keepdims=True)
        u = q / d
        gR = self._radius_grad(u)
        tangential = gR - np.einsum("ij,ij->i", gR, u)[:, None] * u
        return u - tangential / d


@dataclass(frozen=True)
class Union:
    """Boundary of the union of several primitives."""

    parts: tuple

    def area(self):
        return sum(p.area() for p in self.parts)

    def sample(self, rng, n):
        areas = np.array([p.area() for p in self.parts])
        out_p, out_n = [], []
        got = 0
        while got < n:
            counts = rng.multinomial(n, areas / areas.sum())
            for i, (part, c) in enumerate(zip(self.parts, counts)):
                if c == 0:
                    continue
                pts, nrm = part.sample(rng, int(c))
                covered = np.zeros(len(pts), dtype=bool)
                for j, other in enumerate(self.parts):
                    if j != i:
                        covered |= other.inside(pts)
                out_p.append(pts[~covered])
                out_n.append(nrm[~covered])
                got += int((~covered).sum())
        # draw order interleaves parts; keep the first n
        return np.concatenate(out_p)[:n], np.concatenate(out_n)[:n]

    def inside(self, p):
        return np.any([part.inside(p) for part in self.parts], axis=0)


def primitive_scene():
    """Overlapping sphere, box and cylinder used as the multi-primitive fixture."""
    return Union((
        Sphere(0.6, (-0.35, 0.0, 0.0)),
        Box(0.8, 0.8, 0.8, (0.45, 0.1, -0.1)),
        Cylinder(0.25, 1.4, (0.1, -0.2, 0.3)),
    ))


def sample_primitive(shape, n, seed=0):
    """``n`` samples drawn uniformly by area from ``shape`` with outward normals."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    pts, nrm = shape.sample(rng, int(n))
    return SampleSet(pts, nrm, "world")


# ---------------------------------------------------------------------------
# corruption

@dataclass(frozen=True)
class Hole:
    """Removal region: a spherical cap (``angular=True``, ``radius`` in
    radians around direction ``center`` seen from the samples' bounding box
    centre) or a ball of ``radius`` world units around point ``center``."""

    center: tuple
    radius: float
    angular: bool = True


@dataclass(frozen=True)
class DensitySplit:
    """Keep only ``keep_fraction`` of the samples with ``<p, normal> > offset``."""

    normal: tuple = (1.0, 0.0, 0.0)
    offset: float = 0.0
    keep_fraction: float = 0.02


def hole_mask(points, hole, reference=None):
    """True for points inside ``hole``."""
    c = np.asarray(hole.center, dtype=np.float64)
    if not hole.angular:
        return np.linalg.norm(points - c, axis=1) < hole.radius
    ref = (0.5 * (points.min(axis=0) + points.max(axis=0))
           if reference is None else np.asarray(reference))
    d = points - ref
    cosang = d @ (c / np.linalg.norm(c)) / np.maximum(np.linalg.norm(d, axis=1), 1e-300)
    return cosang > np.cos(hole.radius)


def corrupt(samples, noise_sigma=0.0, outlier_fraction=0.0, outlier_radius=1.5,
            holes=(), density_split=None, seed=0):
    """Apply holes, a density split, positional noise and ambient outliers,
    in that order.

    Outliers replace ``outlier_fraction`` of the remaining samples with
    points uniform in the bounding sphere inflated by ``outlier_radius``,
    each with a random unit normal.
    """
    if not (0 <= outlier_fraction <= 1):
        raise ValueError("outlier_fraction must be in [0, 1]")
    if density_split is not None and not (0 <= density_split.keep_fraction <= 1):
        raise ValueError("keep_fraction must be in [0, 1]")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    pts, nrm = samples.points.copy(), samples.normals.copy()
    ref = 0.5 * (pts.min(axis=0) + pts.max(axis=0))

    keep = np.ones(len(pts), dtype=bool)
    for h in holes:
        keep &= ~hole_mask(pts, h, ref)
    if density_split is not None:
        dn = np.asarray(density_split.normal, dtype=np.float64)
        side = pts @ dn > density_split.offset
        keep &= ~side | (rng.random(len(pts)) < density_split.keep_fraction)
    if not keep.all():
        pts, nrm = pts[keep], nrm[keep]
    if len(pts) == 0:
        raise ValueError("corruption removed every sample")

    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, pts.shape)

    if outlier_fraction > 0:
        k = int(round(outlier_fraction * len(pts)))
        idx = rng.choice(len(pts), size=k, replace=False)
        center = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
        radius = outlier_radius * np.linalg.norm(pts - center, axis=1).max()
        d = rng.standard_normal((k, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        pts[idx] = center + d * radius * rng.random(k)[:, None] ** (1 / 3)
        nd = rng.standard_normal((k, 3))
        nrm[idx] = nd / np.linalg.norm(nd, axis=1, keepdims=True)
    return SampleSet(pts, nrm, samples.space)


# ---------------------------------------------------------------------------
# orientation

def _direction(d):
    d = np.asarray(d, dtype=np.float64).reshape(3)
    if not np.any(d):
        raise ValueError("direction must be nonzero")
    return d


def coarsen_orientation(samples, mode, *args, plane_normal=(1.0, 0.0, 0.0), offset=0.0):
    """Replace every normal by a coarse orientation.

    ``mode`` is ``"constant"`` (args: dir), ``"half_space"`` (args: dir1,
    dir2; samples with ``<p, plane_normal> >= offset`` get dir1) or
    ``"view"`` (args: eye; each normal is the unit vector towards ``eye``).
    """
    pts = samples.points
    if mode == "constant":
        (d,) = args
        nrm = np.broadcast_to(_direction(d), pts.shape).copy()
    elif mode == "half_space":
        d1, d2 = (_direction(a) for a in args)
        side = pts @ np.asarray(plane_normal, dtype=np.float64) >= offset
        nrm = np.where(side[:, None], d1, d2)
    elif mode == "view":
        (eye,) = args
        v = np.asarray(eye, dtype=np.float64) - pts
        length = np.linalg.norm(v, axis=1, keepdims=True)
        if np.any(length == 0):
            raise ValueError("eye coincides with a sample")
        nrm = v / length
    else:
        raise ValueError(f"unknown orientation mode {mode!r}")
    return SampleSet(pts.copy(), nrm, samples.space)


# ---------------------------------------------------------------------------
# meshes

def icosphere(r=1.0, subdivisions=3):
    """Triangulated sphere from a subdivided icosahedron, outward winding."""
    from .pointcloud_io import TriangleMesh

    t = (1 + 5 ** 0.5) / 2
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
         (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
         (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
         (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
         (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        mid = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in mid:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                mid[key] = len(verts) - 1
            return mid[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriangleMesh(r * np.array(verts), np.array(f, dtype=np.int64))
