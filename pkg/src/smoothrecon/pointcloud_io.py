"""
Reading and writing oriented point sets and triangle meshes, and the
world <-> grid mapping used by the reconstruction.

Supported formats
-----------------
* PLY, ASCII and binary little-endian. Vertex properties ``x, y, z`` and
  optionally ``nx, ny, nz``; a ``face`` element with a vertex index list is
  read for meshes. Any other element is skipped.
* xyz-normal text: six whitespace separated floats per line, ``#`` starts a
  comment.
* OBJ: ``v``, ``vn`` and ``f`` records with 1-based (or negative) indices.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 6


class FormatError(ValueError):
    """A file does not parse in its declared format."""


@dataclass
class SampleSet:
    """Points with one orientation vector each.

    ``space`` is ``"world"`` for input data and ``"grid"`` after
    :func:`to_grid`.
    """

    points: np.ndarray
    normals: np.ndarray
    space: str = "world"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if self.points.shape != self.normals.shape:
            raise ValueError(
                f"{len(self.points)} points but {len(self.normals)} normals")
        if self.space not in ("world", "grid"):
            raise ValueError(f"unknown coordinate space {self.space!r}")

    def __len__(self):
        return len(self.points)

    def subset(self, mask):
        return SampleSet(self.points[mask], self.normals[mask], self.space)


@dataclass
class TriangleMesh:
    """Indexed triangle mesh. ``normals`` is optional per-vertex data."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def check(self):
        """Raise ValueError if indices are out of range or a triangle repeats a vertex."""
        t = self.triangles
        if len(t) and (t.min() < 0 or t.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise ValueError("triangle with repeated vertex index")


@dataclass(frozen=True)
class DomainTransform:
    """Isotropic map between world coordinates and grid indices.

    ``grid = (world - origin) / scale``; the grid spacing is 1 in grid units.
    """

    origin: np.ndarray
    scale: float
    resolution: tuple
    margin: int = DEFAULT_MARGIN
    spacing: float = field(default=1.0)

    def to_grid_points(self, p):
        return (np.asarray(p, dtype=np.float64) - self.origin) / self.scale

    def to_world_points(self, g):
        return np.asarray(g, dtype=np.float64) * self.scale + self.origin


# ---------------------------------------------------------------------------
# domain mapping

def fit_domain(samples, resolution, margin_cells=DEFAULT_MARGIN):
    """Fit an isotropic, centred transform so all samples land at least
    ``margin_cells`` cells away from every grid face.

    Zero-extent axes are inflated to the largest axis extent; a single
    repeated point uses an extent of one world unit.
    """
    if len(samples) == 0:
        raise ValueError("cannot fit a domain to an empty sample set")
    res = _as_resolution(resolution)
    dims = np.array(res, dtype=np.float64)
    interior = dims - 1 - 2 * margin_cells
    if np.any(interior < 2):
        raise ValueError(
            f"resolution {res} too small for margin {margin_cells} "
            f"(need at least 2 interior cells per axis)")

    lo = samples.points.min(axis=0)
    hi = samples.points.max(axis=0)
    extent = hi - lo
    biggest = extent.max()
    if biggest <= 0:
        biggest = 1.0
    extent = np.where(extent > 0, extent, biggest)

    scale = float(np.max(extent / interior))
    center = 0.5 * (lo + hi)
    origin = center - scale * (dims - 1) / 2
    return DomainTransform(origin=origin, scale=scale, resolution=res,
                           margin=margin_cells)


def to_grid(samples, t):
    """Map world samples into grid coordinates; normals are kept as given."""
    if samples.space != "world":
        raise ValueError("samples are already in grid coordinates")
    return SampleSet(t.to_grid_points(samples.points), samples.normals.copy(), "grid")


def to_world(samples, t):
    if samples.space != "grid":
        raise ValueError("samples are already in world coordinates")
    return SampleSet(t.to_world_points(samples.points), samples.normals.copy(), "world")


def _as_resolution(resolution):
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    res = tuple(int(r) for r in resolution)
    if len(res) != 3 or min(res) < 1:
        raise ValueError(f"bad resolution {resolution!r}")
    return res


# ---------------------------------------------------------------------------
# loading

def load_samples(path, format=None, const_normal=None, normalize=False):
    """Read an oriented point set in world coordinates.

    ``format`` is one of ``"ply"``, ``"xyz"`` (xyz-normal text) or ``"obj"``;
    by default it is taken from the file extension. ``const_normal``
    replaces every normal by a fixed direction, which also allows files
    without normals. Samples with a zero-length normal are dropped with a
    warning.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    fmt = _guess_format(path, format)
    if fmt == "ply":
        data = read_ply(path)
        points, normals = data["points"], data["normals"]
    elif fmt == "xyz":
        points, normals = _read_xyz(path, allow_missing=const_normal is not None)
    elif fmt == "obj":
        points, normals, _ = _read_obj(path)
    else:
        raise ValueError(f"unsupported sample format {fmt!r}")

    if len(points) == 0:
        raise FormatError(f"{path}: no points")
    if const_normal is not None:
        d = np.asarray(const_normal, dtype=np.float64).reshape(3)
        if not np.any(d):
            raise ValueError("constant normal must be nonzero")
        normals = np.broadcast_to(d, points.shape).copy()
    elif normals is None:
        raise FormatError(f"{path}: no normals (use a constant-normal override)")
    elif len(normals) != len(points):
        raise FormatError(f"{path}: {len(points)} vertices but {len(normals)} normals")

    bad_pt = ~np.isfinite(points).all(axis=1)
    if bad_pt.any():
        raise FormatError(f"{path}: non-finite coordinates in record {int(np.argmax(bad_pt))}")
    bad_n = ~np.isfinite(normals).all(axis=1)
    if bad_n.any():
        raise FormatError(f"{path}: non-finite normal in record {int(np.argmax(bad_n))}")

    zero = ~np.any(normals != 0, axis=1)
    if zero.any():
        log.warning("%s: rejected %d samples with zero-length normal (first at record %d)",
                    path, int(zero.sum()), int(np.argmax(zero)))
        points, normals = points[~zero], normals[~zero]
        if len(points) == 0:
            raise FormatError(f"{path}: every sample has a zero-length normal")
    if normalize:
        normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return SampleSet(points, normals, "world")


def load_mesh(path, format=None):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    fmt = _guess_format(path, format)
    if fmt == "ply":
        data = read_ply(path)
        faces = data["faces"]
        if faces is None:
            faces = np.zeros((0, 3), dtype=np.int64)
        mesh = TriangleMesh(data["points"], faces, data["normals"])
    elif fmt == "obj":
        v, vn, f = _read_obj(path)
        mesh = TriangleMesh(v, f, vn if vn is not None and len(vn) == len(v) else None)
    else:
        raise ValueError(f"unsupported mesh format {fmt!r}")
    try:
        mesh.check()
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return mesh


def _guess_format(path, format):
    if format is not None:
        fmt = format.lower()
    else:
        fmt = path.suffix.lower().lstrip(".")
    aliases = {"xyzn": "xyz", "xyz-normal": "xyz", "pts": "xyz", "txt": "xyz", "npts": "xyz"}
    fmt = aliases.get(fmt, fmt)
    if fmt not in ("ply", "xyz", "obj"):
        raise ValueError(f"{path}: cannot determine file format (got {fmt!r})")
    return fmt


def _read_xyz(path, allow_missing=False):
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            ok = len(parts) == 6 or (allow_missing and len(parts) == 3)
            if not ok:
                raise FormatError(f"{path}:{lineno}: expected 6 values, got {len(parts)}")
            try:
                vals = [float(s) for s in parts]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not a number in {line!r}") from None
            rows.append(vals + [0.0, 0.0, 0.0] if len(vals) == 3 else vals)
    arr = np.array(rows, dtype=np.float64).reshape(-1, 6)
    return arr[:, :3], arr[:, 3:]


def _read_obj(path):
    v, vn, f = [], [], []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split("#", 1)[0].split()
            if not parts:
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    v.append([float(s) for s in parts[1:4]])
                    if len(v[-1]) != 3:
                        raise ValueError
                elif tag == "vn":
                    vn.append([float(s) for s in parts[1:4]])
                    if len(vn[-1]) != 3:
                        raise ValueError
                elif tag == "f":
                    idx = [int(s.split("/")[0]) for s in parts[1:]]
                    if len(idx) < 3:
                        raise ValueError
                    nv = len(v)
                    idx = [i - 1 if i > 0 else nv + i for i in idx]
                    for a in range(1, len(idx) - 1):  # fan-triangulate polygons
                        f.append([idx[0], idx[a], idx[a + 1]])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed {tag!r} record") from None
    v = np.array(v, dtype=np.float64).reshape(-1, 3)
    vn = np.array(vn, dtype=np.float64).reshape(-1, 3) if vn else None
    return v, vn, np.array(f, dtype=np.int64).reshape(-1, 3)


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh, path):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise FormatError(f"{path}: not a PLY file")
    fmt = None
    elements = []
    lineno = 1
    while True:
        raw = fh.readline()
        lineno += 1
        if not raw:
            raise FormatError(f"{path}: truncated PLY header")
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "end_header":
            break
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise FormatError(f"{path}:{lineno}: property before element")
            try:
                if parts[1] == "list":
                    prop = (parts[4], "list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])
                else:
                    prop = (parts[2], "scalar", _PLY_TYPES[parts[1]], None)
            except (KeyError, IndexError):
                raise FormatError(f"{path}:{lineno}: bad property line") from None
            elements[-1]["props"].append(prop)
        else:
            raise FormatError(f"{path}:{lineno}: unknown header keyword {parts[0]!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format {fmt!r}")
    return fmt, elements


def read_ply(path):
    """Parse a PLY file into ``{"points", "normals", "faces"}`` arrays
    (``normals``/``faces`` are None when absent)."""
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)
        body = fh.read()
    tables = {}
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for el in elements:
            rows = []
            for rec in range(el["count"]):
                row = []
                for name, kind, t, it in el["props"]:
                    try:
                        if kind == "list":
                            cnt = int(tokens[pos]); pos += 1
                            row.append([int(float(x)) for x in tokens[pos:pos + cnt]])
                            if len(row[-1]) != cnt:
                                raise IndexError
                            pos += cnt
                        else:
                            row.append(float(tokens[pos])); pos += 1
                    except (ValueError, IndexError):
                        raise FormatError(
                            f"{path}: malformed {el['name']} record {rec}") from None
                rows.append(row)
            tables[el["name"]] = (el, rows)
    else:
        pos = 0
        for el in elements:
            data, pos = _read_binary_element(body, pos, el, path)
            tables[el["name"]] = (el, data)

    if "vertex" not in tables:
        raise FormatError(f"{path}: no vertex element")
    el, rows = tables["vertex"]
    names = [p[0] for p in el["props"]]
    for c in "xyz":
        if c not in names:
            raise FormatError(f"{path}: vertex element lacks property {c!r}")

    def column(name):
        i = names.index(name)
        if fmt == "ascii":
            return np.array([r[i] for r in rows], dtype=np.float64)
        return rows[name].astype(np.float64)

    points = np.stack([column(c) for c in "xyz"], axis=1) if el["count"] else np.zeros((0, 3))
    normals = None
    if all(c in names for c in ("nx", "ny", "nz")):
        normals = (np.stack([column(c) for c in ("nx", "ny", "nz")], axis=1)
                   if el["count"] else np.zeros((0, 3)))

    faces = None
    if "face" in tables:
        el, rows = tables["face"]
        names = [p[0] for p in el["props"]]
        key = "vertex_indices" if "vertex_indices" in names else "vertex_index"
        if key not in names:
            raise FormatError(f"{path}: face element lacks vertex_indices")
        i = names.index(key)
        polys = [r[i] for r in rows] if fmt == "ascii" else rows[key]
        if isinstance(polys, np.ndarray) and polys.ndim == 2 and polys.shape[1] == 3:
            return {"points": points, "normals": normals, "faces": polys}
        tri = []
        for rec, poly in enumerate(polys):
            poly = list(poly)
            if len(poly) < 3:
                raise FormatError(f"{path}: face record {rec} has {len(poly)} vertices")
            for a in range(1, len(poly) - 1):
                tri.append([poly[0], poly[a], poly[a + 1]])
        faces = np.array(tri, dtype=np.int64).reshape(-1, 3)
    return {"points": points, "normals": normals, "faces": faces}


def _read_binary_element(body, pos, el, path):
    props = el["props"]
    count = el["count"]
    if all(kind == "scalar" for _, kind, _, _ in props):
        dt = np.dtype([(name, "<" + t) for name, _, t, _ in props])
        end = pos + dt.itemsize * count
        if end > len(body):
            raise FormatError(f"{path}: truncated {el['name']} data")
        return np.frombuffer(body, dtype=dt, count=count, offset=pos), end

    if len(props) == 1 and count:
        # the usual face element: try fixed-length lists in one read
        name, _, t, it = props[0]
        cdt = np.dtype("<" + t)
        if pos + cdt.itemsize <= len(body):
            cnt = int(np.frombuffer(body, cdt, 1, pos)[0])
            dt = np.dtype([("n", "<" + t), ("idx", "<" + it, (cnt,))])
            end = pos + dt.itemsize * count
            if end <= len(body):
                rec = np.frombuffer(body, dtype=dt, count=count, offset=pos)
                if np.all(rec["n"] == cnt):
                    return {name: rec["idx"].astype(np.int64)}, end

    # Elements with lists are walked record by record.
    out = {name: [] for name, _, _, _ in props}
    for rec in range(count):
        for name, kind, t, it in props:
            try:
                if kind == "list":
                    cdt = np.dtype("<" + t)
                    cnt = int(np.frombuffer(body, cdt, 1, pos)[0]); pos += cdt.itemsize
                    idt = np.dtype("<" + it)
                    out[name].append(np.frombuffer(body, idt, cnt, pos).astype(np.int64))
                    pos += idt.itemsize * cnt
                else:
                    sdt = np.dtype("<" + t)
                    out[name].append(np.frombuffer(body, sdt, 1, pos)[0]); pos += sdt.itemsize
            except ValueError:
                raise FormatError(f"{path}: truncated {el['name']} record {rec}") from None
    return out, pos


# ---------------------------------------------------------------------------
# saving

def save_samples(samples, path, format=None, binary=True):
    """Write a sample set (world coordinates are written as stored)."""
    path = Path(path)
    fmt = _guess_format(path, format)
    _check_writable(path)
    if fmt == "ply":
        _write_ply(path, samples.points, samples.normals, None, binary)
    elif fmt == "xyz":
        arr = np.hstack([samples.points, samples.normals])
        np.savetxt(path, arr, fmt="%.17g")
    elif fmt == "obj":
        with open(path, "w") as fh:
            for p in samples.points:
                fh.write("v %r %r %r\n" % tuple(float(c) for c in p))
            for n in samples.normals:
                fh.write("vn %r %r %r\n" % tuple(float(c) for c in n))


def save_mesh(mesh, path, format=None, binary=True):
    """Write ``mesh`` as PLY or OBJ, preserving vertex order."""
    path = Path(path)
    fmt = _guess_format(path, format)
    if fmt not in ("ply", "obj"):
        raise ValueError(f"meshes are written as ply or obj, not {fmt!r}")
    mesh.check()
    _check_writable(path)
    if fmt == "ply":
        _write_ply(path, mesh.vertices, mesh.normals, mesh.triangles, binary)
        return
    with open(path, "w") as fh:
        fh.write(f"# {mesh.n_vertices} vertices, {mesh.n_triangles} triangles\n")
        for p in mesh.vertices:
            fh.write("v %r %r %r\n" % tuple(float(c) for c in p))
        if mesh.normals is not None:
            for n in mesh.normals:
                fh.write("vn %r %r %r\n" % tuple(float(c) for c in n))
        for t in mesh.triangles + 1:
            fh.write("f %d %d %d\n" % tuple(t))


def _check_writable(path):
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise PermissionError(f"{path}: cannot write to {parent}")


def _write_ply(path, points, normals, faces, binary):
    n = len(points)
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0",
              f"element vertex {n}",
              "property double x", "property double y", "property double z"]
    if normals is not None:
        header += ["property double nx", "property double ny", "property double nz"]
    if faces is not None:
        header += [f"element face {len(faces)}",
                   "property list uchar int vertex_indices"]
    header.append("end_header")
    cols = points if normals is None else np.hstack([points, normals])
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(cols, dtype="<f8").tobytes())
            if faces is not None and len(faces):
                rec = np.zeros(len(faces), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
                rec["n"] = 3
                rec["idx"] = faces
                fh.write(rec.tobytes())
        else:
            for row in cols:
                fh.write((" ".join(repr(float(c)) for c in row) + "\n").encode("ascii"))
            if faces is not None:
                for t in faces:
                    fh.write(("3 %d %d %d\n" % tuple(t)).encode("ascii"))
