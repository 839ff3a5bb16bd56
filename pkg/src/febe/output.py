"""Snapshots, plot data and atomic file output.

Snapshots are legacy VTK polydata text files holding a watertight
tessellation of the limit surface.  Every element is sampled on a uniform
``(r+1) x (r+1)`` parametric grid; grid nodes on shared vertices and edges
are merged, so neighbouring elements reference the same point.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .quadrature import OrderHistogram
from .subdivision import PatchSet, required_levels

SNAPSHOT_FIELDS = ("time", "p0", "zeta", "volume_ratio")


def atomic_write(path, text: str):
    """Write ``text`` to a temporary file next to ``path`` and rename it."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# tessellation

def _node_key(quad, e, i, j, r):
    """Mesh-level identity of grid node ``(i, j)`` of element ``e``."""
    on_u = i in (0, r)
    on_v = j in (0, r)
    if on_u and on_v:
        corner = {(0, 0): 0, (r, 0): 1, (r, r): 2, (0, r): 3}[(i, j)]
        return ("v", int(quad[corner]))
    if on_v:
        a, b, s = (quad[0], quad[1], i) if j == 0 else (quad[3], quad[2], i)
    elif on_u:
        a, b, s = (quad[0], quad[3], j) if i == 0 else (quad[1], quad[2], j)
    else:
        return ("f", e, i, j)
    a, b = int(a), int(b)
    return ("e", a, b, s) if a < b else ("e", b, a, r - s)


@dataclass
class Tessellation:
    """Shared-node sampling grid of all elements.

    ``element``/``uv`` give, for every node, the element and native
    parameter used to evaluate it; ``polygons`` holds quads of node ids.
    """

    element: np.ndarray
    uv: np.ndarray
    polygons: np.ndarray
    region: np.ndarray
    resolution: int


def tessellate(patches: PatchSet, resolution: int) -> Tessellation:
    r = int(resolution)
    if r < 1:
        raise ValueError("resolution must be >= 1")
    mesh = patches.mesh
    ids: dict = {}
    element, uv, polygons, region = [], [], [], []
    local = np.empty((r + 1, r + 1), dtype=np.int64)
    for e, quad in enumerate(mesh.quads):
        for i in range(r + 1):
            for j in range(r + 1):
                key = _node_key(quad, e, i, j, r)
                node = ids.get(key)
                if node is None:
                    node = ids[key] = len(element)
                    element.append(e)
                    uv.append((i / r, j / r))
                local[i, j] = node
        for i in range(r):
            for j in range(r):
                polygons.append((local[i, j], local[i + 1, j], local[i + 1, j + 1], local[i, j + 1]))
                region.append(int(mesh.region[e]))
    return Tessellation(np.array(element, dtype=np.int64), np.array(uv, dtype=float),
                        np.array(polygons, dtype=np.int64), np.array(region, dtype=np.int64), r)


def sample(patches: PatchSet, tess: Tessellation, coeffs) -> np.ndarray:
    """Evaluate a field with basis coefficients ``coeffs`` at the nodes."""
    coeffs = np.asarray(coeffs, dtype=float)
    out = np.empty((len(tess.element), coeffs.shape[1]))
    for e in np.unique(tess.element):
        sel = np.flatnonzero(tess.element == e)
        B = patches.basis(int(e), tess.uv[sel], 0)[0]
        out[sel] = B @ coeffs[patches[int(e)].stencil]
    return out


def open_edges(polygons) -> int:
    """Number of tessellation edges not shared by exactly two polygons."""
    P = np.asarray(polygons)
    edges = np.sort(np.stack([P, np.roll(P, -1, axis=1)], axis=-1).reshape(-1, 2), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return int(np.count_nonzero(counts != 2))


# --------------------------------------------------------------------------
# snapshots

@dataclass
class Snapshot:
    points: np.ndarray
    polygons: np.ndarray
    traction: np.ndarray
    region: np.ndarray
    time: float = 0.0
    p0: float = 0.0
    zeta: np.ndarray = None
    volume_ratio: float = 1.0

    @property
    def traction_z(self):
        return self.traction[:, 2]

    def fields(self):
        zeta = np.atleast_1d(np.asarray(0.0 if self.zeta is None else self.zeta, dtype=float))
        return {"time": np.array([self.time], dtype=float), "p0": np.array([self.p0], dtype=float),
                "zeta": zeta, "volume_ratio": np.array([self.volume_ratio], dtype=float)}


def make_snapshot(patches: PatchSet, theta, traction, resolution=4, time=0.0, p0=0.0,
                  zeta=None, volume_ratio=1.0, tess: Tessellation | None = None) -> Snapshot:
    """Sample the configuration and the traction at the same parametric nodes."""
    tess = tessellate(patches, resolution) if tess is None else tess
    return Snapshot(sample(patches, tess, theta), tess.polygons, sample(patches, tess, traction),
                    tess.region, float(time), float(p0), zeta, float(volume_ratio))


def _fmt(a):
    return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in np.atleast_2d(a))


def format_snapshot(snap: Snapshot) -> str:
    n, m = len(snap.points), len(snap.polygons)
    fields = snap.fields()
    out = ["# vtk DataFile Version 3.0", "febe snapshot", "ASCII", "DATASET POLYDATA",
           f"FIELD FieldData {len(fields)}"]
    for name, arr in fields.items():
        out += [f"{name} 1 {len(arr)} double", _fmt(arr[None, :])]
    out += [f"POINTS {n} double", _fmt(snap.points)]
    conn = np.hstack([np.full((m, 1), 4), snap.polygons])
    out += [f"POLYGONS {m} {5 * m}", "\n".join(" ".join(map(str, row)) for row in conn)]
    out += [f"CELL_DATA {m}", "SCALARS region int 1", "LOOKUP_TABLE default",
            "\n".join(map(str, snap.region))]
    out += [f"POINT_DATA {n}", "VECTORS traction double", _fmt(snap.traction),
            "SCALARS traction_z double 1", "LOOKUP_TABLE default", _fmt(snap.traction_z[:, None])]
    return "\n".join(out) + "\n"


def write_snapshot(snap: Snapshot, path):
    try:
        atomic_write(path, format_snapshot(snap))
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc}") from exc


def read_snapshot(path) -> Snapshot:
    """Read a file written by :func:`write_snapshot`."""
    with open(path) as fh:
        tokens = fh.read().split("\n")
    lines = iter(tokens[4:])

    def take(count, dtype):
        vals = []
        while len(vals) < count:
            vals += next(lines).split()
        return np.array([dtype(v) for v in vals])

    fields, points, polygons, region, traction = {}, None, None, None, None
    for line in lines:
        head = line.split()
        if not head:
            continue
        if head[0] == "FIELD":
            for _ in range(int(head[2])):
                name, _, count, _ = next(lines).split()
                fields[name] = take(int(count), float)
        elif head[0] == "POINTS":
            points = take(3 * int(head[1]), float).reshape(-1, 3)
        elif head[0] == "POLYGONS":
            polygons = take(int(head[2]), int).reshape(-1, 5)[:, 1:]
        elif head[0] == "SCALARS" and head[1] == "region":
            next(lines)
            region = take(len(polygons), int)
        elif head[0] == "VECTORS" and head[1] == "traction":
            traction = take(3 * len(points), float).reshape(-1, 3)
    return Snapshot(points, polygons, traction, region, float(fields["time"][0]),
                    float(fields["p0"][0]), fields["zeta"], float(fields["volume_ratio"][0]))


# --------------------------------------------------------------------------
# plot data

def emit_plot_data(hist: OrderHistogram, directory, prefix="quadrature"):
    """Write ``<prefix>_orders.dat`` (``q count``) and ``<prefix>_levels.dat`` (``q l``).

    The level file covers ``q = 1 .. max(q used)``; both files are header
    only for an empty histogram.
    """
    counts = hist.as_dict() if isinstance(hist, OrderHistogram) else dict(sorted(hist.items()))
    orders = ["# q count"] + [f"{q} {c}" for q, c in counts.items()]
    levels = ["# q l"]
    if counts:
        levels += [f"{q} {required_levels(q)}" for q in range(1, max(counts) + 1)]
    paths = (os.path.join(directory, f"{prefix}_orders.dat"),
             os.path.join(directory, f"{prefix}_levels.dat"))
    atomic_write(paths[0], "\n".join(orders) + "\n")
    atomic_write(paths[1], "\n".join(levels) + "\n")
    return paths
