"""Procedural control meshes used by the scenarios and the tests."""
from __future__ import annotations

import numpy as np

from .mesh import QuadMesh, Region, limit_positions, refine


def _orient(verts, quads, center):
    quads = np.array(quads, dtype=np.int64)
    p = verts[quads]
    area = np.cross(p[:, 2] - p[:, 0], p[:, 3] - p[:, 1])
    outward = p.mean(axis=1) - center
    flip = np.einsum("ij,ij->i", area, outward) < 0
    quads[flip] = quads[flip][:, ::-1]
    return quads


def box_lattice(nx, ny, nz):
    """Surface lattice of an ``nx x ny x nz`` box.

    Returns integer lattice coordinates of the vertices and quads (outward
    orientation, counter-clockwise).
    """
    index = {}
    coords = []

    def vid(i, j, k):
        key = (i, j, k)
        if key not in index:
            index[key] = len(coords)
            coords.append(key)
        return index[key]

    quads = []
    dims = (nx, ny, nz)
    for axis in range(3):
        a1, a2 = [d for d in range(3) if d != axis]
        for side in (0, dims[axis]):
            for p in range(dims[a1]):
                for r in range(dims[a2]):
                    corners = []
                    for dp, dr in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        c = [0, 0, 0]
                        c[axis], c[a1], c[a2] = side, p + dp, r + dr
                        corners.append(vid(*c))
                    quads.append(corners)
    coords = np.array(coords, dtype=float)
    quads = _orient(coords, quads, np.array(dims, dtype=float) / 2)
    return coords, quads


def box_mesh(nx, ny, nz, size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    lat, quads = box_lattice(nx, ny, nz)
    verts = np.asarray(origin) + lat / np.array([nx, ny, nz]) * np.asarray(size)
    return QuadMesh(verts, quads, np.full(len(quads), Region.SHELL))


def unit_cube(inflow_face=True):
    """Unit cube [0, 1]^3 with six quads; the bottom face tagged inflow."""
    mesh = box_mesh(1, 1, 1)
    region = np.full(6, Region.SHELL)
    if inflow_face:
        centers = mesh.vertices[mesh.quads].mean(axis=1)
        region[np.argmin(centers[:, 2])] = Region.INFLOW
    return QuadMesh(mesh.vertices, mesh.quads, region)


def fit_limit_to_sphere(mesh: QuadMesh, radius=1.0, iters=200, tol=1e-14):
    """Move control points so every vertex's limit point lies on the sphere."""
    X = mesh.vertices.copy()
    for _ in range(iters):
        lim = limit_positions(mesh, X)
        target = radius * lim / np.linalg.norm(lim, axis=1, keepdims=True)
        step = target - lim
        X += step
        if np.max(np.abs(step)) < tol:
            break
    return mesh.with_vertices(X)


def sphere_mesh(level=1, radius=1.0, fitted=True):
    """Cube-sphere control mesh with ``6 * 4**level`` quads (level >= 1)."""
    if level < 1:
        raise ValueError("level must be >= 1 so that every quad has at most one EV")
    n = 2 ** level
    lat, quads = box_lattice(n, n, n)
    p = lat / n * 2.0 - 1.0
    x, y, z = p.T
    s = np.stack([x * np.sqrt(1 - y * y / 2 - z * z / 2 + y * y * z * z / 3),
                  y * np.sqrt(1 - z * z / 2 - x * x / 2 + z * z * x * x / 3),
                  z * np.sqrt(1 - x * x / 2 - y * y / 2 + x * x * y * y / 3)], axis=1)
    mesh = QuadMesh(radius * s, quads, np.full(len(quads), Region.SHELL))
    return fit_limit_to_sphere(mesh, radius) if fitted else mesh


def balloon_mesh(width=4, rows=6, inflow_rows=2, radius=0.5, height=1.0, dome=0.35):
    """Capped-cylinder balloon.

    The control lattice is a ``width x width x rows`` box: the bottom cap and
    the lowest ``inflow_rows`` side rows form the inflow segment, the rest
    the shell.  Each region contains the four valence-3 corners of its cap.
    The interface lies on a plane ``z = height * inflow_rows / rows``.
    """
    if not 1 <= inflow_rows <= rows - 1:
        raise ValueError("inflow_rows must leave at least one shell row on the side")
    if width < 2:
        raise ValueError("width must be >= 2 so each quad touches at most one EV")
    lat, quads = box_lattice(width, width, rows)
    sx = lat[:, 0] / width * 2 - 1
    sy = lat[:, 1] / width * 2 - 1
    k = lat[:, 2]
    dx = sx * np.sqrt(1 - sy * sy / 2)
    dy = sy * np.sqrt(1 - sx * sx / 2)
    rho = np.sqrt(dx * dx + dy * dy)
    z = height * k / rows
    cap = np.sqrt(np.clip(1 - rho ** 2, 0.0, None)) * dome
    z = np.where(k == rows, height + cap, z)
    z = np.where(k == 0, -cap, z)
    verts = np.stack([radius * dx, radius * dy, z], axis=1)
    centers_k = lat[quads].mean(axis=1)[:, 2]
    region = np.where(centers_k < inflow_rows, Region.INFLOW, Region.SHELL)
    return QuadMesh(verts, quads, region)


def full_balloon_mesh(**kw):
    """Full-size balloon: 320 inflow and 832 shell quads."""
    return balloon_mesh(width=8, rows=32, inflow_rows=8, **kw)


def prism_mesh(sides=5, rows=2, radius=1.0, height=1.0):
    """Closed ``sides``-gonal prism; each cap is split into quads around a centre.

    Cap centres have valence ``sides`` and rim corners valence 3, so the
    mesh carries extraordinary vertices of two different valences.
    """
    if sides < 3 or rows < 1:
        raise ValueError("need sides >= 3 and rows >= 1")
    ang = np.pi * np.arange(2 * sides) / sides
    # rim: corners at even indices, edge midpoints at odd ones
    rad = np.where(np.arange(2 * sides) % 2 == 0, radius, radius * np.cos(np.pi / sides))
    rim = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    m = 2 * sides
    verts = [(x, y, height * k / rows) for k in range(rows + 1) for x, y in rim]
    bottom, top = len(verts), len(verts) + 1
    verts += [(0.0, 0.0, 0.0), (0.0, 0.0, height)]

    def ring(k, i):
        return k * m + i % m

    quads = [(ring(k, i), ring(k, i + 1), ring(k + 1, i + 1), ring(k + 1, i))
             for k in range(rows) for i in range(m)]
    for k, centre in ((0, bottom), (rows, top)):
        quads += [(centre, ring(k, 2 * j - 1), ring(k, 2 * j), ring(k, 2 * j + 1))
                  for j in range(sides)]
    verts = np.array(verts, dtype=float)
    quads = _orient(verts, quads, np.array([0.0, 0.0, height / 2]))
    return QuadMesh(verts, quads, np.full(len(quads), Region.SHELL))


def two_plates_mesh(gap, n=8, size=1.0, thickness=0.25):
    """Two flat boxes facing each other across ``gap`` (along z).

    The facing control planes are at ``z = -gap/2`` and ``z = +gap/2``.
    Returns the mesh and a per-vertex body label (0 lower, 1 upper).
    """
    lower = box_mesh(n, n, 2, (size, size, thickness), (-size / 2, -size / 2, -gap / 2 - thickness))
    upper = box_mesh(n, n, 2, (size, size, thickness), (-size / 2, -size / 2, gap / 2))
    verts = np.concatenate([lower.vertices, upper.vertices])
    quads = np.concatenate([lower.quads, upper.quads + lower.n_vertices])
    body = np.repeat([0, 1], [lower.n_vertices, upper.n_vertices])
    return QuadMesh(verts, quads, np.full(len(quads), Region.SHELL)), body


def refine_n(mesh, n):
    for _ in range(n):
        mesh = refine(mesh)
    return mesh
