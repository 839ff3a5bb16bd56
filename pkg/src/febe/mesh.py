"""Unstructured quadrilateral control meshes.

A :class:`QuadMesh` is a closed, consistently oriented quad surface whose
faces carry a region tag (shell membrane or fixed inflow segment).  The
module also provides the combinatorial machinery the rest of the package
relies on: directed-edge navigation, vertex valences, element adjacency
classification and Catmull-Clark refinement.
"""
from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    """Invalid mesh input."""


class NonManifoldError(MeshError):
    pass


class OrientationError(MeshError):
    pass


class Region(enum.IntEnum):
    SHELL = 0
    INFLOW = 1


class Adjacency(enum.Enum):
    IDENTICAL = "identical"
    COMMON_EDGE = "common_edge"
    COMMON_VERTEX = "common_vertex"
    DISJOINT = "disjoint"


@dataclass(frozen=True)
class AdjacencyCase:
    """Relation between two elements.

    ``frame_x`` and ``frame_y`` are ``(origin, u_corner)`` pairs of local
    corner indices.  They define, for each element, the parametrization in
    which the shared vertex sits at the origin and a shared edge (if any)
    runs along the first parametric axis, so that both elements agree on the
    location of the singularity.
    """

    kind: Adjacency
    shared: tuple[int, ...] = ()
    frame_x: tuple[int, int] = (0, 1)
    frame_y: tuple[int, int] = (0, 1)


class Topology:
    """Directed-edge connectivity of a (possibly open) quad mesh."""

    def __init__(self, quads):
        self.quads = np.asarray(quads, dtype=np.int64)
        self.half = {}
        for qi, quad in enumerate(self.quads.tolist()):
            for k in range(4):
                key = (quad[k], quad[(k + 1) % 4])
                if key in self.half:
                    raise OrientationError(
                        f"directed edge {key} used twice (quads {self.half[key][0]} and {qi}); "
                        "inconsistent orientation or non-manifold edge")
                self.half[key] = (qi, k)

    def face_of(self, a, b):
        """Quad containing the directed edge ``a -> b`` and the local index of ``a``."""
        return self.half.get((a, b))

    def opposite(self, a, b):
        """The two remaining vertices of the quad holding ``a -> b``, in cyclic order."""
        hit = self.half.get((a, b))
        if hit is None:
            raise MeshError(f"no quad contains directed edge {a}->{b}")
        qi, k = hit
        quad = self.quads[qi]
        return int(quad[(k + 2) % 4]), int(quad[(k + 3) % 4])

    def ring(self, v, start_quad):
        """Quads around ``v`` in counter-clockwise order starting at ``start_quad``.

        Returns ``None`` if the fan around ``v`` is not closed.
        """
        out = []
        qi = start_quad
        for _ in range(64):
            quad = self.quads[qi].tolist()
            k = quad.index(v)
            out.append(qi)
            prev = quad[(k + 3) % 4]
            hit = self.half.get((v, prev))
            if hit is None:
                return None
            qi = hit[0]
            if qi == start_quad:
                return out
        raise MeshError(f"fan around vertex {v} does not close")


def _signed_area_vector(p):
    # p: (..., 4, 3) quad corners; half the cross product of the diagonals
    return 0.5 * np.cross(p[..., 2, :] - p[..., 0, :], p[..., 3, :] - p[..., 1, :])


@dataclass(frozen=True, eq=False)
class QuadMesh:
    """Closed quad surface with shell/inflow region tags.

    Parameters
    ----------
    vertices : (n, 3) array
    quads : (m, 4) int array, counter-clockwise seen from outside
    region : (m,) int array of :class:`Region` values
    boundary_curve : ordered vertex indices of the shell/inflow interface;
        derived from the tags when omitted.
    """

    vertices: np.ndarray
    quads: np.ndarray
    region: np.ndarray
    boundary_curve: np.ndarray = field(default=None)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        quads = np.ascontiguousarray(self.quads, dtype=np.int64)
        region = np.ascontiguousarray(self.region, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if quads.ndim != 2 or quads.shape[1] != 4:
            raise MeshError("only quadrilateral faces are supported")
        if region.shape != (len(quads),):
            raise MeshError("one region tag per quad is required")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "quads", quads)
        object.__setattr__(self, "region", region)
        self._validate()
        if self.boundary_curve is None:
            curve = _interface_curve(quads, region)
        else:
            curve = np.asarray(self.boundary_curve, dtype=np.int64)
        object.__setattr__(self, "boundary_curve", curve)

    def _validate(self):
        quads, nv = self.quads, len(self.vertices)
        if len(quads) == 0:
            raise MeshError("mesh has no faces")
        if (quads.min() < 0 or quads.max() >= nv):
            raise MeshError("quad references a vertex index out of range")
        for qi, quad in enumerate(quads):
            if len(set(quad.tolist())) != 4:
                raise MeshError(f"quad {qi} has repeated vertices")
        counts = defaultdict(int)
        for quad in quads.tolist():
            for k in range(4):
                a, b = quad[k], quad[(k + 1) % 4]
                counts[(min(a, b), max(a, b))] += 1
        bad = [e for e, c in counts.items() if c > 2]
        if bad:
            raise NonManifoldError(f"edge {bad[0]} is shared by more than two quads")
        topo = Topology(quads)  # raises OrientationError
        open_edges = [e for e, c in counts.items() if c == 1]
        if open_edges:
            raise MeshError(f"mesh is not closed: edge {open_edges[0]} has a single quad")
        object.__setattr__(self, "_topo", topo)
        area = np.linalg.norm(_signed_area_vector(self.vertices[quads]), axis=-1)
        if np.any(area <= 1e-14 * max(1.0, float(np.max(area, initial=0.0)))):
            raise MeshError(f"degenerate quad {int(np.argmin(area))}")
        both = np.any(self.region == Region.SHELL) and np.any(self.region == Region.INFLOW)
        for tag in (Region.SHELL, Region.INFLOW):
            members = np.flatnonzero(self.region == tag)
            if both and not _edge_connected(quads, members):
                raise MeshError(f"{tag.name.lower()} region is not edge-connected")
        if np.any((self.region != Region.SHELL) & (self.region != Region.INFLOW)):
            raise MeshError("unknown region tag")

    @property
    def topology(self) -> Topology:
        return self._topo

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_quads(self):
        return len(self.quads)

    @cached_property
    def edges(self):
        """Unique undirected edges as an (E, 2) array with ``a < b``."""
        e = np.concatenate([self.quads[:, [k, (k + 1) % 4]] for k in range(4)])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def vertex_quads(self):
        out = [[] for _ in range(self.n_vertices)]
        for qi, quad in enumerate(self.quads.tolist()):
            for v in quad:
                out[v].append(qi)
        return out

    def euler_characteristic(self):
        return self.n_vertices - len(self.edges) + self.n_quads

    def with_vertices(self, vertices):
        return QuadMesh(vertices, self.quads, self.region, self.boundary_curve)

    @cached_property
    def inflow_vertices(self):
        """Vertices touched by any inflow quad."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.quads[self.region == Region.INFLOW].ravel()] = True
        return mask

    def components(self):
        """Edge-connected components as a per-quad label array."""
        labels = -np.ones(self.n_quads, dtype=np.int64)
        comp = 0
        for seed in range(self.n_quads):
            if labels[seed] >= 0:
                continue
            stack = [seed]
            labels[seed] = comp
            while stack:
                qi = stack.pop()
                quad = self.quads[qi].tolist()
                for k in range(4):
                    hit = self._topo.face_of(quad[(k + 1) % 4], quad[k])
                    if hit is not None and labels[hit[0]] < 0:
                        labels[hit[0]] = comp
                        stack.append(hit[0])
            comp += 1
        return labels


def _edge_connected(quads, members):
    member_set = set(members.tolist())
    edge_owner = defaultdict(list)
    for qi in members.tolist():
        quad = quads[qi].tolist()
        for k in range(4):
            a, b = quad[k], quad[(k + 1) % 4]
            edge_owner[(min(a, b), max(a, b))].append(qi)
    seen = {members[0]}
    stack = [int(members[0])]
    while stack:
        qi = stack.pop()
        quad = quads[qi].tolist()
        for k in range(4):
            a, b = quad[k], quad[(k + 1) % 4]
            for other in edge_owner[(min(a, b), max(a, b))]:
                if other not in seen and other in member_set:
                    seen.add(other)
                    stack.append(other)
    return len(seen) == len(member_set)


def _interface_curve(quads, region):
    """Order the shell/inflow interface edges into a single closed loop."""
    if not (np.any(region == Region.SHELL) and np.any(region == Region.INFLOW)):
        return np.zeros(0, dtype=np.int64)
    nxt = {}
    for qi in np.flatnonzero(region == Region.SHELL).tolist():
        quad = quads[qi].tolist()
        for k in range(4):
            a, b = quad[k], quad[(k + 1) % 4]
            nxt[(a, b)] = qi
    succ = {}
    for qi in np.flatnonzero(region == Region.INFLOW).tolist():
        quad = quads[qi].tolist()
        for k in range(4):
            a, b = quad[k], quad[(k + 1) % 4]
            if (b, a) in nxt:
                # walk the interface with the shell region on the left
                if b in succ:
                    raise MeshError("shell/inflow interface is not a simple curve")
                succ[b] = a
    start = min(succ)
    loop = [start]
    v = succ[start]
    while v != start:
        loop.append(v)
        if len(loop) > len(succ):
            raise MeshError("shell/inflow interface is not a simple curve")
        v = succ[v]
    if len(loop) != len(succ):
        raise MeshError("shell/inflow interface must be a single closed curve")
    return np.asarray(loop, dtype=np.int64)


# --------------------------------------------------------------------------
# file formats

_TAGS = {"shell": Region.SHELL, "inflow": Region.INFLOW}


def load_quad_mesh(path, fmt=None) -> QuadMesh:
    """Read a mesh in the canonical ``quadmesh 1`` text format or Wavefront OBJ.

    OBJ faces take their region from the active group (``g shell`` /
    ``g inflow``); faces outside a recognized group are rejected.
    """
    path = Path(path)
    if fmt is None:
        fmt = "obj" if path.suffix.lower() == ".obj" else "quadmesh"
    text = path.read_text()
    if fmt == "obj":
        return _parse_obj(text)
    if fmt == "quadmesh":
        return _parse_quadmesh(text)
    raise MeshError(f"unknown mesh format {fmt!r}")


def _parse_quadmesh(text):
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0].split() != ["quadmesh", "1"]:
        raise MeshError("missing 'quadmesh 1' header")
    verts, quads, tags = [], [], []
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "v" and len(parts) == 4:
            verts.append([float(x) for x in parts[1:]])
        elif parts[0] == "q":
            if len(parts) != 6:
                raise MeshError(f"quad line needs 4 indices and a tag: {ln!r}")
            if parts[5] not in _TAGS:
                raise MeshError(f"missing or unknown region tag in {ln!r}")
            quads.append([int(x) for x in parts[1:5]])
            tags.append(_TAGS[parts[5]])
        else:
            raise MeshError(f"unrecognized line {ln!r}")
    return QuadMesh(np.array(verts, dtype=float).reshape(-1, 3),
                    np.array(quads, dtype=np.int64).reshape(-1, 4), np.array(tags))


def _parse_obj(text):
    verts, quads, tags = [], [], []
    group = None
    for ln in text.splitlines():
        parts = ln.split("#", 1)[0].split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] in ("g", "o"):
            name = parts[1].lower() if len(parts) > 1 else ""
            group = _TAGS.get(name)
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) for p in parts[1:]]
            if len(idx) != 4:
                raise MeshError(f"face with {len(idx)} vertices; only quads are supported")
            if group is None:
                raise MeshError("face outside a 'shell' or 'inflow' group")
            n = len(verts)
            quads.append([i - 1 if i > 0 else n + i for i in idx])
            tags.append(group)
    return QuadMesh(np.array(verts, dtype=float).reshape(-1, 3),
                    np.array(quads, dtype=np.int64).reshape(-1, 4), np.array(tags))


def save_quad_mesh(mesh: QuadMesh, path):
    """Write the canonical text format; coordinates round-trip exactly."""
    names = {Region.SHELL: "shell", Region.INFLOW: "inflow"}
    out = ["quadmesh 1"]
    out += ["v %r %r %r" % tuple(float(c) for c in p) for p in mesh.vertices]
    out += ["q %d %d %d %d %s" % (*quad, names[Region(tag)])
            for quad, tag in zip(mesh.quads.tolist(), mesh.region.tolist())]
    Path(path).write_text("\n".join(out) + "\n")


# --------------------------------------------------------------------------
# queries

def vertex_valences(mesh: QuadMesh) -> np.ndarray:
    """Number of edges terminating at each vertex."""
    val = np.zeros(mesh.n_vertices, dtype=np.int64)
    np.add.at(val, mesh.edges.ravel(), 1)
    return val


def extraordinary_vertices(mesh: QuadMesh) -> np.ndarray:
    return np.flatnonzero(vertex_valences(mesh) != 4)


def classify_adjacency(mesh: QuadMesh, a: int, b: int) -> AdjacencyCase:
    if a == b:
        return AdjacencyCase(Adjacency.IDENTICAL, tuple(mesh.quads[a].tolist()))
    qa, qb = mesh.quads[a].tolist(), mesh.quads[b].tolist()
    shared = [v for v in qa if v in qb]
    if not shared:
        return AdjacencyCase(Adjacency.DISJOINT)
    if len(shared) == 1:
        v = shared[0]
        ia, ib = qa.index(v), qb.index(v)
        return AdjacencyCase(Adjacency.COMMON_VERTEX, (v,),
                             (ia, (ia + 1) % 4), (ib, (ib + 1) % 4))
    if len(shared) == 2:
        for k in range(4):
            p, r = qa[k], qa[(k + 1) % 4]
            if p in shared and r in shared:
                # in b the edge runs r -> p; both frames start at p, run toward r
                jb = qb.index(p)
                if qb[(jb + 3) % 4] != r:
                    raise MeshError(f"quads {a} and {b} share an edge with inconsistent orientation")
                return AdjacencyCase(Adjacency.COMMON_EDGE, (p, r), (k, (k + 1) % 4),
                                     (jb, (jb + 3) % 4))
    raise MeshError(f"quads {a} and {b} share {len(shared)} vertices without a common edge")


def neighbor_pairs(mesh: QuadMesh):
    """All ordered element pairs that share at least one vertex, as a dict
    ``(a, b) -> AdjacencyCase``."""
    out = {}
    for a in range(mesh.n_quads):
        near = set()
        for v in mesh.quads[a].tolist():
            near.update(mesh.vertex_quads[v])
        for b in sorted(near):
            out[(a, b)] = classify_adjacency(mesh, a, b)
    return out


def area_vector_sum(mesh: QuadMesh) -> np.ndarray:
    """Sum of area-weighted quad normals; vanishes for a closed mesh."""
    return _signed_area_vector(mesh.vertices[mesh.quads]).sum(axis=0)


def perturb_interior(mesh: QuadMesh, amplitude: float, seed: int) -> QuadMesh:
    """Randomly displace shell vertices away from the inflow segment.

    Each eligible vertex gets an independent uniform offset in
    ``[-amplitude, amplitude]^3`` drawn from a stream keyed by
    ``(seed, vertex index)``, so the result does not depend on traversal
    order.  Vertices of inflow quads (which include the interface curve)
    are left bitwise untouched.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    verts = mesh.vertices.copy()
    if amplitude == 0:
        return mesh.with_vertices(verts)
    movable = ~mesh.inflow_vertices
    movable[mesh.boundary_curve] = False
    for v in np.flatnonzero(movable).tolist():
        rng = np.random.default_rng([int(seed), v])
        verts[v] += rng.uniform(-amplitude, amplitude, 3)
    try:
        out = mesh.with_vertices(verts)
    except MeshError as exc:
        raise MeshError(f"perturbation amplitude {amplitude} degenerates the mesh: {exc}") from exc
    ref = np.linalg.norm(_signed_area_vector(mesh.vertices[mesh.quads]), axis=-1)
    new = _signed_area_vector(verts[mesh.quads])
    old = _signed_area_vector(mesh.vertices[mesh.quads])
    if np.any(np.einsum("ij,ij->i", new, old) <= 0.1 * ref ** 2):
        raise MeshError(f"perturbation amplitude {amplitude} folds or collapses a quad")
    return out


# --------------------------------------------------------------------------
# Catmull-Clark refinement

def catmull_clark_operator(quads, n_vertices):
    """Linear refinement operator for one Catmull-Clark step.

    Works on open meshes too: rows whose stencil is incomplete (boundary
    edges, vertices with an open fan) are flagged invalid.

    Returns
    -------
    S : (n_new, n_vertices) array
    valid : (n_new,) bool
    child_quads : (4 * n_quads, 4) int array; child ``4*q + i`` holds the
        original corner ``i`` of quad ``q`` at its first corner.
    edge_index : dict mapping sorted vertex pairs to new-vertex indices
    """
    quads = np.asarray(quads, dtype=np.int64)
    topo = Topology(quads)
    nq = len(quads)
    edge_index = {}
    for quad in quads.tolist():
        for k in range(4):
            key = (min(quad[k], quad[(k + 1) % 4]), max(quad[k], quad[(k + 1) % 4]))
            if key not in edge_index:
                edge_index[key] = n_vertices + len(edge_index)
    ne = len(edge_index)
    n_new = n_vertices + ne + nq
    S = np.zeros((n_new, n_vertices))
    valid = np.zeros(n_new, dtype=bool)
    face0 = n_vertices + ne
    for qi, quad in enumerate(quads.tolist()):
        S[face0 + qi, quad] = 0.25
        valid[face0 + qi] = True
    for (a, b), idx in edge_index.items():
        fa, fb = topo.face_of(a, b), topo.face_of(b, a)
        if fa is None or fb is None:
            continue
        S[idx, a] += 0.25
        S[idx, b] += 0.25
        S[idx] += 0.25 * S[face0 + fa[0]] + 0.25 * S[face0 + fb[0]]
        valid[idx] = True
    first_quad = {}
    for qi, quad in enumerate(quads.tolist()):
        for v in quad:
            first_quad.setdefault(v, qi)
    for v, q0 in first_quad.items():
        fan = topo.ring(v, q0)
        if fan is None:
            continue
        n = len(fan)
        S[v, v] += (n - 2.0) / n
        for qi in fan:
            quad = quads[qi].tolist()
            k = quad.index(v)
            S[v, quad[(k + 1) % 4]] += 1.0 / n ** 2
            S[v] += S[face0 + qi] / n ** 2
        valid[v] = True
    child = np.empty((4 * nq, 4), dtype=np.int64)
    for qi, quad in enumerate(quads.tolist()):
        for i in range(4):
            a, b, c = quad[(i + 3) % 4], quad[i], quad[(i + 1) % 4]
            child[4 * qi + i] = (b, edge_index[(min(b, c), max(b, c))], face0 + qi,
                                 edge_index[(min(a, b), max(a, b))])
    return S, valid, child, edge_index


def refine(mesh: QuadMesh) -> QuadMesh:
    """One global Catmull-Clark step; children inherit their parent's tag."""
    S, valid, child, edge_index = catmull_clark_operator(mesh.quads, mesh.n_vertices)
    assert valid.all()
    curve = mesh.boundary_curve.tolist()
    new_curve = []
    for i, v in enumerate(curve):
        w = curve[(i + 1) % len(curve)]
        new_curve += [v, edge_index[(min(v, w), max(v, w))]]
    return QuadMesh(S @ mesh.vertices, child, np.repeat(mesh.region, 4),
                    np.asarray(new_curve, dtype=np.int64))


def limit_positions(mesh: QuadMesh, control=None) -> np.ndarray:
    """Limit-surface position of every control vertex (closed meshes)."""
    X = mesh.vertices if control is None else np.asarray(control, dtype=float)
    out = np.empty_like(X)
    topo = mesh.topology
    for v in range(mesh.n_vertices):
        fan = topo.ring(v, mesh.vertex_quads[v][0])
        n = len(fan)
        acc = n * n * X[v]
        for qi in fan:
            quad = mesh.quads[qi].tolist()
            k = quad.index(v)
            acc = acc + 4.0 * X[quad[(k + 1) % 4]] + X[quad[(k + 2) % 4]]
        out[v] = acc / (n * (n + 5))
    return out
