"""Catmull-Clark subdivision surface basis.

Regular elements (all four corners of valence 4) are bicubic uniform
B-spline patches over a 4x4 control grid.  Elements with one extraordinary
corner of valence N use a 2N+8 control stencil and are evaluated by virtual
refinement: a point at parametric distance ~2^-l from the extraordinary
corner is located in a regular sub-patch whose controls are
``P_k A^(l-1)`` applied to the stencil, with ``A`` the local subdivision
matrix.

Stencil ordering (canonical frame, extraordinary vertex at the origin)::

    index 0         the corner vertex w0
    1 + 2j, 2 + 2j  edge / face neighbours of w0, counter-clockwise,
                    starting with w1 (u-axis) and w2 (diagonal)
    2N+1 ... 2N+7   the seven outer controls P30 P31 P32 P33 P23 P13 P03
                    (named by their position in the regular 4x4 grid)

Regular patches store their controls in 4x4 grid order instead, index
``4 * i + j`` for the control at grid position (i, j), i along u.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mesh import QuadMesh, Topology, catmull_clark_operator, refine, vertex_valences

# canonical stencil index -> (i, j) position in the regular grid, N = 4
_CANON_GRID = [(1, 1), (2, 1), (2, 2), (1, 2), (0, 2), (0, 1), (0, 0), (1, 0),
               (2, 0), (3, 0), (3, 1), (3, 2), (3, 3), (2, 3), (1, 3), (0, 3)]
GRID_FROM_CANON = np.empty(16, dtype=np.int64)
for _c, (_i, _j) in enumerate(_CANON_GRID):
    GRID_FROM_CANON[4 * _i + _j] = _c

# derivative slots returned by basis evaluation, per requested order
N_DERIV = {0: 1, 1: 3, 2: 6}


def bspline_1d(t, order=2):
    """Uniform cubic B-spline basis on [0, 1] and its derivatives.

    Returns an array of shape (order + 1, len(t), 4).
    """
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    out = np.empty((order + 1,) + t.shape + (4,))
    out[0, ..., 0] = s ** 3 / 6.0
    out[0, ..., 1] = (3 * t ** 3 - 6 * t ** 2 + 4) / 6.0
    out[0, ..., 2] = (-3 * t ** 3 + 3 * t ** 2 + 3 * t + 1) / 6.0
    out[0, ..., 3] = t ** 3 / 6.0
    if order >= 1:
        out[1, ..., 0] = -0.5 * s ** 2
        out[1, ..., 1] = 1.5 * t ** 2 - 2 * t
        out[1, ..., 2] = -1.5 * t ** 2 + t + 0.5
        out[1, ..., 3] = 0.5 * t ** 2
    if order >= 2:
        out[2, ..., 0] = s
        out[2, ..., 1] = 3 * t - 2
        out[2, ..., 2] = -3 * t + 1
        out[2, ..., 3] = t
    return out


def bspline_patch_basis(u, v, order=2):
    """Tensor-product basis for the 4x4 grid, shape (N_DERIV[order], n, 16)."""
    bu = bspline_1d(u, order)
    bv = bspline_1d(v, order)
    combos = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)][:N_DERIV[order]]
    out = np.empty((len(combos), len(np.atleast_1d(u)), 16))
    for k, (a, b) in enumerate(combos):
        out[k] = (bu[a][:, :, None] * bv[b][:, None, :]).reshape(-1, 16)
    return out


# --------------------------------------------------------------------------
# stencils

def canonical_stencil(topo: Topology, w0, w1, w2, w3):
    """2N+8 control indices of the patch with corner ``w0`` at the origin."""
    ring = [w1, w2]
    e = w3
    for _ in range(64):
        if e == w1:
            break
        f, e_next = topo.opposite(w0, e)
        ring += [e, f]
        e = e_next
    else:
        raise RuntimeError("fan around patch corner does not close")
    x0, x1 = topo.opposite(w1, ring[-1])
    x1b, x2 = topo.opposite(w2, w1)
    x3, x4 = topo.opposite(w2, x2)
    x4b, x5 = topo.opposite(w3, w2)
    x5b, x6 = topo.opposite(ring[3], w3)
    if (x1, x4, x5) != (x1b, x4b, x5b):
        raise RuntimeError("patch neighbourhood is not regular away from the corner")
    return [w0] + ring + [x0, x1, x2, x3, x4, x5, x6]


def _local_quads(n):
    """Abstract neighbourhood of a patch whose origin has valence ``n``."""
    e = lambda j: 1 + 2 * (j % n)  # noqa: E731
    f = lambda j: 2 + 2 * (j % n)  # noqa: E731
    x = [2 * n + 1 + k for k in range(7)]
    quads = [(0, e(j), f(j), e(j + 1)) for j in range(n)]
    quads += [(e(0), f(n - 1), x[0], x[1]), (f(0), e(0), x[1], x[2]),
              (f(0), x[2], x[3], x[4]), (e(1), f(0), x[4], x[5]), (f(1), e(1), x[5], x[6])]
    return np.array(quads, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class SubdivisionMatrix:
    """Local subdivision operator around a vertex of valence ``valence``.

    ``matrix`` maps a (2N+8) canonical stencil to the stencil of the
    sub-patch touching the corner after one refinement; ``picks[k-1]`` maps
    it to the 4x4 grid of the regular sub-patch k (1: u-side, 2: diagonal,
    3: v-side), each oriented like the parent.
    """

    valence: int
    matrix: np.ndarray
    picks: tuple
    _powers: list = field(default_factory=list, repr=False)
    _level_maps: dict = field(default_factory=dict, repr=False)

    def power(self, k):
        """``matrix ** k``, cached."""
        if not self._powers:
            self._powers.append(np.eye(len(self.matrix)))
        while len(self._powers) <= k:
            self._powers.append(self.matrix @ self._powers[-1])
        return self._powers[k]

    def level_map(self, level, k):
        """Controls of regular sub-patch ``k`` at refinement ``level`` (>= 1)."""
        key = (level, k)
        if key not in self._level_maps:
            self._level_maps[key] = self.picks[k - 1] @ self.power(level - 1)
        return self._level_maps[key]


@lru_cache(maxsize=None)
def subdivision_matrix(n: int) -> SubdivisionMatrix:
    if n < 3:
        raise ValueError(f"valence must be at least 3, got {n}")
    quads = _local_quads(n)
    size = 2 * n + 8
    topo = Topology(quads)
    assert canonical_stencil(topo, 0, 1, 2, 3) == list(range(size))
    S, valid, child, _ = catmull_clark_operator(quads, size)
    ctopo = Topology(child)

    def pick(quad, corner):
        w = [int(child[quad][(corner + i) % 4]) for i in range(4)]
        idx = canonical_stencil(ctopo, *w)
        if not valid[idx].all():
            raise RuntimeError("sub-patch stencil reaches outside the local neighbourhood")
        return S[idx]

    A = pick(0, 0)
    picks = tuple(pick(k, (4 - k) % 4)[GRID_FROM_CANON] for k in (1, 2, 3))
    return SubdivisionMatrix(n, A, picks)


def limit_mask(n):
    """Weights of the limit position of the corner over the canonical stencil."""
    w = np.zeros(2 * n + 8)
    w[0] = n * n
    w[1:2 * n + 1:2] = 4.0
    w[2:2 * n + 1:2] = 1.0
    return w / (n * (n + 5))


def virtual_level(s, t):
    """Refinement level at which (s, t) leaves the corner sub-patch."""
    m = np.maximum(s, t)
    with np.errstate(divide="ignore"):
        lev = np.ceil(-np.log2(np.where(m > 0, m, 1.0))).astype(np.int64)
    lev = np.maximum(lev, 1)
    # guard against rounding in log2
    lev = np.where(m < 2.0 ** -lev, lev + 1, lev)
    lev = np.where((lev > 1) & (m >= 2.0 ** -(lev - 1)), lev - 1, lev)
    return lev


def required_levels(q: int, valence: int = 3) -> int:
    """Virtual refinement levels needed for a q-point tensor Gauss rule."""
    if q < 1:
        raise ValueError("quadrature order must be >= 1")
    from .quadrature import gauss_rule
    x = gauss_rule(q).points
    s, t = np.meshgrid(x, x, indexing="ij")
    return int(virtual_level(s.ravel(), t.ravel()).max())


# --------------------------------------------------------------------------
# patches

# corner c of the unit square and the frame that puts it at the origin
_CORNERS = np.array([(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])


def frame_axes(origin, u_corner):
    """Origin and orthonormal axes (as columns) of a corner frame."""
    w_corner = (origin + 3) % 4 if u_corner == (origin + 1) % 4 else (origin + 1) % 4
    o = _CORNERS[origin]
    E = np.stack([_CORNERS[u_corner] - o, _CORNERS[w_corner] - o], axis=1)
    return o, E


@dataclass(frozen=True)
class SubdivisionPatch:
    element: int
    stencil: np.ndarray
    valence: int = 4
    corner: int = 0

    @property
    def is_regular(self):
        return self.valence == 4

    @property
    def size(self):
        return len(self.stencil)


def _check_uv(uv):
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    if uv.shape[-1] != 2:
        raise ValueError("parametric points must have shape (n, 2)")
    if np.any(uv < 0) or np.any(uv > 1):
        raise ValueError("parametric point outside [0, 1]^2")
    return uv


def patch_basis(patch: SubdivisionPatch, uv, order=0):
    """Basis functions of ``patch`` at ``uv``.

    Returns an array of shape ``(N_DERIV[order], n, patch.size)`` holding
    values and then, as requested, (d/du, d/dv) and (uu, uv, vv) derivatives.
    """
    uv = _check_uv(uv)
    if patch.is_regular:
        return bspline_patch_basis(uv[:, 0], uv[:, 1], order)
    o, E = frame_axes(patch.corner, (patch.corner + 1) % 4)
    st = (uv - o) @ E
    out = _ev_basis(patch.valence, st[:, 0], st[:, 1], order)
    if order == 0:
        return out
    # pull derivatives back from the canonical frame
    res = np.empty_like(out)
    res[0] = out[0]
    g = out[1:3]
    res[1:3] = np.einsum("ab,bnk->ank", E, g)
    if order == 2:
        H = np.empty((2, 2) + out.shape[1:])
        H[0, 0], H[0, 1], H[1, 0], H[1, 1] = out[3], out[4], out[4], out[5]
        Hn = np.einsum("ac,cdnk,bd->abnk", E, H, E)
        res[3], res[4], res[5] = Hn[0, 0], Hn[0, 1], Hn[1, 1]
    return res


def _ev_basis(n, s, t, order):
    sm = subdivision_matrix(n)
    size = 2 * n + 8
    out = np.zeros((N_DERIV[order], len(s), size))
    at_corner = (s == 0) & (t == 0)
    if np.any(at_corner):
        if order > 0:
            raise ValueError("derivatives are not defined at an extraordinary vertex")
        out[0, at_corner] = limit_mask(n)
    idx = np.flatnonzero(~at_corner)
    if idx.size == 0:
        return out
    s, t = s[idx], t[idx]
    lev = virtual_level(s, t)
    scale = 2.0 ** lev
    ss, tt = s * scale, t * scale
    k = np.where(ss >= 1.0, np.where(tt >= 1.0, 2, 1), 3)
    ls = np.where(k == 3, ss, ss - 1.0)
    lt = np.where(k == 1, tt, tt - 1.0)
    ls, lt = np.clip(ls, 0.0, 1.0), np.clip(lt, 0.0, 1.0)
    local = bspline_patch_basis(ls, lt, order)
    dscale = np.stack([np.ones_like(scale), scale, scale,
                       scale ** 2, scale ** 2, scale ** 2])[:N_DERIV[order]]
    local *= dscale[:, :, None]
    for key in set(zip(lev.tolist(), k.tolist())):
        sel = np.flatnonzero((lev == key[0]) & (k == key[1]))
        out[:, idx[sel]] = local[:, sel] @ sm.level_map(*key)
    return out


@dataclass(frozen=True, eq=False)
class PatchSet:
    """One :class:`SubdivisionPatch` per quad of ``mesh``.

    ``mesh`` is the mesh the basis lives on; it differs from the input of
    :func:`build_patches` when a preliminary refinement was needed.
    """

    mesh: QuadMesh
    patches: tuple
    refined: bool = False

    def __len__(self):
        return len(self.patches)

    def __getitem__(self, e):
        return self.patches[e]

    @property
    def max_size(self):
        return max(p.size for p in self.patches)

    def padded_stencils(self):
        """(E, max_size) stencil array padded with 0 plus a validity mask."""
        m = self.max_size
        S = np.zeros((len(self), m), dtype=np.int64)
        mask = np.zeros((len(self), m), dtype=bool)
        for e, p in enumerate(self.patches):
            S[e, :p.size] = p.stencil
            mask[e, :p.size] = True
        return S, mask

    def basis(self, e, uv, order=0):
        return patch_basis(self.patches[e], uv, order)

    def tensor_basis(self, points_2d, order=0):
        """Padded basis of every element at the same parametric points.

        Returns ``(E, N_DERIV[order], n, max_size)``.
        """
        m = self.max_size
        uv = np.asarray(points_2d, dtype=float)
        out = np.zeros((len(self), N_DERIV[order], len(uv), m))
        cache = {}
        for e, p in enumerate(self.patches):
            key = (p.valence, p.corner)
            if key not in cache:
                cache[key] = patch_basis(p, uv, order)
            out[e, :, :, :p.size] = cache[key]
        return out


def _needs_refinement(mesh: QuadMesh, valence):
    for quad in mesh.quads:
        if np.count_nonzero(valence[quad] != 4) > 1:
            return True
    return False


def build_patches(mesh: QuadMesh) -> PatchSet:
    """Patch stencils for every quad; refines once if a quad has two EVs."""
    valence = vertex_valences(mesh)
    refined = False
    if _needs_refinement(mesh, valence):
        mesh = refine(mesh)
        valence = vertex_valences(mesh)
        refined = True
        assert not _needs_refinement(mesh, valence)
    topo = mesh.topology
    patches = []
    for e, quad in enumerate(mesh.quads.tolist()):
        irregular = [c for c in range(4) if valence[quad[c]] != 4]
        corner = irregular[0] if irregular else 0
        w = [quad[(corner + i) % 4] for i in range(4)]
        st = np.asarray(canonical_stencil(topo, *w), dtype=np.int64)
        if irregular:
            patches.append(SubdivisionPatch(e, st, int(valence[quad[corner]]), corner))
        else:
            patches.append(SubdivisionPatch(e, st[GRID_FROM_CANON], 4, 0))
    return PatchSet(mesh, tuple(patches), refined)


# --------------------------------------------------------------------------
# geometry

def evaluate(patch: SubdivisionPatch, uv, config, order=0):
    """Surface point and derivatives, shape ``(N_DERIV[order], n, 3)``."""
    B = patch_basis(patch, uv, order)
    return B @ np.asarray(config)[patch.stencil]


def area_vectors(d1):
    """Un-normalized normals ``x_u x x_v`` from first derivatives (2, n, 3)."""
    return np.cross(d1[0], d1[1])


def surface_jacobian(patch: SubdivisionPatch, uv, config, reference):
    """Area ratio of the current to the reference surface at ``uv``.

    Uses the current normal for orientation, so rigid motions give exactly 1.
    """
    cur = evaluate(patch, uv, config, 1)
    ref = evaluate(patch, uv, reference, 1)
    return (np.linalg.norm(area_vectors(cur[1:3]), axis=-1)
            / np.linalg.norm(area_vectors(ref[1:3]), axis=-1))


def dump_basis_table(path, patch_id, order, values):
    """Binary table: int64 header (patch id, order, count, width), float64 rows."""
    values = np.ascontiguousarray(values, dtype="<f8").reshape(-1, values.shape[-1])
    header = np.array([patch_id, order, values.shape[0], values.shape[1]], dtype="<i8")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(values.tobytes())


def load_basis_table(path):
    raw = open(path, "rb").read()
    header = np.frombuffer(raw[:32], dtype="<i8")
    values = np.frombuffer(raw[32:], dtype="<f8").reshape(header[2], header[3])
    return int(header[0]), int(header[1]), values.copy()
