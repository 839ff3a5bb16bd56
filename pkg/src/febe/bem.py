"""Galerkin boundary elements for Stokes flow on a deforming closed surface.

The unknown is the traction jump across the surface, expanded in the same
subdivision basis as the geometry (matching mesh).  The discrete system is

    [ V    G_c ] [ t    ]   [ F ]
    [ G_c^T  0 ] [ zeta ] = [ 0 ]

with ``V`` the single-layer (Stokeslet) Galerkin matrix, ``G_c`` one column
per closed component pairing the basis with the current normal, and

    F = (1 + lam)/2 * M g + (1 - lam) * K g        (finite lam)
    F = M g / 2 - K g                              (lam = inf)

where ``M`` is the mass matrix on the current surface and ``K`` the
double-layer (stresslet) Galerkin matrix.  For ``lam = inf`` the equation is
divided by ``1 + lam`` before taking the limit, so a translating rigid
sphere gives the classical drag ``6 pi U``.

Degrees of freedom are vertex-major: index ``3 * a + i`` holds component
``i`` of control vertex ``a``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .mesh import AdjacencyCase, classify_adjacency, neighbor_pairs
from .quadrature import (OrderHistogram, QuadratureSettings, gauss_rule, global_histogram,
                         product_rule)
from .subdivision import PatchSet, patch_basis

log = logging.getLogger(__name__)

_C_SL = 1.0 / (8.0 * np.pi)
_C_DL = 3.0 / (4.0 * np.pi)

# float budget for one batched contraction (controls chunk sizes)
_CHUNK_FLOATS = 4_000_000


class FluidAssemblyError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# kernels

def stokeslet(x, y):
    """Free-space Stokeslet ``(1/8 pi)(I/r + d d^T/r^3)``, ``d = x - y``.

    Broadcasts over leading dimensions; returns shape ``(..., 3, 3)``.
    """
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r2 = np.einsum("...i,...i->...", d, d)
    if np.any(r2 == 0):
        raise ValueError("Stokeslet evaluated at coincident points")
    r = np.sqrt(r2)
    inv = 1.0 / r
    G = d[..., :, None] * d[..., None, :] * (inv ** 3)[..., None, None]
    G += np.eye(3) * inv[..., None, None]
    return _C_SL * G


def stresslet(x, y, n_y):
    """Stresslet contracted with the normal at ``y``.

    ``(3/4 pi) d d^T (d . n_y) / r^5`` with ``d = x - y``.
    """
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r2 = np.einsum("...i,...i->...", d, d)
    if np.any(r2 == 0):
        raise ValueError("stresslet evaluated at coincident points")
    dn = np.einsum("...i,...i->...", d, np.asarray(n_y, dtype=float))
    return _C_DL * d[..., :, None] * d[..., None, :] * (dn / r2 ** 2.5)[..., None, None]


# --------------------------------------------------------------------------
# viscosity ratio

def parse_viscosity_ratio(value) -> float:
    """Accept a number ``>= 0`` or the string ``inf``; returns a float."""
    if isinstance(value, str):
        value = value.strip().lower()
        lam = np.inf if value in ("inf", "infinity") else float(value)
    else:
        lam = float(value)
    if np.isnan(lam) or lam < 0:
        raise ValueError(f"viscosity ratio must be >= 0 or inf, got {value!r}")
    return lam


def rhs_weights(lam):
    """Coefficients ``(alpha, beta)`` of ``F = alpha M g + beta K g``."""
    lam = parse_viscosity_ratio(lam)
    if np.isinf(lam):
        return 0.5, -1.0
    return 0.5 * (1.0 + lam), 1.0 - lam


# --------------------------------------------------------------------------
# element sampling

@dataclass
class _Samples:
    """Basis, weighted basis, points and unit normals at a point set."""

    B: np.ndarray       # (P, m) basis values
    Bw: np.ndarray      # (P, m) basis times rule weight times area element
    x: np.ndarray       # (P, 3) points on the current surface
    n: np.ndarray       # (P, 3) unit normals
    area: np.ndarray    # (P,) area element |x_u x x_v|


class _Sampler:
    """Caches patch bases per (element type, point set)."""

    def __init__(self, patches: PatchSet, config):
        self.patches = patches
        self.config = np.asarray(config, dtype=float)
        self.S, _ = patches.padded_stencils()
        self.m = patches.max_size

    def basis(self, e, uv, cache):
        p = self.patches[e]
        ck = (p.valence, p.corner)
        B = cache.get(ck)
        if B is None:
            B = np.zeros((3, len(uv), self.m))
            B[:, :, :p.size] = patch_basis(p, uv, 1)
            cache[ck] = B
        return B

    def samples(self, e, uv, weights, cache):
        """``cache`` is keyed by element type and must belong to ``uv``."""
        B = self.basis(e, uv, cache)
        d = B @ self.config[self.S[e]]
        nv = np.cross(d[1], d[2])
        area = np.linalg.norm(nv, axis=1)
        if np.any(area <= 0):
            raise FluidAssemblyError(f"degenerate surface element {e}")
        w = weights * area
        return _Samples(B[0], B[0] * w[:, None], d[0], nv / area[:, None], area)


def _tensor_samples(sampler: _Sampler, q):
    """Samples of all elements on the q x q tensor Gauss rule."""
    uv, w = _tensor2(q)
    E = len(sampler.patches)
    P = len(uv)
    out = dict(B=np.empty((E, P, sampler.m)), Bw=np.empty((E, P, sampler.m)),
               x=np.empty((E, P, 3)), n=np.empty((E, P, 3)))
    cache = {}
    for e in range(E):
        s = sampler.samples(e, uv, w, cache)
        out["B"][e], out["Bw"][e], out["x"][e], out["n"][e] = s.B, s.Bw, s.x, s.n
    return out


def _tensor2(q):
    return gauss_rule(q).tensor2()


# --------------------------------------------------------------------------
# block contractions

def _kernel_blocks(xx, yy, nx, ny, want_k):
    """Stokeslet and stresslet kernels for point pairs.

    Returns ``G (..., 3, 3)`` and, if requested, ``(T_xy, T_yx)`` where
    ``T_xy`` uses the normal at ``y`` and ``T_yx`` swaps the roles.
    """
    d = xx - yy
    r2 = np.einsum("...i,...i->...", d, d)
    if np.any(r2 <= 0):
        raise FluidAssemblyError("kernel evaluated at coincident points")
    inv = 1.0 / np.sqrt(r2)
    dd = d[..., :, None] * d[..., None, :]
    G = _C_SL * (dd * (inv ** 3)[..., None, None] + np.eye(3) * inv[..., None, None])
    if not want_k:
        return G, None
    S = _C_DL * dd * (inv ** 5)[..., None, None]
    dny = np.einsum("...i,...i->...", d, ny)
    dnx = np.einsum("...i,...i->...", d, nx)
    return G, (S * dny[..., None, None], -S * dnx[..., None, None])


def _contract(Bxw, ker, Byw):
    """``sum_p Bxw[c,p,a] ker[c,p,i,k] Byw[c,p,b]`` -> ``(c, a, i, b, k)``."""
    C, P, m = Bxw.shape
    t = ker.reshape(C, P, 9)[:, :, :, None] * Byw[:, :, None, :]   # (C,P,9,m)
    out = np.matmul(Bxw.transpose(0, 2, 1), t.reshape(C, P, 9 * m))
    return out.reshape(C, m, 3, 3, m).transpose(0, 1, 2, 4, 3)


def _contract_tensor(Bxw, ker, Byw):
    """As :func:`_contract` for tensor rules: ``ker`` is ``(c, Px, Py, 3, 3)``."""
    C, Px, m = Bxw.shape
    Py = Byw.shape[1]
    k = ker.reshape(C, Px, Py, 9).transpose(0, 1, 3, 2).reshape(C, Px * 9, Py)
    t = np.matmul(k, Byw).reshape(C, Px, 9 * m)
    out = np.matmul(Bxw.transpose(0, 2, 1), t)
    return out.reshape(C, m, 3, 3, m).transpose(0, 1, 2, 4, 3)


# --------------------------------------------------------------------------
# operator

@dataclass
class FluidOperator:
    """Discrete fluid operators on one configuration.

    ``V`` and ``K`` act on vertex-major traction / velocity coefficients;
    ``mass`` is the scalar mass matrix on the current surface; each column
    of ``constraints`` pairs the basis with the normal of one component.
    """

    V: np.ndarray
    K: np.ndarray | None
    mass: np.ndarray
    constraints: np.ndarray
    lam: float
    config: np.ndarray
    k_assembled: bool
    n_pairs: int = 0
    nonconverged: int = 0
    histogram: OrderHistogram = field(default_factory=OrderHistogram)

    @property
    def n_vertices(self):
        return self.mass.shape[0]

    @property
    def n_dofs(self):
        return 3 * self.n_vertices

    def mass3(self):
        return np.kron(self.mass, np.eye(3))

    def asymmetry(self):
        return np.max(np.abs(self.V - self.V.T)) / np.max(np.abs(self.V))


def _element_integrals(patches: PatchSet, config, components, q=6):
    """Mass matrix and normal-constraint columns on the current surface."""
    config = np.asarray(config, dtype=float)
    n = patches.mesh.n_vertices
    S, _ = patches.padded_stencils()
    uv, w = _tensor2(q)
    Bt = patches.tensor_basis(uv, 1)
    M = np.zeros((n, n))
    labels = np.unique(components)
    Gc = np.zeros((n, 3, len(labels)))
    for e in range(len(patches)):
        st = S[e]
        d = Bt[e] @ config[st]
        nv = np.cross(d[1], d[2])
        Bw = Bt[e, 0] * (w * np.linalg.norm(nv, axis=1))[:, None]
        np.add.at(M, (st[:, None], st[None, :]), Bt[e, 0].T @ Bw)
        c = np.searchsorted(labels, components[e])
        np.add.at(Gc[:, :, c], st, Bt[e, 0].T @ (w[:, None] * nv))
    return M, Gc.reshape(3 * n, len(labels))


def mass_and_constraints(patches: PatchSet, config):
    return _element_integrals(patches, config, patches.mesh.components())


class _Assembler:
    def __init__(self, patches, config, want_k, settings, histogram, budget):
        self.patches = patches
        self.sampler = _Sampler(patches, config)
        self.S = self.sampler.S
        self.m = self.sampler.m
        self.n = patches.mesh.n_vertices
        self.want_k = want_k
        self.settings = settings
        self.hist = histogram
        self.budget = budget
        N = 3 * self.n
        self.V = np.zeros(N * N)
        self.K = np.zeros(N * N) if want_k else None
        self.nonconverged = 0
        self.n_pairs = 0
        self._tensor = {}

    # scatter blocks[c, a, i, b, k] into the flat matrix at (S[e], S[f])
    def _scatter(self, target, e, f, blocks):
        N = 3 * self.n
        rows = (3 * self.S[e][:, :, None] + np.arange(3)).reshape(len(e), -1)
        cols = (3 * self.S[f][:, :, None] + np.arange(3)).reshape(len(e), -1)
        idx = rows[:, :, None] * N + cols[:, None, :]
        target += np.bincount(idx.ravel(), blocks.reshape(-1), minlength=N * N)

    def _tensor_data(self, q):
        if q not in self._tensor:
            self._tensor[q] = _tensor_samples(self.sampler, q)
        return self._tensor[q]

    def _disjoint_blocks(self, e, f, q):
        T = self._tensor_data(q)
        P = q * q
        chunk = max(1, _CHUNK_FLOATS // (P * P * 9 + P * 9 * self.m))
        V = np.empty((len(e), self.m, 3, self.m, 3))
        Kef = np.empty_like(V) if self.want_k else None
        Kfe = np.empty_like(V) if self.want_k else None
        for s in range(0, len(e), chunk):
            ee, ff = e[s:s + chunk], f[s:s + chunk]
            xx = T["x"][ee][:, :, None, :]
            yy = T["x"][ff][:, None, :, :]
            nx = T["n"][ee][:, :, None, :]
            ny = T["n"][ff][:, None, :, :]
            G, Ks = _kernel_blocks(xx, yy, nx, ny, self.want_k)
            Bx, By = T["Bw"][ee], T["Bw"][ff]
            V[s:s + chunk] = _contract_tensor(Bx, G, By)
            if self.want_k:
                Kef[s:s + chunk] = _contract_tensor(Bx, Ks[0], By)
                Kfe[s:s + chunk] = _contract_tensor(Bx, Ks[1], By)
        return V, Kef, Kfe

    def _singular_blocks(self, e, f, case, q):
        rule = product_rule(case, q)
        P = len(rule)
        ones = np.ones(P)
        cx, cy = {}, {}
        chunk = max(1, _CHUNK_FLOATS // (P * 9 * self.m))
        V = np.empty((len(e), self.m, 3, self.m, 3))
        Kef = np.empty_like(V) if self.want_k else None
        Kfe = np.empty_like(V) if self.want_k else None
        for s in range(0, len(e), chunk):
            ee, ff = e[s:s + chunk], f[s:s + chunk]
            sx = [self.sampler.samples(a, rule.uv_x, rule.weights, cx) for a in ee]
            sy = [self.sampler.samples(b, rule.uv_y, ones, cy) for b in ff]
            xx = np.stack([a.x for a in sx])
            yy = np.stack([b.x for b in sy])
            nx = np.stack([a.n for a in sx])
            ny = np.stack([b.n for b in sy])
            Bx = np.stack([a.Bw for a in sx])
            By = np.stack([b.Bw for b in sy])
            G, Ks = _kernel_blocks(xx, yy, nx, ny, self.want_k)
            V[s:s + chunk] = _contract(Bx, G, By)
            if self.want_k:
                Kef[s:s + chunk] = _contract(Bx, Ks[0], By)
                Kfe[s:s + chunk] = _contract(Bx, Ks[1], By)
        return V, Kef, Kfe

    def _adaptive(self, e, f, evaluate):
        """Batched order raising with the same stopping rule per pair."""
        st = self.settings
        e = np.asarray(e)
        f = np.asarray(f)
        prev = evaluate(e, f, st.q_min)
        active = np.arange(len(e))
        done_V = np.empty((len(e), self.m, 3, self.m, 3))
        done_Kef = np.empty_like(done_V) if self.want_k else None
        done_Kfe = np.empty_like(done_V) if self.want_k else None
        order = np.full(len(e), st.q_max)
        conv = np.zeros(len(e), dtype=bool)
        for q in range(st.q_min + 1, st.q_max + 1):
            cur = evaluate(e[active], f[active], q)
            diff = np.abs(cur[0] - prev[0]).reshape(len(active), -1).max(axis=1)
            if self.want_k:
                for a, b in ((cur[1], prev[1]), (cur[2], prev[2])):
                    diff = np.maximum(diff, np.abs(a - b).reshape(len(active), -1).max(axis=1))
            ok = diff < st.tol
            if q == st.q_max:
                # keep the last value for pairs that never met the criterion
                ok_store = np.ones_like(ok)
            else:
                ok_store = ok
            idx = active[ok_store]
            done_V[idx] = cur[0][ok_store]
            if self.want_k:
                done_Kef[idx] = cur[1][ok_store]
                done_Kfe[idx] = cur[2][ok_store]
            order[active[ok]] = q
            conv[active[ok]] = True
            keep = ~ok_store
            active = active[keep]
            prev = tuple(None if p is None else p[keep] for p in cur)
            if active.size == 0:
                break
        self.hist.record_many(order, conv)
        nc = int(np.count_nonzero(~conv))
        self.nonconverged += nc
        if nc:
            log.info("%d element pairs did not converge by q=%d", nc, st.q_max)
        return done_V, done_Kef, done_Kfe, order

    def _store(self, e, f, V, Kef, Kfe):
        e = np.asarray(e)
        f = np.asarray(f)
        self._scatter(self.V, e, f, V)
        off = e != f
        if np.any(off):
            # V_fe is the transpose of V_ef
            self._scatter(self.V, f[off], e[off], V[off].transpose(0, 3, 4, 1, 2))
        if self.want_k:
            self._scatter(self.K, e, f, Kef)
            if np.any(off):
                self._scatter(self.K, f[off], e[off], Kfe[off].transpose(0, 3, 4, 1, 2))

    def run(self):
        mesh = self.patches.mesh
        E = mesh.n_quads
        near = neighbor_pairs(mesh)
        groups = {}
        for (a, b), case in near.items():
            if a > b:
                continue
            key = (case.kind, case.frame_x, case.frame_y)
            groups.setdefault(key, []).append((a, b))
        # singular and near-singular pairs
        for (kind, fx, fy), pairs in sorted(groups.items(), key=lambda kv: (kv[0][0].value, kv[0][1:])):
            pairs = np.array(pairs)
            case = AdjacencyCase(kind, (), fx, fy)
            res = self._adaptive(pairs[:, 0], pairs[:, 1],
                                 lambda e, f, q, case=case: self._singular_blocks(e, f, case, q))
            self._store(pairs[:, 0], pairs[:, 1], *res[:3])
            self.n_pairs += len(pairs)
        # disjoint pairs, batched in slabs of rows to bound memory
        iu, ju = np.triu_indices(E, 1)
        if near:
            touching = np.zeros((E, E), dtype=bool)
            for a, b in near:
                touching[a, b] = True
            keep = ~touching[iu, ju]
            iu, ju = iu[keep], ju[keep]
        slab = 4096
        for s in range(0, len(iu), slab):
            e, f = iu[s:s + slab], ju[s:s + slab]
            res = self._adaptive(e, f, self._disjoint_blocks)
            self._store(e, f, *res[:3])
            self.n_pairs += len(e)
            self._tensor = {q: v for q, v in self._tensor.items() if q <= 8}
        if self.budget is not None and self.nonconverged > self.budget:
            raise FluidAssemblyError(
                f"{self.nonconverged} non-converged element pairs exceed the budget {self.budget}")
        N = 3 * self.n
        V = self.V.reshape(N, N)
        K = self.K.reshape(N, N) if self.want_k else None
        return V, K


def check_orientation(patches: PatchSet, config, reference, q=4):
    """Smallest signed area ratio ``(n . n_ref)|x_u x x_v| / |X_u x X_v|``.

    A non-positive value means an element has inverted.
    """
    S, _ = patches.padded_stencils()
    uv, _ = _tensor2(q)
    Bt = patches.tensor_basis(uv, 1)
    cur = np.einsum("epk,ekj->epj", Bt[:, 1], np.asarray(config)[S]), \
        np.einsum("epk,ekj->epj", Bt[:, 2], np.asarray(config)[S])
    ref = np.einsum("epk,ekj->epj", Bt[:, 1], np.asarray(reference)[S]), \
        np.einsum("epk,ekj->epj", Bt[:, 2], np.asarray(reference)[S])
    nc = np.cross(*cur)
    nr = np.cross(*ref)
    return float(np.min(np.einsum("epi,epi->ep", nc, nr) / np.einsum("epi,epi->ep", nr, nr)))


def assemble_fluid(config, patches: PatchSet, lam=1.0, settings: QuadratureSettings | None = None,
                   histogram: OrderHistogram | None = None, budget: int | None = None,
                   reference=None, force_k: bool = False) -> FluidOperator:
    """Assemble single-layer, (optionally) double-layer, mass and constraints.

    ``K`` is skipped when ``lam == 1`` unless ``force_k``.  Every element
    pair goes through batched adaptive quadrature; the order histogram is
    accumulated into ``histogram`` (default: the global one) and into the
    operator's own histogram.
    """
    lam = parse_viscosity_ratio(lam)
    settings = settings or QuadratureSettings()
    config = np.asarray(config, dtype=float)
    if config.shape != (patches.mesh.n_vertices, 3):
        raise ValueError("configuration must have one point per control vertex")
    if reference is not None and check_orientation(patches, config, reference) <= 0:
        raise FluidAssemblyError("element inversion: J_t <= 0 at a quadrature point")
    want_k = force_k or lam != 1.0
    local = OrderHistogram()
    asm = _Assembler(patches, config, want_k, settings, local, budget)
    V, K = asm.run()
    (histogram or global_histogram()).merge(local)
    M, Gc = mass_and_constraints(patches, config)
    return FluidOperator(V=V, K=K, mass=M, constraints=Gc, lam=lam, config=config,
                         k_assembled=want_k, n_pairs=asm.n_pairs,
                         nonconverged=asm.nonconverged, histogram=local)


def pair_block(patches: PatchSet, config, e, f, q, want_k=False):
    """Raw ``(V, K_ef, K_fe)`` blocks for one element pair at a fixed order.

    Uses the per-pair path (independent of the batched assembler's
    grouping); ``V`` has shape ``(m, 3, m, 3)`` over padded stencils.
    """
    mesh = patches.mesh
    case = classify_adjacency(mesh, e, f)
    rule = product_rule(case, q)
    sampler = _Sampler(patches, config)
    sx = sampler.samples(e, rule.uv_x, rule.weights, {})
    sy = sampler.samples(f, rule.uv_y, np.ones(len(rule)), {})
    G, Ks = _kernel_blocks(sx.x, sy.x, sx.n, sy.n, want_k)
    V = _contract(sx.Bw[None], G[None], sy.Bw[None])[0]
    if not want_k:
        return V, None, None
    return (V, _contract(sx.Bw[None], Ks[0][None], sy.Bw[None])[0],
            _contract(sx.Bw[None], Ks[1][None], sy.Bw[None])[0])


# --------------------------------------------------------------------------
# boundary data and solve

@dataclass
class DirichletData:
    """Boundary velocity for the fluid.

    ``coeffs`` are vertex-major velocity coefficients in the surface basis
    (the structure velocity, zero on inflow-only vertices); ``inflow_load``
    is the exact pairing ``int psi q n`` of a non-polynomial inflow field
    with the basis, or ``None``.
    """

    coeffs: np.ndarray
    inflow_load: np.ndarray | None = None

    @classmethod
    def zeros(cls, n_vertices):
        return cls(np.zeros((n_vertices, 3)))


def inflow_load(patches: PatchSet, config, q_func, q=6):
    """``int_{inflow} psi q(X) n dmu_t`` for every basis function.

    ``q_func`` maps reference-surface points ``(P, 3)`` on inflow elements
    to normal velocities; ``config`` holds current and reference points
    alike (the inflow segment never moves).
    """
    from .mesh import Region
    config = np.asarray(config, dtype=float)
    n = patches.mesh.n_vertices
    S, _ = patches.padded_stencils()
    uv, w = _tensor2(q)
    Bt = patches.tensor_basis(uv, 1)
    out = np.zeros((n, 3))
    for e in np.flatnonzero(patches.mesh.region == Region.INFLOW):
        d = Bt[e] @ config[S[e]]
        nv = np.cross(d[1], d[2])
        qq = q_func(d[0])
        np.add.at(out, S[e], Bt[e, 0].T @ ((w * qq)[:, None] * nv))
    return out


@dataclass
class FluidSolution:
    traction: np.ndarray   # (n, 3) coefficients
    zeta: np.ndarray       # one multiplier per closed component
    residual: float

    def total_force(self, op: FluidOperator):
        return op.mass.sum(axis=1) @ self.traction


def fluid_rhs(op: FluidOperator, g: DirichletData):
    alpha, beta = rhs_weights(op.lam)
    c = np.asarray(g.coeffs, dtype=float)
    F = alpha * (op.mass @ c)
    if g.inflow_load is not None:
        F = F + alpha * g.inflow_load
    if beta != 0.0:
        if op.K is None:
            raise FluidAssemblyError("double-layer operator required for lam != 1")
        full = c
        if g.inflow_load is not None and np.any(g.inflow_load):
            # L2 projection of the inflow field onto the basis
            full = c + scipy.linalg.solve(op.mass, g.inflow_load, assume_a="pos")
        F = F + beta * (op.K @ full.reshape(-1)).reshape(-1, 3)
    return F.reshape(-1)


def solve_fluid(op: FluidOperator, g: DirichletData) -> FluidSolution:
    """Dense symmetric-indefinite solve of the saddle system."""
    N = op.n_dofs
    c = op.constraints.shape[1]
    A = np.zeros((N + c, N + c))
    A[:N, :N] = 0.5 * (op.V + op.V.T)
    A[:N, N:] = op.constraints
    A[N:, :N] = op.constraints.T
    b = np.zeros(N + c)
    b[:N] = fluid_rhs(op, g)
    if not np.any(b):
        return FluidSolution(np.zeros((op.n_vertices, 3)), np.zeros(c), 0.0)
    try:
        x = scipy.linalg.solve(A, b, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise FluidAssemblyError(f"singular saddle system: {exc}") from exc
    res = float(np.max(np.abs(A @ x - b)))
    return FluidSolution(x[:N].reshape(-1, 3), x[N:], res)


def dual_layer_apply(config, patches: PatchSet, phi, settings: QuadratureSettings | None = None,
                     operator: FluidOperator | None = None):
    """Galerkin pairing ``<K phi, psi>`` for every test function.

    Reuses ``operator.K`` when given, otherwise assembles it.
    """
    if operator is None or operator.K is None:
        operator = assemble_fluid(config, patches, lam=0.0, settings=settings)
    phi = np.asarray(phi, dtype=float)
    return (operator.K @ phi.reshape(-1)).reshape(phi.shape)


# --------------------------------------------------------------------------
# matrix dump

def dump_matrix(path, A):
    """Binary dump: int64 (rows, cols) header, then row-major float64."""
    A = np.ascontiguousarray(A, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(np.array(A.shape, dtype="<i8").tobytes())
        fh.write(A.tobytes())


def load_matrix(path):
    raw = open(path, "rb").read()
    r, c = np.frombuffer(raw[:16], dtype="<i8")
    return np.frombuffer(raw[16:], dtype="<f8").reshape(r, c).copy()
