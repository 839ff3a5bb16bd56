"""Kirchhoff-Love shell on the subdivision basis.

The energy is written on the reference surface without a chart: membrane
strain ``eps = (P - Dtheta^T Dtheta)/2`` and bending strain
``kappa = P^T Dn_ref - Dtheta^T Dn`` where ``D`` is the surface gradient on
the reference surface and ``P`` the tangential projector.  With the
reference dual basis ``A^a`` both strains are tangential tensors

    eps   = 1/2 (A_ab - a_ab) A^a (x) A^b
    kappa = (b_ab - B_ab) A^a (x) A^b

(``A, B`` reference metric and curvature, ``a, b`` current ones), which is
the form used for the derivatives.  :func:`strains` evaluates the 3 x 3
tensors directly and serves as an independent route.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
import scipy.linalg

from .mesh import Region
from .quadrature import gauss_rule
from .subdivision import PatchSet, evaluate

jax.config.update("jax_enable_x64", True)

log = logging.getLogger(__name__)

ENERGY_ORDER = 4
VOLUME_ORDER = 5


class NewtonError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShellParameters:
    """Material and coupling parameters (nondimensional).

    Attributes
    ----------
    poisson : float
        Poisson's ratio, ``0 <= poisson < 1/2``.
    flexural : float
        Flexural rigidity parameter multiplying the bending strains.
    coupling : float
        Coupling strength scaling the fluid traction load.
    """

    poisson: float = 0.0
    flexural: float = 5.77e-4
    coupling: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.poisson < 0.5:
            raise ValueError("Poisson's ratio must lie in [0, 1/2)")
        if self.flexural <= 0:
            raise ValueError("flexural rigidity must be positive")
        if self.coupling < 0:
            raise ValueError("coupling strength must be non-negative")


# --------------------------------------------------------------------------
# tensor route

@dataclass
class StrainState:
    eps: np.ndarray          # (n, 3, 3)
    kappa: np.ndarray        # (n, 3, 3)
    projector: np.ndarray    # (n, 3, 3)
    normal_ref: np.ndarray   # (n, 3)
    normal: np.ndarray       # (n, 3)
    grad_theta: np.ndarray   # (n, 3, 3) rows: components, columns: directions
    grad_normal: np.ndarray  # (n, 3, 3)


def _dual_basis(d1):
    """Dual tangent vectors ``A^a`` (n, 2, 3) from derivatives ``(2, n, 3)``."""
    A = np.einsum("anj,bnj->nab", d1, d1)
    Ainv = np.linalg.inv(A)
    return np.einsum("nab,bnj->naj", Ainv, d1)


def _unit_normal_and_gradient(d):
    """Unit normal and its parametric derivatives from order-2 evaluation."""
    xu, xv, xuu, xuv, xvv = d[1], d[2], d[3], d[4], d[5]
    nu = np.cross(xu, xv)
    ln = np.linalg.norm(nu, axis=-1)
    if np.any(ln <= 0):
        raise ValueError("degenerate tangents")
    n = nu / ln[:, None]
    P = np.eye(3) - n[:, :, None] * n[:, None, :]
    dnu_u = np.cross(xuu, xv) + np.cross(xu, xuv)
    dnu_v = np.cross(xuv, xv) + np.cross(xu, xvv)
    n_u = np.einsum("nij,nj->ni", P, dnu_u) / ln[:, None]
    n_v = np.einsum("nij,nj->ni", P, dnu_v) / ln[:, None]
    return n, np.stack([n_u, n_v], axis=1)


def strains(patch, uv, config, reference) -> StrainState:
    """Membrane and bending strain tensors at ``uv``.

    Surface gradients are taken on the reference limit surface:
    ``D f = f_,a (x) A^a``.
    """
    dr = evaluate(patch, uv, reference, 2)
    dc = evaluate(patch, uv, config, 2)
    dual = _dual_basis(dr[1:3])
    n_ref, dn_ref = _unit_normal_and_gradient(dr)
    n_cur, dn_cur = _unit_normal_and_gradient(dc)
    Dtheta = np.einsum("anm,nai->nmi", dc[1:3], dual)
    Dn_ref = np.einsum("nam,nai->nmi", dn_ref, dual)
    Dn = np.einsum("nam,nai->nmi", dn_cur, dual)
    P = np.eye(3) - n_ref[:, :, None] * n_ref[:, None, :]
    eps = 0.5 * (P - np.einsum("nmi,nmj->nij", Dtheta, Dtheta))
    kappa = np.einsum("nmi,nmj->nij", P, Dn_ref) - np.einsum("nmi,nmj->nij", Dtheta, Dn)
    return StrainState(eps, kappa, P, n_ref, n_cur, Dtheta, Dn)


def constitutive_contract(a, b, poisson):
    """``Xi^{ijkl} a_ij b_kl`` for the Saint Venant-Kirchhoff tensor."""
    tr = np.trace(a, axis1=-2, axis2=-1) * np.trace(b, axis1=-2, axis2=-1)
    return poisson * tr + 0.5 * (1 - poisson) * (
        np.einsum("...ij,...ij->...", a, b) + np.einsum("...ij,...ji->...", a, b))


def energy_density_tensor(state: StrainState, params: ShellParameters):
    """Integrand ``1/2 Xi (eps eps + flexural^2 kappa kappa)`` per point."""
    v = params.poisson
    return 0.5 * (constitutive_contract(state.eps, state.eps, v)
                  + params.flexural ** 2 * constitutive_contract(state.kappa, state.kappa, v))


# --------------------------------------------------------------------------
# component route (used for derivatives)

def _density(f, ref, poisson, flex2):
    """Energy density from the 15 features ``(x_u, x_v, x_uu, x_uv, x_vv)``.

    ``ref`` packs the reference metric (4), its inverse (4) and the
    reference curvature coefficients (4).
    """
    xu, xv, xuu, xuv, xvv = f[0:3], f[3:6], f[6:9], f[9:12], f[12:15]
    A = ref[0:4].reshape(2, 2)
    Ai = ref[4:8].reshape(2, 2)
    B = ref[8:12].reshape(2, 2)
    a = jnp.array([[xu @ xu, xu @ xv], [xv @ xu, xv @ xv]])
    nu = jnp.cross(xu, xv)
    n = nu / jnp.sqrt(nu @ nu)
    b = jnp.array([[xuu @ n, xuv @ n], [xuv @ n, xvv @ n]])
    E = 0.5 * (A - a)
    K = b - B

    def quad(S):
        M = Ai @ S
        return poisson * jnp.trace(M) ** 2 + (1.0 - poisson) * jnp.trace(M @ M)

    return 0.5 * (quad(E) + flex2 * quad(K))


_density_v = jax.jit(jax.vmap(_density, in_axes=(0, 0, None, None)))
_grad_v = jax.jit(jax.vmap(jax.grad(_density), in_axes=(0, 0, None, None)))
_hess_v = jax.jit(jax.vmap(jax.hessian(_density), in_axes=(0, 0, None, None)))


# --------------------------------------------------------------------------
# volume (trilinear form theta . (theta_u x theta_v) / 3)

def _cross_matrix(z):
    """``C(z)_{mn} = eps_{mnk} z_k`` for points ``(P, 3)``."""
    C = np.zeros(z.shape[:-1] + (3, 3))
    C[..., 0, 1], C[..., 0, 2] = z[..., 2], -z[..., 1]
    C[..., 1, 0], C[..., 1, 2] = -z[..., 2], z[..., 0]
    C[..., 2, 0], C[..., 2, 1] = z[..., 1], -z[..., 0]
    return C


@dataclass
class VolumeConstraint:
    """Volume compatibility ``Q = vol - (vol_ref - influx)`` and ``Q'``."""

    volume: float
    reference_volume: float
    influx: float
    gradient: np.ndarray

    @property
    def residual(self):
        return self.volume - (self.reference_volume - self.influx)


# --------------------------------------------------------------------------
# model

@dataclass(frozen=True, eq=False)
class _Tables:
    stencils: np.ndarray     # (E, m)
    D: np.ndarray            # (E, 6, P, m) basis values and derivatives
    weights: np.ndarray      # (E, P) rule weight times reference area element


def _tables(patches, elements, q, reference, order):
    uv, w = gauss_rule(q).tensor2()
    S, _ = patches.padded_stencils()
    D = patches.tensor_basis(uv, order)[elements]
    d1 = np.einsum("eapk,ekj->eapj", D[:, 1:3], reference[S[elements]])
    area = np.linalg.norm(np.cross(d1[:, 0], d1[:, 1]), axis=-1)
    return _Tables(S[elements], D, w[None, :] * area)


def clamped_vertices(patches: PatchSet) -> np.ndarray:
    """Vertices that influence the inflow segment: fixed for all time."""
    mesh = patches.mesh
    fixed = np.zeros(mesh.n_vertices, dtype=bool)
    for e in np.flatnonzero(mesh.region == Region.INFLOW):
        fixed[patches[e].stencil] = True
    return fixed


class ShellModel:
    """Energy, mass and volume functionals of a shell on ``patches``.

    The energy lives on the shell region; the volume is taken over the
    whole closed surface.  ``free`` marks the structural unknowns (vertices
    whose basis functions vanish on the inflow segment).
    """

    def __init__(self, patches: PatchSet, params: ShellParameters, reference=None):
        self.patches = patches
        self.params = params
        mesh = patches.mesh
        self.reference = np.array(mesh.vertices if reference is None else reference, dtype=float)
        self.n = mesh.n_vertices
        shell = np.flatnonzero(mesh.region == Region.SHELL)
        self.shell_elements = shell
        self.free = ~clamped_vertices(patches)
        self._energy = _tables(patches, shell, ENERGY_ORDER, self.reference, 2)
        self._volume = _tables(patches, np.arange(mesh.n_quads), VOLUME_ORDER, self.reference, 1)
        uvw = gauss_rule(VOLUME_ORDER).tensor2()[1]
        self._volume_w = np.broadcast_to(uvw, self._volume.weights.shape)
        self._ref_data = self._reference_data()
        self.mass = self._mass_matrix()
        self.reference_volume = self.volume(self.reference)

    # -- reference geometry -------------------------------------------------
    def _reference_data(self):
        t = self._energy
        d = np.einsum("expk,ekj->expj", t.D, self.reference[t.stencils])
        xu, xv = d[:, 1], d[:, 2]
        A = np.stack([np.einsum("epj,epj->ep", xu, xu), np.einsum("epj,epj->ep", xu, xv),
                      np.einsum("epj,epj->ep", xv, xu), np.einsum("epj,epj->ep", xv, xv)], -1)
        Ai = np.linalg.inv(A.reshape(-1, 2, 2)).reshape(A.shape)
        nu = np.cross(xu, xv)
        n = nu / np.linalg.norm(nu, axis=-1, keepdims=True)
        B = np.stack([np.einsum("epj,epj->ep", d[:, 3], n), np.einsum("epj,epj->ep", d[:, 4], n),
                      np.einsum("epj,epj->ep", d[:, 4], n), np.einsum("epj,epj->ep", d[:, 5], n)], -1)
        return np.concatenate([A, Ai, B], axis=-1).reshape(-1, 12)

    def _mass_matrix(self):
        t = self._energy
        M = np.zeros((self.n, self.n))
        for e in range(len(t.stencils)):
            B = t.D[e, 0]
            np.add.at(M, (t.stencils[e][:, None], t.stencils[e][None, :]),
                      B.T @ (B * t.weights[e][:, None]))
        return M

    # -- energy ---------------------------------------------------------------
    def _features(self, theta):
        t = self._energy
        d = np.einsum("expk,ekj->epxj", t.D[:, 1:], np.asarray(theta, dtype=float)[t.stencils])
        return d.reshape(-1, 15)

    def _args(self):
        return (self.params.poisson, self.params.flexural ** 2)

    def energy(self, theta) -> float:
        psi = np.asarray(_density_v(self._features(theta), self._ref_data, *self._args()))
        return float(np.sum(psi * self._energy.weights.reshape(-1)))

    def energy_gradient(self, theta) -> np.ndarray:
        """``dW/dtheta`` for every control vertex, shape ``(n, 3)``."""
        t = self._energy
        g = np.asarray(_grad_v(self._features(theta), self._ref_data, *self._args()))
        E, P = t.weights.shape
        g = g.reshape(E, P, 5, 3) * t.weights[:, :, None, None]
        ge = np.einsum("expk,epxj->ekj", t.D[:, 1:], g)
        out = np.zeros((self.n, 3))
        np.add.at(out, t.stencils, ge)
        return out

    def energy_hessian(self, theta) -> np.ndarray:
        """Dense second variation over vertex-major dofs ``(3n, 3n)``."""
        t = self._energy
        H = np.asarray(_hess_v(self._features(theta), self._ref_data, *self._args()))
        E, P = t.weights.shape
        H = H.reshape(E, P, 5, 3, 5, 3) * t.weights[:, :, None, None, None, None]
        D = t.D[:, 1:]
        He = np.einsum("expa,epxmyn,eypb->eambn", D, H, D, optimize=True)
        return _scatter_blocks(self.n, t.stencils, He)

    # -- volume ----------------------------------------------------------------
    def _volume_fields(self, theta):
        t = self._volume
        d = np.einsum("expk,ekj->expj", t.D, np.asarray(theta, dtype=float)[t.stencils])
        return d[:, 0], d[:, 1], d[:, 2]

    def volume(self, theta) -> float:
        x, xu, xv = self._volume_fields(theta)
        return float(np.sum(self._volume_w * np.einsum("epj,epj->ep", x, np.cross(xu, xv))) / 3.0)

    def volume_gradient(self, theta) -> np.ndarray:
        t = self._volume
        x, xu, xv = self._volume_fields(theta)
        w = self._volume_w[:, :, None] / 3.0
        g = (np.einsum("epk,epj->ekj", t.D[:, 0], w * np.cross(xu, xv))
             + np.einsum("epk,epj->ekj", t.D[:, 1], w * np.cross(xv, x))
             + np.einsum("epk,epj->ekj", t.D[:, 2], w * np.cross(x, xu)))
        out = np.zeros((self.n, 3))
        np.add.at(out, t.stencils, g)
        return out

    def volume_hessian(self, theta) -> np.ndarray:
        t = self._volume
        x, xu, xv = self._volume_fields(theta)
        w = self._volume_w / 3.0
        B, Bu, Bv = t.D[:, 0], t.D[:, 1], t.D[:, 2]
        Cx, Cy, Cz = _cross_matrix(x), _cross_matrix(xu), _cross_matrix(xv)

        def pair(Ba, Bb, C):
            # sum_p w Ba[p,a] Bb[p,b] C[p] -> (e, a, m, b, n), plus its mirror
            blk = np.einsum("ep,epa,epb,epmn->eambn", w, Ba, Bb, C, optimize=True)
            return blk + blk.transpose(0, 3, 4, 1, 2)

        He = pair(B, Bu, Cz) - pair(B, Bv, Cy) + pair(Bu, Bv, Cx)
        return _scatter_blocks(self.n, t.stencils, He)

    def volume_and_derivative(self, theta, influx=0.0) -> VolumeConstraint:
        return VolumeConstraint(self.volume(theta), self.reference_volume, float(influx),
                                self.volume_gradient(theta))

    # -- checks ------------------------------------------------------------------
    def min_area_ratio(self, theta) -> float:
        """Smallest signed area ratio over energy quadrature points."""
        t = self._energy
        d = np.einsum("expk,ekj->expj", t.D[:, 1:3], np.asarray(theta)[t.stencils])
        r = np.einsum("expk,ekj->expj", t.D[:, 1:3], self.reference[t.stencils])
        nc = np.cross(d[:, 0], d[:, 1])
        nr = np.cross(r[:, 0], r[:, 1])
        return float(np.min(np.einsum("epj,epj->ep", nc, nr) / np.einsum("epj,epj->ep", nr, nr)))


def _scatter_blocks(n, stencils, blocks):
    E, m = stencils.shape
    dofs = (3 * stencils[:, :, None] + np.arange(3)).reshape(E, 3 * m)
    idx = dofs[:, :, None] * (3 * n) + dofs[:, None, :]
    out = np.bincount(idx.ravel(), blocks.reshape(-1), minlength=(3 * n) ** 2)
    return out.reshape(3 * n, 3 * n)


# --------------------------------------------------------------------------
# constrained implicit-Euler step

@dataclass
class StepResult:
    theta: np.ndarray
    p0: float
    iterations: int
    residual: float
    initial_residual: float
    history: list = field(default_factory=list)


def structural_residual(model: ShellModel, theta, p0, theta_n, theta_nm1, tau, load, influx):
    """Residual of the structure rows and the volume row.

    ``M (theta - 2 theta_n + theta_nm1)/tau^2 + W'(theta) - p0 Q'(theta) + coupling * load``
    over free dofs, and ``-Q(theta)``.  ``p0`` is the excess pressure
    (positive inflates).
    """
    acc = model.mass @ (theta - 2 * theta_n + theta_nm1) / tau ** 2
    R = acc + model.energy_gradient(theta) - p0 * model.volume_gradient(theta)
    if load is not None:
        R = R + model.params.coupling * load
    Q = model.volume(theta) - (model.reference_volume - influx)
    return R[model.free], -Q


def _merit(R, c):
    return float(np.sqrt(np.sum(R * R) + c * c))


def _maxnorm(R, c):
    return max(float(np.max(np.abs(R), initial=0.0)), abs(c))


def structural_step(model: ShellModel, theta_n, theta_nm1, tau, load=None, influx=0.0,
                    p0=0.0, tol=1e-6, max_iter=25, theta_init=None) -> StepResult:
    """Newton solve of one constrained implicit-Euler step.

    ``load`` is the traction pairing ``<J t, psi>`` per vertex (held fixed);
    the unknowns are the free coefficients and ``p0``.  Backtracking halves
    the step up to 20 times on the residual 2-norm; trial states with an
    inverted element are rejected.
    """
    if tau <= 0:
        raise ValueError("time step must be positive")
    theta_n = np.asarray(theta_n, dtype=float)
    theta = np.array(theta_n if theta_init is None else theta_init, dtype=float)
    free = model.free
    fdofs = np.flatnonzero(np.repeat(free, 3))
    Mt = np.kron(model.mass, np.eye(3))[np.ix_(fdofs, fdofs)] / tau ** 2
    R, c = structural_residual(model, theta, p0, theta_n, theta_nm1, tau, load, influx)
    initial = _maxnorm(R, c)
    history = [initial]
    it = 0
    while _maxnorm(R, c) >= tol:
        if it >= max_iter:
            raise NewtonError(f"Newton did not converge in {max_iter} iterations "
                              f"(residual {_maxnorm(R, c):.3e})")
        it += 1
        H = model.energy_hessian(theta)[np.ix_(fdofs, fdofs)]
        HQ = model.volume_hessian(theta)[np.ix_(fdofs, fdofs)]
        gQ = model.volume_gradient(theta)[free].reshape(-1)
        nf = len(fdofs)
        J = np.zeros((nf + 1, nf + 1))
        J[:nf, :nf] = Mt + H - p0 * HQ
        J[:nf, nf] = -gQ
        J[nf, :nf] = -gQ
        rhs = -np.concatenate([R.reshape(-1), [c]])
        try:
            step = scipy.linalg.solve(J, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise NewtonError(f"singular Newton matrix: {exc}") from exc
        merit = _merit(R, c)
        alpha = 1.0
        for _ in range(21):
            trial = theta.copy()
            trial[free] += alpha * step[:nf].reshape(-1, 3)
            p_trial = p0 + alpha * step[nf]
            if model.min_area_ratio(trial) > 0:
                Rt, ct = structural_residual(model, trial, p_trial, theta_n, theta_nm1,
                                             tau, load, influx)
                if _merit(Rt, ct) < merit:
                    break
            alpha *= 0.5
        else:
            raise NewtonError("line search failed to reduce the residual")
        theta, p0, R, c = trial, p_trial, Rt, ct
        history.append(_maxnorm(R, c))
    return StepResult(theta, float(p0), it, _maxnorm(R, c), initial, history)
