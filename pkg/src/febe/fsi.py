"""Partitioned time stepping of the coupled shell / Stokes system.

Each time level starts from the linear predictor ``theta_n + tau v_n`` and
runs structure-then-fluid subiterations until, before a structural solve,
both the structural residual and the last change of the traction are below
``tol`` (max-norm).
"""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from . import bem
from .quadrature import QuadratureSettings, gauss_rule
from .shell import NewtonError, ShellModel, ShellParameters, structural_residual, structural_step
from .subdivision import PatchSet

log = logging.getLogger(__name__)

TIME_SERIES_HEADER = ["t", "volume", "p0", "min_gap", "subiters", "newton_total", "quad_nonconv"]
NEWTON_HEADER = ["step", "subiter", "iterations", "initial_residual", "final_residual", "p0"]


class StepFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class CouplingSettings:
    """Time stepping and coupling controls.

    Attributes
    ----------
    tau : float
        Time step.
    tol : float
        Subiteration tolerance (also the Newton tolerance).
    max_subiterations : int
        Subiterations allowed per time level before the step fails.
    lam : float
        Viscosity ratio (``inf`` allowed).
    shell : ShellParameters
    quadrature : QuadratureSettings
    newton_max_iter : int
    """

    tau: float = 4.0
    tol: float = 1e-6
    max_subiterations: int = 20
    lam: float = 1.0
    shell: ShellParameters = field(default_factory=ShellParameters)
    quadrature: QuadratureSettings = field(default_factory=QuadratureSettings)
    newton_max_iter: int = 25

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_subiterations < 1:
            raise ValueError("max_subiterations must be >= 1")
        object.__setattr__(self, "lam", bem.parse_viscosity_ratio(self.lam))


@dataclass
class FsiState:
    """State after a completed time level.

    ``load`` is the traction pairing ``<J t, psi>`` on the configuration
    where ``traction`` was computed.
    """

    t: float
    theta: np.ndarray
    theta_prev: np.ndarray
    traction: np.ndarray
    load: np.ndarray
    p0: float = 0.0
    zeta: np.ndarray = field(default_factory=lambda: np.zeros(1))
    influx: float = 0.0
    step: int = 0
    subiterations: int = 0
    newton_total: int = 0
    quad_nonconverged: int = 0

    def velocity(self, tau):
        return (self.theta - self.theta_prev) / tau

    def copy(self):
        return replace(self, theta=self.theta.copy(), theta_prev=self.theta_prev.copy(),
                       traction=self.traction.copy(), load=self.load.copy(),
                       zeta=np.array(self.zeta, copy=True))


class FsiProblem:
    """Discrete coupled problem on a fixed patch set.

    ``inflow`` maps reference points on the inflow segment to the normal
    outflow velocity ``q`` (constant in time), or is ``None``.
    """

    def __init__(self, patches: PatchSet, settings: CouplingSettings,
                 inflow: Callable[[np.ndarray], np.ndarray] | None = None, reference=None):
        self.patches = patches
        self.settings = settings
        self.model = ShellModel(patches, settings.shell, reference)
        self.reference = self.model.reference
        self.inflow = inflow
        if inflow is not None:
            self.inflow_load = bem.inflow_load(patches, self.reference, inflow)
            self.inflow_rate = _inflow_rate(patches, self.reference, inflow)
        else:
            self.inflow_load = None
            self.inflow_rate = 0.0
        self.newton_log: list[list] = []

    def fluid(self, theta, velocity):
        """Assemble and solve the fluid on ``theta`` with structure velocity."""
        op = bem.assemble_fluid(theta, self.patches, self.settings.lam,
                                self.settings.quadrature, reference=self.reference)
        g = bem.DirichletData(velocity, self.inflow_load)
        return op, bem.solve_fluid(op, g)

    def initial_state(self, theta0=None, velocity0=None) -> FsiState:
        """State at ``t = 0`` with a consistent initial traction."""
        tau = self.settings.tau
        theta0 = np.array(self.reference if theta0 is None else theta0, dtype=float)
        v0 = np.zeros_like(theta0) if velocity0 is None else np.asarray(velocity0, dtype=float)
        op, sol = self.fluid(theta0, v0)
        return FsiState(0.0, theta0, theta0 - tau * v0, sol.traction, op.mass @ sol.traction,
                        zeta=sol.zeta, quad_nonconverged=op.nonconverged)


def _inflow_rate(patches, reference, inflow, q=6):
    """``int_{inflow} q dmu``."""
    from .mesh import Region
    S, _ = patches.padded_stencils()
    uv, w = gauss_rule(q).tensor2()
    Bt = patches.tensor_basis(uv, 1)
    total = 0.0
    for e in np.flatnonzero(patches.mesh.region == Region.INFLOW):
        d = Bt[e] @ reference[S[e]]
        total += float(np.sum(w * inflow(d[0]) * np.linalg.norm(np.cross(d[1], d[2]), axis=1)))
    return total


def predict(state: FsiState, tau) -> np.ndarray:
    """Linear extrapolation ``theta_n + tau v_n``."""
    return state.theta + tau * state.velocity(tau)


@dataclass
class SubiterationReport:
    converged: bool
    subiterations: int
    newton_iterations: list
    residuals: list
    updates: list
    quad_nonconverged: int


def subiterate(problem: FsiProblem, state: FsiState):
    """One time level of partitioned subiterations.

    Returns the new state and a :class:`SubiterationReport`; the state is
    only meaningful when the report says converged.
    """
    st = problem.settings
    tau, tol = st.tau, st.tol
    model = problem.model
    theta = predict(state, tau)
    p0 = state.p0
    traction, load, zeta = state.traction, state.load, state.zeta
    influx = state.influx + tau * problem.inflow_rate
    update = np.inf
    report = SubiterationReport(False, 0, [], [], [], 0)
    for k in range(st.max_subiterations + 1):
        R, c = structural_residual(model, theta, p0, state.theta, state.theta_prev,
                                   tau, load, influx)
        res = max(float(np.max(np.abs(R), initial=0.0)), abs(c))
        report.residuals.append(res)
        if k > 0 and res < tol and update < tol:
            report.converged = True
            break
        if k == st.max_subiterations:
            break
        step = structural_step(model, state.theta, state.theta_prev, tau, load=load,
                               influx=influx, p0=p0, tol=tol, max_iter=st.newton_max_iter,
                               theta_init=theta)
        theta, p0 = step.theta, step.p0
        report.newton_iterations.append(step.iterations)
        problem.newton_log.append([state.step + 1, k + 1, step.iterations,
                                   step.initial_residual, step.residual, step.p0])
        op, sol = problem.fluid(theta, (theta - state.theta) / tau)
        report.quad_nonconverged += op.nonconverged
        update = float(np.max(np.abs(sol.traction - traction)))
        report.updates.append(update)
        traction, load, zeta = sol.traction, op.mass @ sol.traction, sol.zeta
        report.subiterations = k + 1
    new = FsiState(state.t + tau, theta, state.theta.copy(), traction, load, p0, zeta, influx,
                   state.step + 1, report.subiterations, int(sum(report.newton_iterations)),
                   report.quad_nonconverged)
    return new, report


@dataclass
class TimeSeriesRow:
    t: float
    volume: float
    p0: float
    min_gap: float
    subiters: int
    newton_total: int
    quad_nonconv: int

    def as_list(self):
        return [self.t, self.volume, self.p0, self.min_gap, self.subiters,
                self.newton_total, self.quad_nonconv]


def state_row(problem: FsiProblem, state: FsiState) -> TimeSeriesRow:
    return TimeSeriesRow(state.t, problem.model.volume(state.theta), state.p0,
                         min_gap(problem.patches, state.theta), state.subiterations,
                         state.newton_total, state.quad_nonconverged)


def dump_state(state: FsiState, path):
    np.savez(path, t=state.t, theta=state.theta, theta_prev=state.theta_prev,
             traction=state.traction, p0=state.p0, zeta=state.zeta, influx=state.influx,
             step=state.step)


def advance(problem: FsiProblem, state: FsiState, n_steps: int, rows: list | None = None,
            callback=None, dump_dir=None):
    """Run ``n_steps`` time levels; returns the list of states (excluding the input).

    ``rows`` collects :class:`TimeSeriesRow` entries, ``callback(state)``
    runs after each completed step.  On failure the last good state is
    dumped to ``dump_dir`` (if given) and :class:`StepFailure` is raised.
    """
    history = []
    for _ in range(int(n_steps)):
        try:
            new, report = subiterate(problem, state)
        except (NewtonError, bem.FluidAssemblyError) as exc:
            _dump(state, dump_dir)
            raise StepFailure(f"step {state.step + 1} failed: {exc}") from exc
        if not report.converged:
            _dump(state, dump_dir)
            raise StepFailure(f"step {state.step + 1}: no convergence in "
                              f"{problem.settings.max_subiterations} subiterations")
        if problem.model.min_area_ratio(new.theta) <= 0:
            _dump(state, dump_dir)
            raise StepFailure(f"step {new.step}: element inversion")
        if len(report.residuals) > 2 and np.any(np.diff(report.residuals[1:]) > 0):
            log.info("step %d: non-monotone subiteration residuals %s", new.step, report.residuals)
        state = new
        history.append(state)
        if rows is not None:
            rows.append(state_row(problem, state))
        if callback is not None:
            callback(state)
    return history


def _dump(state, dump_dir):
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)
        path = os.path.join(dump_dir, f"failure_step{state.step:05d}.npz")
        dump_state(state, path)
        log.error("state dumped to %s", path)


# --------------------------------------------------------------------------
# gap diagnostic

def surface_samples(patches: PatchSet, config, q=3, order=0):
    """Sample points (and normals if ``order >= 1``) on every element."""
    uv, _ = gauss_rule(q).tensor2()
    S, _ = patches.padded_stencils()
    Bt = patches.tensor_basis(uv, max(order, 0))
    d = np.einsum("expk,ekj->expj", Bt, np.asarray(config, dtype=float)[S])
    if order == 0:
        return d[:, 0]
    nv = np.cross(d[:, 1], d[:, 2])
    return d[:, 0], nv / np.linalg.norm(nv, axis=-1, keepdims=True)


def element_adjacency(mesh) -> np.ndarray:
    """Boolean ``(E, E)`` matrix: elements sharing at least one vertex."""
    E = mesh.n_quads
    inc = np.zeros((E, mesh.n_vertices), dtype=bool)
    inc[np.repeat(np.arange(E), 4), mesh.quads.reshape(-1)] = True
    A = inc.astype(np.int32) @ inc.T.astype(np.int32)
    return A > 0


def min_gap(patches: PatchSet, config, q=3) -> float:
    """Closest distance between samples of elements that share no vertex."""
    pts = surface_samples(patches, config, q)
    E, P, _ = pts.shape
    flat = pts.reshape(-1, 3)
    owner = np.repeat(np.arange(E), P)
    adj = element_adjacency(patches.mesh)
    tree = cKDTree(flat)
    best = np.inf
    todo = np.arange(len(flat))
    k = min(16, len(flat))
    while todo.size:
        dist, idx = tree.query(flat[todo], k=k)
        ok = ~adj[owner[todo][:, None], owner[idx]]
        hit = ok.any(axis=1)
        if hit.any():
            first = np.argmax(ok[hit], axis=1)
            best = min(best, float(np.min(dist[hit][np.arange(hit.sum()), first])))
        # unresolved points can only improve if their k-th neighbour is closer
        todo = todo[~hit & (dist[:, -1] < best)]
        if k >= len(flat):
            break
        k = min(2 * k, len(flat))
    return best


def min_gap_bruteforce(patches: PatchSet, config, q=3) -> float:
    pts = surface_samples(patches, config, q)
    E, P, _ = pts.shape
    adj = element_adjacency(patches.mesh)
    best = np.inf
    for e in range(E):
        others = np.flatnonzero(~adj[e])
        if others.size == 0:
            continue
        d = np.linalg.norm(pts[e][:, None, None, :] - pts[others][None], axis=-1)
        best = min(best, float(d.min()))
    return best


# --------------------------------------------------------------------------
# CSV logs

def format_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in
                    (r.as_list() if hasattr(r, "as_list") else r)])
    return buf.getvalue()
