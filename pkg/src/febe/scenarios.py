"""Built-in scenarios: the deflating balloon and verification geometries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import bem, shapes
from .config import RunConfig
from .fsi import CouplingSettings, FsiProblem, FsiState
from .mesh import QuadMesh, limit_positions, load_quad_mesh, perturb_interior
from .quadrature import QuadratureSettings
from .shell import ShellParameters
from .subdivision import PatchSet, build_patches


@dataclass
class Scenario:
    name: str
    mesh: QuadMesh
    patches: PatchSet
    settings: CouplingSettings
    inflow: object = None
    body: np.ndarray | None = None
    _problem: FsiProblem | None = field(default=None, repr=False)

    @property
    def reference(self):
        return self.patches.mesh.vertices

    def problem(self) -> FsiProblem:
        if self._problem is None:
            self._problem = FsiProblem(self.patches, self.settings, self.inflow)
        return self._problem

    def initial_state(self) -> FsiState:
        return self.problem().initial_state()

    def boundary_velocity(self) -> np.ndarray:
        """Velocity coefficients of the single fluid solve (fluid-only mode)."""
        X = self.reference
        if self.name == "sphere_drag":
            return np.tile([1.0, 0.0, 0.0], (len(X), 1))
        if self.name == "two_plates":
            v = np.zeros_like(X)
            v[:, 2] = np.where(self.body == 0, 0.5, -0.5)
            return v
        return np.zeros_like(X)


def settings_from_config(cfg: RunConfig) -> CouplingSettings:
    return CouplingSettings(
        tau=cfg.tau, tol=cfg.tol, max_subiterations=cfg.max_subiterations, lam=cfg.lam,
        shell=ShellParameters(cfg.poisson, cfg.flexural, cfg.coupling),
        quadrature=QuadratureSettings(cfg.quad_tol, cfg.q_min, cfg.q_max),
        newton_max_iter=cfg.newton_max_iter)


def _densify(points, closed=True, per_segment=16):
    nxt = np.roll(points, -1, axis=0) if closed else points[1:]
    cur = points if closed else points[:-1]
    s = np.linspace(0.0, 1.0, per_segment, endpoint=False)
    return (cur[:, None, :] + s[None, :, None] * (nxt - cur)[:, None, :]).reshape(-1, 3)


def sine_profile(mesh: QuadMesh, patches: PatchSet):
    """Unit-amplitude profile ``sin(pi d / 2)`` on the inflow segment.

    ``d`` is the distance to the interface curve normalized to 1 at the
    inflow point farthest from it, so the profile vanishes on the curve and
    peaks at the centre of the segment.
    """
    from .fsi import surface_samples
    from .mesh import Region
    curve = limit_positions(patches.mesh)[patches.mesh.boundary_curve]
    tree = cKDTree(_densify(curve))
    pts = surface_samples(patches, patches.mesh.vertices, q=8)
    inflow_pts = pts[patches.mesh.region == Region.INFLOW].reshape(-1, 3)
    dmax = float(tree.query(inflow_pts)[0].max())

    def profile(x):
        d = np.clip(tree.query(np.asarray(x).reshape(-1, 3))[0] / dmax, 0.0, 1.0)
        return np.sin(0.5 * np.pi * d)

    return profile


def _balloon(cfg: RunConfig):
    if cfg.mesh:
        mesh = load_quad_mesh(cfg.mesh)
    else:
        mesh = shapes.balloon_mesh(cfg.balloon_width, cfg.balloon_rows, cfg.balloon_inflow_rows)
    mesh = perturb_interior(mesh, cfg.perturbation, cfg.seed)
    patches = build_patches(mesh)
    settings = settings_from_config(cfg)
    shape = sine_profile(mesh, patches)
    probe = FsiProblem(patches, settings, shape)
    q0 = probe.model.reference_volume / cfg.emptying_time / probe.inflow_rate

    def inflow(x):
        return q0 * shape(x)

    return Scenario("balloon", mesh, patches, settings, inflow)


def build_scenario(name: str, cfg: RunConfig) -> Scenario:
    """Mesh, boundary data and settings of a named scenario."""
    if name == "balloon":
        return _balloon(cfg)
    settings = settings_from_config(cfg)
    if name == "sphere_drag":
        mesh = load_quad_mesh(cfg.mesh) if cfg.mesh else shapes.sphere_mesh(cfg.sphere_level)
        return Scenario(name, mesh, build_patches(mesh), settings)
    if name == "two_plates":
        mesh, body = shapes.two_plates_mesh(cfg.gap, n=cfg.plate_cells)
        patches = build_patches(mesh)
        return Scenario(name, mesh, patches, settings, body=body)
    if name == "cube":
        mesh = shapes.unit_cube()
        return Scenario(name, mesh, build_patches(mesh), settings)
    raise ValueError(f"unknown scenario {name!r}")


def fluid_only(scn: Scenario):
    """Single fluid solve on the reference configuration."""
    X = scn.reference
    op = bem.assemble_fluid(X, scn.patches, scn.settings.lam, scn.settings.quadrature)
    load = None
    if scn.inflow is not None:
        load = bem.inflow_load(scn.patches, X, scn.inflow)
    sol = bem.solve_fluid(op, bem.DirichletData(scn.boundary_velocity(), load))
    return op, sol
