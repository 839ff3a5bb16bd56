"""Built-in verification suite behind ``febe check``.

Each check is small enough to finish in seconds and returns a
:class:`CheckResult` comparing a measured error with its tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bem, shapes
from .shell import ShellModel, ShellParameters
from .subdivision import build_patches, subdivision_matrix


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.value < self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28s} {self.value:.3e} (tol {self.tol:.0e})"


def _sphere(level):
    patches = build_patches(shapes.sphere_mesh(level))
    return patches, patches.mesh.vertices


def check_partition_of_unity(seed=0):
    patches, _ = _sphere(1)
    uv = np.random.default_rng(seed).random((200, 2))
    err = max(np.abs(patches.basis(e, uv)[0].sum(axis=1) - 1).max() for e in range(len(patches)))
    return CheckResult("partition of unity", float(err), 1e-12)


def check_subdominant_eigenvalue():
    ev = np.sort(np.abs(np.linalg.eigvals(subdivision_matrix(3).matrix)))[::-1]
    return CheckResult("valence-3 eigenvalue", float(abs(ev[0] - 1) + abs(ev[1] - 0.41009705)), 1e-7)


def check_energy_identity():
    patches, X = _sphere(1)
    model = ShellModel(patches, ShellParameters())
    return CheckResult("energy at identity", abs(model.energy(X)), 1e-14)


def check_energy_gradient(seed=0, h=1e-6):
    patches, X = _sphere(1)
    model = ShellModel(patches, ShellParameters())
    rng = np.random.default_rng(seed)
    theta = X + 0.01 * rng.normal(size=X.shape)
    d = rng.normal(size=X.shape)
    fd = (model.energy(theta + h * d) - model.energy(theta - h * d)) / (2 * h)
    exact = float(np.sum(model.energy_gradient(theta) * d))
    return CheckResult("energy gradient (FD)", abs(fd - exact) / abs(exact), 1e-6)


def check_sphere_volume():
    patches, X = _sphere(2)
    model = ShellModel(patches, ShellParameters())
    return CheckResult("sphere volume", abs(model.volume(X) / (4 * np.pi / 3) - 1), 1e-3)


def check_sphere_drag():
    patches, X = _sphere(1)
    op = bem.assemble_fluid(X, patches, 1.0)
    sol = bem.solve_fluid(op, bem.DirichletData(np.tile([1.0, 0.0, 0.0], (len(X), 1))))
    force = sol.total_force(op)
    return CheckResult("sphere drag vs 6 pi", abs(force[0] / (6 * np.pi) - 1), 1e-2)


CHECKS = (check_partition_of_unity, check_subdominant_eigenvalue, check_energy_identity,
          check_energy_gradient, check_sphere_volume, check_sphere_drag)


def run_checks(out=print):
    results = []
    for check in CHECKS:
        r = check()
        out(r.line())
        results.append(r)
    return results
