import numpy as np
import pytest

from febe import shapes
from febe.subdivision import build_patches


@pytest.fixture(scope="session")
def sphere1():
    patches = build_patches(shapes.sphere_mesh(1))
    return patches, patches.mesh.vertices


@pytest.fixture(scope="session")
def sphere2():
    patches = build_patches(shapes.sphere_mesh(2))
    return patches, patches.mesh.vertices


@pytest.fixture(scope="session")
def cube_patches():
    return build_patches(shapes.unit_cube())


@pytest.fixture(scope="session")
def small_balloon():
    mesh = shapes.balloon_mesh()
    return mesh, build_patches(mesh)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.call_failed = rep.failed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
