import csv
import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from febe import shapes
from febe.config import RunConfig
from febe.fsi import (NEWTON_HEADER, TIME_SERIES_HEADER, CouplingSettings, FsiProblem, FsiState,
                      StepFailure, advance, format_csv, min_gap, min_gap_bruteforce, predict)
from febe.quadrature import QuadratureSettings
from febe.scenarios import build_scenario
from febe.subdivision import build_patches

# coupling logic does not depend on the quadrature accuracy
FAST = QuadratureSettings(tol=1e-7, q_min=2, q_max=6)


def _state(theta, theta_prev):
    z = np.zeros_like(theta)
    return FsiState(0.0, theta, theta_prev, z, z)


def test_predict_examples():
    s = _state(np.array([[1.0, 2.0, 3.0]]), np.array([[1.0, 2.0, 3.0]]))
    assert np.array_equal(predict(s, 4.0), s.theta)
    s = _state(np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 0.0, 0.0]]))
    assert np.allclose(predict(s, 0.5), [[2.0, 0.0, 0.0]])


@given(st.floats(0.1, 10.0), st.integers(0, 2 ** 31 - 1))
def test_predict_is_linear_extrapolation(tau, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 5, 3))
    p = predict(_state(a, b), tau)
    assert np.allclose(p, 2 * a - b, atol=1e-12)


def test_settings_validation():
    with pytest.raises(ValueError):
        CouplingSettings(tau=0.0)
    with pytest.raises(ValueError):
        CouplingSettings(tol=-1.0)
    with pytest.raises(ValueError):
        CouplingSettings(max_subiterations=0)
    assert CouplingSettings(lam="inf").lam == np.inf


@pytest.fixture(scope="module")
def sphere_problem(sphere1):
    patches, _ = sphere1
    return FsiProblem(patches, CouplingSettings(tau=4.0, lam=1.0, quadrature=FAST))


def test_zero_steps(sphere_problem):
    s0 = sphere_problem.initial_state()
    rows = []
    assert advance(sphere_problem, s0, 0, rows=rows) == []
    assert rows == []


def test_reference_is_an_equilibrium(sphere_problem):
    s0 = sphere_problem.initial_state()
    assert np.abs(s0.traction).max() < 1e-12
    rows = []
    hist = advance(sphere_problem, s0, 10, rows=rows)
    assert len(hist) == 10 and len(rows) == 10
    drift = max(np.abs(s.theta - s0.theta).max() for s in hist)
    assert drift < 1e-10
    assert all(s.subiterations == 1 for s in hist)
    assert all(abs(r.volume - sphere_problem.model.reference_volume) < 1e-10 for r in rows)
    assert hist[-1].t == pytest.approx(40.0)


def test_relaxation_is_deterministic(sphere1):
    patches, X = sphere1
    rng = np.random.default_rng(3)
    kick = 1e-3 * rng.normal(size=X.shape)

    def run():
        p = FsiProblem(patches, CouplingSettings(tau=4.0, lam=1.0, quadrature=FAST))
        s = p.initial_state(X + kick)
        return advance(p, s, 2)[-1], p.newton_log

    (a, la), (b, lb) = run(), run()
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.traction, b.traction)
    assert la == lb


def test_tolerance_tightening_moves_state_little(sphere1):
    patches, X = sphere1
    kick = 1e-3 * np.random.default_rng(4).normal(size=X.shape)
    out = {}
    for tol in (1e-6, 1e-8):
        p = FsiProblem(patches, CouplingSettings(tau=4.0, lam=1.0, tol=tol, quadrature=FAST))
        out[tol] = advance(p, p.initial_state(X + kick), 2)[-1]
    assert np.abs(out[1e-6].theta - out[1e-8].theta).max() <= 10 * 1e-6


def test_subiteration_budget_raises(sphere1, tmp_path):
    patches, X = sphere1
    kick = 1e-2 * np.random.default_rng(5).normal(size=X.shape)
    p = FsiProblem(patches, CouplingSettings(tau=4.0, lam=1.0, tol=1e-14, max_subiterations=1,
                                              quadrature=FAST))
    s = p.initial_state(X + kick)
    with pytest.raises(StepFailure):
        advance(p, s, 1, dump_dir=str(tmp_path))
    dumped = np.load(tmp_path / "failure_step00000.npz")
    assert np.array_equal(dumped["theta"], s.theta)


def test_min_gap_matches_bruteforce(sphere1, cube_patches):
    patches, X = sphere1
    rng = np.random.default_rng(6)
    for P, Y in ((patches, X), (patches, X + 0.05 * rng.normal(size=X.shape)),
                 (cube_patches, cube_patches.mesh.vertices)):
        assert min_gap(P, Y) == min_gap_bruteforce(P, Y)


def test_two_plates_gap():
    for h in (0.2, 0.1):
        mesh, _ = shapes.two_plates_mesh(h, n=4)
        P = build_patches(mesh)
        g = min_gap(P, mesh.vertices)
        assert g == min_gap_bruteforce(P, mesh.vertices)
        assert g <= h + 1e-12


def test_csv_headers():
    assert TIME_SERIES_HEADER == ["t", "volume", "p0", "min_gap", "subiters", "newton_total",
                                  "quad_nonconv"]
    assert NEWTON_HEADER[0] == "step"
    text = format_csv(TIME_SERIES_HEADER, [[0.5, 1.0, -2e-3, 0.1, 2, 5, 0]])
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == TIME_SERIES_HEADER
    assert float(rows[1][2]) == -2e-3 and rows[1][4] == "2"


@pytest.mark.slow
def test_balloon_step_deflates(small_balloon):
    cfg = RunConfig("balloon", balloon_width=4, balloon_rows=6, balloon_inflow_rows=2,
                    perturbation=0.01, seed=1)
    scn = build_scenario("balloon", cfg)
    p = scn.problem()
    # outflow scale gives the full reference volume over the emptying time
    assert p.inflow_rate == pytest.approx(p.model.reference_volume / cfg.emptying_time, rel=1e-12)
    s = advance(p, scn.initial_state(), 1)[-1]
    assert s.p0 < 0
    assert p.model.volume(s.theta) == pytest.approx(
        p.model.reference_volume - cfg.tau * p.inflow_rate, abs=1e-6)
