import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from febe import bem, output
from febe.quadrature import OrderHistogram, QuadratureSettings

from conftest import random_rotation
from oracles import double_layer_off_surface

vec3 = arrays(float, 3, elements=st.floats(-3, 3))


@pytest.fixture(scope="module")
def op_lam1(sphere1):
    patches, X = sphere1
    return bem.assemble_fluid(X, patches, 1.0, histogram=OrderHistogram())


@pytest.fixture(scope="module")
def op_k(sphere1):
    patches, X = sphere1
    return bem.assemble_fluid(X, patches, 0.0, QuadratureSettings(q_max=8),
                              histogram=OrderHistogram())


def test_stokeslet_example():
    G = bem.stokeslet(np.array([1.0, 0, 0]), np.zeros(3))
    assert np.allclose(G, np.diag([2.0, 1.0, 1.0]) / (8 * np.pi), rtol=1e-15, atol=0)


@settings(max_examples=50, deadline=None)
@given(vec3, vec3, st.floats(0.1, 10))
def test_stokeslet_symmetry_and_homogeneity(x, y, s):
    if np.linalg.norm(x - y) < 1e-3:
        return
    G = bem.stokeslet(x, y)
    assert np.allclose(G, G.T, rtol=0, atol=1e-15 * np.abs(G).max())
    assert np.allclose(G, bem.stokeslet(y, x), rtol=1e-14, atol=0)
    assert np.allclose(bem.stokeslet(s * x, s * y), G / s, rtol=1e-12, atol=0)


def test_stresslet_examples():
    n = np.array([0.0, 0.0, 1.0])
    T = bem.stresslet(n, np.zeros(3), n)
    assert np.allclose(T, 3 / (4 * np.pi) * np.outer(n, n), rtol=1e-15, atol=0)
    assert np.all(bem.stresslet(np.array([1.0, 2.0, 0.0]), np.zeros(3), n) == 0)


@settings(max_examples=50, deadline=None)
@given(vec3, vec3, st.floats(0.1, 10))
def test_stresslet_homogeneity(x, y, s):
    if np.linalg.norm(x - y) < 1e-3:
        return
    n = np.array([0.6, 0.0, 0.8])
    assert np.allclose(bem.stresslet(s * x, s * y, n), bem.stresslet(x, y, n) / s ** 2,
                       rtol=1e-12, atol=1e-300)


def test_kernels_reject_coincident_points():
    x = np.ones(3)
    with pytest.raises(ValueError):
        bem.stokeslet(x, x)
    with pytest.raises(ValueError):
        bem.stresslet(x, x, np.array([0.0, 0.0, 1.0]))


def test_viscosity_ratio_parsing():
    assert bem.parse_viscosity_ratio("inf") == np.inf
    assert bem.rhs_weights(np.inf) == (0.5, -1.0)
    assert bem.rhs_weights(1.0) == (1.0, 0.0)
    with pytest.raises(ValueError):
        bem.parse_viscosity_ratio(-1)


def test_lambda_one_skips_double_layer(op_lam1, op_k):
    assert not op_lam1.k_assembled and op_lam1.K is None
    assert op_k.k_assembled and op_k.K is not None


def test_single_layer_symmetry(op_lam1):
    assert op_lam1.asymmetry() < 1e-8


def test_single_layer_quadrature_converges(op_lam1):
    assert op_lam1.nonconverged == 0
    assert op_lam1.histogram.total == op_lam1.n_pairs


def test_pair_blocks_transpose(sphere1):
    patches, X = sphere1
    for e, f in [(0, 1), (0, 5), (3, 17), (2, 2)]:
        Vef, _, _ = bem.pair_block(patches, X, e, f, 6)
        Vfe, _, _ = bem.pair_block(patches, X, f, e, 6)
        assert np.abs(Vef - Vfe.transpose(2, 3, 0, 1)).max() < 1e-10 * np.abs(Vef).max()


def test_constraint_annihilates_translation(op_lam1):
    for c in np.eye(3):
        u = np.tile(c, op_lam1.n_vertices)
        assert abs(op_lam1.constraints[:, 0] @ u) < 1e-10


def test_mass_is_spd(op_lam1):
    M = op_lam1.mass
    assert np.abs(M - M.T).max() < 1e-15
    assert np.linalg.eigvalsh(M).min() > 0


def test_single_layer_psd_on_constrained_complement(op_lam1):
    rng = np.random.default_rng(0)
    G = op_lam1.constraints
    V = 0.5 * (op_lam1.V + op_lam1.V.T)
    for _ in range(100):
        w = rng.normal(size=len(V))
        w -= G @ np.linalg.lstsq(G, w, rcond=None)[0]
        assert w @ V @ w >= -1e-10 * (w @ w)


def test_zero_data_gives_zero_solution(op_lam1):
    sol = bem.solve_fluid(op_lam1, bem.DirichletData.zeros(op_lam1.n_vertices))
    assert np.all(sol.traction == 0) and np.all(sol.zeta == 0)


def test_translation_drag_lambda_one(op_lam1):
    u = np.tile([1.0, 0.0, 0.0], (op_lam1.n_vertices, 1))
    sol = bem.solve_fluid(op_lam1, bem.DirichletData(u))
    force = sol.total_force(op_lam1)
    assert abs(force[0] / (6 * np.pi) - 1) < 0.02
    assert np.abs(force[1:]).max() < 1e-10
    t = sol.traction.reshape(-1)
    assert abs(op_lam1.constraints[:, 0] @ t) < 1e-10 * np.linalg.norm(t)


def test_normal_expansion_traction_is_normal_mode(sphere1, op_lam1):
    # g = n is incompatible with interior incompressibility; the multiplier takes
    # the uniform normal mode and the pressure-free traction stays negligible
    patches, X = sphere1
    sol = bem.solve_fluid(op_lam1, bem.DirichletData(X.copy()))
    snap = output.make_snapshot(patches, X, sol.traction, 4)
    n = snap.points / np.linalg.norm(snap.points, axis=1, keepdims=True)
    c = np.mean(np.sum(snap.traction * n, axis=1))
    dev = np.abs(snap.traction - c * n).max()
    assert abs(sol.zeta[0]) > 0.5
    assert dev < 0.02 * abs(sol.zeta[0])


def test_rotated_problem_rotates_drag(sphere1, op_lam1):
    patches, X = sphere1
    R = random_rotation(np.random.default_rng(7))
    u = np.tile([1.0, 0.0, 0.0], (len(X), 1))
    # the adaptive stopping test is a max-norm, so orders (and values) may
    # differ between frames by about the quadrature tolerance
    F = bem.solve_fluid(op_lam1, bem.DirichletData(u)).total_force(op_lam1)
    op_r = bem.assemble_fluid(X @ R.T, patches, 1.0, histogram=OrderHistogram())
    Fr = bem.solve_fluid(op_r, bem.DirichletData(u @ R.T)).total_force(op_r)
    assert np.abs(Fr - R @ F).max() < 1e-5 * np.linalg.norm(F)


def test_pullback_consistency_at_fixed_order(sphere1):
    patches, X = sphere1
    R = random_rotation(np.random.default_rng(8))
    fixed = QuadratureSettings(tol=1e-300, q_min=5, q_max=6)
    op = bem.assemble_fluid(X, patches, 1.0, fixed, histogram=OrderHistogram())
    op_r = bem.assemble_fluid(X @ R.T, patches, 1.0, fixed, histogram=OrderHistogram())
    Q = np.kron(np.eye(len(X)), R)
    assert np.abs(op_r.V - Q @ op.V @ Q.T).max() < 1e-10 * np.abs(op.V).max()
    u = np.tile([1.0, 0.0, 0.0], (len(X), 1))
    F = bem.solve_fluid(op, bem.DirichletData(u)).total_force(op)
    Fr = bem.solve_fluid(op_r, bem.DirichletData(u @ R.T)).total_force(op_r)
    assert np.abs(Fr - R @ F).max() < 1e-10 * np.linalg.norm(F)


def test_dual_layer_zero_and_linearity(sphere1, op_k):
    patches, X = sphere1
    rng = np.random.default_rng(1)
    assert np.all(bem.dual_layer_apply(X, patches, np.zeros_like(X), operator=op_k) == 0)
    p1, p2 = rng.normal(size=X.shape), rng.normal(size=X.shape)
    a, b = 0.7, -2.3
    lhs = bem.dual_layer_apply(X, patches, a * p1 + b * p2, operator=op_k)
    rhs = a * bem.dual_layer_apply(X, patches, p1, operator=op_k) \
        + b * bem.dual_layer_apply(X, patches, p2, operator=op_k)
    assert np.abs(lhs - rhs).max() < 1e-12 * np.abs(rhs).max()


def test_double_layer_interior_value_oracle(sphere1):
    # off-surface, the double layer of a constant density is smooth; dense
    # tensor Gauss quadrature gives -c inside and 0 outside
    patches, X = sphere1
    c = np.array([0.3, -1.0, 0.5])
    for x, expected in ((np.array([0.1, -0.2, 0.05]), -c), (np.array([0.0, 0.0, 2.5]), 0 * c)):
        assert np.abs(double_layer_off_surface(patches, X, x, c) - expected).max() < 1e-3


def test_inverted_configuration_is_rejected(sphere1):
    patches, X = sphere1
    with pytest.raises(bem.FluidAssemblyError):
        bem.assemble_fluid(X * np.array([-1.0, 1.0, 1.0]), patches, 1.0, reference=X)


def test_double_layer_required_for_other_ratios(op_lam1):
    op = bem.FluidOperator(**{**op_lam1.__dict__, "lam": 2.0})
    with pytest.raises(bem.FluidAssemblyError):
        bem.fluid_rhs(op, bem.DirichletData(np.ones((op.n_vertices, 3))))


def test_matrix_dump_round_trip(tmp_path, op_lam1):
    path = tmp_path / "V.bin"
    bem.dump_matrix(path, op_lam1.V)
    assert np.array_equal(bem.load_matrix(path), op_lam1.V)
