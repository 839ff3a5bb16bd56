import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from febe import shapes
from febe.mesh import (Adjacency, MeshError, NonManifoldError, OrientationError, QuadMesh,
                       Region, area_vector_sum, classify_adjacency, extraordinary_vertices,
                       limit_positions, load_quad_mesh, neighbor_pairs, perturb_interior,
                       refine, save_quad_mesh, vertex_valences)


def test_unit_cube_with_one_inflow_face():
    cube = shapes.unit_cube()
    assert cube.n_quads == 6
    assert np.count_nonzero(cube.region == Region.INFLOW) == 1
    assert len(cube.boundary_curve) == 4
    assert cube.euler_characteristic() == 2


def test_cube_valences():
    cube = shapes.unit_cube()
    assert np.all(vertex_valences(cube) == 3)
    fine = refine(cube)
    val = vertex_valences(fine)
    assert np.all(val[:8] == 3)
    assert np.all(val[8:] == 4)


def test_opposite_winding_is_rejected():
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0], [2, 0, 0], [2, 1, 0]], float)
    quads = [[0, 1, 2, 3], [1, 2, 5, 4]]
    with pytest.raises(OrientationError):
        QuadMesh(verts, quads, [Region.SHELL, Region.SHELL])


def test_non_manifold_edge_is_rejected():
    verts = np.random.default_rng(0).random((8, 3))
    quads = [[0, 1, 2, 3], [1, 0, 4, 5], [0, 1, 6, 7]]
    with pytest.raises(NonManifoldError):
        QuadMesh(verts, quads, [0, 0, 0])


def test_open_mesh_is_rejected():
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    with pytest.raises(MeshError):
        QuadMesh(verts, [[0, 1, 2, 3]], [0])


def test_triangles_and_missing_tags_are_rejected(tmp_path):
    p = tmp_path / "tri.qm"
    p.write_text("quadmesh 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\nq 0 1 2 shell\n")
    with pytest.raises(MeshError):
        load_quad_mesh(p)
    p.write_text("quadmesh 1\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nq 0 1 2 3\n")
    with pytest.raises(MeshError):
        load_quad_mesh(p)
    obj = tmp_path / "tri.obj"
    obj.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\ng shell\nf 1 2 3\n")
    with pytest.raises(MeshError):
        load_quad_mesh(obj)


def test_canonical_format_round_trip(tmp_path):
    mesh = perturb_interior(shapes.balloon_mesh(), 0.01, 3)
    path = tmp_path / "balloon.qm"
    save_quad_mesh(mesh, path)
    back = load_quad_mesh(path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.quads, mesh.quads)
    assert np.array_equal(back.region, mesh.region)


def test_obj_groups_give_regions(tmp_path):
    cube = shapes.unit_cube()
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in cube.vertices.tolist()]
    for name, tag in (("shell", Region.SHELL), ("inflow", Region.INFLOW)):
        lines.append(f"g {name}")
        lines += ["f " + " ".join(str(i + 1) for i in q) for q in cube.quads[cube.region == tag]]
    path = tmp_path / "cube.obj"
    path.write_text("\n".join(lines) + "\n")
    back = load_quad_mesh(path)
    assert back.n_quads == 6
    assert np.count_nonzero(back.region == Region.INFLOW) == 1
    assert len(back.boundary_curve) == 4


def test_classify_adjacency_on_cube():
    cube = shapes.unit_cube()
    assert classify_adjacency(cube, 2, 2).kind is Adjacency.IDENTICAL
    kinds = {}
    for b in range(1, 6):
        kinds[b] = classify_adjacency(cube, 0, b)
    edge = [b for b, c in kinds.items() if c.kind is Adjacency.COMMON_EDGE]
    disjoint = [b for b, c in kinds.items() if c.kind is Adjacency.DISJOINT]
    assert len(edge) == 4 and len(disjoint) == 1
    assert all(len(kinds[b].shared) == 2 for b in edge)


def test_classify_adjacency_common_vertex(small_balloon):
    mesh, _ = small_balloon
    pairs = neighbor_pairs(mesh)
    vertex = [k for k, c in pairs.items() if c.kind is Adjacency.COMMON_VERTEX]
    assert vertex
    a, b = vertex[0]
    c = classify_adjacency(mesh, a, b)
    assert len(c.shared) == 1
    assert mesh.quads[a][c.frame_x[0]] == c.shared[0] == mesh.quads[b][c.frame_y[0]]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 127), st.integers(0, 127))
def test_classification_is_symmetric(a, b):
    mesh = shapes.balloon_mesh()
    assert classify_adjacency(mesh, a, b).kind is classify_adjacency(mesh, b, a).kind


def test_balloon_structure():
    mesh = shapes.balloon_mesh()
    assert mesh.euler_characteristic() == 2
    ev = extraordinary_vertices(mesh)
    assert np.all(vertex_valences(mesh)[ev] == 3)
    inflow = mesh.inflow_vertices
    shell_only = np.zeros(mesh.n_vertices, dtype=bool)
    shell_only[mesh.quads[mesh.region == Region.SHELL].ravel()] = True
    assert np.count_nonzero(inflow[ev]) == 4
    assert np.count_nonzero(shell_only[ev] & ~inflow[ev]) == 4


def test_full_size_balloon_counts():
    mesh = shapes.full_balloon_mesh()
    assert np.count_nonzero(mesh.region == Region.INFLOW) == 320
    assert np.count_nonzero(mesh.region == Region.SHELL) == 832
    ev = extraordinary_vertices(mesh)
    assert len(ev) == 8 and np.all(vertex_valences(mesh)[ev] == 3)


@pytest.mark.parametrize("mesh", [shapes.unit_cube(), shapes.sphere_mesh(2), shapes.balloon_mesh()],
                         ids=["cube", "sphere", "balloon"])
def test_area_vectors_sum_to_zero(mesh):
    scale = np.abs(mesh.vertices).max() ** 2 * mesh.n_quads
    assert np.linalg.norm(area_vector_sum(mesh)) < 1e-12 * scale


def test_perturbation_zero_amplitude_is_identity():
    mesh = shapes.balloon_mesh()
    assert np.array_equal(perturb_interior(mesh, 0.0, 5).vertices, mesh.vertices)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.02), st.integers(0, 2**31))
def test_perturbation_contract(amplitude, seed):
    mesh = shapes.balloon_mesh()
    out = perturb_interior(mesh, amplitude, seed)
    fixed = mesh.inflow_vertices.copy()
    fixed[mesh.boundary_curve] = True
    assert np.array_equal(out.vertices[fixed], mesh.vertices[fixed])
    assert np.abs(out.vertices - mesh.vertices).max() <= amplitude
    assert np.array_equal(perturb_interior(mesh, amplitude, seed).vertices, out.vertices)


def test_perturbation_too_large_is_rejected():
    with pytest.raises(MeshError):
        perturb_interior(shapes.balloon_mesh(), 5.0, 0)


def test_limit_positions_of_refined_mesh_agree():
    cube = shapes.unit_cube()
    coarse = limit_positions(cube)
    fine = limit_positions(refine(cube))
    assert np.abs(fine[:8] - coarse).max() < 1e-14


@pytest.mark.parametrize("sides", [3, 5, 6])
def test_prism_valences(sides):
    mesh = shapes.prism_mesh(sides)
    val = vertex_valences(mesh)
    assert mesh.n_quads == 2 * sides * 2 + 2 * sides
    assert sorted(set(val[extraordinary_vertices(mesh)].tolist())) == sorted({3, sides})
    assert np.abs(area_vector_sum(mesh)).max() < 1e-14
