import numpy as np
import pytest
from scipy import stats

from meshattack.errors import EmptyMesh
from meshattack.kernels import walk_kernel
from meshattack.mesh import Mesh
from meshattack.shapes import icosphere, make_dataset, torus
from meshattack.walks import extract_walk, walk_batch, walk_indices

TET_F = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])


def edge_set(mesh):
    s = set()
    for a, b, c in mesh.faces:
        for x, y in ((a, b), (b, c), (c, a)):
            s |= {(int(x), int(y)), (int(y), int(x))}
    return s


def check_walk_rules(mesh, seq, jumps, edges):
    """Replays a walk and reports (edge violations, preference violations)."""
    bad_edge = bad_pref = 0
    visited = {int(seq[0])}
    for t in range(1, len(seq)):
        prev, cur = int(seq[t - 1]), int(seq[t])
        nb = [int(j) for j in mesh.neighbors(prev)]
        if not jumps[t] and (prev, cur) not in edges:
            bad_edge += 1
        if any(j not in visited for j in nb) and cur in visited:
            bad_pref += 1
        visited.add(cur)
    return bad_edge, bad_pref


def test_tetrahedron_length_four_visits_everything():
    m = Mesh(np.eye(4, 3), TET_F)
    for seed in range(50):
        w = extract_walk(m, 4, np.random.default_rng(seed))
        assert sorted(w.vertex_indices.tolist()) == [0, 1, 2, 3]
        assert not w.jump_flags.any()


def test_length_one_is_start_vertex():
    v, f = icosphere(1)
    w = extract_walk(Mesh(v, f), 1, np.random.default_rng(3))
    assert len(w) == 1 and not w.jump_flags[0]
    np.testing.assert_array_equal(w.coords[0], v[w.vertex_indices[0]])


def test_two_disjoint_triangles_stay_in_start_component():
    # dead ends revisit a neighbour; jumps happen only from isolated vertices
    m = Mesh(np.random.default_rng(0).normal(size=(6, 3)), [[0, 1, 2], [3, 4, 5]])
    for seed in range(40):
        w = extract_walk(m, 6, np.random.default_rng(seed))
        assert not w.jump_flags.any()
        comp = set(range(3)) if w.vertex_indices[0] < 3 else set(range(3, 6))
        assert set(w.vertex_indices.tolist()) == comp


def test_hand_traced_transcript():
    # triangles {0,1,2} and {3,4,5}; uniforms chosen so every index is easy to follow
    m = Mesh(np.zeros((6, 3)), [[0, 1, 2], [3, 4, 5]])
    offsets, nbrs = m.adjacency_csr
    u = np.array([[0.0, 0.9, 0.0, 0.0, 0.9, 0.5]])
    # start floor(0*6)=0; nbrs(0)=[1,2] unvisited -> idx 1 -> 2; nbrs(2)=[0,1], unvisited [1] -> 1;
    # nbrs(1)=[0,2] all visited -> idx 0 -> 0; nbrs(0)=[1,2] all visited -> idx 1 -> 2; then idx 1 of [0,1] -> 1
    for use_numba in (False, True):
        seq, jumps = walk_kernel(offsets, nbrs, 6, u, use_numba=use_numba)
        assert seq[0].tolist() == [0, 2, 1, 0, 2, 1]
        assert not jumps.any()


def test_isolated_vertex_jumps_to_unvisited():
    m = Mesh(np.zeros((5, 3)), [[1, 2, 3]])
    offsets, nbrs = m.adjacency_csr
    u = np.array([[0.0, 0.0, 0.6, 0.99]])  # start at isolated 0, jump to one of [1..4]
    seq, jumps = walk_kernel(offsets, nbrs, 5, u)
    # 0 is isolated -> jump to pool [1,2,3,4][0] = 1; then unvisited nbrs(1)=[2,3] -> 3; then [2]
    assert seq[0].tolist() == [0, 1, 3, 2]
    assert jumps[0].tolist() == [False, True, False, False]


def test_all_isolated_jumps_cover_then_repeat():
    m = Mesh(np.zeros((3, 3)), np.zeros((0, 3), dtype=int))
    seq, jumps = walk_indices(m, 1, 5, np.random.default_rng(1))
    assert sorted(seq[0, :3].tolist()) == [0, 1, 2]
    assert jumps[0, 1:].all() and not jumps[0, 0]


def test_empty_mesh_and_zero_count():
    with pytest.raises(EmptyMesh):
        extract_walk(Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)), 3, np.random.default_rng(0))
    v, f = icosphere(0)
    assert walk_batch(Mesh(v, f), 0, 5, np.random.default_rng(0)) == []


def test_edge_validity_and_unvisited_preference():
    ds = make_dataset(per_class=2, train_fraction=0.5, seed=5)
    for item in ds.train:
        edges = edge_set(item.mesh)
        seq, jumps = walk_indices(item.mesh, 40, 200, np.random.default_rng(1))
        assert not jumps.any()
        for s, j in zip(seq, jumps):
            assert check_walk_rules(item.mesh, s, j, edges) == (0, 0)


def test_coordinates_gathered_at_extraction():
    v, f = torus(8, 6)
    m = Mesh(v.copy(), f)
    w = extract_walk(m, 30, np.random.default_rng(2))
    np.testing.assert_array_equal(w.coords, v[w.vertex_indices])
    m.vertices[:] += 1.0  # later edits to the mesh do not reach the walk
    np.testing.assert_array_equal(w.coords, v[w.vertex_indices])


def test_coverage_full_length():
    v, f = icosphere(2)
    m = Mesh(v, f)
    seq, _ = walk_indices(m, 200, m.n_vertices, np.random.default_rng(7))
    distinct = np.array([len(np.unique(s)) for s in seq])
    assert np.mean(distinct > m.n_vertices / 2) >= 0.99


def test_start_vertices_uniform_chi_square():
    v, f = icosphere(2)
    m = Mesh(v, f)
    rng = np.random.default_rng(11)
    starts = np.concatenate([walk_indices(m, 8, 3, rng)[0][:, 0] for _ in range(2000)])
    counts = np.bincount(starts, minlength=162)
    assert stats.chisquare(counts).pvalue > 0.01


def test_batch_determinism():
    v, f = icosphere(2)
    m = Mesh(v, f)
    a = walk_batch(m, 8, 50, np.random.default_rng(4))
    b = walk_batch(m, 8, 50, np.random.default_rng(4))
    assert all(np.array_equal(x.vertex_indices, y.vertex_indices) for x, y in zip(a, b))


def test_numba_and_numpy_backends_agree():
    ds = make_dataset(per_class=2, train_fraction=0.5, seed=8)
    for item in ds.train:
        offsets, nbrs = item.mesh.adjacency_csr
        u = np.random.default_rng(0).random((16, 200))
        a = walk_kernel(offsets, nbrs, item.mesh.n_vertices, u, use_numba=True)
        b = walk_kernel(offsets, nbrs, item.mesh.n_vertices, u, use_numba=False)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
