import numpy as np
import pytest

from meshattack.errors import InvalidSpec
from meshattack.mesh import Mesh, validate_mesh
from meshattack.shapes import (FAMILIES, ShapeSpec, generate_shape, icosphere, load_dataset, make_dataset, primitive,
                               save_dataset, torus)


def count_unique_midpoints(level):
    """Independent vertex count: 12 + number of distinct edges created at each level."""
    _, f = icosphere(0)
    n = 12
    for _ in range(level):
        edges = {tuple(sorted(e)) for a, b, c in f for e in ((a, b), (b, c), (c, a))}
        n += len(edges)
        mid = {e: n - len(edges) + k for k, e in enumerate(sorted(edges))}
        nf = []
        for a, b, c in f:
            ab, bc, ca = mid[tuple(sorted((a, b)))], mid[tuple(sorted((b, c)))], mid[tuple(sorted((c, a)))]
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return n


@pytest.mark.parametrize("level", [0, 1, 2, 3])
def test_icosphere_vertex_count(level):
    v, f = icosphere(level)
    assert len(v) == 10 * 4**level + 2 == count_unique_midpoints(level)
    # closed genus-0 surface: V - E + F = 2
    edges = {tuple(sorted(e)) for a, b, c in f for e in ((a, b), (b, c), (c, a))}
    assert len(v) - len(edges) + len(f) == 2
    assert icosphere(2)[0].shape[0] == 162


@pytest.mark.parametrize("m,n", [(8, 4), (20, 12), (5, 3)])
def test_torus_grid_counts(m, n):
    v, f = torus(m, n)
    assert len(v) == m * n and len(f) == 2 * m * n


@pytest.mark.parametrize("family", FAMILIES)
def test_primitives_closed_and_consistently_oriented(family):
    v, f = primitive(family, 2)
    mesh = Mesh(v, f)
    validate_mesh(mesh)
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    assert len(np.unique(directed, axis=0)) == len(directed)
    undirected = np.unique(np.sort(directed, axis=1), axis=0)
    assert len(undirected) * 2 == len(directed)  # every edge shared by exactly two faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    assert np.einsum("ij,ij->i", a, np.cross(b, c)).sum() > 0
    assert 150 <= len(v) <= 400


def test_generate_shape_deterministic_and_normalized():
    spec = ShapeSpec(0, "cone", 2, 0.01, (1.2, 0.7, 1.0), seed=11)
    a, b = generate_shape(spec), generate_shape(spec)
    assert np.array_equal(a.vertices, b.vertices)
    np.testing.assert_allclose(a.vertices.mean(0), 0, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(a.vertices, axis=1).max(), 1, atol=1e-6)
    z = ShapeSpec(0, "torus", 2, 0.0, (1, 1, 1), seed=3)
    assert np.array_equal(generate_shape(z).vertices, generate_shape(z).vertices)


@pytest.mark.parametrize("kwargs", [dict(family="blob"), dict(resolution=0), dict(jitter=-1.0),
                                    dict(anisotropic_scale=(2.0, 1.0, 1.0))])
def test_invalid_spec(kwargs):
    base = dict(class_id=0, family="sphere")
    base.update(kwargs)
    with pytest.raises(InvalidSpec):
        generate_shape(ShapeSpec(**base))


def test_make_dataset_split_sizes_and_determinism():
    ds = make_dataset(per_class=20, train_fraction=0.8, seed=4)
    assert len(ds.train) == 80 and len(ds.test) == 20
    again = make_dataset(per_class=20, train_fraction=0.8, seed=4)
    assert [x.source_id for x in ds.train] == [x.source_id for x in again.train]
    assert {x.source_id for x in ds.train}.isdisjoint({x.source_id for x in ds.test})
    assert all(x.label < ds.n_classes for x in ds.train + ds.test)
    assert np.array_equal(ds.test[3].mesh.vertices, again.test[3].mesh.vertices)


def test_make_dataset_rejects_bad_counts():
    with pytest.raises(InvalidSpec):
        make_dataset(per_class=1)
    with pytest.raises(InvalidSpec):
        make_dataset(train_fraction=1.0)


def test_every_generated_mesh_is_valid_and_normalized():
    ds = make_dataset(per_class=5, seed=9)
    for item in ds.train + ds.test:
        validate_mesh(item.mesh)
        np.testing.assert_allclose(item.mesh.vertices.mean(0), 0, atol=1e-6)
        assert abs(np.linalg.norm(item.mesh.vertices, axis=1).max() - 1) < 1e-6


def _radial_histogram(mesh, bins=12):
    r = np.linalg.norm(mesh.vertices, axis=1)
    h, _ = np.histogram(r, bins=bins, range=(0, 1))
    return h / h.sum()


def test_nearest_centroid_beats_chance():
    ds = make_dataset(per_class=10, seed=2)
    feats = {k: [] for k in range(ds.n_classes)}
    for it in ds.train:
        feats[it.label].append(_radial_histogram(it.mesh))
    cents = np.array([np.mean(feats[k], axis=0) for k in range(ds.n_classes)])
    hits = [np.argmin(((cents - _radial_histogram(it.mesh)) ** 2).sum(1)) == it.label for it in ds.test]
    assert np.mean(hits) > 1.0 / ds.n_classes + 0.2


def test_dataset_directory_round_trip(tmp_path):
    ds = make_dataset(per_class=3, train_fraction=0.6, seed=1)
    save_dataset(ds, tmp_path)
    assert (tmp_path / "manifest.json").exists()
    assert (tmp_path / "sphere" / "train" / "sphere_000.off").exists()
    back = load_dataset(tmp_path)
    assert back.class_names == ds.class_names
    assert [x.source_id for x in back.test] == [x.source_id for x in ds.test]
    assert np.array_equal(back.train[0].mesh.vertices, ds.train[0].mesh.vertices)
