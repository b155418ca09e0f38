import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from meshattack.attack import AttackConfig, attack_many
from meshattack.classifiers import LookupVictim
from meshattack.errors import ConfigError, EmptyInput, TopologyMismatch
from meshattack.evaluation import (EvalReport, HeatMap, accuracy, cross_attack_matrix, displacement_norms,
                                   evaluate, export_heatmap, heatmap, l2_distortion)
from meshattack.mesh import Mesh, load_mesh
from meshattack.network import Arch, init_params
from meshattack.shapes import ShapeSpec, generate_shape, icosphere, make_dataset


@pytest.fixture(scope="module")
def sphere():
    v, f = icosphere(2)
    return Mesh(v, f)


def scalar_l2(a, b):
    """Loop oracle: mean Euclidean displacement after mapping both through a's frame."""
    c = [sum(a[i][k] for i in range(len(a))) / len(a) for k in range(3)]
    r = max(sum((a[i][k] - c[k]) ** 2 for k in range(3)) ** 0.5 for i in range(len(a)))
    tot = 0.0
    for i in range(len(a)):
        tot += sum(((b[i][k] - c[k]) / r - (a[i][k] - c[k]) / r) ** 2 for k in range(3)) ** 0.5
    return tot / len(a)


def test_accuracy_examples():
    ds = make_dataset(per_class=2, train_fraction=0.5, seed=0)
    items = ds.test
    table = {it.source_id: np.eye(5)[it.label] for it in items}
    v = LookupVictim(table, ds.class_names)
    meshes, ids = [it.mesh for it in items], [it.source_id for it in items]
    assert accuracy(v, meshes, [it.label for it in items], ids) == 1.0
    assert accuracy(v, meshes, [(it.label + 1) % 5 for it in items], ids) == 0.0
    with pytest.raises(EmptyInput):
        accuracy(v, [], [])


def test_l2_examples(sphere):
    assert l2_distortion(sphere, sphere.copy()) == 0.0
    shifted = sphere.with_vertices(sphere.vertices + [0.1, 0, 0])
    assert l2_distortion(sphere, shifted) == pytest.approx(0.1, abs=1e-12)
    one = sphere.vertices.copy()
    one[5] += [0, 0.162, 0]
    assert l2_distortion(sphere, sphere.with_vertices(one)) == pytest.approx(0.001, abs=1e-12)
    with pytest.raises(TopologyMismatch):
        l2_distortion(sphere, Mesh(sphere.vertices[:-1], sphere.faces[:10]))


def test_l2_matches_loop_oracle_and_is_rigid_invariant():
    m = generate_shape(ShapeSpec(0, "cone", 2, 0.02, (1.3, 0.8, 1.0), seed=3))
    rng = np.random.default_rng(1)
    adv = m.with_vertices(m.vertices + rng.normal(0, 0.02, m.vertices.shape))
    assert l2_distortion(m, adv) == pytest.approx(scalar_l2(m.vertices.tolist(), adv.vertices.tolist()), abs=1e-12)
    R = Rotation.random(random_state=2).as_matrix()
    t = np.array([3.0, -1.0, 0.5])
    s = 2.5
    m2 = m.with_vertices(s * m.vertices @ R.T + t)
    a2 = adv.with_vertices(s * adv.vertices @ R.T + t)
    assert l2_distortion(m2, a2) == pytest.approx(l2_distortion(m, adv), abs=1e-10)


def test_heatmap_cases(sphere):
    assert np.all(heatmap(sphere, sphere.copy()).values == 0)
    rng = np.random.default_rng(0)
    d = rng.normal(size=sphere.vertices.shape) * (rng.random(len(sphere.vertices)) < 0.3)[:, None]
    h = heatmap(sphere, sphere.with_vertices(sphere.vertices + d))
    assert h.values.max() == 1.0 and h.values.min() >= 0
    h5 = heatmap(sphere, sphere.with_vertices(sphere.vertices + 5 * d))
    np.testing.assert_allclose(h5.values, h.values, atol=1e-12)
    np.testing.assert_allclose(displacement_norms(sphere, sphere.with_vertices(sphere.vertices + d)),
                               np.linalg.norm(d, axis=1))


def test_colour_ramp_endpoints():
    c = HeatMap(np.array([0.0, 1.0, 0.5])).colors()
    assert c[0].tolist() == [0, 0, 255] and c[1].tolist() == [255, 0, 0] and c[2].tolist() == [128, 0, 128]


def test_export_round_trip(tmp_path, sphere):
    d = np.zeros_like(sphere.vertices)
    d[:10] = 0.01 * np.arange(1, 11)[:, None]
    adv = sphere.with_vertices(sphere.vertices + d)
    h = heatmap(sphere, adv)
    export_heatmap(adv, h, tmp_path / "h.ply")
    back = load_mesh(tmp_path / "h.ply")
    np.testing.assert_allclose(back.quality, h.values, atol=1e-6)
    assert np.array_equal(back.colors, h.colors())
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "vertex_index,value" and len(rows) == sphere.n_vertices + 1
    export_heatmap(sphere, heatmap(sphere, sphere), tmp_path / "z.ply")
    assert np.all(load_mesh(tmp_path / "z.ply").colors == [0, 0, 255])


def test_report_recompute_and_csv_round_trip():
    ds = make_dataset(per_class=2, train_fraction=0.5, seed=1)
    items = ds.test
    table = {it.source_id: np.eye(5)[it.label] for it in items}
    v = LookupVictim(table, ds.class_names)
    rep = evaluate(v, items, [it.mesh for it in items])
    assert rep.pre_attack_accuracy == rep.post_attack_accuracy == 1.0 and rep.mean_l2 == 0.0
    back = EvalReport.from_csv(rep.to_csv())
    assert back.pre_attack_accuracy == rep.pre_attack_accuracy
    assert back.rows == rep.rows and back.class_names == rep.class_names
    assert "# l2:" in rep.to_csv().splitlines()[0]
    assert np.mean([r["post_pred"] == r["label"] for r in back.rows]) == rep.post_attack_accuracy


def test_cross_matrix_one_by_one_and_errors():
    ds = make_dataset(per_class=2, train_fraction=0.5, seed=4)
    items = ds.test[:3]
    table = {it.source_id: np.eye(5)[it.label] for it in items}
    v = LookupVictim(table, ds.class_names, name="v")
    imi = init_params(Arch(5, (4,), 4, 1), 0)
    cfg = AttackConfig(alpha=0.05, max_iterations=3, walk_length=40)
    mat, pre, attacked = cross_attack_matrix([v], [imi], items, cfg, pairing=["v"])
    assert mat.shape == (1, 1) and pre[0] == 1.0
    post = accuracy(v, [r.attacked_mesh for r in attacked[0]], [it.label for it in items],
                    [it.source_id for it in items])
    assert mat[0, 0] == post
    with pytest.raises(ConfigError):
        cross_attack_matrix([v], [imi], items, cfg, pairing=["other"])
    with pytest.raises(ConfigError):
        cross_attack_matrix([v], [imi], items, cfg)


def test_cross_matrix_reorders_columns_to_own_imitator():
    ds = make_dataset(per_class=2, train_fraction=0.5, seed=4)
    items = ds.test[:2]
    va = LookupVictim({it.source_id: np.eye(5)[it.label] for it in items}, ds.class_names, name="a")
    vb = LookupVictim({it.source_id: np.eye(5)[0] for it in items}, ds.class_names, name="b")
    imis = [init_params(Arch(5, (4,), 4, 1), s) for s in (0, 1)]
    cfg = AttackConfig(alpha=0.05, max_iterations=2, walk_length=30)
    mat, pre, attacked = cross_attack_matrix([va, vb], imis, items, cfg, pairing=["b", "a"])
    assert mat.shape == (2, 2) and pre.tolist() == [1.0, 0.5]
    # column 0 belongs to victim "a", whose imitator is imis[1]
    own_a = attack_many(items, imis[1], cfg)
    for r, o in zip(attacked[0], own_a):
        assert np.array_equal(r.attacked_mesh.vertices, o.attacked_mesh.vertices)
