import numpy as np
import pytest

from meshattack.classifiers import (FaceVictim, LookupVictim, TrainConfig, WalkVictim, agreement, face_features,
                                    imitator_predict,
                                    load_imitator, load_victim, query_all, read_predictions, save_imitator,
                                    train_face_victim, train_imitator, train_victim, write_predictions)
from meshattack.errors import ConfigError, DimensionMismatch, NonConvergence
from meshattack.network import Arch, init_params
from meshattack.shapes import make_dataset

TINY = dict(lift=(8,), hidden=8, layers=1, walk_length=30, walks_per_mesh_per_epoch=1, batch_size=8)


@pytest.fixture(scope="module")
def small():
    return make_dataset(per_class=4, train_fraction=0.5, seed=3)


def random_victim(ds, seed=0):
    return WalkVictim(init_params(Arch(ds.n_classes, (8,), 8, 1), seed), ds.class_names, n_walks=4, walk_length=40)


def test_query_is_deterministic_and_normalized(small):
    v = random_victim(small)
    m = small.test[0].mesh
    a, b = v.query(m, "x"), v.query(m, "x")
    assert np.array_equal(a, b) and abs(a.sum() - 1) < 1e-9
    assert np.array_equal(v.query(m), v.query(m.copy()))


def test_query_all_shape(small):
    v = random_victim(small)
    out = query_all(v, [it.mesh for it in small.test], [it.source_id for it in small.test])
    assert out.shape == (len(small.test), 5)


def test_prediction_file_round_trip(tmp_path):
    vecs = np.random.default_rng(0).dirichlet(np.ones(5), size=3)
    write_predictions(tmp_path / "p.csv", ["a", "b", "c"], vecs)
    ids, back = read_predictions(tmp_path / "p.csv")
    assert ids == ["a", "b", "c"] and np.array_equal(back, vecs)
    with pytest.raises(ValueError):
        write_predictions(tmp_path / "q.csv", ["a,b"], vecs[:1])


def test_imitator_training_sees_only_vectors(small):
    # a lookup table stands in for an opaque victim: only its outputs are available
    table = {it.source_id: np.eye(5)[(it.label + 1) % 5] * 0.9 + 0.02 for it in small.train}
    victim = LookupVictim(table, small.class_names)
    targets = query_all(victim, [it.mesh for it in small.train], [it.source_id for it in small.train])
    assert victim.calls == len(small.train)
    cfg = TrainConfig(epochs=3, loss="kld", **TINY)
    params, tlog = train_imitator(small, targets, cfg, check_convergence=False)
    assert params.n_classes == 5 and len(tlog.epoch_loss) == 3
    with pytest.raises(KeyError):
        victim.query(small.test[0].mesh, "unknown")


def test_uniform_targets_give_near_uniform_imitator(small):
    targets = np.full((len(small.train), 5), 0.2)
    cfg = TrainConfig(epochs=15, loss="kld", learning_rate=3e-3, **TINY)
    params, tlog = train_imitator(small, targets, cfg)
    assert tlog.final_loss < 1e-2


def test_training_is_deterministic(small):
    cfg = TrainConfig(epochs=2, **TINY)
    a = train_victim(small, cfg, check_convergence=False)
    b = train_victim(small, cfg, check_convergence=False)
    for k, t in a._params.tensors.items():
        assert np.array_equal(t, b._params.tensors[k])


def test_zero_epochs_returns_initialisation(small):
    cfg = TrainConfig(epochs=0, loss="kld", **TINY)
    params, tlog = train_imitator(small, np.full((len(small.train), 5), 0.2), cfg)
    init = init_params(cfg.arch(5), params.seed)
    assert all(np.array_equal(params.tensors[k], init.tensors[k]) for k in init.tensors)
    assert tlog.epoch_loss == []


def test_config_errors(small):
    with pytest.raises(ConfigError):
        train_victim(small, TrainConfig(loss="kld"))
    with pytest.raises(ConfigError):
        train_imitator(small, np.zeros((len(small.train), 5)), TrainConfig(loss="ce"))
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1).validate()
    with pytest.raises(DimensionMismatch):
        train_imitator(small, np.zeros((3, 5)), TrainConfig(loss="kld", epochs=1, **TINY))


def test_nonconvergence_is_reported(small):
    cfg = TrainConfig(epochs=1, learning_rate=1e-6, **TINY)
    with pytest.raises(NonConvergence):
        train_victim(small, cfg)


def test_victim_checkpoints_round_trip(tmp_path, small):
    v = random_victim(small, 4)
    v.save(tmp_path / "v")
    back = load_victim(tmp_path / "v")
    m = small.test[1].mesh
    assert np.array_equal(back.query(m, "k"), v.query(m, "k"))

    face = train_face_victim(small, epochs=2, width=8)
    face.save(tmp_path / "f")
    fb = load_victim(tmp_path / "f")
    assert isinstance(fb, FaceVictim) and np.array_equal(fb.query(m), face.query(m))

    params = init_params(Arch(5, (4,), 4, 1), 2)
    save_imitator(params, tmp_path / "i", victim="walk")
    p2, manifest = load_imitator(tmp_path / "i")
    assert manifest["victim"] == "walk" and p2.arch == params.arch


def test_face_features_and_agreement(small):
    f = face_features(small.train[0].mesh)
    assert f.shape == (small.train[0].mesh.n_faces, 7)
    np.testing.assert_allclose(np.linalg.norm(f[:, 3:6], axis=1), 1, atol=1e-9)
    params = init_params(Arch(5, (8,), 8, 1), 5)
    items = small.test[:6]
    own = {it.source_id: imitator_predict(params, it.mesh, 4, 40, 0, it.source_id) for it in items}
    assert agreement(params, LookupVictim(own, small.class_names), items, n_walks=4, walk_length=40) == 1.0
    shifted = {k: np.roll(v, 1) if v.max() > v.min() else v for k, v in own.items()}
    assert agreement(params, LookupVictim(shifted, small.class_names), items, n_walks=4, walk_length=40) == 0.0
