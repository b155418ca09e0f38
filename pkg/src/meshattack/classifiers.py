"""Black-box victims, imitator distillation and agreement metrics.

Everything downstream of a victim talks to it through :meth:`VictimHandle.query`
only.  Imitator training never sees the victim object at all: it receives the
queried prediction vectors.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import read_checkpoint, write_checkpoint
from .errors import ConfigError, DimensionMismatch, NonConvergence, ParseError
from .mesh import Mesh, atomic_write_text
from .network import (Arch, CrossEntropyLoss, ImitatorParams, KLDLoss, backward, forward, init_params, kld,
                      softmax)
from .optim import Adam
from .walks import walk_indices

log = logging.getLogger(__name__)

DESK_LIFT = (32, 64)
DESK_HIDDEN = 64


@dataclass
class TrainConfig:
    epochs: int = 100
    walks_per_mesh_per_epoch: int = 4
    walk_length: int = 200
    learning_rate: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    loss: str = "ce"
    lift: tuple = DESK_LIFT
    hidden: int = DESK_HIDDEN
    layers: int = 2
    features: str = "xyz"
    query_walks: int = 8
    augment_noise: float = 0.0

    def validate(self):
        if self.loss not in ("ce", "kld"):
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.epochs < 0 or self.walks_per_mesh_per_epoch < 1 or self.walk_length < 1:
            raise ConfigError("epochs >= 0, walks_per_mesh_per_epoch >= 1 and walk_length >= 1 required")
        if not self.learning_rate > 0 or self.batch_size < 1 or self.query_walks < 1:
            raise ConfigError("learning_rate > 0, batch_size >= 1 and query_walks >= 1 required")
        if self.augment_noise < 0:
            raise ConfigError("augment_noise must be >= 0")
        self.lift = tuple(int(x) for x in self.lift)

    def arch(self, n_classes: int) -> Arch:
        return Arch(n_classes, self.lift, self.hidden, self.layers, self.features)


def stable_seed(*parts) -> int:
    """64-bit seed from a stable hash of the parts (independent of PYTHONHASHSEED)."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def mesh_key(mesh: Mesh) -> str:
    """Topology fingerprint; identical for a mesh and any attacked copy of it."""
    return hashlib.sha256(mesh.faces.tobytes() + str(mesh.n_vertices).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- walk-averaged prediction


def walk_coords(mesh: Mesh, n_walks: int, walk_length: int, rng) -> np.ndarray:
    L = min(walk_length, mesh.n_vertices)
    seq, _ = walk_indices(mesh, n_walks, L, rng)
    return mesh.vertices[seq]


def predict_mesh(params: ImitatorParams, mesh: Mesh, n_walks: int, walk_length: int, rng) -> np.ndarray:
    """Mean softmax over ``n_walks`` random walks."""
    return forward(params, walk_coords(mesh, n_walks, walk_length, rng)).probs.mean(axis=0)


# ---------------------------------------------------------------- victims


class VictimHandle:
    """Query-only view of a classifier: ``query(mesh) -> prediction vector``."""

    name = "victim"
    class_names: list = []

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def query(self, mesh: Mesh, source_id: str | None = None) -> np.ndarray:
        raise NotImplementedError

    def save(self, path) -> None:
        raise NotImplementedError


class WalkVictim(VictimHandle):
    """Walk-based classifier; predictions average softmax outputs over a fixed walk set.

    The walks for a mesh are seeded from the victim seed and ``source_id`` (or the
    topology fingerprint when no id is given), so repeated queries agree.
    """

    kind = "walk"

    def __init__(self, params: ImitatorParams, class_names, n_walks=8, walk_length=200, seed=0, name="walk"):
        self._params = params
        self.class_names = list(class_names)
        self.n_walks = n_walks
        self.walk_length = walk_length
        self.seed = seed
        self.name = name
        if params.n_classes != len(self.class_names):
            raise DimensionMismatch("class_names length does not match network output")

    def query(self, mesh, source_id=None):
        rng = np.random.default_rng(stable_seed("victim-walks", self.seed, source_id or mesh_key(mesh)))
        return predict_mesh(self._params, mesh, self.n_walks, self.walk_length, rng)

    def save(self, path):
        manifest = dict(kind=self.kind, name=self.name, n_walks=self.n_walks, walk_length=self.walk_length,
                        seed=self.seed, class_names=",".join(self.class_names))
        manifest.update(_arch_manifest(self._params))
        write_checkpoint(path, manifest, self._params.tensors)


def face_features(mesh: Mesh) -> np.ndarray:
    """Per-face centroid, unit normal and area: ``(F, 7)``."""
    v, f = mesh.vertices, mesh.faces
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    cr = np.cross(b - a, c - a)
    norm = np.linalg.norm(cr, axis=1, keepdims=True)
    normal = cr / np.maximum(norm, 1e-12)
    return np.concatenate([(a + b + c) / 3.0, normal, 0.5 * norm], axis=1)


class FaceVictim(VictimHandle):
    """Permutation-invariant face network: shared 2-layer MLP on face features, mean-pooled."""

    kind = "face"

    def __init__(self, tensors: dict, class_names, seed=0, name="face"):
        self._t = tensors
        self.class_names = list(class_names)
        self.seed = seed
        self.name = name

    def _forward(self, feats):
        t = self._t
        x = (feats - t["feat_mean"]) / t["feat_std"]
        p1 = x @ t["W1"] + t["b1"]
        h1 = np.maximum(p1, 0.0)
        p2 = h1 @ t["W2"] + t["b2"]
        h2 = np.maximum(p2, 0.0)
        pooled = h2.mean(axis=0)
        logits = pooled @ t["Wo"] + t["bo"]
        return logits, (x, p1, h1, p2, h2, pooled)

    def query(self, mesh, source_id=None):
        logits, _ = self._forward(face_features(mesh))
        return softmax(logits)

    def save(self, path):
        manifest = dict(kind=self.kind, name=self.name, seed=self.seed, class_names=",".join(self.class_names))
        write_checkpoint(path, manifest, self._t)


class LookupVictim(VictimHandle):
    """Replays precomputed vectors by ``source_id``; used to prove black-box discipline."""

    kind = "lookup"

    def __init__(self, table: dict, class_names, name="lookup"):
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.class_names = list(class_names)
        self.name = name
        self.calls = 0

    def query(self, mesh, source_id=None):
        self.calls += 1
        if source_id not in self.table:
            raise KeyError(f"no stored prediction for {source_id!r}")
        return self.table[source_id].copy()


def _arch_manifest(params: ImitatorParams) -> dict:
    a = params.arch
    return dict(n_classes=a.n_classes, lift=",".join(str(x) for x in a.lift), hidden=a.hidden, layers=a.layers,
                features=a.features, param_seed=params.seed)


def _arch_from_manifest(m: dict) -> Arch:
    lift = tuple(int(x) for x in m["lift"].split(",") if x)
    return Arch(int(m["n_classes"]), lift, int(m["hidden"]), int(m["layers"]), m["features"])


def save_imitator(params: ImitatorParams, path, **extra) -> None:
    manifest = dict(kind="imitator", loss="kld")
    manifest.update(_arch_manifest(params))
    manifest.update(extra)
    write_checkpoint(path, manifest, params.tensors)


def load_imitator(path) -> tuple[ImitatorParams, dict]:
    manifest, tensors = read_checkpoint(path)
    if manifest.get("kind") not in ("imitator", "walk"):
        raise ParseError(f"{path}: not a walk-network checkpoint ({manifest.get('kind')})")
    seed = manifest.get("param_seed")
    params = ImitatorParams(_arch_from_manifest(manifest), tensors, None if seed in (None, "None") else int(seed))
    return params, manifest


def load_victim(path) -> VictimHandle:
    manifest, tensors = read_checkpoint(path)
    names = manifest["class_names"].split(",")
    if manifest["kind"] == "walk":
        params, _ = load_imitator(path)
        return WalkVictim(params, names, int(manifest["n_walks"]), int(manifest["walk_length"]),
                          int(manifest["seed"]), manifest.get("name", "walk"))
    if manifest["kind"] == "face":
        return FaceVictim(tensors, names, int(manifest["seed"]), manifest.get("name", "face"))
    raise ParseError(f"{path}: unknown victim kind {manifest['kind']!r}")


# ---------------------------------------------------------------- training


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    config: dict = field(default_factory=dict)


def _eval_loss(params, meshes, refs, walk_length, seed):
    """Mean KLD on one fixed walk per mesh (same walks every call)."""
    total = 0.0
    for i, (mesh, ref) in enumerate(zip(meshes, refs)):
        rng = np.random.default_rng(stable_seed("eval-walk", seed, i))
        probs = forward(params, walk_coords(mesh, 1, walk_length, rng)).probs[0]
        total += float(kld(ref, probs))
    return total / max(len(meshes), 1)


def train_walk_network(meshes, refs, config: TrainConfig, n_classes: int) -> tuple[ImitatorParams, TrainLog]:
    """Minimise mean KLD(ref, last-step prediction) over random walks.

    With one-hot ``refs`` this is cross-entropy training.  Batches mix walks from
    different meshes; each batch uses the walk length ``min(walk_length, min |V|)``.
    """
    config.validate()
    refs = np.asarray(refs, dtype=np.float64)
    if refs.shape != (len(meshes), n_classes):
        raise DimensionMismatch(f"targets shape {refs.shape} != {(len(meshes), n_classes)}")
    params = init_params(config.arch(n_classes), seed=stable_seed("init", config.seed) % 2**32)
    opt = Adam(params.tensors, lr=config.learning_rate)
    rng = np.random.default_rng(stable_seed("train", config.seed))
    tlog = TrainLog(config=asdict(config))
    tlog.initial_loss = _eval_loss(params, meshes, refs, config.walk_length, config.seed)
    for epoch in range(config.epochs):
        order = np.repeat(np.arange(len(meshes)), config.walks_per_mesh_per_epoch)
        rng.shuffle(order)
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            L = min(config.walk_length, min(meshes[i].n_vertices for i in idx))
            coords = np.empty((len(idx), L, 3))
            for k, i in enumerate(idx):
                seq, _ = walk_indices(meshes[i], 1, L, rng)
                coords[k] = meshes[i].vertices[seq[0]]
            if config.augment_noise > 0:
                coords += rng.normal(0.0, config.augment_noise, size=coords.shape)
            loss = KLDLoss(refs[idx])
            trace = forward(params, coords)
            losses.append(float(kld(refs[idx], trace.probs).mean()))
            grads, _ = backward(params, trace, loss)
            opt.step(params.tensors, grads)
        tlog.epoch_loss.append(float(np.mean(losses)))
        log.debug("epoch %d loss %.4f", epoch, tlog.epoch_loss[-1])
    if not params.is_finite():
        raise NonConvergence("parameters became non-finite")
    tlog.final_loss = _eval_loss(params, meshes, refs, config.walk_length, config.seed)
    return params, tlog


def train_victim(dataset, config: TrainConfig | None = None, name="walk", check_convergence: bool = True) -> WalkVictim:
    """Walk classifier trained on one-hot labels of ``dataset.train``."""
    config = config or TrainConfig()
    if config.loss != "ce":
        raise ConfigError("victims are trained with cross-entropy on labels")
    meshes = [item.mesh for item in dataset.train]
    refs = np.eye(dataset.n_classes)[[item.label for item in dataset.train]]
    params, tlog = train_walk_network(meshes, refs, config, dataset.n_classes)
    victim = WalkVictim(params, dataset.class_names, config.query_walks, config.walk_length, config.seed, name)
    victim.train_log = tlog
    if config.epochs > 0:
        acc = _victim_accuracy(victim, dataset.train)
        victim.train_accuracy = acc
        if check_convergence and acc < 0.6:
            raise NonConvergence(f"victim train accuracy {acc:.3f} < 0.60")
    return victim


def _victim_accuracy(victim, items):
    hits = [int(np.argmax(victim.query(it.mesh, it.source_id)) == it.label) for it in items]
    return float(np.mean(hits))


def train_face_victim(dataset, epochs=300, width=64, learning_rate=3e-3, batch_size=16, seed=0,
                      name="face") -> FaceVictim:
    """Face-feature classifier trained with cross-entropy; its gradients never leave this module."""
    rng = np.random.default_rng(stable_seed("face-victim", seed))
    feats = [face_features(it.mesh) for it in dataset.train]
    allf = np.concatenate(feats)
    D = dataset.n_classes
    t = {"feat_mean": allf.mean(axis=0), "feat_std": allf.std(axis=0) + 1e-6}

    def glorot(n, m):
        lim = np.sqrt(6.0 / (n + m))
        return rng.uniform(-lim, lim, size=(n, m))

    t.update(W1=glorot(7, width), b1=np.zeros(width), W2=glorot(width, width), b2=np.zeros(width),
             Wo=glorot(width, D), bo=np.zeros(D))
    victim = FaceVictim(t, dataset.class_names, seed, name)
    trainable = ("W1", "b1", "W2", "b2", "Wo", "bo")
    opt = Adam({k: t[k] for k in trainable}, lr=learning_rate)
    labels = np.array([it.label for it in dataset.train])
    for _ in range(epochs):
        order = rng.permutation(len(feats))
        for start in range(0, len(order), batch_size):
            grads = {k: np.zeros_like(t[k]) for k in trainable}
            idx = order[start:start + batch_size]
            for i in idx:
                logits, (x, p1, h1, p2, h2, pooled) = victim._forward(feats[i])
                dlog = (softmax(logits) - np.eye(D)[labels[i]]) / len(idx)
                grads["Wo"] += np.outer(pooled, dlog)
                grads["bo"] += dlog
                dh2 = np.broadcast_to(t["Wo"] @ dlog / len(x), h2.shape)
                dp2 = dh2 * (p2 > 0)
                grads["W2"] += h1.T @ dp2
                grads["b2"] += dp2.sum(axis=0)
                dp1 = (dp2 @ t["W2"].T) * (p1 > 0)
                grads["W1"] += x.T @ dp1
                grads["b1"] += dp1.sum(axis=0)
            opt.step({k: t[k] for k in trainable}, grads)
    victim.train_accuracy = _victim_accuracy(victim, dataset.train)
    return victim


def train_imitator(dataset, targets, config: TrainConfig | None = None,
                   check_convergence: bool = True) -> tuple[ImitatorParams, TrainLog]:
    """Distil queried prediction vectors (not labels) into a walk network.

    ``targets[i]`` is the victim's vector for ``dataset.train[i]``.
    """
    config = config or TrainConfig(loss="kld")
    if config.loss != "kld":
        raise ConfigError("imitators are trained with the KLD loss on prediction vectors")
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) != len(dataset.train):
        raise DimensionMismatch(f"{len(targets)} targets for {len(dataset.train)} train meshes")
    meshes = [item.mesh for item in dataset.train]
    params, tlog = train_walk_network(meshes, targets, config, dataset.n_classes)
    # near-zero starting loss (e.g. uniform targets) cannot halve meaningfully
    if check_convergence and config.epochs > 0 and tlog.final_loss > max(0.5 * tlog.initial_loss, 1e-2):
        raise NonConvergence(f"train KLD {tlog.final_loss:.4f} did not drop below half of {tlog.initial_loss:.4f}")
    return params, tlog


# ---------------------------------------------------------------- querying and agreement


def query_all(victim: VictimHandle, meshes, source_ids=None) -> np.ndarray:
    """One prediction vector per mesh, in order; ``(N, D)``."""
    if source_ids is None:
        source_ids = [None] * len(meshes)
    out = [victim.query(m, s) for m, s in zip(meshes, source_ids)]
    return np.asarray(out, dtype=np.float64).reshape(len(out), victim.n_classes)


def write_predictions(path, source_ids, vectors) -> None:
    """``source_id,p_1,...,p_D`` per line, floats at round-trip precision."""
    lines = []
    for sid, vec in zip(source_ids, vectors):
        if "," in sid or "\n" in sid:
            raise ValueError(f"source id {sid!r} contains a separator")
        lines.append(",".join([sid] + [repr(float(p)) for p in vec]))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_predictions(path) -> tuple[list, np.ndarray]:
    ids, rows = [], []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for line in text.splitlines():
        if not line.strip():
            continue
        parts = line.split(",")
        ids.append(parts[0])
        rows.append([float(x) for x in parts[1:]])
    if rows and len({len(r) for r in rows}) != 1:
        raise ParseError(f"{path}: ragged prediction rows")
    return ids, np.asarray(rows, dtype=np.float64)


def imitator_predict(params: ImitatorParams, mesh: Mesh, n_walks=8, walk_length=200, seed=0, key=None):
    rng = np.random.default_rng(stable_seed("imitator-walks", seed, key or mesh_key(mesh)))
    return predict_mesh(params, mesh, n_walks, walk_length, rng)


def agreement(imitator: ImitatorParams, victim: VictimHandle, items, n_walks=8, walk_length=200, seed=0) -> float:
    """Fraction of meshes on which imitator and victim argmax coincide.

    ``items`` are :class:`LabeledMesh` records (their ``source_id`` keys the victim query).
    """
    if not items:
        return float("nan")
    hits = 0
    for it in items:
        a = np.argmax(imitator_predict(imitator, it.mesh, n_walks, walk_length, seed, it.source_id))
        b = np.argmax(victim.query(it.mesh, it.source_id))
        hits += int(a == b)
    return hits / len(items)
