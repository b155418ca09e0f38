"""Walk-driven adversarial vertex perturbation against an imitating network.

Each iteration draws a walk on the *current* mesh and runs the imitator on it.
If the walk is not yet fooled, the source-class KLD (equivalently -ln p_label)
is back-propagated to the walk coordinates and the walk's vertices move by
``alpha * gradient``, uphill for the untargeted attack and downhill toward the
target class for the targeted one.  The loop ends after ``stop_k`` consecutive
fooled walks or ``max_iterations``.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifiers import mesh_key, stable_seed
from .errors import ConfigError, DimensionMismatch, NotNormalized
from .mesh import Mesh, atomic_write_text
from .network import CrossEntropyLoss, ImitatorParams, backward, forward, kld, one_hot
from .walks import walk_indices

# untargeted: ascend the source-class loss; targeted: descend the target-class loss
UNTARGETED_SIGN = +1.0
TARGETED_SIGN = -1.0


@dataclass
class AttackConfig:
    alpha: float = 0.01
    max_iterations: int = 1000
    walk_length: int = 200
    stop_k: int = 3
    seed: int = 0
    target: int | None = None

    def validate(self):
        if not self.alpha >= 0:
            raise ConfigError("alpha must be >= 0")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.stop_k < 1:
            raise ConfigError("stop_k must be >= 1")
        if self.walk_length < 1:
            raise ConfigError("walk_length must be >= 1")


@dataclass
class AttackResult:
    attacked_mesh: Mesh
    success: bool
    iterations_used: int
    displacement: np.ndarray
    final_prediction: np.ndarray
    loss_trace: list
    log: list = field(default_factory=list)
    updates: int = 0

    @property
    def predicted_class(self) -> int:
        return int(np.argmax(self.final_prediction))


def _check_normalized(mesh: Mesh, tol=0.05):
    radius = float(np.linalg.norm(mesh.vertices, axis=1).max())
    if abs(radius - 1.0) > tol:
        raise NotNormalized(f"max vertex radius {radius:.4f} deviates from 1 by more than {tol}")


def _run(mesh, goal, imitator, config, sign, source_id):
    config.validate()
    D = imitator.n_classes
    if not 0 <= goal < D:
        raise DimensionMismatch(f"class {goal} out of range for {D} classes")
    _check_normalized(mesh)
    rng = np.random.default_rng(stable_seed("attack", config.seed, source_id or mesh_key(mesh)))
    original = mesh.vertices
    verts = original.copy()
    L = min(config.walk_length, mesh.n_vertices)
    loss = CrossEntropyLoss(goal)
    ref = one_hot(goal, D)
    fooled = (lambda c: c != goal) if sign > 0 else (lambda c: c == goal)
    streak = 0
    success = False
    records, loss_trace = [], []
    pred = None
    updates = 0
    it = 0
    for it in range(1, config.max_iterations + 1):
        seq, _ = walk_indices(mesh, 1, L, rng)
        seq = seq[0]
        trace = forward(imitator, verts[seq])
        pred = trace.prediction
        cls = int(np.argmax(pred))
        value = float(kld(ref, pred))
        loss_trace.append(value)
        streak = streak + 1 if fooled(cls) else 0
        records.append(dict(iteration=it, predicted=cls, loss=value, start_vertex=int(seq[0]), streak=streak))
        if streak >= config.stop_k:
            success = True
            break
        if streak > 0:
            continue
        _, g = backward(imitator, trace, loss, need_param_grads=False)
        np.add.at(verts, seq, (sign * config.alpha) * g)
        updates += 1
    return AttackResult(mesh.with_vertices(verts), success, it, verts - original, pred, loss_trace, records, updates)


def attack(mesh: Mesh, label: int, imitator: ImitatorParams, config: AttackConfig | None = None,
           source_id: str | None = None) -> AttackResult:
    """Untargeted attack: push the imitator's walk predictions away from ``label``."""
    return _run(mesh, label, imitator, config or AttackConfig(), UNTARGETED_SIGN, source_id)


def targeted_attack(mesh: Mesh, target: int, imitator: ImitatorParams, config: AttackConfig | None = None,
                    source_id: str | None = None) -> AttackResult:
    """Pull the imitator's walk predictions toward ``target``."""
    return _run(mesh, target, imitator, config or AttackConfig(), TARGETED_SIGN, source_id)


def random_perturbation(mesh: Mesh, fraction: float, magnitude: float, rng) -> Mesh:
    """Move floor(fraction * |V|) random vertices by Gaussian offsets.

    Offsets are rescaled so the mean displacement over *all* vertices equals
    ``magnitude``.
    """
    if not 0 <= fraction <= 1 or magnitude < 0:
        raise ConfigError("need 0 <= fraction <= 1 and magnitude >= 0")
    n = mesh.n_vertices
    k = int(np.floor(fraction * n))
    if k == 0 or magnitude == 0:
        return mesh.copy()
    chosen = rng.choice(n, size=k, replace=False)
    offsets = rng.normal(size=(k, 3))
    offsets *= magnitude * n / np.linalg.norm(offsets, axis=1).sum()
    verts = mesh.vertices.copy()
    verts[chosen] += offsets
    return mesh.with_vertices(verts)


def _attack_job(args):
    mesh, goal, imitator, config, source_id, targeted = args
    fn = targeted_attack if targeted else attack
    return fn(mesh, goal, imitator, config, source_id)


def attack_many(items, imitator: ImitatorParams, config: AttackConfig, jobs: int = 1, targets=None):
    """Attack ``LabeledMesh`` items; results are returned in input order.

    ``targets`` (one class per item) switches to the targeted variant.
    """
    jobs_args = []
    for i, it in enumerate(items):
        goal = it.label if targets is None else targets[i]
        jobs_args.append((it.mesh, goal, imitator, config, it.source_id, targets is not None))
    if jobs <= 1:
        return [_attack_job(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_attack_job, jobs_args))


def attack_log_text(result: AttackResult, source_id: str = "") -> str:
    """Newline-delimited JSON, one record per iteration."""
    lines = [json.dumps(dict(source_id=source_id, **rec), sort_keys=True) for rec in result.log]
    return "\n".join(lines) + ("\n" if lines else "")


def write_attack_log(path, result: AttackResult, source_id: str = "") -> None:
    atomic_write_text(path, attack_log_text(result, source_id))


def config_dict(config: AttackConfig) -> dict:
    d = asdict(config)
    d["untargeted_update"] = "vertex += alpha * grad KLD(pred, onehot(source))"
    d["targeted_update"] = "vertex -= alpha * grad KLD(pred, onehot(target))"
    return d
