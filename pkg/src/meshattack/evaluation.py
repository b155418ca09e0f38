"""Accuracy, L2 distortion, heat maps, cross-imitator matrices and reports."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .attack import attack_many
from .errors import ConfigError, EmptyInput, TopologyMismatch
from .mesh import Mesh, atomic_write_text, mesh_to_text, unit_sphere_frame

L2_DEFINITION = ("mean over vertices of ||v_attacked - v_original||_2, both meshes mapped to the unit sphere "
                 "by the original's centroid and radius")


def accuracy(victim, meshes, labels, source_ids=None) -> float:
    if len(meshes) == 0 or len(meshes) != len(labels):
        raise EmptyInput("accuracy needs a non-empty mesh list with one label per mesh")
    if source_ids is None:
        source_ids = [None] * len(meshes)
    preds = [int(np.argmax(victim.query(m, s))) for m, s in zip(meshes, source_ids)]
    return float(np.mean(np.asarray(preds) == np.asarray(labels)))


def _check_topology(original: Mesh, attacked: Mesh):
    if original.vertices.shape != attacked.vertices.shape or not np.array_equal(original.faces, attacked.faces):
        raise TopologyMismatch("meshes differ in vertex count or faces")


def displacement_norms(original: Mesh, attacked: Mesh) -> np.ndarray:
    _check_topology(original, attacked)
    return np.linalg.norm(attacked.vertices - original.vertices, axis=1)


def l2_distortion(original: Mesh, attacked: Mesh) -> float:
    """Mean per-vertex displacement in the original's unit-sphere frame."""
    _check_topology(original, attacked)
    center, radius = unit_sphere_frame(original.vertices)
    a = (original.vertices - center) / radius
    b = (attacked.vertices - center) / radius
    return float(np.linalg.norm(b - a, axis=1).mean())


@dataclass
class HeatMap:
    values: np.ndarray

    def colors(self) -> np.ndarray:
        """Red-blue ramp: 1 -> (255, 0, 0), 0 -> (0, 0, 255)."""
        h = np.clip(self.values, 0.0, 1.0)
        return np.stack([np.round(255 * h), np.zeros_like(h), np.round(255 * (1 - h))], 1).astype(np.uint8)


def heatmap(original: Mesh, attacked: Mesh) -> HeatMap:
    norms = displacement_norms(original, attacked)
    top = norms.max() if len(norms) else 0.0
    return HeatMap(norms / top if top > 0 else np.zeros_like(norms))


def export_heatmap(mesh: Mesh, heat: HeatMap, path) -> None:
    """PLY with per-vertex ``quality`` and colours, plus ``<path>.csv`` (vertex_index,value)."""
    colored = Mesh(mesh.vertices, mesh.faces, quality=heat.values, colors=heat.colors())
    atomic_write_text(path, mesh_to_text(colored, "ply"))
    rows = ["vertex_index,value"] + [f"{i},{float(v)!r}" for i, v in enumerate(heat.values)]
    atomic_write_text(str(path)[: -len(".ply")] + ".csv" if str(path).endswith(".ply") else f"{path}.csv",
                      "\n".join(rows) + "\n")


# ---------------------------------------------------------------- reports

ROW_FIELDS = ("source_id", "label", "pre_pred", "post_pred", "l2", "imitator_success", "iterations")


@dataclass
class EvalReport:
    pre_attack_accuracy: float
    post_attack_accuracy: float
    mean_l2: float
    per_class_l2: dict
    success_rate: float
    rows: list = field(default_factory=list)
    class_names: list = field(default_factory=list)

    @classmethod
    def from_rows(cls, rows, class_names):
        if not rows:
            raise EmptyInput("no rows")
        pre = float(np.mean([r["pre_pred"] == r["label"] for r in rows]))
        post = float(np.mean([r["post_pred"] == r["label"] for r in rows]))
        l2 = float(np.mean([r["l2"] for r in rows]))
        per_class = {}
        for k, name in enumerate(class_names):
            vals = [r["l2"] for r in rows if r["label"] == k]
            if vals:
                per_class[name] = float(np.mean(vals))
        correct = [r for r in rows if r["pre_pred"] == r["label"]]
        success = float(np.mean([r["post_pred"] != r["label"] for r in correct])) if correct else float("nan")
        return cls(pre, post, l2, per_class, success, list(rows), list(class_names))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# l2: {L2_DEFINITION}\n")
        buf.write(f"# classes: {','.join(self.class_names)}\n")
        w = csv.DictWriter(buf, fieldnames=ROW_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(float(r[k])) if k == "l2" else r[k]) for k in ROW_FIELDS})
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str):
        lines = text.splitlines()
        names = []
        body = []
        for line in lines:
            if line.startswith("# classes:"):
                names = [x for x in line.split(":", 1)[1].strip().split(",") if x]
            elif not line.startswith("#"):
                body.append(line)
        rows = []
        for r in csv.DictReader(body):
            rows.append(dict(source_id=r["source_id"], label=int(r["label"]), pre_pred=int(r["pre_pred"]),
                             post_pred=int(r["post_pred"]), l2=float(r["l2"]),
                             imitator_success=r["imitator_success"] == "True", iterations=int(r["iterations"])))
        return cls.from_rows(rows, names)

    def table(self) -> str:
        out = [f"L2 metric: {L2_DEFINITION}",
               f"meshes:               {len(self.rows)}",
               f"pre-attack accuracy:  {100 * self.pre_attack_accuracy:.1f}%",
               f"post-attack accuracy: {100 * self.post_attack_accuracy:.1f}%",
               f"attack success rate:  {100 * self.success_rate:.1f}% (of pre-attack correct meshes)",
               f"mean L2:              {self.mean_l2:.4f}"]
        for name, v in self.per_class_l2.items():
            out.append(f"  L2[{name}] = {v:.4f}")
        return "\n".join(out) + "\n"


def evaluate(victim, items, attacked_meshes, results=None) -> EvalReport:
    """Query the victim on original and attacked meshes (same source ids)."""
    if not items:
        raise EmptyInput("nothing to evaluate")
    rows = []
    for i, (it, adv) in enumerate(zip(items, attacked_meshes)):
        res = results[i] if results is not None else None
        rows.append(dict(source_id=it.source_id, label=it.label,
                         pre_pred=int(np.argmax(victim.query(it.mesh, it.source_id))),
                         post_pred=int(np.argmax(victim.query(adv, it.source_id))),
                         l2=l2_distortion(it.mesh, adv),
                         imitator_success=bool(res.success) if res is not None else False,
                         iterations=int(res.iterations_used) if res is not None else 0))
    return EvalReport.from_rows(rows, victim.class_names)


def cross_attack_matrix(victims, imitators, items, config, pairing=None, jobs=1):
    """Post-attack accuracy of victim ``i`` on meshes attacked through imitator ``j``.

    ``pairing[j]`` names the victim imitator ``j`` was distilled from; it must
    reference each victim exactly once.  Columns of the returned matrix are
    reordered so that column ``i`` is victim ``i``'s own imitator, putting the
    own-imitator attacks on the diagonal.  Returns ``(matrix, pre_accuracy,
    attacked)`` with ``attacked[i]`` the attack results of column ``i``.
    """
    names = [v.name for v in victims]
    if pairing is None or len(pairing) != len(imitators) or sorted(pairing) != sorted(names):
        raise ConfigError(f"pairing {pairing} must name each victim in {names} exactly once")
    meshes = [it.mesh for it in items]
    labels = [it.label for it in items]
    ids = [it.source_id for it in items]
    pre = np.array([accuracy(v, meshes, labels, ids) for v in victims])
    attacked = [attack_many(items, imi, config, jobs=jobs) for imi in imitators]
    matrix = np.zeros((len(victims), len(imitators)))
    for j, results in enumerate(attacked):
        adv = [r.attacked_mesh for r in results]
        for i, v in enumerate(victims):
            matrix[i, j] = accuracy(v, adv, labels, ids)
    order = [pairing.index(n) for n in names]
    return matrix[:, order], pre, [attacked[k] for k in order]
