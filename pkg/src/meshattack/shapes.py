"""Procedural labelled shape dataset (sphere, cube, cylinder, torus, cone)."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec, ParseError
from .mesh import Mesh, atomic_write_text, load_mesh, normalize_unit_sphere, save_mesh

FAMILIES = ("sphere", "cube", "cylinder", "torus", "cone")


@dataclass(frozen=True)
class ShapeSpec:
    class_id: int
    family: str
    resolution: int = 2
    jitter: float = 0.01
    anisotropic_scale: tuple = (1.0, 1.0, 1.0)
    seed: int = 0

    def validate(self):
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown family {self.family!r}")
        if self.resolution < 1:
            raise InvalidSpec("resolution must be >= 1")
        if not self.jitter >= 0:
            raise InvalidSpec("jitter must be >= 0")
        if len(self.anisotropic_scale) != 3 or not all(0.6 <= s <= 1.4 for s in self.anisotropic_scale):
            raise InvalidSpec("anisotropic_scale entries must lie in [0.6, 1.4]")
        if self.class_id < 0:
            raise InvalidSpec("class_id must be non-negative")


@dataclass
class LabeledMesh:
    mesh: Mesh
    label: int
    source_id: str


@dataclass
class Dataset:
    train: list
    test: list
    class_names: list
    meta: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> list:
        if name not in ("train", "test"):
            raise InvalidSpec(f"unknown split {name!r}")
        return self.train if name == "train" else self.test


# ---------------------------------------------------------------- primitives

def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Subdivided icosahedron projected to the unit sphere: 10*4**level + 2 vertices."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    for _ in range(level):
        cache = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces, dtype=np.int64)


def torus(m: int, n: int, major: float = 1.0, minor: float = 0.4) -> tuple[np.ndarray, np.ndarray]:
    """``m`` samples around the main axis, ``n`` around the tube: m*n vertices, 2*m*n faces."""
    u = 2 * np.pi * np.arange(m) / m
    v = 2 * np.pi * np.arange(n) / n
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major + minor * np.cos(vv)
    verts = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(vv)], -1).reshape(-1, 3)
    idx = lambda i, j: (i % m) * n + (j % n)  # noqa: E731
    faces = []
    for i in range(m):
        for j in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            faces += [(a, b, c), (a, c, d)]
    return verts, np.array(faces, dtype=np.int64)


def cube(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Surface of [-1, 1]^3 with an n x n grid per side: 6*n*n + 2 vertices."""
    lattice = {}
    verts, faces = [], []

    def vid(p):
        if p not in lattice:
            lattice[p] = len(verts)
            verts.append(p)
        return lattice[p]

    for axis in range(3):
        for side in (0, n):
            a1, a2 = [k for k in range(3) if k != axis]
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        p = [0, 0, 0]
                        p[axis], p[a1], p[a2] = side, i + di, j + dj
                        quad.append(vid(tuple(p)))
                    # (a1, a2, axis) is an even permutation iff axis == 1 is false
                    outward = (side == n) != (axis == 1)
                    if not outward:
                        quad = quad[::-1]
                    faces += [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
    verts = np.array(verts, dtype=np.float64) * (2.0 / n) - 1.0
    return verts, np.array(faces, dtype=np.int64)


def cylinder(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Capped cylinder, ``m`` around, ``n`` height segments: m*(n+1) + 2 vertices."""
    ang = 2 * np.pi * np.arange(m) / m
    rings = [np.stack([np.cos(ang), np.sin(ang), np.full(m, -1 + 2 * k / n)], -1) for k in range(n + 1)]
    verts = np.concatenate(rings + [np.array([[0, 0, -1.0], [0, 0, 1.0]])])
    bottom, top = m * (n + 1), m * (n + 1) + 1
    faces = []
    for k in range(n):
        for i in range(m):
            a, b = k * m + i, k * m + (i + 1) % m
            faces += [(a, b, b + m), (a, b + m, a + m)]
    for i in range(m):
        faces.append((bottom, (i + 1) % m, i))
        faces.append((top, n * m + i, n * m + (i + 1) % m))
    return verts, np.array(faces, dtype=np.int64)


def cone(m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed cone, ``m`` around, ``n`` rings below the apex: m*n + 2 vertices."""
    ang = 2 * np.pi * np.arange(m) / m
    rings = []
    for k in range(n):
        r = 1.0 - k / n
        rings.append(np.stack([r * np.cos(ang), r * np.sin(ang), np.full(m, -1 + 2 * k / n)], -1))
    verts = np.concatenate(rings + [np.array([[0, 0, -1.0], [0, 0, 1.0]])])
    base, apex = m * n, m * n + 1
    faces = []
    for k in range(n - 1):
        for i in range(m):
            a, b = k * m + i, k * m + (i + 1) % m
            faces += [(a, b, b + m), (a, b + m, a + m)]
    for i in range(m):
        faces.append((base, (i + 1) % m, i))
        faces.append((apex, (n - 1) * m + i, (n - 1) * m + (i + 1) % m))
    return verts, np.array(faces, dtype=np.int64)


def orient_outward(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Flip the whole face list if the enclosed signed volume is negative."""
    a, b, c = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    vol = np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0
    return faces if vol >= 0 else faces[:, ::-1].copy()


def primitive(family: str, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    r = resolution
    if family == "sphere":
        v, f = icosphere(r)
    elif family == "cube":
        v, f = cube(3 * r + 1)
    elif family == "cylinder":
        v, f = cylinder(8 * r + 4, 4 * r + 1)
    elif family == "torus":
        v, f = torus(8 * r + 4, 4 * r + 4)
    elif family == "cone":
        v, f = cone(8 * r + 4, 4 * r)
    else:
        raise InvalidSpec(f"unknown family {family!r}")
    return v, orient_outward(v, f)


def generate_shape(spec: ShapeSpec) -> Mesh:
    """Scaled, jittered, unit-sphere normalised primitive; deterministic in ``spec.seed``."""
    spec.validate()
    v, f = primitive(spec.family, spec.resolution)
    v = v * np.asarray(spec.anisotropic_scale, dtype=np.float64)
    if spec.jitter > 0:
        rng = np.random.default_rng(spec.seed)
        v = v + rng.normal(0.0, spec.jitter, size=v.shape)
    return normalize_unit_sphere(Mesh(v, f))


def make_dataset(families=FAMILIES, per_class: int = 40, train_fraction: float = 0.8, seed: int = 0,
                 resolution: int = 2, jitter: float = 0.01) -> Dataset:
    families = list(families)
    if per_class < 2:
        raise InvalidSpec("per_class must be >= 2")
    if not 0 < train_fraction < 1:
        raise InvalidSpec("train_fraction must lie in (0, 1)")
    n_train = math.ceil(train_fraction * per_class)
    if n_train >= per_class:
        raise InvalidSpec("train_fraction leaves no test meshes")
    train, test = [], []
    for label, family in enumerate(families):
        for k in range(per_class):
            ss = np.random.SeedSequence([seed, label, k])
            rng = np.random.default_rng(ss)
            scale = tuple(float(s) for s in rng.uniform(0.6, 1.4, size=3))
            mesh_seed = int(rng.integers(0, 2**31 - 1))
            spec = ShapeSpec(label, family, resolution, jitter, scale, mesh_seed)
            item = LabeledMesh(generate_shape(spec), label, f"{family}_{k:03d}")
            (train if k < n_train else test).append(item)
    meta = dict(families=families, per_class=per_class, train_fraction=train_fraction,
                seed=seed, resolution=resolution, jitter=jitter)
    return Dataset(train, test, families, meta)


# ---------------------------------------------------------------- directory layout

def save_dataset(ds: Dataset, root) -> None:
    """``<root>/<class>/<split>/<source_id>.off`` plus ``manifest.json``."""
    root = Path(root)
    index = {"train": [], "test": []}
    for split in ("train", "test"):
        for item in ds.split(split):
            rel = Path(ds.class_names[item.label]) / split / f"{item.source_id}.off"
            save_mesh(item.mesh, root / rel)
            index[split].append({"source_id": item.source_id, "label": item.label, "path": str(rel)})
    manifest = {
        "class_names": ds.class_names,
        "counts": {s: len(index[s]) for s in index},
        **{k: v for k, v in ds.meta.items() if k != "families"},
        "splits": index,
    }
    atomic_write_text(root / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True))


def load_dataset(root) -> Dataset:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{root}: unreadable manifest ({exc})") from exc
    splits = {}
    for split in ("train", "test"):
        splits[split] = [LabeledMesh(load_mesh(root / rec["path"]), int(rec["label"]), rec["source_id"])
                         for rec in manifest["splits"][split]]
    meta = {k: v for k, v in manifest.items() if k not in ("splits", "class_names", "counts")}
    return Dataset(splits["train"], splits["test"], list(manifest["class_names"]), meta)

