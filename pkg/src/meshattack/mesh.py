"""Triangle mesh container, OFF/OBJ/PLY I/O, unit-sphere normalisation, adjacency."""
from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DegenerateMesh, EmptyMesh, IoError, MeshIndexError, ParseError

log = logging.getLogger(__name__)

FORMATS = ("off", "obj", "ply")


@dataclass(eq=False)
class Mesh:
    """Vertex positions plus triangle faces.

    ``vertices`` is a ``(V, 3)`` float64 array and ``faces`` a ``(F, 3)`` int64
    array.  Adjacency is derived lazily from the faces and cached in CSR form.
    Treat instances as immutable; use :meth:`with_vertices` to get a moved copy
    that shares topology.
    """

    vertices: np.ndarray
    faces: np.ndarray
    quality: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    _csr: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.quality is not None:
            self.quality = np.asarray(self.quality, dtype=np.float64).reshape(-1)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def adjacency_csr(self) -> tuple[np.ndarray, np.ndarray]:
        """``(offsets, neighbors)``; neighbors of ``i`` are ``neighbors[offsets[i]:offsets[i+1]]``."""
        if self._csr is None:
            self._csr = build_adjacency(self)
        return self._csr

    @property
    def adjacency(self) -> list[np.ndarray]:
        offsets, nbrs = self.adjacency_csr
        return [nbrs[offsets[i]:offsets[i + 1]] for i in range(self.n_vertices)]

    def neighbors(self, i: int) -> np.ndarray:
        offsets, nbrs = self.adjacency_csr
        return nbrs[offsets[i]:offsets[i + 1]]

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise ValueError(f"vertex array shape {vertices.shape} != {self.vertices.shape}")
        return Mesh(vertices.copy(), self.faces, self.quality, self.colors, _csr=self._csr)

    def copy(self) -> "Mesh":
        return self.with_vertices(self.vertices)


def build_adjacency(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Undirected edge set induced by the faces, as sorted CSR neighbor lists.

    Vertices referenced by no face get an empty list.
    """
    n = mesh.n_vertices
    f = mesh.faces
    if len(f) == 0:
        return np.zeros(n + 1, dtype=np.int64), np.zeros(0, dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.concatenate([e, e[:, ::-1]])
    e = e[e[:, 0] != e[:, 1]]
    e = np.unique(e, axis=0)  # lexicographic: grouped by source, sorted targets
    counts = np.bincount(e[:, 0], minlength=n)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return offsets, np.ascontiguousarray(e[:, 1], dtype=np.int64)


def validate_mesh(mesh: Mesh) -> None:
    """Raise if any structural invariant is violated."""
    if mesh.n_vertices == 0 or mesh.n_faces == 0:
        raise EmptyMesh(f"mesh has {mesh.n_vertices} vertices and {mesh.n_faces} faces")
    if mesh.faces.min() < 0 or mesh.faces.max() >= mesh.n_vertices:
        raise MeshIndexError("face index out of range")
    f = mesh.faces
    if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
        raise ParseError("face repeats a vertex index")
    if not np.all(np.isfinite(mesh.vertices)):
        raise ParseError("non-finite vertex coordinate")
    offsets, nbrs = mesh.adjacency_csr
    src = np.repeat(np.arange(mesh.n_vertices), np.diff(offsets))
    fwd = set(zip(src.tolist(), nbrs.tolist()))
    if any((j, i) not in fwd for i, j in fwd):
        raise AssertionError("adjacency is not symmetric")
    for i in range(mesh.n_vertices):
        row = nbrs[offsets[i]:offsets[i + 1]]
        if len(row) > 1 and np.any(np.diff(row) <= 0):
            raise AssertionError(f"neighbor list of {i} not strictly sorted")


def connected_components(mesh: Mesh) -> list[np.ndarray]:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components as cc

    offsets, nbrs = mesh.adjacency_csr
    g = csr_matrix((np.ones(len(nbrs)), nbrs, offsets), shape=(mesh.n_vertices,) * 2)
    _, labels = cc(g, directed=False)
    return [np.flatnonzero(labels == k) for k in range(labels.max() + 1)]


# ---------------------------------------------------------------- normalisation

def unit_sphere_frame(vertices: np.ndarray) -> tuple[np.ndarray, float]:
    """Vertex centroid and max distance from it."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if len(vertices) == 0:
        raise EmptyMesh("no vertices")
    center = vertices.mean(axis=0)
    radius = float(np.sqrt(((vertices - center) ** 2).sum(axis=1)).max())
    if not radius > 1e-12:
        raise DegenerateMesh("all vertices coincide")
    return center, radius


def normalize_unit_sphere(mesh: Mesh) -> Mesh:
    center, radius = unit_sphere_frame(mesh.vertices)
    return mesh.with_vertices((mesh.vertices - center) / radius)


# ---------------------------------------------------------------- file I/O

def _fan(poly: list[int]) -> list[tuple[int, int, int]]:
    return [(poly[0], poly[k], poly[k + 1]) for k in range(1, len(poly) - 1)]


def _finish(vertices, polys, path, quality=None, colors=None) -> Mesh:
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(vertices) == 0:
        raise EmptyMesh(f"{path}: zero vertices")
    tris = []
    for poly in polys:
        if len(poly) < 3:
            raise ParseError(f"{path}: face with fewer than 3 vertices")
        for idx in poly:
            if idx < 0 or idx >= len(vertices):
                raise MeshIndexError(f"{path}: face index {idx} out of range [0, {len(vertices)})")
        tris.extend(_fan(poly))
    faces = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    bad = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    if bad.any():
        log.warning("%s: dropping %d degenerate faces", path, int(bad.sum()))
        faces = faces[~bad]
    if len(faces) == 0:
        raise EmptyMesh(f"{path}: zero faces")
    return Mesh(vertices, faces, quality=quality, colors=colors)


def _tokens(path):
    with open(path, "r") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                yield line


def _read_off(path) -> Mesh:
    lines = list(_tokens(path))
    if not lines or not lines[0].startswith("OFF"):
        raise ParseError(f"{path}: missing OFF header")
    head = lines[0][3:].split()
    body = lines[1:]
    try:
        if not head:
            head, body = body[0].split(), body[1:]
        nv, nf = int(head[0]), int(head[1])
        vertices = [[float(x) for x in body[i].split()[:3]] for i in range(nv)]
        polys = []
        for line in body[nv:nv + nf]:
            parts = line.split()
            k = int(parts[0])
            polys.append([int(x) for x in parts[1:1 + k]])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if len(polys) != nf or any(len(v) != 3 for v in vertices):
        raise ParseError(f"{path}: truncated OFF file")
    return _finish(vertices, polys, path)


def _read_obj(path) -> Mesh:
    vertices, polys = [], []
    try:
        for line in _tokens(path):
            parts = line.split()
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                poly = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    poly.append(i - 1 if i > 0 else len(vertices) + i)
                polys.append(poly)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return _finish(vertices, polys, path)


def _read_ply(path) -> Mesh:
    lines = list(_tokens(path))
    if not lines or lines[0] != "ply":
        raise ParseError(f"{path}: missing ply magic")
    elements = []  # (name, count, [props])
    i = 1
    try:
        while lines[i] != "end_header":
            parts = lines[i].split()
            if parts[0] == "format" and parts[1] != "ascii":
                raise ParseError(f"{path}: only ascii PLY is supported")
            if parts[0] == "element":
                elements.append((parts[1], int(parts[2]), []))
            elif parts[0] == "property":
                elements[-1][2].append(parts[-1] if parts[1] != "list" else ("list", parts[-1]))
            i += 1
        i += 1
        data = {}
        for name, count, props in elements:
            data[name] = (props, lines[i:i + count])
            i += count
        vprops, vlines = data["vertex"]
        rows = np.array([[float(x) for x in l.split()[:len(vprops)]] for l in vlines], dtype=np.float64)
        rows = rows.reshape(len(vlines), len(vprops))
        col = {p: k for k, p in enumerate(vprops)}
        vertices = rows[:, [col["x"], col["y"], col["z"]]]
        quality = rows[:, col["quality"]] if "quality" in col else None
        colors = None
        if all(c in col for c in ("red", "green", "blue")):
            colors = rows[:, [col["red"], col["green"], col["blue"]]].astype(np.uint8)
        polys = []
        if "face" in data:
            for l in data["face"][1]:
                parts = [int(x) for x in l.split()]
                polys.append(parts[1:1 + parts[0]])
    except (ValueError, IndexError, KeyError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return _finish(vertices, polys, path, quality=quality, colors=colors)


def _infer_format(path, fmt):
    fmt = (fmt or Path(path).suffix.lstrip(".")).lower()
    if fmt not in FORMATS:
        raise ParseError(f"unknown mesh format {fmt!r}")
    return fmt


def load_mesh(path, format: str | None = None) -> Mesh:
    fmt = _infer_format(path, format)
    if not os.path.exists(path):
        raise IoError(f"{path}: no such file")
    return {"off": _read_off, "obj": _read_obj, "ply": _read_ply}[fmt](path)


def _fmt(x: float) -> str:
    return repr(float(x))


def mesh_to_text(mesh: Mesh, fmt: str) -> str:
    v, f = mesh.vertices, mesh.faces
    out = []
    if fmt == "off":
        out.append("OFF")
        out.append(f"{len(v)} {len(f)} 0")
        out.extend(f"{_fmt(a)} {_fmt(b)} {_fmt(c)}" for a, b, c in v)
        out.extend(f"3 {a} {b} {c}" for a, b, c in f)
    elif fmt == "obj":
        out.extend(f"v {_fmt(a)} {_fmt(b)} {_fmt(c)}" for a, b, c in v)
        out.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in f)
    else:
        out += ["ply", "format ascii 1.0", f"element vertex {len(v)}",
                "property double x", "property double y", "property double z"]
        if mesh.quality is not None:
            out.append("property double quality")
        if mesh.colors is not None:
            out += ["property uchar red", "property uchar green", "property uchar blue"]
        out += [f"element face {len(f)}", "property list uchar int vertex_indices", "end_header"]
        for i, (a, b, c) in enumerate(v):
            row = [_fmt(a), _fmt(b), _fmt(c)]
            if mesh.quality is not None:
                row.append(_fmt(mesh.quality[i]))
            if mesh.colors is not None:
                row.extend(str(int(x)) for x in mesh.colors[i])
            out.append(" ".join(row))
        out.extend(f"3 {a} {b} {c}" for a, b, c in f)
    return "\n".join(out) + "\n"


def atomic_write_text(path, text: str) -> None:
    """Write via a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"{path}: {exc}") from exc


def save_mesh(mesh: Mesh, path, format: str | None = None) -> None:
    fmt = _infer_format(path, format)
    if mesh.n_vertices == 0 or mesh.n_faces == 0:
        raise EmptyMesh("refusing to save a mesh without vertices or faces")
    atomic_write_text(path, mesh_to_text(mesh, fmt))
