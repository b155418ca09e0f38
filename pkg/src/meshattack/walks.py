"""Random walks along mesh edges.

A walk starts at a uniformly drawn vertex and repeatedly steps to a uniformly
drawn *unvisited* neighbor.  When every neighbor has been visited it steps to
a uniform neighbor anyway (revisit).  Only a vertex with no neighbors at all
triggers a jump, to a uniform unvisited vertex; such steps are flagged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMesh
from .kernels import walk_kernel
from .mesh import Mesh

DEFAULT_WALK_LENGTH = 200


@dataclass
class Walk:
    vertex_indices: np.ndarray
    jump_flags: np.ndarray
    coords: np.ndarray

    def __len__(self):
        return len(self.vertex_indices)


def default_length(mesh: Mesh, length: int | None = None) -> int:
    return min(DEFAULT_WALK_LENGTH if length is None else length, mesh.n_vertices)


def walk_indices(mesh: Mesh, count: int, length: int, rng: np.random.Generator):
    """Raw ``(count, length)`` index and jump arrays; the batched workhorse."""
    if mesh.n_vertices == 0:
        raise EmptyMesh("cannot walk on a mesh without vertices")
    if length < 1:
        raise ValueError("walk length must be >= 1")
    if count == 0:
        return np.zeros((0, length), dtype=np.int64), np.zeros((0, length), dtype=bool)
    offsets, nbrs = mesh.adjacency_csr
    return walk_kernel(offsets, nbrs, mesh.n_vertices, rng.random((count, length)))


def extract_walk(mesh: Mesh, length: int, rng: np.random.Generator) -> Walk:
    seq, jumps = walk_indices(mesh, 1, length, rng)
    return Walk(seq[0], jumps[0], mesh.vertices[seq[0]].copy())


def walk_batch(mesh: Mesh, count: int, length: int, rng: np.random.Generator) -> list[Walk]:
    seq, jumps = walk_indices(mesh, count, length, rng)
    return [Walk(s, j, mesh.vertices[s].copy()) for s, j in zip(seq, jumps)]
