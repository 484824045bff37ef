"""Triangle mesh container, normals, adjacency and the icosphere template."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    AttributeLengthMismatch,
    DegenerateFace,
    IndexOutOfRange,
    LevelOutOfRange,
    MeshError,
)

NORMAL_TOL = 1e-6


def _frozen(a, dtype=np.float64, cols=None):
    arr = np.array(a, dtype=dtype, copy=True)
    if cols is not None and (arr.ndim != 2 or arr.shape[1] != cols):
        raise MeshError(f"expected an (N, {cols}) array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray
    colors: Optional[np.ndarray] = None
    uvs: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def replace(self, **changes) -> "Mesh":
        """Return a validated copy with some fields swapped out."""
        kw = dict(vertices=self.vertices, faces=self.faces, colors=self.colors,
                  uvs=self.uvs, normals=self.normals)
        kw.update(changes)
        return build_mesh(**kw)


def build_mesh(vertices, faces, colors=None, uvs=None, normals=None) -> Mesh:
    """Validate and freeze mesh arrays.

    Raises IndexOutOfRange, AttributeLengthMismatch or DegenerateFace on bad input.
    """
    v = _frozen(vertices, cols=3)
    f = _frozen(np.asarray(faces).reshape(-1, 3) if len(faces) else faces, dtype=np.int64, cols=3)
    if len(v) == 0 or len(f) == 0:
        raise MeshError("mesh needs at least one vertex and one face")
    if not np.all(np.isfinite(v)):
        raise MeshError("vertex positions must be finite")
    if f.min() < 0 or f.max() >= len(v):
        bad = int(np.argmax((f < 0).any(1) | (f >= len(v)).any(1)))
        raise IndexOutOfRange(f"face {bad} {tuple(f[bad])} references a vertex outside 0..{len(v) - 1}")
    rep = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    if rep.any():
        bad = int(np.argmax(rep))
        raise DegenerateFace(f"face {bad} {tuple(f[bad])} repeats a vertex index")

    attrs = {}
    for name, value, cols in (("colors", colors, 3), ("uvs", uvs, 2), ("normals", normals, 3)):
        if value is None:
            attrs[name] = None
            continue
        arr = _frozen(value, cols=cols)
        if len(arr) != len(v):
            raise AttributeLengthMismatch(f"{name} has {len(arr)} entries for {len(v)} vertices")
        attrs[name] = arr
    if attrs["normals"] is not None:
        norms = np.linalg.norm(attrs["normals"], axis=1)
        if np.any(np.abs(norms - 1.0) > NORMAL_TOL):
            raise MeshError("stored normals must be unit length")
    return Mesh(v, f, **attrs)


def face_cross(vertices, faces):
    """Unnormalized face normals (v_b - v_a) x (v_c - v_a); length is twice the area."""
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    return np.cross(b - a, c - a)


def face_normals(mesh: Mesh):
    """Unit face normals and a boolean flag array marking zero-area faces."""
    return _normalize_rows(face_cross(mesh.vertices, mesh.faces))


def _normalize_rows(raw, fallback=None):
    norm = np.linalg.norm(raw, axis=1)
    degenerate = norm <= 1e-300
    out = np.zeros_like(raw)
    ok = ~degenerate
    out[ok] = raw[ok] / norm[ok, None]
    if fallback is not None:
        out[degenerate] = fallback
    return out, degenerate


def normalize_backward(raw, grad_unit):
    """Gradient through x -> x/|x| for each row; zero-length rows get zero."""
    norm = np.linalg.norm(raw, axis=1)
    ok = norm > 1e-300
    out = np.zeros_like(raw)
    n = raw[ok] / norm[ok, None]
    g = grad_unit[ok]
    out[ok] = (g - n * np.sum(n * g, axis=1, keepdims=True)) / norm[ok, None]
    return out


def cross_backward(vertices, faces, grad_cross):
    """Scatter a gradient on face_cross back onto vertex positions."""
    a, b, c = (vertices[faces[:, k]] for k in range(3))
    e1, e2 = b - a, c - a
    g_e1 = np.cross(e2, grad_cross)
    g_e2 = np.cross(grad_cross, e1)
    grad = np.zeros_like(vertices)
    for k, g in ((0, -(g_e1 + g_e2)), (1, g_e1), (2, g_e2)):
        for d in range(3):
            grad[:, d] += np.bincount(faces[:, k], weights=g[:, d], minlength=len(vertices))
    return grad


def _vertex_normal_raw(vertices, faces):
    cross = face_cross(vertices, faces)
    raw = np.zeros_like(vertices)
    for k in range(3):
        for d in range(3):
            raw[:, d] += np.bincount(faces[:, k], weights=cross[:, d], minlength=len(vertices))
    return raw


def vertex_normals(mesh: Mesh):
    """Area-weighted vertex normals.

    Vertices with no incident area get (0, 0, 1) and are flagged.
    """
    return vertex_normals_array(mesh.vertices, mesh.faces)


def vertex_normals_array(vertices, faces):
    return _normalize_rows(_vertex_normal_raw(vertices, faces), fallback=(0.0, 0.0, 1.0))


def vertex_normals_backward(vertices, faces, grad_normals):
    raw = _vertex_normal_raw(vertices, faces)
    g_raw = normalize_backward(raw, grad_normals)
    g_cross = g_raw[faces[:, 0]] + g_raw[faces[:, 1]] + g_raw[faces[:, 2]]
    return cross_backward(vertices, faces, g_cross)


@dataclass(frozen=True)
class Adjacency:
    edge_faces: dict
    vertex_neighbors: list
    nonmanifold: list = field(default_factory=list)

    @property
    def interior_edges(self) -> np.ndarray:
        """(E, 2) face-index pairs for every edge shared by exactly two faces."""
        pairs = [fs for fs in self.edge_faces.values() if len(fs) == 2]
        return np.array(pairs, dtype=np.int64).reshape(-1, 2)

    def neighbor_csr(self):
        counts = np.array([len(n) for n in self.vertex_neighbors], dtype=np.int64)
        flat = np.array([j for n in self.vertex_neighbors for j in n], dtype=np.int64)
        owner = np.repeat(np.arange(len(counts)), counts)
        return owner, flat, counts


def adjacency(mesh: Mesh) -> Adjacency:
    """Edge-to-face and vertex-neighbor maps, sorted deterministically.

    Edges used by more than two faces are listed in ``nonmanifold`` and warned about.
    """
    edge_faces: dict = {}
    for fi, (a, b, c) in enumerate(mesh.faces.tolist()):
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edge_faces.setdefault(key, []).append(fi)
    edge_faces = {k: tuple(edge_faces[k]) for k in sorted(edge_faces)}
    nonmanifold = [k for k, fs in edge_faces.items() if len(fs) > 2]
    if nonmanifold:
        warnings.warn(f"{len(nonmanifold)} non-manifold edge(s), first {nonmanifold[0]}")
    neighbors = [set() for _ in range(mesh.n_vertices)]
    for u, v in edge_faces:
        neighbors[u].add(v)
        neighbors[v].add(u)
    return Adjacency(edge_faces, [tuple(sorted(n)) for n in neighbors], nonmanifold)


def _icosahedron():
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    return [np.array(v, dtype=np.float64) for v in verts], faces


def unit_sphere(subdivision_level: int = 2) -> Mesh:
    """Icosphere of radius 1 with outward counter-clockwise faces.

    Level 0 is the icosahedron (12 vertices, 20 faces); each level splits
    every face into four.
    """
    if not isinstance(subdivision_level, (int, np.integer)) or not 0 <= subdivision_level <= 5:
        raise LevelOutOfRange(f"subdivision level must be in 0..5, got {subdivision_level!r}")
    verts, faces = _icosahedron()
    verts = [v / np.linalg.norm(v) for v in verts]
    for _ in range(subdivision_level):
        cache: dict = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    return build_mesh(np.array(verts), np.array(faces, dtype=np.int64))
