"""Geodesic icosphere meshes and the discrete operators defined on them.

The mesh is the substrate for the whole lab: cotangent edge weights give the
stiffness form (Dirichlet integrals of piecewise-linear fields), lumped
barycentric areas give the mass weights, and central-projection barycentric
coordinates give point location / interpolation on the curved sphere.

Meshes are immutable once built; derived structures (stiffness matrix, face
inverses, adjacency) are computed lazily and cached on the instance, which is
safe because they are pure functions of the construction data.
"""

import math
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import FileFormatError, InterpolationDegenerateError, ResourceLimitError

MAX_LEVEL = 8

_PHI = (1.0 + math.sqrt(5.0)) / 2.0

# Icosahedron with circumradius 1 after row normalization. Faces are listed
# counter-clockwise seen from outside (positive triple product with the
# outward normal), which every subdivision below preserves.
_BASE_VERTICES = np.array([
    (-1.0, _PHI, 0.0), (1.0, _PHI, 0.0), (-1.0, -_PHI, 0.0), (1.0, -_PHI, 0.0),
    (0.0, -1.0, _PHI), (0.0, 1.0, _PHI), (0.0, -1.0, -_PHI), (0.0, 1.0, -_PHI),
    (_PHI, 0.0, -1.0), (_PHI, 0.0, 1.0), (-_PHI, 0.0, -1.0), (-_PHI, 0.0, 1.0),
], dtype=float)

_BASE_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.int64)


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _subdivide(vertices, faces):
    """One midpoint subdivision step, new midpoints re-projected to the sphere."""
    n_old = len(vertices)
    # face-edge slots in the order (0,1), (1,2), (2,0)
    slots = np.concatenate([faces[:, (0, 1)], faces[:, (1, 2)], faces[:, (2, 0)]])
    uniq, inv = np.unique(np.sort(slots, axis=1), axis=0, return_inverse=True)
    midpoints = _unit_rows(vertices[uniq[:, 0]] + vertices[uniq[:, 1]])
    mid_idx = (n_old + inv).reshape(3, -1)  # rows: slot (0,1), (1,2), (2,0)
    m01, m12, m20 = mid_idx
    i0, i1, i2 = faces[:, 0], faces[:, 1], faces[:, 2]
    new_faces = np.concatenate([
        np.stack([i0, m01, m20], axis=1),
        np.stack([i1, m12, m01], axis=1),
        np.stack([i2, m20, m12], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ])
    return np.concatenate([vertices, midpoints]), new_faces


def _cotangents(vertices, faces):
    """Per-face cotangents at the three corners, paired with opposite edges."""
    p, q, r = (vertices[faces[:, k]] for k in range(3))

    def cot(a, b, c):
        u, v = b - a, c - a
        return np.einsum("ij,ij->i", u, v) / np.linalg.norm(np.cross(u, v), axis=1)

    # corner k is opposite the edge not containing vertex k
    cots = np.concatenate([cot(p, q, r), cot(q, r, p), cot(r, p, q)])
    opposite = np.concatenate([faces[:, (1, 2)], faces[:, (2, 0)], faces[:, (0, 1)]])
    return opposite, cots


class TriMesh:
    """Immutable triangulation of the unit sphere.

    Attributes:
        level: subdivision depth (0 = icosahedron).
        vertices: (V, 3) unit vectors.
        faces: (F, 3) outward-oriented vertex index triples.
        edges: (E, 2) sorted vertex index pairs.
        edge_weights: (E,) cotangent weights 0.5*(cot alpha + cot beta).
        vertex_areas: (V,) lumped barycentric areas (one third of incident
            flat-triangle areas); their sum is the polyhedron area.
        mean_edge_length / min_edge_length: chord-length summaries used as
            the resolution scale h (chords approximate radians here).
    """

    def __init__(self, level, vertices, faces):
        vertices = np.array(vertices, dtype=float)
        faces = np.array(faces, dtype=np.int64)
        n_v, n_f = len(vertices), len(faces)
        if np.abs(np.linalg.norm(vertices, axis=1) - 1.0).max() > 1e-14:
            raise ValueError("mesh vertices must lie on the unit sphere")

        opposite, cots = _cotangents(vertices, faces)
        edges, inv = np.unique(np.sort(opposite, axis=1), axis=0, return_inverse=True)
        weights = np.zeros(len(edges))
        np.add.at(weights, inv, 0.5 * cots)

        if n_v - len(edges) + n_f != 2:
            raise ValueError("mesh is not a closed genus-zero surface")
        if n_f != 20 * 4 ** level:
            raise ValueError(f"face count {n_f} does not match level {level}")

        p, q, r = (vertices[faces[:, k]] for k in range(3))
        face_areas = 0.5 * np.linalg.norm(np.cross(q - p, r - p), axis=1)
        areas = np.zeros(n_v)
        np.add.at(areas, faces.ravel(), np.repeat(face_areas / 3.0, 3))

        chord = np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)

        self.level = int(level)
        self.vertices = vertices
        self.faces = faces
        self.edges = edges
        self.edge_weights = weights
        self.vertex_areas = areas
        self.face_areas = face_areas
        self.mean_edge_length = float(chord.mean())
        self.min_edge_length = float(chord.min())
        self._edge_face_slot_inv = inv  # face-edge slot -> edge id, len 3F
        self._cache = {}
        for arr in (self.vertices, self.faces, self.edges, self.edge_weights,
                    self.vertex_areas, self.face_areas):
            arr.setflags(write=False)

    # --- basic counts -----------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def area_deficit(self):
        """4*pi minus the polyhedron area (equals the identity map's energy gap)."""
        return 4.0 * math.pi - float(self.vertex_areas.sum())

    # --- derived operators ------------------------------------------------
    @cached_property
    def stiffness(self):
        """Sparse stiffness matrix K with f.K.f = sum_edges w_ij (f_i - f_j)^2."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        w = self.edge_weights
        rows = np.concatenate([i, j, i, j])
        cols = np.concatenate([j, i, i, j])
        vals = np.concatenate([-w, -w, w, w])
        n = self.n_vertices
        return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()

    @cached_property
    def _face_basis_inv(self):
        """(F,3,3) inverses of the per-face vertex column matrices."""
        m = self.vertices[self.faces].transpose(0, 2, 1)
        return np.linalg.inv(m)

    @cached_property
    def _face_neighbors(self):
        """(F,3) neighbor face across the edge opposite each local corner."""
        n_f = self.n_faces
        # slot k of face f covers the edge opposite local corner k (see
        # _cotangents: slots are (1,2), (2,0), (0,1) in that order)
        flat = self._edge_face_slot_inv
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat)
        if counts.min() != 2 or counts.max() != 2:
            raise ValueError("every edge must bound exactly two faces")
        f_idx = order % n_f
        s_idx = order // n_f
        neigh = np.empty((n_f, 3), dtype=np.int64)
        neigh[f_idx[0::2], s_idx[0::2]] = f_idx[1::2]
        neigh[f_idx[1::2], s_idx[1::2]] = f_idx[0::2]
        return neigh

    @cached_property
    def _vertex_face(self):
        """One incident face index per vertex."""
        vf = np.empty(self.n_vertices, dtype=np.int64)
        for c in range(3):
            vf[self.faces[:, c]] = np.arange(self.n_faces)
        return vf


def build_icosphere(level):
    """Icosahedron subdivided `level` times, midpoints re-projected each pass."""
    if not 0 <= level <= MAX_LEVEL:
        raise ResourceLimitError(
            f"level {level} outside [0, {MAX_LEVEL}] (memory guard)")
    vertices = _unit_rows(_BASE_VERTICES)
    faces = _BASE_FACES
    for _ in range(level):
        vertices, faces = _subdivide(vertices, faces)
    return TriMesh(level, vertices, faces)


def laplacian_apply(mesh, field):
    """Lumped cotangent Laplacian: (Lf)_i = (1/A_i) sum_j w_ij (f_j - f_i).

    Negative semi-definite convention, so coordinate fields give roughly -2x.
    """
    field = np.asarray(field, dtype=float)
    return -(mesh.stiffness @ field) / mesh.vertex_areas[:, None]


def geodesic_distance(x, y):
    """Great-circle distance between unit vectors (broadcasts over rows)."""
    d = np.clip(np.sum(np.asarray(x) * np.asarray(y), axis=-1), -1.0, 1.0)
    return np.arccos(d)


# --- point location -------------------------------------------------------
#
# A point p is inside the spherical triangle of face f iff it lies in the
# cone spanned by the three vertices, i.e. the solution b of M_f b = p has
# nonnegative components.  b normalized to sum one gives central-projection
# (gnomonic) barycentric weights, which are consistent across shared edges.

_BARY_TOL = 1e-12


def _coarse_starts(mesh, points):
    """Start faces from the nearest of the 12 base vertices (always first)."""
    best = np.argmax(points @ mesh.vertices[:12].T, axis=1)
    return mesh._vertex_face[best]


def locate_batch(mesh, points, starts=None):
    """Locate many points by lockstep adjacency walks; returns (faces, bary).

    Walks step across the edge opposite the most negative coordinate and fall
    back to a brute-force scan for any query that fails to settle.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if starts is None:
        face = _coarse_starts(mesh, pts)
    else:
        face = np.array(np.broadcast_to(starts, (n,)), dtype=np.int64)
    prev = np.full(n, -1, dtype=np.int64)
    done = np.zeros(n, dtype=bool)
    out_face = np.empty(n, dtype=np.int64)
    out_bary = np.empty((n, 3))

    inv = mesh._face_basis_inv
    neigh = mesh._face_neighbors
    cap = int(2.0 * math.pi / mesh.min_edge_length) + 30
    for _ in range(cap):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        b = np.einsum("nij,nj->ni", inv[face[act]], pts[act])
        scale = np.abs(b).sum(axis=1)
        inside = b.min(axis=1) >= -_BARY_TOL * scale
        hit = act[inside]
        out_face[hit] = face[hit]
        out_bary[hit] = b[inside]
        done[hit] = True

        mov = act[~inside]
        if mov.size == 0:
            continue
        order = np.argsort(b[~inside], axis=1)
        first = neigh[face[mov], order[:, 0]]
        second = neigh[face[mov], order[:, 1]]
        nxt = np.where(first == prev[mov], second, first)
        prev[mov] = face[mov]
        face[mov] = nxt

    rest = np.flatnonzero(~done)
    if rest.size:
        f_b, b_b = _locate_brute(mesh, pts[rest])
        out_face[rest] = f_b
        out_bary[rest] = b_b
    return out_face, out_bary


def _locate_brute(mesh, pts):
    """Exhaustive scan: face maximizing the (scaled) minimum coordinate."""
    inv = mesh._face_basis_inv
    n = len(pts)
    out_face = np.empty(n, dtype=np.int64)
    out_bary = np.empty((n, 3))
    chunk = max(1, int(2e7) // mesh.n_faces)
    for lo in range(0, n, chunk):
        sl = slice(lo, min(lo + chunk, n))
        b = np.einsum("fij,pj->pfi", inv, pts[sl])
        score = b.min(axis=2) / np.abs(b).sum(axis=2)
        idx = score.argmax(axis=1)
        out_face[sl] = idx
        out_bary[sl] = b[np.arange(len(idx)), idx]
    return out_face, out_bary


def locate(mesh, p, hint=None):
    """Face index and unnormalized barycentric coordinates containing p."""
    p = np.asarray(p, dtype=float)
    starts = None if hint is None else np.asarray([hint])
    face, bary = locate_batch(mesh, p[None, :], starts)
    return int(face[0]), bary[0]


def interpolate_batch(mesh, field, points, starts=None):
    """Barycentric interpolation of a unit-vector field, renormalized."""
    face, bary = locate_batch(mesh, points, starts)
    w = bary / bary.sum(axis=1, keepdims=True)
    vals = np.einsum("nk,nkc->nc", w, field[mesh.faces[face]])
    norms = np.linalg.norm(vals, axis=1)
    if norms.min() < 1e-6:
        raise InterpolationDegenerateError(
            "interpolated value shorter than 1e-6; values nearly antipodal "
            "across one face (map unresolved at this level)")
    return vals / norms[:, None]


def locate_and_interpolate(mesh, field, p, hint=None):
    """Interpolate `field` at a single unit vector p; returns a unit vector."""
    p = np.asarray(p, dtype=float)
    if abs(np.linalg.norm(p) - 1.0) > 1e-12:
        raise ValueError("query point must be a unit vector")
    starts = None if hint is None else np.asarray([hint])
    return interpolate_batch(mesh, np.asarray(field, dtype=float),
                             p[None, :], starts)[0]


# --- plain-text export ----------------------------------------------------

def write_mesh(mesh, path):
    """Plain text export: header 'level V F', vertex lines, 0-based face lines."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.level} {mesh.n_vertices} {mesh.n_faces}\n")
        for x, y, z in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        for i, j, k in mesh.faces:
            fh.write(f"{i} {j} {k}\n")


def read_mesh(path):
    """Inverse of write_mesh (levels are rebuilt, geometry cross-checked)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    try:
        level, n_v, n_f = (int(tok) for tok in lines[0].split())
    except (ValueError, IndexError):
        raise FileFormatError(f"{path}:1: expected header 'level V F'")
    if len(lines) != 1 + n_v + n_f:
        raise FileFormatError(f"{path}: expected {1 + n_v + n_f} lines, got {len(lines)}")
    try:
        verts = np.array([[float(t) for t in lines[1 + i].split()] for i in range(n_v)])
        faces = np.array([[int(t) for t in lines[1 + n_v + i].split()] for i in range(n_f)])
    except ValueError as exc:
        raise FileFormatError(f"{path}: bad vertex/face line ({exc})")
    return TriMesh(level, verts, faces)
