"""Discrete maps into the sphere: energies, degree, tension, norms, file I/O.

A map is a unit 3-vector per mesh vertex.  The Dirichlet energy is the
cotangent edge sum, the degree is the summed signed solid angle of image
triangles, and the tension is the tangential part of the vector Laplacian.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegreeUnresolvedError, FileFormatError
from .mesh import TriMesh, build_icosphere, laplacian_apply

FOUR_PI = 4.0 * math.pi


@dataclass(frozen=True)
class SphereMap:
    """Per-vertex unit vectors on a fixed mesh."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.mesh.n_vertices, 3):
            raise ValueError(
                f"values must have shape ({self.mesh.n_vertices}, 3), got {vals.shape}")
        dev = np.abs(np.linalg.norm(vals, axis=1) - 1.0).max()
        if dev > 1e-12:
            raise ValueError(f"values must be unit vectors (max deviation {dev:.3e})")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class TangentField:
    """A vector per vertex, orthogonal to the companion map's values there."""

    base: SphereMap
    vectors: np.ndarray

    def __post_init__(self):
        vec = np.array(self.vectors, dtype=float)
        if vec.shape != self.base.values.shape:
            raise ValueError("vectors must match the base map's shape")
        dots = np.abs(np.einsum("ij,ij->i", vec, self.base.values))
        norms = np.linalg.norm(vec, axis=1)
        if (dots > 1e-10 * norms + 1e-300).any():
            raise ValueError("vectors must be tangent to the base map")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)

    @property
    def mesh(self):
        return self.base.mesh


def identity_map(mesh):
    return SphereMap(mesh, mesh.vertices)


def constant_map(mesh, c):
    c = np.asarray(c, dtype=float)
    c = c / np.linalg.norm(c)
    return SphereMap(mesh, np.tile(c, (mesh.n_vertices, 1)))


def _as_vectors(t):
    return t.vectors if isinstance(t, TangentField) else np.asarray(t, dtype=float)


def energy(u):
    """Dirichlet energy 0.5 * sum_edges w_ij |u_i - u_j|^2."""
    k_u = u.mesh.stiffness @ u.values
    return 0.5 * float(np.einsum("ij,ij->", u.values, k_u))


def degree_estimate(u):
    """Raw degree estimate: summed signed solid angles of the image triangles
    over 4*pi (an integer up to quadrature error for a resolved map)."""
    tri = u.values[u.mesh.faces]
    p, q, r = tri[:, 0], tri[:, 1], tri[:, 2]
    num = np.einsum("ij,ij->i", p, np.cross(q, r))
    den = 1.0 + np.einsum("ij,ij->i", p, q) + np.einsum("ij,ij->i", q, r) \
        + np.einsum("ij,ij->i", r, p)
    return float(np.arctan2(num, den).sum() / (2.0 * math.pi))


def degree(u):
    """Topological degree: degree_estimate rounded, rejected if unresolved."""
    d_star = degree_estimate(u)
    k = round(d_star)
    if abs(d_star - k) > 0.1:
        raise DegreeUnresolvedError(
            f"face-sum degree {d_star:.4f} too far from an integer; "
            "map unresolved at this level")
    return int(k)


def tension(u):
    """Tangential part of the vector Laplacian (projected twice so the
    tangency residual scales with the tension itself, not with the Laplacian)."""
    lap = laplacian_apply(u.mesh, u.values)
    t = lap - np.einsum("ij,ij->i", lap, u.values)[:, None] * u.values
    t -= np.einsum("ij,ij->i", t, u.values)[:, None] * u.values
    return TangentField(u, t)


def l2_norm_sq(t, mesh=None):
    """Mass-weighted squared L2 norm of a tangent (or plain) vector field."""
    vec = _as_vectors(t)
    mesh = t.mesh if isinstance(t, TangentField) else mesh
    if mesh is None:
        raise ValueError("mesh required for plain vector fields")
    return float(np.einsum("i,ij,ij->", mesh.vertex_areas, vec, vec))


def mean(u):
    """Area-weighted average of the map values (center of mass in R^3)."""
    a = u.mesh.vertex_areas
    return (a[:, None] * u.values).sum(axis=0) / a.sum()


def _check_same_mesh(u, v):
    if u.mesh is not v.mesh:
        raise ValueError("maps must share one mesh instance")


def dirichlet_diff(u, v):
    """Stiffness form of the difference: sum_edges w_ij |(u-v)_i - (u-v)_j|^2.

    Twice the Dirichlet energy of u - v; this is the squared W^{1,2}
    seminorm distance used throughout.
    """
    _check_same_mesh(u, v)
    d = u.values - v.values
    return float(np.einsum("ij,ij->", d, u.mesh.stiffness @ d))


def l2_dist_sq(u, v):
    """Mass-weighted squared L2 distance between two maps on one mesh."""
    _check_same_mesh(u, v)
    d = u.values - v.values
    return float(np.einsum("i,ij,ij->", u.mesh.vertex_areas, d, d))


def local_energy(u, center, radius):
    """Energy edge sum restricted to edges with both endpoints within
    geodesic `radius` of `center` (a unit vector in the domain)."""
    if radius <= 0.0:
        return 0.0
    if radius >= math.pi:
        return energy(u)
    inside = u.mesh.vertices @ np.asarray(center, dtype=float) >= math.cos(radius)
    e = u.mesh.edges
    m = inside[e[:, 0]] & inside[e[:, 1]]
    if not m.any():
        return 0.0
    d = u.values[e[m, 0]] - u.values[e[m, 1]]
    return 0.5 * float(np.einsum("i,ij,ij->", u.mesh.edge_weights[m], d, d))


# --- plain-text map files ---------------------------------------------------

def save_map(u, path):
    """Write 's2map level V' and one 17-significant-digit row per vertex."""
    with open(path, "w") as fh:
        fh.write(f"s2map {u.mesh.level} {u.mesh.n_vertices}\n")
        for x, y, z in u.values:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


def load_map(path, mesh=None):
    """Read a map file; rows far from unit length are an error, slightly
    off rows are renormalized (exact rows round-trip bit for bit)."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FileFormatError(f"{path}:1: empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "s2map":
        raise FileFormatError(f"{path}:1: expected header 's2map level V'")
    try:
        level, n_v = int(head[1]), int(head[2])
    except ValueError:
        raise FileFormatError(f"{path}:1: non-integer level or vertex count")
    if len(lines) != 1 + n_v:
        raise FileFormatError(f"{path}: expected {1 + n_v} lines, got {len(lines)}")
    vals = np.empty((n_v, 3))
    for i in range(n_v):
        toks = lines[1 + i].split()
        if len(toks) != 3:
            raise FileFormatError(f"{path}:{i + 2}: expected three floats")
        try:
            vals[i] = [float(t) for t in toks]
        except ValueError:
            raise FileFormatError(f"{path}:{i + 2}: bad float literal")
    norms = np.linalg.norm(vals, axis=1)
    bad = np.abs(norms - 1.0) > 1e-6
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise FileFormatError(
            f"{path}:{row + 2}: row norm {norms[row]:.8f} deviates from 1 by more "
            "than 1e-6")
    fix = np.abs(norms - 1.0) > 1e-12
    vals[fix] /= norms[fix, None]
    if mesh is None:
        mesh = build_icosphere(level)
    elif mesh.level != level or mesh.n_vertices != n_v:
        raise FileFormatError(
            f"{path}: file is level {level} ({n_v} vertices), mesh is level "
            f"{mesh.level} ({mesh.n_vertices})")
    return SphereMap(mesh, vals)
