"""Simplicial families in 2D and 3D.

A family is a vertex array ``x`` of shape (n, d) and an integer array of
(d+1)-tuples indexing it. Volumes are signed: positive orientation is only
enforced on demand (``strict=True``), since deformed meshes may fold.
"""
from dataclasses import dataclass
from itertools import permutations
from math import factorial
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateBBox, NonPositiveOrientation

BARY_TOL = 1e-12

_J = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class SimplicialFamily:
    vertices: np.ndarray
    simplices: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.vertices, dtype=float)
        s = np.asarray(self.simplices, dtype=np.int64)
        if x.ndim != 2 or x.shape[1] not in (2, 3):
            raise ValueError(f"vertices must have shape (n, 2) or (n, 3), got {x.shape}")
        d = x.shape[1]
        if s.size == 0:
            s = s.reshape(0, d + 1)
        if s.ndim != 2 or s.shape[1] != d + 1:
            raise ValueError(f"simplices must have {d + 1} columns, got shape {s.shape}")
        if s.size and (s.min() < 0 or s.max() >= len(x)):
            raise ValueError("simplex references a vertex that does not exist")
        if s.size and np.any(np.sort(s, axis=1)[:, 1:] == np.sort(s, axis=1)[:, :-1]):
            raise ValueError("simplex with a repeated vertex index")
        if not np.all(np.isfinite(x)):
            raise ValueError("vertex positions must be finite")
        object.__setattr__(self, "vertices", x)
        object.__setattr__(self, "simplices", s)

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_simplices(self):
        return self.simplices.shape[0]

    def corners(self, x=None):
        x = self.vertices if x is None else x
        return x[self.simplices]

    def volumes(self, x=None):
        return simplex_volumes(self.corners(x))

    def centers(self, x=None):
        return self.corners(x).mean(axis=1)

    def normals(self, x=None):
        return simplex_normals(self.corners(x))

    def with_vertices(self, x):
        return SimplicialFamily(np.asarray(x, dtype=float), self.simplices)

    def validate_orientation(self):
        vol = self.volumes()
        bad = np.flatnonzero(vol <= 0)
        if bad.size:
            raise NonPositiveOrientation(
                f"{bad.size} simplices with non-positive volume (first: {bad[0]})")

    def to_dict(self):
        return {"dim": self.dim, "vertices": self.vertices.tolist(),
                "simplices": self.simplices.tolist()}

    @classmethod
    def from_dict(cls, data):
        d = int(data["dim"])
        x = np.asarray(data["vertices"], dtype=float).reshape(-1, d)
        s = np.asarray(data["simplices"], dtype=np.int64).reshape(-1, d + 1)
        return cls(x, s)


def simplex_volumes(corners):
    """Signed volumes det(x1-x0, ..., xd-x0)/d! for corners of shape (m, d+1, d)."""
    corners = np.asarray(corners, dtype=float)
    d = corners.shape[-1]
    edges = corners[..., 1:, :] - corners[..., :1, :]
    if d == 2:
        det = edges[..., 0, 0] * edges[..., 1, 1] - edges[..., 0, 1] * edges[..., 1, 0]
    else:
        det = np.einsum("...i,...i->...", edges[..., 0, :],
                        np.cross(edges[..., 1, :], edges[..., 2, :]))
    return det / factorial(d)


def simplex_normals(corners):
    """Inward weighted face normals n_{c,j}, shape (m, d+1, d).

    ``n_{c,j}`` is attached to the face opposite vertex j, with norm equal to
    (d-1)! times the face measure, and sum_j n_{c,j} = 0. The derivative of the
    signed volume with respect to vertex j is n_{c,j} / d!.
    """
    x = np.asarray(corners, dtype=float)
    d = x.shape[-1]
    if d == 2:
        x0, x1, x2 = x[..., 0, :], x[..., 1, :], x[..., 2, :]
        n = np.stack([x2 - x1, x0 - x2, x1 - x0], axis=-2)
        return n @ _J.T
    x0, x1, x2, x3 = (x[..., k, :] for k in range(4))
    return np.stack([
        -np.cross(x2 - x1, x3 - x1),
        np.cross(x2 - x0, x3 - x0),
        -np.cross(x1 - x0, x3 - x0),
        np.cross(x1 - x0, x2 - x0),
    ], axis=-2)


def _simplex_corners(family, c):
    c = np.asarray(c, dtype=np.int64)
    if c.shape != (family.dim + 1,):
        raise ValueError(f"simplex tuple must have {family.dim + 1} entries")
    if c.min() < 0 or c.max() >= family.n_vertices:
        raise ValueError("simplex references a vertex that does not exist")
    return family.vertices[c]


def simplex_volume(family, c, strict=False):
    vol = float(simplex_volumes(_simplex_corners(family, c)[None])[0])
    if strict and vol <= 0:
        raise NonPositiveOrientation(f"simplex {tuple(c)} has volume {vol}")
    return vol


def simplex_center(family, c):
    return _simplex_corners(family, c).mean(axis=0)


def face_normals(family, c):
    return simplex_normals(_simplex_corners(family, c)[None])[0]


def _kuhn_tetrahedra():
    # vertex offsets (as corner bit masks) of the 6 tetrahedra of the unit cube,
    # each one a monotone path from corner 000 to 111
    tets = []
    for perm in permutations(range(3)):
        path = [np.zeros(3, dtype=int)]
        for axis in perm:
            nxt = path[-1].copy()
            nxt[axis] = 1
            path.append(nxt)
        path = np.array(path)
        vol = np.linalg.det((path[1:] - path[0]).astype(float))
        if vol < 0:
            path[[1, 2]] = path[[2, 1]]
        tets.append(path)
    return np.array(tets)


_KUHN = _kuhn_tetrahedra()


def build_regular_mesh(bbox, lam, dim=None):
    """Regular simplicial grid with cell side ``lam`` covering ``bbox``.

    ``bbox`` is ``(lo, hi)`` with two length-d sequences. Squares are split in
    two triangles, cubes in the six Kuhn tetrahedra; all positively oriented.
    """
    lo, hi = (np.asarray(b, dtype=float) for b in bbox)
    if dim is None:
        dim = lo.size
    if lo.shape != (dim,) or hi.shape != (dim,) or dim not in (2, 3):
        raise DegenerateBBox(f"bounding box must be two points in R^{dim}")
    if not lam > 0:
        raise ValueError("lam must be positive")
    if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(hi <= lo):
        raise DegenerateBBox(f"degenerate bounding box {lo} .. {hi}")

    ncell = np.maximum(np.ceil((hi - lo) / lam - 1e-9).astype(int), 1)
    nvert = ncell + 1
    axes = [lo[k] + lam * np.arange(nvert[k]) for k in range(dim)]
    grid = np.meshgrid(*axes, indexing="ij")
    vertices = np.stack([g.ravel() for g in grid], axis=1)

    def vid(idx):
        return np.ravel_multi_index(tuple(idx[..., k] for k in range(dim)), tuple(nvert))

    cells = np.stack(np.meshgrid(*[np.arange(n) for n in ncell], indexing="ij"), axis=-1)
    cells = cells.reshape(-1, dim)
    if dim == 2:
        offs = np.array([[[0, 0], [1, 0], [1, 1]], [[0, 0], [1, 1], [0, 1]]])
    else:
        offs = _KUHN
    simplices = vid(cells[:, None, None, :] + offs[None, :, :, :])
    simplices = simplices.reshape(-1, dim + 1)
    return SimplicialFamily(vertices, simplices)


class Located(NamedTuple):
    simplex: np.ndarray
    barycentric: np.ndarray


def _barycentric(corners, y):
    edges = np.swapaxes(corners[:, 1:, :] - corners[:, :1, :], 1, 2)
    rhs = (y - corners[:, 0, :])[..., None]
    lam = np.linalg.solve(edges, rhs)[..., 0]
    return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)


def locate_points(family, points, tol=BARY_TOL):
    """Containing simplex per point (-1 if none), lowest simplex index on ties."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts = points.shape[0]
    out = np.full(npts, -1, dtype=np.int64)
    if npts == 0 or family.n_simplices == 0:
        return out
    corners = family.corners()
    centers = corners.mean(axis=1)
    radius = np.sqrt(((corners - centers[:, None, :]) ** 2).sum(-1)).max() * (1 + 1e-9) + 1e-12
    tree = cKDTree(centers)
    cand = tree.query_ball_point(points, radius)
    lens = np.fromiter((len(c) for c in cand), dtype=np.int64, count=npts)
    if lens.sum() == 0:
        return out
    pidx = np.repeat(np.arange(npts), lens)
    sidx = np.fromiter((s for c in cand for s in c), dtype=np.int64, count=lens.sum())
    ok = np.ones(pidx.size, dtype=bool)
    vol = simplex_volumes(corners)
    good = np.abs(vol[sidx]) > 0
    ok &= good
    bary = np.full((pidx.size, family.dim + 1), -1.0)
    bary[good] = _barycentric(corners[sidx[good]], points[pidx[good]])
    ok &= np.all(bary >= -tol, axis=1)
    pidx, sidx = pidx[ok], sidx[ok]
    # lowest simplex index per point: sort by (point, simplex) and keep first
    order = np.lexsort((sidx, pidx))
    pidx, sidx = pidx[order], sidx[order]
    first = np.ones(pidx.size, dtype=bool)
    first[1:] = pidx[1:] != pidx[:-1]
    out[pidx[first]] = sidx[first]
    return out


def locate_point(family, y):
    k = locate_points(family, np.asarray(y, dtype=float)[None])[0]
    return None if k < 0 else int(k)


class Pruned(NamedTuple):
    family: SimplicialFamily
    assignment: np.ndarray   # point -> new simplex index, -1 if outside
    simplex_ids: np.ndarray  # new simplex -> original simplex
    vertex_ids: np.ndarray   # new vertex -> original vertex


def subfamily(family, keep):
    """Restrict to the simplices ``keep`` (sorted), dropping unused vertices."""
    keep = np.asarray(keep, dtype=np.int64)
    sub = family.simplices[keep]
    vertex_ids = np.unique(sub)
    remap = np.full(family.n_vertices, -1, dtype=np.int64)
    remap[vertex_ids] = np.arange(vertex_ids.size)
    new = SimplicialFamily(family.vertices[vertex_ids].reshape(-1, family.dim),
                           remap[sub].reshape(-1, family.dim + 1))
    return new, vertex_ids


def prune_mesh(family, points):
    """Delete every simplex that contains none of ``points``."""
    points = np.asarray(points, dtype=float).reshape(-1, family.dim)
    located = locate_points(family, points)
    keep = np.unique(located[located >= 0])
    new, vertex_ids = subfamily(family, keep)
    remap = np.full(family.n_simplices, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    assignment = np.where(located >= 0, remap[np.maximum(located, 0)], -1)
    return Pruned(new, assignment, keep, vertex_ids)
