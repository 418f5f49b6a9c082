"""Semi-discrete mesh varifolds and their construction from point data.

A mesh varifold stores, per simplex c, a density ``alpha[c]`` and a feature
law ``zeta[c]``. Two feature kinds are supported:

* ``categorical``: ``zeta[c]`` is a weight vector over a finite label (or
  gene) set, normally a probability vector;
* ``counts``: ``zeta[c]`` is the location of a Dirac measure on the count
  space [0, inf)^G.

The associated measure is sum_c alpha_c |gamma_c| delta_{m_c} (x) zeta_c.
"""
from dataclasses import dataclass

import numpy as np

from .errors import EmptySimplex, KindMismatch
from .mesh import SimplicialFamily, build_regular_mesh, locate_points, prune_mesh, subfamily

CATEGORICAL = "categorical"
COUNTS = "counts"


@dataclass(frozen=True)
class FeatureSpace:
    kind: str
    names: tuple

    def __post_init__(self):
        if self.kind not in (CATEGORICAL, COUNTS):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        names = tuple(str(n) for n in self.names)
        if not names or len(set(names)) != len(names):
            raise ValueError("feature names must be nonempty and unique")
        object.__setattr__(self, "names", names)

    @property
    def size(self):
        return len(self.names)

    @classmethod
    def categorical(cls, names):
        return cls(CATEGORICAL, tuple(names))

    @classmethod
    def counts(cls, names):
        return cls(COUNTS, tuple(names))


@dataclass(frozen=True, eq=False)
class FeatureDistribution:
    kind: str
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or np.any(v < 0):
            raise ValueError("feature distribution values must be a nonnegative vector")
        object.__setattr__(self, "values", v)

    @classmethod
    def discrete(cls, weights, probability=False):
        w = np.asarray(weights, dtype=float)
        if probability and abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {w.sum()}, expected 1")
        return cls(CATEGORICAL, w)

    @classmethod
    def dirac(cls, values):
        return cls(COUNTS, values)


@dataclass(frozen=True, eq=False)
class MeshVarifold:
    family: SimplicialFamily
    alpha: np.ndarray
    zeta: np.ndarray
    features: FeatureSpace

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        zeta = np.asarray(self.zeta, dtype=float)
        m = self.family.n_simplices
        if zeta.ndim == 1 and m == 0:
            zeta = zeta.reshape(0, self.features.size)
        if alpha.shape != (m,) or zeta.shape != (m, self.features.size):
            raise ValueError(
                f"alpha/zeta shapes {alpha.shape}/{zeta.shape} do not match "
                f"{m} simplices and {self.features.size} features")
        if np.any(alpha < 0) or np.any(zeta < 0):
            raise ValueError("alpha and zeta must be nonnegative")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "zeta", zeta)

    @property
    def dim(self):
        return self.family.dim

    def volumes(self):
        return self.family.volumes()

    def centers(self):
        return self.family.centers()

    def weights(self):
        """alpha_c |gamma_c|: the mass carried by each simplex."""
        return self.alpha * self.volumes()

    def total_mass(self):
        return float(self.weights().sum())

    def distribution(self, c):
        return FeatureDistribution(self.features.kind, self.zeta[c])

    def deform(self, new_positions):
        return deform(self, new_positions)

    def to_dict(self):
        return {"mesh": self.family.to_dict(), "alpha": self.alpha.tolist(),
                "zeta": self.zeta.tolist(),
                "feature_space": {"kind": self.features.kind, "names": list(self.features.names)}}

    @classmethod
    def from_dict(cls, data):
        fs = data["feature_space"]
        features = FeatureSpace(fs["kind"], tuple(fs["names"]))
        family = SimplicialFamily.from_dict(data["mesh"])
        zeta = np.asarray(data["zeta"], dtype=float).reshape(-1, features.size)
        return cls(family, np.asarray(data["alpha"], dtype=float), zeta, features)


@dataclass(frozen=True, eq=False)
class PointData:
    """Located records: gene-count vectors (``counts``) or labels (``labels``)."""
    positions: np.ndarray
    names: tuple
    counts: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise ValueError(f"positions must have shape (n, 2) or (n, 3), got {pos.shape}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        if (self.counts is None) == (self.labels is None):
            raise ValueError("exactly one of counts or labels must be given")
        if self.counts is not None:
            counts = np.asarray(self.counts, dtype=float).reshape(len(pos), len(self.names))
            if np.any(counts < 0):
                raise ValueError("counts must be nonnegative")
            object.__setattr__(self, "counts", counts)
        else:
            labels = np.asarray(self.labels, dtype=np.int64).reshape(len(pos))
            if labels.size and (labels.min() < 0 or labels.max() >= len(self.names)):
                raise ValueError("label index outside the label set")
            object.__setattr__(self, "labels", labels)

    @property
    def dim(self):
        return self.positions.shape[1]

    def __len__(self):
        return self.positions.shape[0]

    def subset(self, idx):
        if self.counts is not None:
            return PointData(self.positions[idx], self.names, counts=self.counts[idx])
        return PointData(self.positions[idx], self.names, labels=self.labels[idx])


def select_genes(points, k, criterion="std"):
    """Keep the ``k`` genes with the largest spread of per-point counts."""
    if points.counts is None:
        raise KindMismatch("gene selection needs count data")
    if criterion == "std":
        score = points.counts.std(axis=0)
    elif criterion == "var":
        score = points.counts.var(axis=0)
    elif criterion == "mean":
        score = points.counts.mean(axis=0)
    else:
        raise ValueError(f"unknown gene selection criterion {criterion!r}")
    k = min(int(k), len(points.names))
    # stable: ties keep the input gene order
    keep = np.sort(np.argsort(-score, kind="stable")[:k])
    return PointData(points.positions, tuple(points.names[i] for i in keep),
                     counts=points.counts[:, keep])


def _assign(points, family):
    if points.dim != family.dim:
        raise ValueError(f"points are {points.dim}D but the mesh is {family.dim}D")
    assignment = locate_points(family, points.positions)
    inside = assignment >= 0
    npoints = np.bincount(assignment[inside], minlength=family.n_simplices).astype(float)
    return assignment, inside, npoints


def _sum_by_simplex(assignment, inside, values, m):
    out = np.zeros((m, values.shape[1]))
    np.add.at(out, assignment[inside], values[inside])
    return out


def _check_nonempty(total, what):
    empty = np.flatnonzero(total <= 0)
    if empty.size:
        raise EmptySimplex(f"{empty.size} simplices have no {what} (first: {empty[0]})")


def from_gene_counts(points, family, weight_mode="counts"):
    """Gene frequencies per simplex; density of counts or of points."""
    if points.counts is None:
        raise KindMismatch("from_gene_counts needs count data")
    if weight_mode not in ("counts", "points"):
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    assignment, inside, npoints = _assign(points, family)
    sums = _sum_by_simplex(assignment, inside, points.counts, family.n_simplices)
    total = sums.sum(axis=1)
    _check_nonempty(total, "gene counts")
    vol = family.volumes()
    zeta = sums / total[:, None]
    alpha = (total if weight_mode == "counts" else npoints) / vol
    return MeshVarifold(family, alpha, zeta, FeatureSpace.categorical(points.names))


def from_rna_counts(points, family):
    """Dirac at the mean count vector per simplex, point density weights."""
    if points.counts is None:
        raise KindMismatch("from_rna_counts needs count data")
    assignment, inside, npoints = _assign(points, family)
    _check_nonempty(npoints, "points")
    sums = _sum_by_simplex(assignment, inside, points.counts, family.n_simplices)
    zeta = sums / npoints[:, None]
    alpha = npoints / family.volumes()
    return MeshVarifold(family, alpha, zeta, FeatureSpace.counts(points.names))


def from_cell_labels(points, family):
    """Label frequencies per simplex, point density weights."""
    if points.labels is None:
        raise KindMismatch("from_cell_labels needs label data")
    assignment, inside, npoints = _assign(points, family)
    _check_nonempty(npoints, "points")
    onehot = np.zeros((len(points), len(points.names)))
    onehot[np.arange(len(points)), points.labels] = 1.0
    sums = _sum_by_simplex(assignment, inside, onehot, family.n_simplices)
    zeta = sums / npoints[:, None]
    alpha = npoints / family.volumes()
    return MeshVarifold(family, alpha, zeta, FeatureSpace.categorical(points.names))


def points_bbox(points, lam):
    lo = points.positions.min(axis=0)
    hi = points.positions.max(axis=0)
    # a grid line through the extreme points would leave them on the boundary
    hi = np.maximum(hi + 1e-9 * lam, lo + lam)
    return lo, hi


def build_varifold(points, lam, features="genes", weight_mode="counts"):
    """Regular mesh at resolution ``lam``, pruned to the data, then features.

    ``features`` is one of ``genes`` (frequencies), ``rna`` (mean counts) or
    ``labels``.
    """
    if len(points) == 0:
        raise EmptySimplex("no points to build a varifold from")
    mesh = build_regular_mesh(points_bbox(points, lam), lam, points.dim)
    pruned = prune_mesh(mesh, points.positions)
    inside = pruned.assignment >= 0
    pts = points.subset(inside)
    if features == "genes":
        # simplices whose points carry no detections cannot define a law
        return _prune_empty_counts(pts, pruned.family, weight_mode)
    if features == "rna":
        return from_rna_counts(pts, pruned.family)
    if features == "labels":
        return from_cell_labels(pts, pruned.family)
    raise ValueError(f"unknown feature construction {features!r}")


def _prune_empty_counts(points, family, weight_mode):
    assignment, inside, _ = _assign(points, family)
    sums = _sum_by_simplex(assignment, inside, points.counts, family.n_simplices)
    keep = np.flatnonzero(sums.sum(axis=1) > 0)
    if keep.size < family.n_simplices:
        family, _ = subfamily(family, keep)
    return from_gene_counts(points, family, weight_mode)


def deform(v, new_positions):
    """Copy-and-paste action: move the vertices, keep alpha and zeta."""
    x = np.asarray(new_positions, dtype=float)
    if x.shape != v.family.vertices.shape:
        raise ValueError(f"new positions shape {x.shape} != {v.family.vertices.shape}")
    return MeshVarifold(v.family.with_vertices(x), v.alpha, v.zeta, v.features)


def pair(v, F):
    """(mu | F) = sum_c alpha_c |gamma_c| E_{zeta_c}[F(m_c, .)].

    ``F(x, f)`` receives the (m, d) array of simplex centers and either a label
    index (categorical features) or the (m, G) array of Dirac locations, and
    returns an (m,) array.
    """
    centers = v.centers()
    w = v.weights()
    if v.features.kind == CATEGORICAL:
        expect = np.zeros(len(w))
        for k in range(v.features.size):
            expect += v.zeta[:, k] * np.asarray(F(centers, k), dtype=float)
    else:
        expect = np.asarray(F(centers, v.zeta), dtype=float)
    return float(np.dot(w, expect))
