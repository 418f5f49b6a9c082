"""Compound Poisson point processes on simplicial partitions.

Intensity and mark law are constant on each region. Region c gets its own
generator seeded by ``SeedSequence(seed).spawn(n_regions)[c]``; points are
drawn region by region in index order, so a seed fixes the realization
bitwise.
"""
from dataclasses import dataclass

import numpy as np

from .errors import FoldedRegion, InvalidRatio
from .mesh import SimplicialFamily, locate_points
from .varifold import FeatureSpace, MeshVarifold


@dataclass(frozen=True, eq=False)
class CppModel:
    regions: SimplicialFamily
    lam: np.ndarray          # points per unit volume, per region
    zeta: np.ndarray         # (regions, marks) probability vectors
    features: FeatureSpace

    def __post_init__(self):
        m = self.regions.n_simplices
        lam = np.asarray(self.lam, dtype=float).reshape(m)
        zeta = np.asarray(self.zeta, dtype=float).reshape(m, self.features.size)
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("intensities must be finite and nonnegative")
        if np.any(zeta < 0) or np.any(np.abs(zeta.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("mark laws must be probability vectors")
        vol = self.regions.volumes()
        if np.any(vol <= 0):
            raise FoldedRegion(f"region {int(np.argmax(vol <= 0))} has non-positive volume")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "zeta", zeta)

    @property
    def n_regions(self):
        return self.regions.n_simplices

    def volumes(self):
        return self.regions.volumes()

    def expected_counts(self, marks=None):
        """Lambda(Omega_c x A) for every region; A given as mark indices (default: all)."""
        mass = self.lam * self.volumes()
        if marks is None:
            return mass
        return mass * self.zeta[:, np.asarray(marks, dtype=np.int64)].sum(axis=1)

    def varifold(self):
        """lambda (x) zeta as a mesh varifold."""
        return MeshVarifold(self.regions, self.lam, self.zeta, self.features)

    def to_dict(self):
        return {"mesh": self.regions.to_dict(), "lambda": self.lam.tolist(),
                "zeta": self.zeta.tolist(), "features": list(self.features.names)}

    @classmethod
    def from_dict(cls, data):
        return cls(SimplicialFamily.from_dict(data["mesh"]), data["lambda"], data["zeta"],
                   FeatureSpace.categorical(data["features"]))


@dataclass(frozen=True, eq=False)
class Realization:
    """Points with categorical marks (indices into ``features``)."""
    positions: np.ndarray
    marks: np.ndarray
    features: FeatureSpace

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        marks = np.asarray(self.marks, dtype=np.int64).reshape(-1)
        if pos.ndim != 2 or pos.shape[0] != marks.size:
            raise ValueError("positions and marks disagree in length")
        if marks.size and (marks.min() < 0 or marks.max() >= self.features.size):
            raise ValueError("mark outside the feature set")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "marks", marks)

    def __len__(self):
        return self.marks.size


def sample(model, seed):
    """One realization; ``seed`` is an int or a ``SeedSequence``."""
    d = model.regions.dim
    corners = model.regions.corners()
    mean = model.expected_counts()
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    children = root.spawn(model.n_regions)
    pos, marks = [], []
    for c in range(model.n_regions):
        rng = np.random.default_rng(children[c])
        n = int(rng.poisson(mean[c]))
        if n == 0:
            continue
        bary = rng.dirichlet(np.ones(d + 1), size=n)
        pos.append(bary @ corners[c])
        marks.append(rng.choice(model.features.size, size=n, p=model.zeta[c]))
    if pos:
        return Realization(np.concatenate(pos), np.concatenate(marks), model.features)
    return Realization(np.zeros((0, d)), np.zeros(0, dtype=np.int64), model.features)


def _mapped_vertices(family, phi):
    if callable(phi):
        x = np.asarray(phi(family.vertices), dtype=float)
    else:
        x = np.asarray(phi, dtype=float)
    if x.shape != family.vertices.shape:
        raise ValueError(f"mapped vertices have shape {x.shape}, expected {family.vertices.shape}")
    return x


def push_forward_model(model, phi):
    """phi * cpp(lambda, zeta): regions go to phi(Omega_c), values are kept.

    ``phi`` is a callable on (n, d) arrays or the array of mapped region
    vertices. Regions are mapped through their vertices, so the images are
    exact for maps that are affine on each region.
    """
    x = _mapped_vertices(model.regions, phi)
    mapped = model.regions.with_vertices(x)
    vol = mapped.volumes()
    bad = np.flatnonzero(vol <= 0)
    if bad.size:
        raise FoldedRegion(f"{bad.size} regions fold under the map (first: {bad[0]})")
    return CppModel(mapped, model.lam, model.zeta, model.features)


@dataclass(frozen=True)
class TestResult:
    T: float
    p_hat: float
    p: float
    counts: tuple
    chi: tuple


def _xlogy_ratio(x, y):
    # x log(x / y) with 0 log 0 = 0
    x = np.asarray(x, dtype=float)
    out = np.zeros(np.broadcast(x, y).shape)
    pos = np.broadcast_to(x > 0, out.shape)
    xb = np.broadcast_to(x, out.shape)
    yb = np.broadcast_to(y, out.shape)
    out[pos] = xb[pos] * np.log(xb[pos] / yb[pos])
    return out


def lrt_arrays(n1, n2, chi1, chi2):
    """Vectorized T = (n1 + n2) KL(Bernoulli(p_hat) || Bernoulli(p)); returns (T, p_hat, p)."""
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    chi1 = np.asarray(chi1, dtype=float)
    chi2 = np.asarray(chi2, dtype=float)
    if np.any(~(chi1 > 0)) or np.any(~(chi2 > 0)):
        raise InvalidRatio("volume ratios must be positive")
    if np.any(n1 < 0) or np.any(n2 < 0):
        raise ValueError("counts must be nonnegative")
    n = n1 + n2
    p = chi1 / (chi1 + chi2)
    safe = np.where(n > 0, n, 1.0)
    p_hat = np.where(n > 0, n1 / safe, p)
    kl = _xlogy_ratio(p_hat, p) + _xlogy_ratio(1.0 - p_hat, 1.0 - p)
    T = np.where(n > 0, n * kl, 0.0)
    return np.maximum(T, 0.0), p_hat, p


def lrt_statistic(n1, n2, chi1, chi2):
    T, p_hat, p = lrt_arrays(n1, n2, chi1, chi2)
    return TestResult(float(T), float(p_hat), float(p), (int(n1), int(n2)),
                      (float(chi1), float(chi2)))


@dataclass(frozen=True, eq=False)
class StatisticField:
    """Per (region, feature set) arrays; column 0 is the whole feature space."""
    n1: np.ndarray
    n2: np.ndarray
    chi1: np.ndarray
    chi2: np.ndarray
    T: np.ndarray
    p_hat: np.ndarray
    p: np.ndarray

    @property
    def shape(self):
        return self.T.shape

    def result(self, c, j):
        return TestResult(float(self.T[c, j]), float(self.p_hat[c, j]), float(self.p[c, j]),
                          (int(self.n1[c, j]), int(self.n2[c, j])),
                          (float(self.chi1[c]), float(self.chi2[c])))

    def rows(self):
        m, J = self.shape
        for c in range(m):
            for j in range(J):
                yield (c, j, int(self.n1[c, j]), int(self.n2[c, j]), float(self.chi1[c]),
                       float(self.chi2[c]), float(self.p_hat[c, j]), float(self.p[c, j]),
                       float(self.T[c, j]))


def region_counts(realization, family, feature_sets=()):
    """Counts per region (rows) and per feature set (columns, 0 = all marks)."""
    loc = locate_points(family, realization.positions)
    inside = loc >= 0
    cols = [np.bincount(loc[inside], minlength=family.n_simplices)]
    for marks in feature_sets:
        sel = inside & np.isin(realization.marks, np.asarray(marks, dtype=np.int64))
        cols.append(np.bincount(loc[sel], minlength=family.n_simplices))
    return np.stack(cols, axis=1)


def statistic_field(N1, N2, phi1, phi2, partition, feature_sets=()):
    """T(Omega_c, A_j) comparing N1 on phi1(Omega_c) with N2 on phi2(Omega_c).

    ``phi1``/``phi2`` are callables, arrays of mapped partition vertices, or
    None for the identity. ``feature_sets`` lists mark-index collections A_j.
    """
    base = partition.volumes()
    if np.any(base <= 0):
        raise FoldedRegion("partition has non-positive volumes")
    counts, chis = [], []
    for N, phi in ((N1, phi1), (N2, phi2)):
        x = partition.vertices if phi is None else _mapped_vertices(partition, phi)
        mapped = partition.with_vertices(x)
        vol = mapped.volumes()
        if np.any(vol <= 0):
            raise FoldedRegion("a mapped region has non-positive volume")
        counts.append(region_counts(N, mapped, feature_sets))
        chis.append(vol / base)
    T, p_hat, p = lrt_arrays(counts[0], counts[1], chis[0][:, None], chis[1][:, None])
    return StatisticField(counts[0], counts[1], chis[0], chis[1], T, p_hat,
                          np.broadcast_to(p, T.shape).copy())
