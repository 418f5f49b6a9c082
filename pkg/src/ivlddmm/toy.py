"""Concentric disc / ball toy pair.

Both shapes carry a two-label feature (molecule, substrate) whose molecule
fraction is concentrated at the center. The small template has the molecule
over a larger share of its radius than the large target, so matching needs a
global expansion with a local contraction of the central region.
"""
import numpy as np

from .mesh import build_regular_mesh, subfamily
from .varifold import FeatureSpace, MeshVarifold

TOY_FEATURES = FeatureSpace.categorical(("molecule", "substrate"))


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def concentric_shape(radius, core_radius, lam, dim, width=None):
    """Mesh of a disc/ball at resolution ``lam`` with a smooth molecular core."""
    width = 0.5 * lam if width is None else width
    lo = -np.full(dim, radius + lam)
    hi = np.full(dim, radius + lam)
    grid = build_regular_mesh((lo, hi), lam, dim)
    centers = grid.centers()
    keep = np.flatnonzero(np.linalg.norm(centers, axis=1) <= radius)
    family, _ = subfamily(grid, keep)
    r = np.linalg.norm(family.centers(), axis=1)
    q = _sigmoid((core_radius - r) / width)
    zeta = np.stack([q, 1.0 - q], axis=1)
    return MeshVarifold(family, np.ones(family.n_simplices), zeta, TOY_FEATURES)


def toy_pair(dim=2, lam=None, target_lam=None, radius=1.0, scale=1.4,
             core=0.6, target_core=0.35):
    """(template, target): small disc/ball with a large core vs a larger one
    with a relatively smaller core."""
    if lam is None:
        lam = 1.0 / 15 if dim == 2 else 1.0 / 8.3
    target_lam = lam if target_lam is None else target_lam
    template = concentric_shape(radius, core * radius, lam, dim)
    target = concentric_shape(scale * radius, target_core * scale * radius, target_lam, dim)
    return template, target


def banded_atlas(lam=0.25, n_labels=3, size=1.0, dim=2):
    """Square/cube atlas whose labels are bands along the first axis."""
    from .atlas import AtlasVarifold

    fam = build_regular_mesh((np.zeros(dim), np.full(dim, size)), lam, dim)
    band = np.minimum((fam.centers()[:, 0] / size * n_labels).astype(int), n_labels - 1)
    zeta = np.zeros((fam.n_simplices, n_labels))
    zeta[np.arange(fam.n_simplices), band] = 1.0
    return AtlasVarifold(fam, zeta, tuple(f"L{k}" for k in range(n_labels)))


def atlas_target(atlas, theta, refine=2, features=None):
    """Fine-scale target generated from ``atlas`` with parameters ``theta``.

    The atlas grid is refined ``refine`` times (a nested grid in 2D); every
    fine simplex takes the label law of the atlas simplex holding its center.
    """
    from .mesh import locate_points

    fam = atlas.family
    lo, hi = fam.vertices.min(axis=0), fam.vertices.max(axis=0)
    lam = (hi[0] - lo[0]) / round((hi[0] - lo[0]) / _edge(fam)) / refine
    fine = build_regular_mesh((lo, hi), lam, fam.dim)
    owner = locate_points(fam, fine.centers())
    mix = atlas.zeta[owner] @ np.asarray(theta, float)
    alpha = mix.sum(axis=1)
    names = features or FeatureSpace.categorical(tuple(f"f{k}" for k in range(mix.shape[1])))
    return MeshVarifold(fine, alpha, mix / alpha[:, None], names)


def _edge(fam):
    s = fam.simplices[0]
    return np.abs(fam.vertices[s[1]] - fam.vertices[s[0]]).max()
