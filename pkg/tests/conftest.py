import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

import numpy as np
import pytest

from ivlddmm.mesh import build_regular_mesh
from ivlddmm.varifold import FeatureSpace, MeshVarifold


def jittered_grid(rng, dim, lam=1.0, size=None, jitter=0.08):
    size = size if size is not None else (2.0 if dim == 2 else 1.0)
    fam = build_regular_mesh((np.zeros(dim), np.full(dim, size)), lam, dim)
    return fam.with_vertices(fam.vertices + jitter * lam * rng.standard_normal(fam.vertices.shape))


def random_varifold(rng, family, kind="categorical", n_features=3):
    m = family.n_simplices
    alpha = rng.uniform(0.5, 2.0, m)
    if kind == "categorical":
        zeta = rng.dirichlet(np.ones(n_features), size=m)
        fs = FeatureSpace.categorical([f"l{k}" for k in range(n_features)])
    else:
        zeta = rng.uniform(0.0, 3.0, (m, n_features))
        fs = FeatureSpace.counts([f"g{k}" for k in range(n_features)])
    return MeshVarifold(family, alpha, zeta, fs)


def central_difference(f, x, h):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def exact_action_pair(v, A, b, F):
    """(phi * mu | F) for phi(x) = A x + b: weights times |det A| at phi(m_c)."""
    jac = abs(np.linalg.det(A))
    moved = v.centers() @ A.T + b
    w = v.weights() * jac
    if v.features.kind == "categorical":
        return float(sum(np.dot(w * v.zeta[:, k], F(moved, k)) for k in range(v.features.size)))
    return float(np.dot(w, F(moved, v.zeta)))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", help="run desk-scale 3D reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow") or os.environ.get("IVLDDMM_RUNSLOW"):
        return
    skip = pytest.mark.skip(reason="slow; use --runslow or IVLDDMM_RUNSLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
