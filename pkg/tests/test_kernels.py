import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference, jittered_grid, random_varifold, rel_err
from ivlddmm.errors import KindMismatch
from ivlddmm.kernels import (Attachment, FeatureKernel, KernelMetric, SpatialKernel,
                             attachment_grad, gram_matrix, k1_eval, k1_grad1, k2_inner,
                             varifold_inner, varifold_sqdist)
from ivlddmm.mesh import SimplicialFamily
from ivlddmm.varifold import FeatureDistribution, FeatureSpace, MeshVarifold

K1 = SpatialKernel(0.7)


def test_k1_basics(rng):
    x = rng.standard_normal(3)
    assert k1_eval(K1, x, x) == 1.0
    assert np.allclose(k1_grad1(K1, x, x), 0)
    y = rng.standard_normal(3)
    assert np.allclose(k1_grad1(K1, x, y), -k1_grad1(K1, y, x))
    fd = central_difference(lambda z: k1_eval(K1, z, y), x, 1e-6)
    assert rel_err(k1_grad1(K1, x, y), fd) < 1e-6


def test_k2_inner_examples():
    a = FeatureDistribution.discrete([1.0, 0.0])
    b = FeatureDistribution.discrete([0.0, 1.0])
    assert k2_inner(FeatureKernel(), a, a) == 1.0
    assert k2_inner(FeatureKernel(), a, b) == 0.0
    nu = FeatureDistribution.dirac([1.0, 1.0])
    assert k2_inner(FeatureKernel("cauchy", 1.0), nu, nu) == pytest.approx(2.0)
    mu = FeatureDistribution.dirac([3.0, 0.0])
    assert k2_inner(FeatureKernel("cauchy", 2.0), nu, mu) == pytest.approx(3 / (4 + 4 + 1))
    assert k2_inner(FeatureKernel("dot"), nu, mu) == pytest.approx(3.0)
    logk = FeatureKernel("dot", log_scale=True)
    assert k2_inner(logk, nu, mu) == pytest.approx(np.log(2) * np.log(4))
    with pytest.raises(KindMismatch):
        k2_inner(FeatureKernel(), nu, nu)
    with pytest.raises(KindMismatch):
        k2_inner(FeatureKernel("cauchy"), a, a)


def _two_simplex(alpha, zeta, shift=0.0):
    fam = SimplicialFamily(np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float) + shift,
                           [[0, 1, 2], [1, 3, 2]])
    return MeshVarifold(fam, alpha, zeta, FeatureSpace.categorical(["a", "b"]))


def test_inner_by_hand():
    u = _two_simplex([1.0, 2.0], [[1, 0], [0.5, 0.5]])
    v = _two_simplex([3.0, 1.0], [[0.2, 0.8], [0, 1]], shift=0.3)
    metric = KernelMetric(K1, FeatureKernel())
    mu, mv = u.centers(), v.centers()
    wu, wv = u.weights(), v.weights()
    expect = sum(wu[c] * wv[e] * k1_eval(K1, mu[c], mv[e]) * np.dot(u.zeta[c], v.zeta[e])
                 for c in range(2) for e in range(2))
    assert varifold_inner(metric, u, v) == pytest.approx(expect, rel=1e-14)
    # a single Dirac with unit weight against itself
    one = MeshVarifold(SimplicialFamily([[0, 0], [2, 0], [0, 1]], [[0, 1, 2]]), [1.0], [[0, 1]],
                       FeatureSpace.categorical(["a", "b"]))
    assert varifold_inner(metric, one, one) == pytest.approx(1.0)


def test_inner_linear_in_alpha(rng):
    metric = KernelMetric(K1, FeatureKernel())
    fam = jittered_grid(rng, 2, 0.5, 1.0)
    u = random_varifold(rng, fam)
    v = random_varifold(rng, fam)
    alpha = u.alpha.copy()
    alpha[3] *= 2.5
    u2 = MeshVarifold(fam, alpha, u.zeta, u.features)
    e = np.zeros_like(alpha)
    e[3] = u.alpha[3]
    u3 = MeshVarifold(fam, e, u.zeta, u.features)
    assert varifold_inner(metric, u2, v) == pytest.approx(
        varifold_inner(metric, u, v) + 1.5 * varifold_inner(metric, u3, v), rel=1e-12)


def test_sqdist_properties(rng):
    metric = KernelMetric(K1, FeatureKernel("cauchy", 1.5))
    fam = jittered_grid(rng, 2, 0.5, 1.0)
    u = random_varifold(rng, fam, "counts")
    v = random_varifold(rng, jittered_grid(rng, 2, 0.5, 1.0), "counts")
    assert varifold_sqdist(metric, u, u) <= 1e-9 * varifold_inner(metric, u, u)
    assert varifold_sqdist(metric, u, v) == pytest.approx(varifold_sqdist(metric, v, u), rel=1e-12)
    far = v.deform(v.family.vertices + 40 * K1.sigma)
    expect = varifold_inner(metric, u, u) + varifold_inner(metric, v, v)
    assert varifold_sqdist(metric, u, far) == pytest.approx(expect, rel=1e-6)


def test_cutoff_flag_matches_within_tail(rng):
    fam = jittered_grid(rng, 2, 0.25, 2.0)
    u, v = random_varifold(rng, fam), random_varifold(rng, fam)
    k = SpatialKernel(0.2)
    exact = varifold_inner(KernelMetric(k, FeatureKernel()), u, v)
    cut = varifold_inner(KernelMetric(SpatialKernel(0.2, cutoff=True), FeatureKernel()), u, v)
    assert cut == pytest.approx(exact, rel=1e-7)


def test_gram_psd(rng):
    metric = KernelMetric(K1, FeatureKernel("cauchy", 1.0))
    vs = [random_varifold(rng, jittered_grid(rng, 2, 0.5, 1.0), "counts") for _ in range(6)]
    G = gram_matrix(metric, vs)
    assert np.allclose(G, G.T)
    assert np.linalg.eigvalsh(G).min() >= -1e-8 * np.trace(G)


def test_mismatched_spaces(rng):
    fam = jittered_grid(rng, 2, 0.5, 1.0)
    with pytest.raises(KindMismatch):
        varifold_inner(KernelMetric(K1, FeatureKernel()), random_varifold(rng, fam),
                       random_varifold(rng, fam, n_features=4))


def test_gradient_zero_at_target(rng):
    metric = KernelMetric(K1, FeatureKernel())
    u = random_varifold(rng, jittered_grid(rng, 2, 0.5, 1.0))
    g = attachment_grad(metric, u, u)
    assert np.abs(g).max() < 1e-8


def test_gradient_single_simplex_far_translation():
    # the self term is translation invariant, so only the cross term moves
    fam = SimplicialFamily([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    fs = FeatureSpace.categorical(["a"])
    u = MeshVarifold(fam.with_vertices(fam.vertices + [2.0, 0.5]), [1.0], [[1.0]], fs)
    t = MeshVarifold(fam, [1.0], [[1.0]], fs)
    metric = KernelMetric(SpatialKernel(1.0), FeatureKernel())
    g = attachment_grad(metric, u, t)
    mu, mt = u.centers()[0], t.centers()[0]
    w = 0.5 * 0.5
    # translation gradient = sum over vertices = -2 w grad_1 K1(m_u, m_t)
    assert np.allclose(g.sum(axis=0), -2 * w * k1_grad1(metric.k1, mu, mt), rtol=1e-12)


def test_normal_term_isolation(rng):
    # with an effectively constant K1 only the volume derivative remains
    fam = jittered_grid(rng, 2, 0.5, 1.0)
    u = random_varifold(rng, fam)
    t = random_varifold(rng, jittered_grid(rng, 2, 0.5, 1.0))
    metric = KernelMetric(SpatialKernel(1e6 * 2.0), FeatureKernel())
    g = attachment_grad(metric, u, t)

    def f(x):
        w = u.alpha * u.family.volumes(x)
        z = u.zeta
        wt = t.weights()
        return w @ (z @ z.T) @ w - 2 * w @ (z @ t.zeta.T) @ wt + wt @ (t.zeta @ t.zeta.T) @ wt
    fd = central_difference(f, fam.vertices, 1e-6)
    assert rel_err(g, fd) < 1e-6


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([2, 3]), st.sampled_from(["identity", "cauchy"]))
def test_attachment_gradient_fd(seed, d, kind):
    rng = np.random.default_rng(seed)
    fam = jittered_grid(rng, d, 0.5, 1.0)
    feat = "categorical" if kind == "identity" else "counts"
    u = random_varifold(rng, fam, feat)
    t = random_varifold(rng, jittered_grid(rng, d, 0.5, 1.0).with_vertices(
        jittered_grid(rng, d, 0.5, 1.0).vertices * 1.2), feat)
    metric = KernelMetric(SpatialKernel(0.6), FeatureKernel(kind, 1.3))
    att = Attachment(metric, u, t)
    val, g = att.value_and_grad()
    assert val == pytest.approx(varifold_sqdist(metric, u, t, clamp=False), rel=1e-10)
    fd = central_difference(lambda x: varifold_sqdist(metric, u.deform(x), t, clamp=False),
                            fam.vertices, 1e-6)
    assert rel_err(g, fd) < 1e-5
