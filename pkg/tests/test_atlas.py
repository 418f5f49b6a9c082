import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import jittered_grid, random_varifold
from ivlddmm.atlas import (AtlasVarifold, LabelParameters, QpProblem, alternate_minimize,
                           assemble_qp, full_objective, imputed_varifold, kkt_residual, solve_qp)
from ivlddmm.errors import Infeasible, ModeMismatch, ZeroDensity
from ivlddmm.kernels import FeatureKernel, KernelMetric, SpatialKernel, varifold_sqdist
from ivlddmm.lddmm import RegistrationConfig, register
from ivlddmm.mesh import SimplicialFamily, build_regular_mesh
from ivlddmm.toy import atlas_target, banded_atlas
from ivlddmm.varifold import FeatureSpace, MeshVarifold

FS = FeatureSpace.categorical(["f0", "f1", "f2", "f3"])
METRIC = KernelMetric(SpatialKernel(0.3), FeatureKernel())


def _atlas(rng, n_labels=2, lam=0.5):
    fam = build_regular_mesh(([0, 0], [1, 1]), lam)
    zeta = rng.dirichlet(np.ones(n_labels), size=fam.n_simplices)
    return AtlasVarifold(fam, zeta, tuple(f"L{k}" for k in range(n_labels)))


def test_imputed_examples():
    fam = SimplicialFamily([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    one = AtlasVarifold(fam, [[1.0]], ("L",))
    v = imputed_varifold(one, LabelParameters(("L",), FS, [[0, 1, 0, 0]]))
    assert v.alpha[0] == 1 and np.allclose(v.zeta, [[0, 1, 0, 0]])
    two = AtlasVarifold(fam, [[0.5, 0.5]], ("A", "B"))
    th = np.array([[1.0, 1, 0, 0], [0, 0, 2, 2]])
    v = imputed_varifold(two, LabelParameters(("A", "B"), FS, th))
    assert v.alpha[0] == pytest.approx(3.0)
    v3 = imputed_varifold(two, LabelParameters(("A", "B"), FS, 3 * th))
    assert np.allclose(v3.alpha, 3 * v.alpha) and np.allclose(v3.zeta, v.zeta)
    with pytest.raises(ZeroDensity):
        imputed_varifold(two, LabelParameters(("A", "B"), FS, np.zeros((2, 4))))
    lax = imputed_varifold(two, LabelParameters(("A", "B"), FS, np.zeros((2, 4))), strict=False)
    assert np.all(lax.alpha == 0)


def test_assemble_single_term():
    fam = SimplicialFamily([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    atlas = AtlasVarifold(fam, [[1.0]], ("L",))
    tfam = SimplicialFamily([[0, 0], [2, 0], [0, 2]], [[0, 1, 2]])
    target = MeshVarifold(tfam, [3.0], [[0.25, 0.75, 0, 0]], FS)
    metric = KernelMetric(SpatialKernel(1e9), FeatureKernel())   # K1 = 1
    qp = assemble_qp(atlas, target, metric)
    assert qp.A[0, 0] == pytest.approx(0.25)
    assert np.allclose(qp.b[0], 3.0 * 0.5 * 2.0 * np.array([0.25, 0.75, 0, 0]))


def test_assemble_structure(rng):
    fam = build_regular_mesh(([0, 0], [1, 1]), 0.5)
    zeta = np.zeros((fam.n_simplices, 2))
    zeta[: 4, 0] = 1
    zeta[4:, 1] = 1
    atlas = AtlasVarifold(fam, zeta, ("A", "B"))
    target = random_varifold(rng, jittered_grid(rng, 2, 0.25, 1.0), n_features=4)
    far = KernelMetric(SpatialKernel(1e-3), FeatureKernel())
    qp = assemble_qp(atlas, target, far)
    assert abs(qp.A[0, 1]) < 1e-12 * qp.A[0, 0]
    qp = assemble_qp(_atlas(rng, 3), target, METRIC)
    assert np.array_equal(qp.A, qp.A.T)
    assert np.linalg.eigvalsh(qp.A).min() >= -1e-8 * np.trace(qp.A)


def test_mode_checks(rng):
    atlas = _atlas(rng)
    counts = random_varifold(rng, jittered_grid(rng, 2, 0.25, 1.0), "counts", 4)
    with pytest.raises(ModeMismatch):
        assemble_qp(atlas, counts, METRIC, mode="celltype")
    with pytest.raises(ModeMismatch):
        assemble_qp(atlas, counts, KernelMetric(METRIC.k1, FeatureKernel("cauchy")), "genecount")
    with pytest.raises(ModeMismatch):
        assemble_qp(atlas, counts, METRIC, mode="other")


def test_genecount_mean_identification(rng):
    # a categorical law over genes and a Dirac at its mean give the same b
    atlas = _atlas(rng, 3)
    cat = random_varifold(rng, jittered_grid(rng, 2, 0.25, 1.0), "categorical", 4)
    dirac = MeshVarifold(cat.family, cat.alpha, cat.zeta, FeatureSpace.counts(cat.features.names))
    dot = KernelMetric(METRIC.k1, FeatureKernel("dot"))
    q1 = assemble_qp(atlas, cat, dot, mode="genecount")
    q2 = assemble_qp(atlas, dirac, dot, mode="genecount")
    assert np.allclose(q1.b, q2.b, rtol=1e-13) and np.allclose(q1.A, q2.A)


def test_qp_objective_is_sqdist(rng):
    atlas = _atlas(rng, 3)
    target = random_varifold(rng, jittered_grid(rng, 2, 0.25, 1.0), n_features=4)
    qp = assemble_qp(atlas, target, METRIC)
    th = rng.uniform(0, 2, (3, 4))
    imp = imputed_varifold(atlas, LabelParameters(atlas.labels, target.features, th))
    assert qp.objective(th) + qp.const == pytest.approx(varifold_sqdist(METRIC, imp, target), rel=1e-10)


def test_solve_identity_and_normal_equations(rng):
    b = rng.uniform(0, 2, (3, 4))
    qp = QpProblem(np.eye(3), b, np.eye(3), 0.0, np.inf, ("a", "b", "c"), FS)
    assert np.allclose(solve_qp(qp).theta, b, atol=1e-8)
    M = rng.uniform(0.5, 1, (6, 3))
    A = M.T @ M
    theta = rng.uniform(1, 2, (3, 4))
    qp = QpProblem(A, A @ theta, rng.dirichlet(np.ones(3), 5), 0.0, np.inf, ("a", "b", "c"), FS)
    sol = solve_qp(qp)
    assert np.abs(A @ sol.theta - A @ theta).max() < 1e-6
    assert sol.report["kkt_residual"] < 1e-6


def test_equality_constraints(rng):
    fam = build_regular_mesh(([0, 0], [1, 1]), 0.5)
    zeta = np.zeros((8, 2))
    zeta[:, 0] = np.linspace(0, 1, 8)
    zeta[:, 1] = 1 - zeta[:, 0]
    atlas = AtlasVarifold(fam, zeta, ("A", "B"), alpha_min=np.full(8, 2.0), alpha_max=np.full(8, 2.0))
    target = random_varifold(rng, jittered_grid(rng, 2, 0.25, 1.0), n_features=4)
    sol = solve_qp(assemble_qp(atlas, target, METRIC))
    dens = zeta @ sol.theta.sum(axis=1)
    assert np.abs(dens - 2.0).max() < 1e-8 * 2.0


def test_infeasible_bounds(rng):
    fam = SimplicialFamily([[0, 0], [1, 0], [0, 1], [1, 1]], [[0, 1, 2], [1, 3, 2]])
    atlas = AtlasVarifold(fam, [[1.0, 0.0], [1.0, 0.0]], ("A", "B"), alpha_min=[0, 3],
                          alpha_max=[1, 5])
    target = random_varifold(rng, jittered_grid(rng, 2, 0.5, 1.0), n_features=4)
    with pytest.raises(Infeasible) as err:
        solve_qp(assemble_qp(atlas, target, METRIC))
    assert sorted(err.value.violated) == [0, 1]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_kkt_at_solution(seed):
    rng = np.random.default_rng(seed)
    M = rng.uniform(0, 1, (10, 3))
    A = M.T @ np.exp(-rng.uniform(0, 2, (10, 10))) @ M
    A = 0.5 * (A + A.T) + 1e-3 * np.eye(3)
    rows = rng.dirichlet(np.ones(3), 10)
    lo = rng.uniform(0, 0.5, 10)
    qp = QpProblem(A, rng.uniform(-1, 2, (3, 4)), rows, lo, lo + 5.0, ("a", "b", "c"), FS)
    try:
        sol = solve_qp(qp)
    except Infeasible:
        return
    assert kkt_residual(qp, sol.theta) < 1e-6
    assert sol.report["max_violation"] < 1e-8
    assert np.all(sol.theta >= 0)


def test_round_trip_identity():
    rng = np.random.default_rng(3)
    atlas = banded_atlas(1 / 12)
    theta = rng.uniform(0.5, 3.0, (3, 4))
    target = atlas_target(atlas, theta)
    sol = solve_qp(assemble_qp(atlas, target, KernelMetric(SpatialKernel(1 / 6), FeatureKernel())))
    assert np.abs(sol.theta / theta - 1).max() < 0.05


def test_alternate_minimize_trace():
    rng = np.random.default_rng(4)
    atlas = banded_atlas(0.25)
    theta = rng.uniform(0.5, 3.0, (3, 4))
    target = atlas_target(atlas, theta)
    target = target.deform(target.family.vertices * 1.15)
    metric = KernelMetric(SpatialKernel(0.3), FeatureKernel())
    cfg = RegistrationConfig(sigmaV=0.5, nt=4, max_iters=8)
    res = alternate_minimize(atlas, target, metric, cfg, rounds=3)
    obj = [row["objective"] for row in res.trace]
    assert np.all(np.diff(obj) <= 1e-9 * obj[0])
    # one round is the composition of the two phases
    one = alternate_minimize(atlas, target, metric, cfg, rounds=1)
    sol = solve_qp(assemble_qp(atlas, target, metric))
    assert np.allclose(one.theta.theta, sol.theta, rtol=1e-12, atol=1e-12)
    cfg1 = RegistrationConfig(sigma=one.sigma, sigmaV=0.5, nt=4, max_iters=8)
    reg = register(imputed_varifold(atlas, sol, strict=False), target, metric, cfg1)
    assert np.allclose(reg.a, one.a, rtol=1e-10, atol=1e-12)
    again = full_objective(atlas, one.theta, target, metric, cfg1, one.a)
    assert again == pytest.approx(one.trace[-1]["objective"], rel=1e-10)


def test_atlas_json_roundtrip(rng):
    atlas = AtlasVarifold(build_regular_mesh(([0, 0], [1, 1]), 0.5),
                          rng.dirichlet(np.ones(2), 8), ("A", "B"), alpha_min=np.ones(8))
    back = AtlasVarifold.from_dict(atlas.to_dict())
    assert np.array_equal(back.zeta, atlas.zeta) and np.all(np.isinf(back.alpha_max))
    p = LabelParameters(("A", "B"), FS, rng.uniform(0, 1, (2, 4)))
    assert np.array_equal(LabelParameters.from_dict(p.to_dict()).theta, p.theta)
