"""Cross-scale atlasing.

A coarse atlas carries, per simplex, a distribution over a small label set.
Each label gets a nonnegative parameter vector theta_l over the fine feature
set (cell types or genes). Matching the imputed varifold to fine-scale data
under the kernel metric is a quadratic program in theta:

    Phi(theta) = sum_f theta(f)^T A theta(f) - 2 sum_l b_l . theta_l
    s.t. theta >= 0,  alpha_min_c <= sum_l zeta_c(l) sum_f theta_l(f) <= alpha_max_c.

The QP alternates with registration of the imputed varifold to the target.
"""
import dataclasses
import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import Infeasible, MaxIterations, ModeMismatch, ZeroDensity
from .kernels import gauss_matvec, varifold_inner
from .lddmm import Problem, register
from .mesh import SimplicialFamily
from .varifold import CATEGORICAL, FeatureSpace, MeshVarifold

log = logging.getLogger(__name__)

CELL_TYPE = "celltype"
GENE_COUNT = "genecount"
MODES = (CELL_TYPE, GENE_COUNT)


@dataclass(frozen=True, eq=False)
class AtlasVarifold:
    """Atlas mesh with per-simplex label laws and density bounds.

    ``alpha`` is only used when the literal atlas-side weighting is requested
    in :func:`assemble_qp`.
    """
    family: SimplicialFamily
    zeta: np.ndarray
    labels: tuple
    alpha_min: np.ndarray = None
    alpha_max: np.ndarray = None
    alpha: np.ndarray = None

    def __post_init__(self):
        m = self.family.n_simplices
        labels = tuple(str(x) for x in self.labels)
        if not labels or len(set(labels)) != len(labels):
            raise ValueError("atlas labels must be nonempty and unique")
        zeta = np.asarray(self.zeta, dtype=float).reshape(m, len(labels))
        if np.any(zeta < 0) or np.any(np.abs(zeta.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("atlas label laws must be probability vectors")
        lo = np.zeros(m) if self.alpha_min is None else np.asarray(self.alpha_min, float).reshape(m)
        hi = np.full(m, np.inf) if self.alpha_max is None else np.asarray(self.alpha_max, float).reshape(m)
        if np.any(lo < 0) or np.any(np.isnan(hi)) or np.any(np.isnan(lo)):
            raise ValueError("density bounds must satisfy 0 <= alpha_min")
        alpha = np.ones(m) if self.alpha is None else np.asarray(self.alpha, float).reshape(m)
        for name, val in (("labels", labels), ("zeta", zeta), ("alpha_min", lo),
                          ("alpha_max", hi), ("alpha", alpha)):
            object.__setattr__(self, name, val)

    def with_vertices(self, x):
        return dataclasses.replace(self, family=self.family.with_vertices(x))

    def to_dict(self):
        return {"mesh": self.family.to_dict(), "labels": list(self.labels),
                "zeta": self.zeta.tolist(), "alpha_min": self.alpha_min.tolist(),
                "alpha_max": [None if np.isinf(v) else float(v) for v in self.alpha_max],
                "alpha": self.alpha.tolist()}

    @classmethod
    def from_dict(cls, data):
        family = SimplicialFamily.from_dict(data["mesh"])
        hi = data.get("alpha_max")
        if hi is not None:
            hi = [np.inf if v is None else v for v in hi]
        return cls(family, data["zeta"], tuple(data["labels"]), data.get("alpha_min"),
                   hi, data.get("alpha"))


@dataclass(eq=False)
class LabelParameters:
    """theta[l, f] >= 0 for every atlas label l and fine feature f."""
    labels: tuple
    features: FeatureSpace
    theta: np.ndarray
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = tuple(self.labels)
        self.theta = np.asarray(self.theta, dtype=float).reshape(len(self.labels), self.features.size)
        if np.any(self.theta < 0):
            raise ValueError("label parameters must be nonnegative")

    def to_dict(self):
        return {"labels": list(self.labels), "features": list(self.features.names),
                "feature_kind": self.features.kind,
                "theta": {lab: row.tolist() for lab, row in zip(self.labels, self.theta)},
                "report": {k: v for k, v in self.report.items() if np.isscalar(v)}}

    @classmethod
    def from_dict(cls, data):
        labels = tuple(data["labels"])
        features = FeatureSpace(data.get("feature_kind", CATEGORICAL), tuple(data["features"]))
        theta = np.array([data["theta"][lab] for lab in labels], dtype=float)
        return cls(labels, features, theta)


def imputed_varifold(atlas, params, strict=True):
    """alpha_c = sum_l zeta_c(l) |theta_l|, law = sum_l zeta_c(l) theta_l / alpha_c.

    For count features the law becomes a Dirac at its mean expression, which
    is what the Euclidean feature kernel sees.
    """
    if tuple(params.labels) != tuple(atlas.labels):
        raise ValueError("label parameters do not cover the atlas labels")
    mix = atlas.zeta @ params.theta
    alpha = mix.sum(axis=1)
    zero = alpha <= 0
    if strict and np.any(zero):
        raise ZeroDensity(f"{zero.sum()} simplices get zero density (first: {np.argmax(zero)})")
    zeta = np.zeros_like(mix)
    zeta[~zero] = mix[~zero] / alpha[~zero, None]
    return MeshVarifold(atlas.family, alpha, zeta, params.features)


@dataclass(eq=False)
class QpProblem:
    A: np.ndarray            # (L, L)
    b: np.ndarray            # (L, F)
    rows: np.ndarray         # (m, L) constraint rows zeta_c
    lo: np.ndarray
    hi: np.ndarray
    labels: tuple
    features: FeatureSpace
    mode: str = CELL_TYPE
    const: float = 0.0       # ||mu_target||^2, re-added in reported objectives

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        L = self.A.shape[0]
        if self.A.shape != (L, L) or self.b.shape[0] != L:
            raise ValueError("A must be (L, L) and b (L, F)")
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, L)
        m = self.rows.shape[0]
        self.lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (m,)).copy()
        self.hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (m,)).copy()

    def objective(self, theta):
        theta = np.asarray(theta, dtype=float)
        return float(np.sum(theta * (self.A @ theta)) - 2.0 * np.sum(self.b * theta))

    def gradient(self, theta):
        return 2.0 * (self.A @ theta - self.b)

    def densities(self, theta):
        return self.rows @ np.asarray(theta).sum(axis=1)


def _check_mode(mode, metric, target):
    if mode not in MODES:
        raise ModeMismatch(f"unknown atlas mode {mode!r}")
    k2 = metric.k2
    if k2.kind == "cauchy" or k2.log_scale:
        raise ModeMismatch("atlas QP needs the identity or Euclidean feature kernel")
    if mode == CELL_TYPE and target.features.kind != CATEGORICAL:
        raise ModeMismatch("cell-type mode needs categorical target features")


def assemble_qp(atlas, target, metric, mode=CELL_TYPE, x=None, literal_alpha=False):
    """A and b of the atlas QP for the atlas at vertices ``x`` (default: its own).

    Atlas-side densities are taken as 1 (they are absorbed into theta); with
    ``literal_alpha`` the atlas ``alpha`` multiplies both A and b.
    In gene-count mode a categorical target (gene frequencies) is read as the
    expectation of one-hot vectors, a count target through its Dirac locations.
    """
    _check_mode(mode, metric, target)
    if target.dim != atlas.family.dim:
        raise ModeMismatch("atlas and target live in different dimensions")
    family = atlas.family if x is None else atlas.family.with_vertices(x)
    inv2s = metric.k1._inv2s
    w = np.abs(family.volumes())
    if literal_alpha:
        w = w * atlas.alpha
    M = np.ascontiguousarray(w[:, None] * atlas.zeta)
    m = np.ascontiguousarray(family.centers())
    A = M.T @ gauss_matvec(m, m, M, inv2s)
    A = 0.5 * (A + A.T)
    wt = target.weights()
    rhs = np.ascontiguousarray(wt[:, None] * target.zeta)
    b = M.T @ gauss_matvec(m, np.ascontiguousarray(target.centers()), rhs, inv2s)
    tr = np.trace(A)
    if tr > 0 and np.linalg.eigvalsh(A).min() < -1e-8 * tr:
        raise ValueError("assembled A is not positive semidefinite")
    const = varifold_inner(metric, target, target)
    return QpProblem(A, b, atlas.zeta, atlas.alpha_min, atlas.alpha_max, atlas.labels,
                     target.features, mode, const)


# -- projection onto {theta >= 0, lo <= rows @ theta.sum(1) <= hi} ----------

def _reduce_constraints(rows, lo, hi):
    """Merge identical rows and drop rows implied by theta >= 0."""
    ids = np.arange(rows.shape[0])
    if rows.shape[0] == 0:
        return rows, lo, hi, [ids]
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    ulo = np.full(len(uniq), -np.inf)
    uhi = np.full(len(uniq), np.inf)
    np.maximum.at(ulo, inv, lo)
    np.minimum.at(uhi, inv, hi)
    groups = [ids[inv == k] for k in range(len(uniq))]
    keep = ~((ulo <= 0) & np.isinf(uhi))
    return uniq[keep], ulo[keep], uhi[keep], [g for g, k in zip(groups, keep) if k]


def _feasibility(rows, lo, hi):
    """Rows that cannot be satisfied together: minimize the total slack."""
    from scipy.optimize import linprog

    m, L = rows.shape
    if m == 0:
        return []
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        return bad.tolist()
    fin = np.isfinite(hi)
    nh = int(fin.sum())
    # variables: s (L), lower slacks (m), upper slacks (nh)
    c = np.concatenate([np.zeros(L), np.ones(m), np.ones(nh)])
    A1 = np.hstack([-rows, -np.eye(m), np.zeros((m, nh))])
    A2 = np.hstack([rows[fin], np.zeros((nh, m)), -np.eye(nh)])
    res = linprog(c, A_ub=np.vstack([A1, A2]), b_ub=np.concatenate([-lo, hi[fin]]),
                  bounds=[(0, None)] * (L + m + nh), method="highs")
    if not res.success:
        return list(range(m))
    scale = max(1.0, float(np.abs(lo).max()), float(np.abs(hi[fin]).max()) if nh else 0.0)
    if res.fun <= 1e-9 * scale:
        return []
    sl = res.x[L:L + m]
    sh = np.zeros(m)
    sh[fin] = res.x[L + m:]
    return np.flatnonzero((sl > 1e-9 * scale) | (sh > 1e-9 * scale)).tolist()


@numba.njit(cache=True)
def _dykstra(Y, rows, lo, hi, tol, feas_tol, max_sweeps):
    """Project Y onto {X >= 0} cap the slabs lo_k <= rows_k . (X 1) <= hi_k.

    Slab corrections are rank one (a multiple of rows_k 1^T), so Dykstra's
    increment for slab k is a single scalar q[k].
    """
    L, F = Y.shape
    m = rows.shape[0]
    X = Y.copy()
    P = np.zeros((L, F))          # orthant increment
    q = np.zeros(m)
    nz2 = np.empty(m)
    for k in range(m):
        s = 0.0
        for l in range(L):
            s += rows[k, l] * rows[k, l]
        nz2[k] = s * F
    s_row = np.empty(L)
    for sweep in range(max_sweeps):
        # slabs, carried out on the row sums with a per-label shift
        shift = np.zeros(L)
        for l in range(L):
            t = 0.0
            for f in range(F):
                t += X[l, f]
            s_row[l] = t
        for k in range(m):
            v = 0.0
            for l in range(L):
                v += rows[k, l] * (s_row[l] + F * shift[l])
            vy = v + q[k] * nz2[k]
            target = min(max(vy, lo[k]), hi[k])
            t = (target - vy) / nz2[k]
            c = q[k] + t
            for l in range(L):
                shift[l] += c * rows[k, l]
            q[k] = -t
        # orthant
        change = 0.0
        norm = 0.0
        for l in range(L):
            for f in range(F):
                y = X[l, f] + shift[l] + P[l, f]
                x = y if y > 0.0 else 0.0
                P[l, f] = y - x
                d = x - X[l, f]
                change += d * d
                norm += x * x
                X[l, f] = x
        # a still iterate is not enough: the increments may still be moving
        if change <= tol * tol * max(norm, 1e-300):
            worst = 0.0
            for k in range(m):
                v = 0.0
                for l in range(L):
                    t = 0.0
                    for f in range(F):
                        t += X[l, f]
                    v += rows[k, l] * t
                scale = max(1.0, abs(v))
                worst = max(worst, (lo[k] - v) / scale, (v - hi[k]) / scale)
            if worst <= feas_tol:
                return X, sweep + 1
    return X, max_sweeps


class _Projector:
    def __init__(self, rows, lo, hi, tol=1e-14, feas_tol=1e-12, max_sweeps=100000):
        self.rows, self.lo, self.hi, self.groups = _reduce_constraints(rows, lo, hi)
        self.rows = np.ascontiguousarray(self.rows)
        self.tol = tol
        self.feas_tol = feas_tol
        self.max_sweeps = max_sweeps

    def __call__(self, Y):
        if self.rows.shape[0] == 0:
            return np.maximum(Y, 0.0)
        X, sweeps = _dykstra(np.ascontiguousarray(Y, dtype=float), self.rows, self.lo,
                             self.hi, self.tol, self.feas_tol, self.max_sweeps)
        if sweeps >= self.max_sweeps:
            log.warning("alternating projection stopped after %d sweeps", sweeps)
        return X


def kkt_residual(qp, theta, project=None):
    """Gradient-mapping norm ||theta - P(theta - grad/Lg)|| relative to max(1, ||theta||).

    Lg = 2 lambda_max(A) is the Lipschitz constant of the gradient.
    """
    project = project or _Projector(qp.rows, qp.lo, qp.hi)
    lg = max(2.0 * np.linalg.eigvalsh(qp.A).max(), 1e-300)
    step = theta - project(theta - qp.gradient(theta) / lg)
    return float(np.linalg.norm(step) / max(1.0, np.linalg.norm(theta)))


def solve_qp(qp, bounds=None, tol=1e-9, max_iter=200000, theta0=None):
    """Accelerated projected gradient with restarts; Dykstra projections.

    ``bounds`` = (alpha_min, alpha_max) overrides the bounds stored in ``qp``.
    Returns LabelParameters whose ``report`` holds the objective, the KKT
    residual and the worst constraint violation.
    """
    if bounds is not None:
        qp = dataclasses.replace(qp, lo=bounds[0], hi=bounds[1])
    violated = _feasibility(*_reduce_constraints(qp.rows, qp.lo, qp.hi)[:3])
    if violated:
        groups = _reduce_constraints(qp.rows, qp.lo, qp.hi)[3]
        ids = sorted(int(i) for k in violated for i in groups[k])
        raise Infeasible(f"density bounds cannot all be met ({len(ids)} simplices)", ids)
    project = _Projector(qp.rows, qp.lo, qp.hi)
    L, F = qp.b.shape
    lg = 2.0 * np.linalg.eigvalsh(qp.A).max()
    theta = project(np.zeros((L, F)) if theta0 is None else np.asarray(theta0, float))
    if lg <= 0:
        return _params(qp, theta, 0.0, 0)
    y = theta.copy()
    tk = 1.0
    f = qp.objective(theta)
    res = np.inf
    for it in range(1, max_iter + 1):
        new = project(y - qp.gradient(y) / lg)
        fn = qp.objective(new)
        if fn > f:
            # adaptive restart: fall back to a plain projected-gradient step
            y = theta
            tk = 1.0
            new = project(theta - qp.gradient(theta) / lg)
            fn = qp.objective(new)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        y = new + ((tk - 1.0) / t_next) * (new - theta)
        tk = t_next
        theta, f = new, fn
        if it % 10 == 0 or it == 1:
            res = kkt_residual(qp, theta, project)
            if res < tol:
                return _params(qp, theta, res, it)
    raise MaxIterations(f"QP not solved in {max_iter} iterations (KKT residual {res:.3g})")


def _params(qp, theta, res, it):
    dens = qp.densities(theta)
    scale = np.maximum(1.0, np.abs(dens))
    viol = np.maximum(qp.lo - dens, 0.0) + np.maximum(dens - qp.hi, 0.0)
    report = {"objective": qp.objective(theta), "sqdist": qp.objective(theta) + qp.const,
              "kkt_residual": res, "iterations": it,
              "max_violation": float((viol / scale).max()) if viol.size else 0.0}
    return LabelParameters(qp.labels, qp.features, np.maximum(theta, 0.0), report)


@dataclass
class AtlasResult:
    theta: LabelParameters
    registration: object
    trace: list
    sigma: float

    @property
    def a(self):
        return self.registration.a


def alternate_minimize(atlas, target, metric, config, rounds=3, mode=CELL_TYPE,
                       literal_alpha=False, qp_tol=1e-9):
    """Alternate the theta QP (atlas at the current deformation) and registration.

    ``trace`` records the full objective kinetic + sqdist / sigma^2 after each
    phase. sigma is fixed at the first round so the trace is comparable.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    a = None
    sigma = config.sigma
    x = atlas.family.vertices
    kinetic = 0.0
    trace = []
    params = reg = None
    for r in range(rounds):
        qp = assemble_qp(atlas, target, metric, mode, x=x, literal_alpha=literal_alpha)
        params = solve_qp(qp, tol=qp_tol, theta0=None if params is None else params.theta)
        imputed = imputed_varifold(atlas, params, strict=False)
        if sigma is None:
            d0 = params.report["sqdist"]
            sigma = 0.1 * np.sqrt(d0) if d0 > 0 else 1.0
        trace.append({"round": r, "phase": "qp", "objective": kinetic + params.report["sqdist"] / sigma ** 2,
                      "kkt_residual": params.report["kkt_residual"]})
        cfg = dataclasses.replace(config, sigma=sigma)
        reg = register(imputed, target, metric, cfg, a0=a)
        a = reg.a
        x = reg.ztraj[-1]
        kinetic = reg.kinetic
        trace.append({"round": r, "phase": "register", "objective": reg.objective,
                      "status": reg.status})
        log.info("atlas round %d objective %.6g", r, reg.objective)
    return AtlasResult(params, reg, trace, float(sigma))


def full_objective(atlas, params, target, metric, config, a):
    """kinetic(a) + ||phi . imputed - target||^2 / sigma^2 (config.sigma must be set)."""
    imputed = imputed_varifold(atlas, params, strict=False)
    return Problem(imputed, target, metric, config).objective(a)
