"""Reduced LDDMM for mesh varifolds.

Controls are momenta a[k] (shape (n, d)) held constant on each of nt uniform
time steps. Vertices follow dz/dt = K_V(z, z) a with RK4. The costate and the
gradient come from the exact adjoint of the RK4 scheme, so the gradient is
that of the discrete objective

    J(a) = dt sum_k sum_ij a_ki^T K_V(z_ki, z_kj) a_kj + U(z_nt),
    U(x) = ||mu_(S, x, alpha, zeta) - mu_target||^2 / sigma^2.
"""
import logging
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import NonFinite
from .kernels import Attachment, gauss_matvec
from .mesh import simplex_volumes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FlowKernel:
    """Scalar Gaussian times the identity matrix."""
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("flow kernel width must be positive")

    @property
    def _inv2s(self):
        return 0.5 / self.sigma ** 2

    def matrix(self, z, y=None):
        y = z if y is None else y
        r2 = ((z[:, None, :] - y[None, :, :]) ** 2).sum(-1)
        return np.exp(-r2 * self._inv2s)

    def apply(self, z, a, y=None):
        """sum_j K(y_i, z_j) a_j (y defaults to z)."""
        y = z if y is None else y
        return gauss_matvec(np.ascontiguousarray(y), np.ascontiguousarray(z),
                            np.ascontiguousarray(a), self._inv2s)


@dataclass
class RegistrationConfig:
    sigma: float = None          # attachment weight 1/sigma^2; None -> 0.1 sqrt(initial sqdist)
    sigmaV: float = 1.0
    nt: int = 10
    max_iters: int = 200
    tol: float = 1e-6
    optimizer: str = "gd"        # "gd" (Armijo descent) or "lbfgs"
    armijo_c: float = 1e-4
    max_halvings: int = 40
    step: float = None           # initial step; None -> scaled to the first gradient
    grad_tol: float = 1e-12

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if int(self.nt) < 1:
            raise ValueError("nt must be >= 1")
        self.nt = int(self.nt)
        if self.optimizer not in ("gd", "lbfgs"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@numba.njit(cache=True, parallel=True)
def _vjp_z(z, a, lam, inv2s):
    """d/dz of sum_ij lam_i . K(z_i, z_j) a_j for the Gaussian scalar kernel."""
    n, d = z.shape
    out = np.zeros((n, d))
    for i in numba.prange(n):
        for j in range(n):
            r2 = 0.0
            for k in range(d):
                t = z[i, k] - z[j, k]
                r2 += t * t
            e = np.exp(-r2 * inv2s)
            la = 0.0
            for k in range(d):
                la += lam[i, k] * a[j, k] + lam[j, k] * a[i, k]
            c = -2.0 * inv2s * e * la
            for k in range(d):
                out[i, k] += c * (z[i, k] - z[j, k])
    return out


@numba.njit(cache=True, parallel=True)
def _stage_vjp(z, a, lam, mu, inv2s):
    """Fused pass: (d/dz sum_ij lam_i . K_ij a_j, K mu)."""
    n, d = z.shape
    gz = np.zeros((n, d))
    km = np.zeros((n, d))
    for i in numba.prange(n):
        for j in range(n):
            r2 = 0.0
            for k in range(d):
                t = z[i, k] - z[j, k]
                r2 += t * t
            e = np.exp(-r2 * inv2s)
            la = 0.0
            for k in range(d):
                la += lam[i, k] * a[j, k] + lam[j, k] * a[i, k]
                km[i, k] += e * mu[j, k]
            c = -2.0 * inv2s * e * la
            for k in range(d):
                gz[i, k] += c * (z[i, k] - z[j, k])
    return gz, km


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NonFinite(f"non-finite values in {what}")


def _rk4_step(z, a, h, kv):
    """One RK4 step; returns z_{k+1}, the stage points and K(z_k) a_k."""
    k1 = kv.apply(z, a)
    y2 = z + 0.5 * h * k1
    k2 = kv.apply(y2, a)
    y3 = z + 0.5 * h * k2
    k3 = kv.apply(y3, a)
    y4 = z + h * k3
    k4 = kv.apply(y4, a)
    return z + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), (z, y2, y3, y4), k1


def _forward(a, z0, kv):
    a = np.asarray(a, dtype=float)
    nt = a.shape[0]
    h = 1.0 / nt
    z = np.empty((nt + 1,) + np.shape(z0))
    z[0] = z0
    stages, kin = [], 0.0
    for k in range(nt):
        z[k + 1], st, Ka = _rk4_step(z[k], a[k], h, kv)
        stages.append(st)
        kin += h * float(np.sum(a[k] * Ka))
    _check_finite(z, "state trajectory")
    return z, stages, kin


def flow_forward(a, z0, kv):
    """State trajectory z[0..nt] for piecewise-constant momenta a[0..nt-1]."""
    return _forward(a, z0, kv)[0]


def _step_vjp(stages, a, h, kv, g):
    """Pull back the cotangent g of z_{k+1} through one RK4 step and the
    step's kinetic term h a^T K(z_k) a; returns (dJ/dz_k, dJ/da_k)."""
    y1, y2, y3, y4 = stages
    inv = kv._inv2s
    gz = g.copy()
    gk1 = h / 6.0 * g
    gk2 = h / 3.0 * g
    gk3 = h / 3.0 * g
    gk4 = h / 6.0 * g
    gy, ga = _stage_vjp(y4, a, gk4, gk4, inv)
    gz += gy
    gk3 = gk3 + h * gy
    gy, km = _stage_vjp(y3, a, gk3, gk3, inv)
    ga += km
    gz += gy
    gk2 = gk2 + 0.5 * h * gy
    gy, km = _stage_vjp(y2, a, gk2, gk2, inv)
    ga += km
    gz += gy
    gk1 = gk1 + 0.5 * h * gy
    # the kinetic term is linear in the same kernel sums at y1 = z_k
    gy, km = _stage_vjp(y1, a, gk1 + h * a, gk1 + 2.0 * h * a, inv)
    return gz + gy, ga + km


def hamiltonian(p, z, a, kv):
    """H = sum_ij p_i^T K(z_i, z_j) a_j - sum_ij a_i^T K(z_i, z_j) a_j."""
    Ka = kv.apply(z, a)
    return float(np.sum(p * Ka) - np.sum(a * Ka))


def kinetic_energy(a, ztraj, kv):
    """dt sum_k a_k^T K(z_k) a_k (rectangle rule on the step grid)."""
    nt = a.shape[0]
    return float(sum(np.sum(a[k] * kv.apply(ztraj[k], a[k])) for k in range(nt)) / nt)


def adjoint_backward(a, ztraj, terminal_grad, kv):
    """Costate p[0..nt] with p[nt] = -grad U(z(1)).

    p[k] = -dJ/dz_k for the discrete objective: the exact adjoint of the RK4
    state scheme, which integrates dp/dt = -d_z H(p, z, a) backward.
    """
    a = np.asarray(a, dtype=float)
    nt = a.shape[0]
    h = 1.0 / nt
    _, stages, _ = _forward(a, ztraj[0], kv)
    p = np.empty_like(ztraj)
    p[nt] = -np.asarray(terminal_grad, dtype=float)
    for k in range(nt - 1, -1, -1):
        gz, _ = _step_vjp(stages[k], a[k], h, kv, -p[k + 1])
        p[k] = -gz
    _check_finite(p, "costate")
    return p


class Problem:
    """Objective and gradient of the reduced problem for one template/target pair."""

    def __init__(self, template, target, metric, config, kv=None):
        self.template = template
        self.target = target
        self.metric = metric
        self.config = config
        self.kv = kv or FlowKernel(config.sigmaV)
        self.attachment = Attachment(metric, template, target)
        self.z0 = template.family.vertices
        if config.sigma is None:
            d0 = self.attachment.value()
            self.sigma = 0.1 * np.sqrt(d0) if d0 > 0 else 1.0
        else:
            self.sigma = float(config.sigma)

    @property
    def shape(self):
        return (self.config.nt,) + self.z0.shape

    def zeros(self):
        return np.zeros(self.shape)

    def terms(self, a):
        ztraj, _, kin = _forward(a, self.z0, self.kv)
        att = self.attachment.value(ztraj[-1])
        return kin, att, ztraj

    def objective(self, a):
        kin, att, _ = self.terms(a)
        return kin + att / self.sigma ** 2

    def objective_and_gradient(self, a):
        a = np.asarray(a, dtype=float)
        nt = a.shape[0]
        h = 1.0 / nt
        kv = self.kv
        ztraj, stages, kin = _forward(a, self.z0, kv)
        att, gatt = self.attachment.value_and_grad(ztraj[-1])
        w = 1.0 / self.sigma ** 2
        grad = np.empty_like(a)
        gz = w * gatt
        for k in range(nt - 1, -1, -1):
            gz, grad[k] = _step_vjp(stages[k], a[k], h, kv, gz)
        _check_finite(grad, "gradient")
        return kin + w * att, grad, {"kinetic": kin, "attachment": att, "ztraj": ztraj}


def objective(a, template, target, metric, config):
    return Problem(template, target, metric, config).objective(a)


def gradient(a, template, target, metric, config):
    return Problem(template, target, metric, config).objective_and_gradient(a)[1]


@dataclass
class RegistrationResult:
    a: np.ndarray
    ztraj: np.ndarray
    sigma: float
    objective: float
    kinetic: float
    attachment: float
    initial_attachment: float
    history: list = field(default_factory=list)
    status: str = "converged"
    iterations: int = 0
    h_drift: float = 0.0

    @property
    def line_search_failed(self):
        return self.status == "line_search_failed"

    def diagnostics(self):
        return {"status": self.status, "iterations": self.iterations, "sigma": self.sigma,
                "objective": self.objective, "kinetic": self.kinetic,
                "final_sqdist": self.attachment, "initial_sqdist": self.initial_attachment,
                "h_drift": self.h_drift, "history": self.history}


def hamiltonian_drift(a, ztraj, p, kv):
    H = np.array([hamiltonian(p[k], ztraj[k], a[k], kv) for k in range(a.shape[0])])
    scale = max(np.abs(H).max(), 1e-300)
    return float((H.max() - H.min()) / scale)


def register(template, target, metric, config, a0=None, kv=None):
    """Minimize the reduced objective from a = 0 (or ``a0``)."""
    prob = Problem(template, target, metric, config, kv)
    a = prob.zeros() if a0 is None else np.array(a0, dtype=float)
    if a.shape != prob.shape:
        raise ValueError(f"initial momenta shape {a.shape} != {prob.shape}")
    initial_att = prob.attachment.value()
    if config.optimizer == "lbfgs":
        a, status, history, it = _lbfgs(prob, a)
    else:
        a, status, history, it = _descent(prob, a)
    f, g, info = prob.objective_and_gradient(a)
    ztraj = info["ztraj"]
    terminal = prob.attachment.value_and_grad(ztraj[-1])[1] / prob.sigma ** 2
    p = adjoint_backward(a, ztraj, terminal, prob.kv)
    drift = hamiltonian_drift(a, ztraj, p, prob.kv) if np.any(a) else 0.0
    return RegistrationResult(a, ztraj, prob.sigma, f, info["kinetic"], info["attachment"],
                              initial_att, history, status, it, drift)


def _record(history, f, info):
    history.append({"objective": float(f), "kinetic": info["kinetic"],
                    "attachment": info["attachment"]})


def _descent(prob, a):
    cfg = prob.config
    f, g, info = prob.objective_and_gradient(a)
    history = []
    _record(history, f, info)
    step = cfg.step
    status = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        gnorm2 = float(np.sum(g * g))
        if gnorm2 <= cfg.grad_tol ** 2:
            status = "converged"
            it -= 1
            break
        if step is None:
            # first step moves the momenta by about a tenth of the flow kernel width
            step = 0.1 * prob.kv.sigma / np.sqrt(np.max(np.sum(g * g, axis=-1)))
        accepted = False
        for _ in range(cfg.max_halvings):
            trial = a - step * g
            try:
                ft = prob.objective(trial)
            except NonFinite:
                ft = np.inf
            if ft <= f - cfg.armijo_c * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            status = "line_search_failed"
            log.warning("line search failed at iteration %d", it)
            break
        f_old = f
        a = trial
        f, g, info = prob.objective_and_gradient(a)
        _record(history, f, info)
        step *= 2.0
        log.debug("iter %d objective %.6g step %.3g", it, f, step)
        if (f_old - f) < cfg.tol * max(abs(f_old), 1e-300):
            status = "converged"
            break
    return a, status, history, it


def _lbfgs(prob, a):
    from scipy.optimize import minimize

    cfg = prob.config
    shape = a.shape
    history = []
    cache = {}

    def fun(flat):
        f, g, info = prob.objective_and_gradient(flat.reshape(shape))
        cache["info"] = info
        cache["f"] = f
        return f, g.ravel()

    def callback(xk):
        # scipy evaluates the accepted point last, so the cache holds it
        _record(history, cache["f"], cache["info"])

    f0, _, info0 = prob.objective_and_gradient(a)
    _record(history, f0, info0)
    res = minimize(fun, a.ravel(), jac=True, method="L-BFGS-B", callback=callback,
                   options={"maxiter": cfg.max_iters, "ftol": cfg.tol, "gtol": cfg.grad_tol})
    status = "converged" if res.success else ("max_iters" if res.nit >= cfg.max_iters
                                              else "line_search_failed")
    return res.x.reshape(shape), status, history, int(res.nit)


def transport_points(a, z0, kv, points):
    """Images of ``points`` under the flow of v(t) = sum_i K(., z_i(t)) a_i(t).

    The control points and the probes are integrated together with the same
    RK4 steps, so probes placed on the control points follow them exactly.
    """
    a = np.asarray(a, dtype=float)
    nt = a.shape[0]
    h = 1.0 / nt
    z = np.array(z0, dtype=float)
    y = np.array(points, dtype=float)
    for k in range(nt):
        ak = a[k]

        def f(zz, yy):
            return kv.apply(zz, ak), kv.apply(zz, ak, yy)

        kz1, ky1 = f(z, y)
        kz2, ky2 = f(z + 0.5 * h * kz1, y + 0.5 * h * ky1)
        kz3, ky3 = f(z + 0.5 * h * kz2, y + 0.5 * h * ky2)
        kz4, ky4 = f(z + h * kz3, y + h * ky3)
        z = z + h / 6.0 * (kz1 + 2 * kz2 + 2 * kz3 + kz4)
        y = y + h / 6.0 * (ky1 + 2 * ky2 + 2 * ky3 + ky4)
    _check_finite(y, "transported points")
    return y


def flow_map(a, z0, kv):
    """The time-one map of the flow as a callable on (m, d) point arrays."""
    a = np.array(a, dtype=float)
    z0 = np.array(z0, dtype=float)
    return lambda points: transport_points(a, z0, kv, points)


def _geodesic_rhs(z, p, kv):
    # with a = p/2: dz/dt = K p / 2, dp/dt = -d_z H = -(1/2) d_z (p^T K p) / 2
    dz = 0.5 * kv.apply(z, p)
    dp = -0.25 * _vjp_z(z, p, p, kv._inv2s)
    return dz, dp


def geodesic_shoot(p0, z0, kv, nt):
    """Integrate the Hamiltonian system with a = p/2 (the stationary control)."""
    h = 1.0 / nt
    z = np.empty((nt + 1,) + np.shape(z0))
    p = np.empty_like(z)
    z[0], p[0] = z0, p0
    for k in range(nt):
        zk, pk = z[k], p[k]
        dz1, dp1 = _geodesic_rhs(zk, pk, kv)
        dz2, dp2 = _geodesic_rhs(zk + 0.5 * h * dz1, pk + 0.5 * h * dp1, kv)
        dz3, dp3 = _geodesic_rhs(zk + 0.5 * h * dz2, pk + 0.5 * h * dp2, kv)
        dz4, dp4 = _geodesic_rhs(zk + h * dz3, pk + h * dp3, kv)
        z[k + 1] = zk + h / 6.0 * (dz1 + 2 * dz2 + 2 * dz3 + dz4)
        p[k + 1] = pk + h / 6.0 * (dp1 + 2 * dp2 + 2 * dp3 + dp4)
    _check_finite(z, "geodesic")
    return z, p


def deformed_volumes(template, ztraj):
    return simplex_volumes(ztraj[-1][template.family.simplices])
