"""Product-kernel inner products between mesh varifolds.

<mu, mu'> = sum_{c,c'} w_c w'_{c'} K1(m_c, m'_{c'}) <zeta_c, zeta'_{c'}>
with w = alpha |gamma|. Sums are brute force over all |C| |C'| pairs (an
optional 6-sigma cutoff can be switched on); the loops are compiled with
numba and reduce in a fixed order, so results are deterministic.
"""
from dataclasses import dataclass
from math import factorial

import numba
import numpy as np

from .errors import KindMismatch
from .mesh import simplex_normals, simplex_volumes
from .varifold import CATEGORICAL, COUNTS

_DOT = 0
_CAUCHY = 1

FEATURE_KINDS = ("identity", "dot", "cauchy")


@dataclass(frozen=True)
class SpatialKernel:
    """Gaussian exp(-|x-y|^2 / (2 sigma^2))."""
    sigma: float
    cutoff: bool = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("spatial kernel width must be positive")

    @property
    def _inv2s(self):
        return 0.5 / self.sigma ** 2

    @property
    def _cutoff2(self):
        return (6.0 * self.sigma) ** 2 if self.cutoff else -1.0


@dataclass(frozen=True)
class FeatureKernel:
    """Kernel on features.

    ``identity``: Kronecker delta on labels; ``dot``: Euclidean nu.nu';
    ``cauchy``: nu.nu' / (sigma^2 + |nu - nu'|^2). With ``log_scale`` the count
    vectors go through log(1 + nu) first.
    """
    kind: str = "identity"
    sigma: float = 1.0
    log_scale: bool = False

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kernel {self.kind!r}")
        if self.kind == "cauchy" and not self.sigma > 0:
            raise ValueError("cauchy kernel width must be positive")


@dataclass(frozen=True)
class KernelMetric:
    k1: SpatialKernel
    k2: FeatureKernel


def k1_eval(k1, x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    return float(np.exp(-np.sum((x - y) ** 2) * k1._inv2s))


def k1_grad1(k1, x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    return -(x - y) / k1.sigma ** 2 * k1_eval(k1, x, y)


def _feature_matrix(k2, kind, zeta):
    """Features in the form the compiled loops use, plus the loop code."""
    if k2.kind == "identity":
        if kind != CATEGORICAL:
            raise KindMismatch("identity kernel needs categorical features")
        return zeta, _DOT, 0.0
    if k2.kind == "dot":
        # on categorical laws this is the expectation of one-hot vectors
        z = np.log1p(zeta) if (k2.log_scale and kind == COUNTS) else zeta
        return z, _DOT, 0.0
    if kind != COUNTS:
        raise KindMismatch("cauchy kernel needs count-vector (Dirac) features")
    z = np.log1p(zeta) if k2.log_scale else zeta
    return z, _CAUCHY, float(k2.sigma) ** 2


def k2_inner(k2, zeta, zeta2):
    """<zeta, zeta'> under the feature kernel, for two FeatureDistributions."""
    if zeta.kind != zeta2.kind or zeta.values.shape != zeta2.values.shape:
        raise KindMismatch("feature distributions live on different spaces")
    a, code, s2sq = _feature_matrix(k2, zeta.kind, zeta.values[None])
    b, _, _ = _feature_matrix(k2, zeta2.kind, zeta2.values[None])
    return float(_feature_kernel(a, 0, b, 0, code, s2sq))


@numba.njit(cache=True)
def _feature_kernel(z1, i, z2, j, code, s2sq):
    dot = 0.0
    sq = 0.0
    for k in range(z1.shape[1]):
        a = z1[i, k]
        b = z2[j, k]
        dot += a * b
        if code == _CAUCHY:
            sq += (a - b) * (a - b)
    if code == _CAUCHY:
        return dot / (s2sq + sq)
    return dot


@numba.njit(cache=True, parallel=True)
def _field(x1, z1, x2, w2, z2, inv2s, code, s2sq, cutoff2, grad):
    """S_i = sum_j w2_j K1 K2 and G_i = sum_j w2_j K2 grad_1 K1 at x1_i."""
    n1, d = x1.shape
    n2 = x2.shape[0]
    S = np.zeros(n1)
    G = np.zeros((n1, d))
    for i in numba.prange(n1):
        s = 0.0
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for j in range(n2):
            r2 = 0.0
            for k in range(d):
                t = x1[i, k] - x2[j, k]
                r2 += t * t
            if cutoff2 > 0.0 and r2 > cutoff2:
                continue
            f = _feature_kernel(z1, i, z2, j, code, s2sq)
            if f == 0.0:
                continue
            kk = w2[j] * f * np.exp(-r2 * inv2s)
            s += kk
            if grad:
                c = -2.0 * inv2s * kk
                g0 += c * (x1[i, 0] - x2[j, 0])
                g1 += c * (x1[i, 1] - x2[j, 1])
                if d == 3:
                    g2 += c * (x1[i, 2] - x2[j, 2])
        S[i] = s
        if grad:
            G[i, 0] = g0
            G[i, 1] = g1
            if d == 3:
                G[i, 2] = g2
    return S, G


@numba.njit(cache=True, parallel=True)
def gauss_matvec(x1, x2, V, inv2s):
    """out_i = sum_j exp(-|x1_i - x2_j|^2 inv2s) V_j for V of shape (n2, q)."""
    n1 = x1.shape[0]
    n2, q = V.shape
    d = x1.shape[1]
    out = np.zeros((n1, q))
    for i in numba.prange(n1):
        for j in range(n2):
            r2 = 0.0
            for k in range(d):
                t = x1[i, k] - x2[j, k]
                r2 += t * t
            e = np.exp(-r2 * inv2s)
            for l in range(q):
                out[i, l] += e * V[j, l]
    return out


def _check_compatible(u, v):
    if u.dim != v.dim:
        raise KindMismatch(f"varifolds of dimension {u.dim} and {v.dim}")
    if u.features.kind != v.features.kind or u.features.size != v.features.size:
        raise KindMismatch("varifolds have different feature spaces")


def _side(metric, v, x=None):
    corners = v.family.corners(x)
    vol = simplex_volumes(corners)
    z, code, s2sq = _feature_matrix(metric.k2, v.features.kind, v.zeta)
    return corners.mean(axis=1), v.alpha * vol, np.ascontiguousarray(z), code, s2sq


def _inner_parts(metric, a, b):
    xa, wa, za, code, s2sq = a
    xb, wb, zb, _, _ = b
    k1 = metric.k1
    S, _ = _field(xa, za, xb, wb, zb, k1._inv2s, code, s2sq, k1._cutoff2, False)
    return float(np.dot(wa, S))


def varifold_inner(metric, u, v):
    _check_compatible(u, v)
    return _inner_parts(metric, _side(metric, u), _side(metric, v))


def varifold_sqdist(metric, u, v, clamp=True):
    _check_compatible(u, v)
    a, b = _side(metric, u), _side(metric, v)
    d2 = _inner_parts(metric, a, a) - 2 * _inner_parts(metric, a, b) + _inner_parts(metric, b, b)
    return max(d2, 0.0) if clamp else d2


def gram_matrix(metric, varifolds):
    sides = [_side(metric, v) for v in varifolds]
    n = len(sides)
    G = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            G[i, j] = G[j, i] = _inner_parts(metric, sides[i], sides[j])
    return G


class Attachment:
    """||mu_(S, x, alpha, zeta) - mu_target||^2 as a function of the vertices x.

    The target self-product is computed once.
    """

    def __init__(self, metric, template, target):
        _check_compatible(template, target)
        self.metric = metric
        self.template = template
        self.target = _side(metric, target)
        self.target_norm2 = _inner_parts(metric, self.target, self.target)

    def value(self, x=None):
        return self.value_and_grad(x, grad=False)[0]

    def value_and_grad(self, x=None, grad=True):
        fam = self.template.family
        d = fam.dim
        k1 = self.metric.k1
        xt, wt, zt, code, s2sq = self.target
        corners = fam.corners(x)
        vol = simplex_volumes(corners)
        xs = corners.mean(axis=1)
        alpha = self.template.alpha
        ws = alpha * vol
        zs = _feature_matrix(self.metric.k2, self.template.features.kind, self.template.zeta)[0]
        zs = np.ascontiguousarray(zs)
        Su, Gu = _field(xs, zs, xs, ws, zs, k1._inv2s, code, s2sq, k1._cutoff2, grad)
        St, Gt = _field(xs, zs, xt, wt, zt, k1._inv2s, code, s2sq, k1._cutoff2, grad)
        value = float(np.dot(ws, Su)) - 2.0 * float(np.dot(ws, St)) + self.target_norm2
        if not grad:
            return value, None
        # field of the second slot mu_x - mu_target
        S = Su - St
        G = Gu - Gt
        # per simplex: alpha_c |gamma_c| G_c / (d+1) on every vertex, plus
        # alpha_c S_c n_{c,j} / d! on vertex j; factor 2 from the symmetric slots
        center_term = ws[:, None] * G / (d + 1)
        per_vertex = center_term[:, None, :] + (alpha * S)[:, None, None] * simplex_normals(corners) / factorial(d)
        out = np.zeros_like(fam.vertices)
        np.add.at(out, fam.simplices.ravel(), per_vertex.reshape(-1, d))
        return value, 2.0 * out


def attachment_grad(metric, u, target):
    """Gradient of ||mu_u - mu_target||^2 with respect to u's vertices."""
    return Attachment(metric, u, target).value_and_grad()[1]
