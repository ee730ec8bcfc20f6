"""Saturation/deadzone nonlinearities and proximal operators of convex
measurement losses composed with an affine map.

Every prox here solves

    min_z  0.5 * ||z - x||_2^2 + g(a' z + b)

for a scalar convex loss g, in closed form.  A golden-section search oracle
(`prox_oracle_1d`, `prox_oracle_batch`) solves the same problem by brute
force and is used to cross-check the closed forms; it never calls them.

The module also exposes the scalar loss toolkit shared by the observer and
diagnostics code: loss values on scaled residuals, convex conjugates with
their proxes, and subdifferential intervals.  The sign convention sign(0) = 0
is used throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import NoConvergence, ZeroDirection

KINDS = ("quadratic", "absolute", "lasso", "huber", "ablog", "vapnik")

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_MAX_GOLDEN_ITERS = 200


def sat(e, alpha):
    """Saturate e to the interval [-alpha, alpha]."""
    return np.clip(e, -alpha, alpha)


def deadzone(e):
    """Unit deadzone, the complement of unit saturation: e - sat(e, 1)."""
    return e - np.clip(e, -1.0, 1.0)


@dataclass(frozen=True)
class AffineForm:
    """Affine functional z -> a' z + b."""

    a: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.atleast_1d(np.asarray(self.a, dtype=float)))
        object.__setattr__(self, "b", float(self.b))

    @property
    def norm_sq(self) -> float:
        return float(self.a @ self.a)


@dataclass(frozen=True)
class LossSpec:
    """Parameters of one scalar measurement loss.

    Args:
        kind: one of "quadratic", "absolute", "lasso", "huber", "ablog",
            "vapnik".
        lam: positive residual weight.  The observer applies the loss to
            lam * (y_i - c_i' z); for the lasso kind lam is the quadratic
            fidelity weight of the loss itself.
        gamma: sparsity penalty weight, lasso only.
        mu: curvature parameter, huber and ablog only.
        epsilon: insensitive tube half-width, vapnik only (may be 0).
        alpha: nonnegative outer scale used by the scalar prox operators.
    """

    kind: str
    lam: float = 1.0
    gamma: Optional[float] = None
    mu: Optional[float] = None
    epsilon: Optional[float] = None
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind: {self.kind!r}")
        if not self.lam > 0:
            raise ValueError("lam must be strictly positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.kind == "lasso":
            if self.gamma is None or not self.gamma > 0:
                raise ValueError("lasso needs gamma > 0")
        elif self.gamma is not None:
            raise ValueError(f"gamma does not apply to {self.kind}")
        if self.kind in ("huber", "ablog"):
            if self.mu is None or not self.mu > 0:
                raise ValueError(f"{self.kind} needs mu > 0")
        elif self.mu is not None:
            raise ValueError(f"mu does not apply to {self.kind}")
        if self.kind == "vapnik":
            if self.epsilon is None or self.epsilon < 0:
                raise ValueError("vapnik needs epsilon >= 0")
        elif self.epsilon is not None:
            raise ValueError(f"epsilon does not apply to {self.kind}")

    @classmethod
    def quadratic(cls, lam=1.0, alpha=1.0):
        return cls("quadratic", lam=lam, alpha=alpha)

    @classmethod
    def absolute(cls, lam=1.0, alpha=1.0):
        return cls("absolute", lam=lam, alpha=alpha)

    @classmethod
    def lasso(cls, lam=1.0, gamma=1.0):
        return cls("lasso", lam=lam, gamma=gamma)

    @classmethod
    def huber(cls, lam=1.0, mu=1.0, alpha=1.0):
        return cls("huber", lam=lam, mu=mu, alpha=alpha)

    @classmethod
    def ablog(cls, lam=1.0, mu=1.0, alpha=1.0):
        return cls("ablog", lam=lam, mu=mu, alpha=alpha)

    @classmethod
    def vapnik(cls, lam=1.0, epsilon=0.0, alpha=1.0):
        return cls("vapnik", lam=lam, epsilon=epsilon, alpha=alpha)


@dataclass(frozen=True)
class ProxResult:
    """Minimizer of a prox problem, plus the sparse component for lasso."""

    z_star: np.ndarray
    phi_star: Optional[float] = None


def _direction(form: AffineForm):
    nsq = form.norm_sq
    if nsq == 0.0:
        raise ZeroDirection("affine direction a is zero")
    return form.a, nsq


def prox_absolute(x, form: AffineForm, alpha: float) -> ProxResult:
    """Prox of alpha * |a'z + b|."""
    x = np.asarray(x, dtype=float)
    a, nsq = _direction(form)
    if alpha == 0.0:
        return ProxResult(x.copy())
    e = float(a @ x) + form.b
    z = x - alpha * float(sat(e / (alpha * nsq), 1.0)) * a
    return ProxResult(z)


def prox_lasso(x, form: AffineForm, lam: float, gamma: float) -> ProxResult:
    """Joint prox of (lam/2)(a'z + b - phi)^2 + gamma*|phi| over (z, phi)."""
    x = np.asarray(x, dtype=float)
    a, nsq = _direction(form)
    e = float(a @ x) + form.b
    eta = gamma * (1.0 / lam + nsq)
    rho = e / eta
    z = x - gamma * float(sat(rho, 1.0)) * a
    phi = eta * float(deadzone(rho))
    return ProxResult(z, phi)


def prox_huber(x, form: AffineForm, alpha: float, mu: float) -> ProxResult:
    """Prox of alpha * h_mu(a'z + b) with h_mu(e) = e^2/(2 mu) for |e| <= mu,
    |e| - mu/2 otherwise."""
    x = np.asarray(x, dtype=float)
    a, nsq = _direction(form)
    if alpha == 0.0:
        return ProxResult(x.copy())
    e = float(a @ x) + form.b
    z = x - alpha * float(sat(e / (mu + alpha * nsq), 1.0)) * a
    return ProxResult(z)


def prox_ablog(x, form: AffineForm, alpha: float, mu: float) -> ProxResult:
    """Prox of alpha * L_mu(a'z + b) with L_mu(e) = |e| - ln(1 + mu|e|)/mu."""
    x = np.asarray(x, dtype=float)
    a, nsq = _direction(form)
    e = float(a @ x) + form.b
    s = (e > 0.0) - (e < 0.0)
    if s == 0 or alpha == 0.0:
        return ProxResult(x.copy())
    r = mu * e - s * (1.0 + alpha * mu * nsq)
    disc = r * r + 4.0 * mu * abs(e)
    omega = (r + s * math.sqrt(disc)) / (2.0 * mu)
    z = x - alpha * mu * omega / (1.0 + s * mu * omega) * a
    return ProxResult(z)


def prox_vapnik(x, form: AffineForm, alpha: float, epsilon: float) -> ProxResult:
    """Prox of alpha * max(|a'z + b| - epsilon, 0)."""
    if epsilon == 0.0:
        # the tube degenerates to the absolute loss
        return prox_absolute(x, form, alpha)
    x = np.asarray(x, dtype=float)
    a, nsq = _direction(form)
    if alpha == 0.0:
        return ProxResult(x.copy())
    e = float(a @ x) + form.b
    sigma = epsilon + alpha * nsq
    if abs(e) > sigma:
        d = math.copysign(1.0, e)
    elif abs(e) < epsilon:
        d = 0.0
    else:
        d = (e - epsilon * math.copysign(1.0, e)) / (sigma - epsilon)
    z = x - alpha * d * a
    return ProxResult(z)


def prox_quadratic(x, form: AffineForm, alpha: float) -> ProxResult:
    """Prox of (alpha/2)(a'z + b)^2."""
    x = np.asarray(x, dtype=float)
    a, nsq = _direction(form)
    e = float(a @ x) + form.b
    z = x - alpha * e / (1.0 + alpha * nsq) * a
    return ProxResult(z)


def prox_closed_form(x, form: AffineForm, loss: LossSpec) -> ProxResult:
    """Dispatch to the closed-form prox matching loss.kind."""
    k = loss.kind
    if k == "quadratic":
        return prox_quadratic(x, form, loss.alpha)
    if k == "absolute":
        return prox_absolute(x, form, loss.alpha)
    if k == "lasso":
        return prox_lasso(x, form, loss.lam, loss.gamma)
    if k == "huber":
        return prox_huber(x, form, loss.alpha, loss.mu)
    if k == "ablog":
        return prox_ablog(x, form, loss.alpha, loss.mu)
    return prox_vapnik(x, form, loss.alpha, loss.epsilon)


# ---------------------------------------------------------------------------
# golden-section oracle


def _lasso_inner_min(u: float, lam: float, gamma: float, tol: float):
    """Minimize (lam/2)(u - phi)^2 + gamma|phi| over phi by golden section."""
    lo, hi = -abs(u), abs(u)
    if hi == lo:
        return 0.0, 0.0

    def q(phi):
        d = u - phi
        return 0.5 * lam * d * d + gamma * abs(phi)

    width = hi - lo
    n = max(1, min(_MAX_GOLDEN_ITERS, int(math.ceil(math.log(tol / width) / math.log(_INV_PHI)))))
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    qc, qd = q(c), q(d)
    for _ in range(n):
        if qc < qd:
            hi, d, qd = d, c, qc
            c = hi - _INV_PHI * (hi - lo)
            qc = q(c)
        else:
            lo, c, qc = c, d, qd
            d = lo + _INV_PHI * (hi - lo)
            qd = q(d)
    phi = 0.5 * (lo + hi)
    return q(phi), phi


def _scalar_objective(loss: LossSpec, inner_tol: float) -> Callable[[float], float]:
    """Value of the composed loss as a function of u = a'z + b."""
    k = loss.kind
    alpha = loss.alpha
    if k == "quadratic":
        return lambda u: 0.5 * alpha * u * u
    if k == "absolute":
        return lambda u: alpha * abs(u)
    if k == "huber":
        mu = loss.mu
        return lambda u: alpha * (u * u / (2.0 * mu) if abs(u) <= mu else abs(u) - 0.5 * mu)
    if k == "ablog":
        mu = loss.mu
        return lambda u: alpha * (abs(u) - math.log1p(mu * abs(u)) / mu)
    if k == "vapnik":
        eps = loss.epsilon
        return lambda u: alpha * max(abs(u) - eps, 0.0)
    lam, gamma = loss.lam, loss.gamma
    return lambda u: _lasso_inner_min(u, lam, gamma, inner_tol)[0]


def prox_oracle_1d(x, form: AffineForm, loss: LossSpec, tol: float = 1e-10,
                   max_expand: int = 60) -> ProxResult:
    """Brute-force prox by bracketing plus golden-section search.

    Any minimizer has the shape z = x - s*a, so the search runs over the
    scalar s.  The bracket uses that the objective dominates 0.5*kappa*s^2,
    which confines the minimizer to |s| <= sqrt(2 F(0) / kappa).

    Args:
        x: point the prox is taken at.
        form: affine functional a'z + b.
        loss: loss description; loss.alpha scales every kind except lasso.
        tol: absolute tolerance on the scalar coordinate s.
        max_expand: bracket doubling budget before giving up.

    Raises:
        NoConvergence: the bracket never contained the minimizer.
    """
    x = np.asarray(x, dtype=float)
    a, kappa = _direction(form)
    e0 = float(a @ x) + form.b
    g = _scalar_objective(loss, min(tol, 1e-11))

    def f_of_s(s):
        return 0.5 * kappa * s * s + g(e0 - kappa * s)

    f0 = f_of_s(0.0)
    half = 1.0
    expansions = 0
    while 0.5 * kappa * half * half < f0:
        half *= 2.0
        expansions += 1
        if expansions > max_expand:
            raise NoConvergence("bracket expansion exceeded budget")
    half *= 2.0  # safety margin so the minimizer is strictly interior
    lo, hi = -half, half

    width = hi - lo
    n = max(1, min(_MAX_GOLDEN_ITERS, int(math.ceil(math.log(tol / width) / math.log(_INV_PHI)))))
    c = hi - _INV_PHI * (hi - lo)
    d = lo + _INV_PHI * (hi - lo)
    fc, fd = f_of_s(c), f_of_s(d)
    for _ in range(n):
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _INV_PHI * (hi - lo)
            fc = f_of_s(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + _INV_PHI * (hi - lo)
            fd = f_of_s(d)
    s = 0.5 * (lo + hi)
    z = x - s * a
    if loss.kind == "lasso":
        _, phi = _lasso_inner_min(e0 - kappa * s, loss.lam, loss.gamma, min(tol, 1e-11))
        return ProxResult(z, phi)
    return ProxResult(z)


def _vector_objective(loss: LossSpec, inner_iters: int):
    """Vectorized counterpart of _scalar_objective for batched search."""
    k = loss.kind
    alpha = loss.alpha
    if k == "quadratic":
        return lambda u: 0.5 * alpha * u * u
    if k == "absolute":
        return lambda u: alpha * np.abs(u)
    if k == "huber":
        mu = loss.mu
        return lambda u: alpha * np.where(np.abs(u) <= mu, u * u / (2.0 * mu), np.abs(u) - 0.5 * mu)
    if k == "ablog":
        mu = loss.mu
        return lambda u: alpha * (np.abs(u) - np.log1p(mu * np.abs(u)) / mu)
    if k == "vapnik":
        eps = loss.epsilon
        return lambda u: alpha * np.maximum(np.abs(u) - eps, 0.0)
    lam, gamma = loss.lam, loss.gamma
    return lambda u: _lasso_inner_min_vec(u, lam, gamma, inner_iters)[0]


def _lasso_inner_min_vec(u: np.ndarray, lam: float, gamma: float, iters: int):
    lo = -np.abs(u)
    hi = np.abs(u)

    def q(phi):
        d = u - phi
        return 0.5 * lam * d * d + gamma * np.abs(phi)

    for _ in range(iters):
        span = hi - lo
        c = hi - _INV_PHI * span
        d = lo + _INV_PHI * span
        lower = q(c) < q(d)
        hi = np.where(lower, d, hi)
        lo = np.where(lower, lo, c)
    phi = 0.5 * (lo + hi)
    return q(phi), phi


def prox_oracle_batch(X, A, b, loss: LossSpec, tol: float = 1e-10):
    """Vectorized golden-section oracle over a batch of prox instances.

    X and A have shape (m, n), b has shape (m,).  Returns (Z, phi) where
    phi is None unless the loss is lasso.  Same algorithm as prox_oracle_1d,
    evaluated on whole arrays at once.
    """
    X = np.asarray(X, dtype=float)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    kappa = np.einsum("ij,ij->i", A, A)
    if np.any(kappa == 0.0):
        raise ZeroDirection("a batch row has zero direction")
    e0 = np.einsum("ij,ij->i", A, X) + b

    inner_iters = 90
    g = _vector_objective(loss, inner_iters)
    f0 = g(e0)
    half = 2.0 * (np.sqrt(2.0 * f0 / kappa) + tol + 1e-12)
    lo, hi = -half, half

    width = float(2.0 * half.max())
    n = max(1, min(160, int(math.ceil(math.log(tol / max(width, tol)) / math.log(_INV_PHI)))))

    def f_of_s(s):
        return 0.5 * kappa * s * s + g(e0 - kappa * s)

    for _ in range(n):
        span = hi - lo
        c = hi - _INV_PHI * span
        d = lo + _INV_PHI * span
        lower = f_of_s(c) < f_of_s(d)
        hi = np.where(lower, d, hi)
        lo = np.where(lower, lo, c)
    s = 0.5 * (lo + hi)
    Z = X - s[:, None] * A
    if loss.kind == "lasso":
        _, phi = _lasso_inner_min_vec(e0 - kappa * s, loss.lam, loss.gamma, inner_iters)
        return Z, phi
    return Z, None


# ---------------------------------------------------------------------------
# scaled-residual loss toolkit (values, conjugates, subdifferentials)
#
# The observer applies a separable loss psi(u) = sum_i psi0(u_i) to the scaled
# residual u = V^{-1}(y - C z).  Each channel term equals the per-sensor
# weight lam_i = 1/V_ii times the base loss of the raw residual, so mu and
# epsilon always describe the raw residual: expressed in the scaled variable
# the huber knee sits at lam*mu, the vapnik tube at lam*eps, and the ablog
# curvature at mu/lam.  For the lasso kind both lam and gamma sit inside the
# joint loss and the per-channel marginal on the scaled residual is
# gamma * h_{gamma/lam}(u / lam) after minimizing out the sparse component.
#
# The optional lam argument overrides loss.lam with per-channel weights.


def _soft(w, tau):
    return np.sign(w) * np.maximum(np.abs(w) - tau, 0.0)


def _lam_of(loss: LossSpec, lam):
    return loss.lam if lam is None else np.asarray(lam, dtype=float)


def _huber_knee(loss: LossSpec, lam=None):
    return _lam_of(loss, lam) * loss.mu


def _ablog_shape(loss: LossSpec, lam=None):
    return loss.mu / _lam_of(loss, lam)


def _vapnik_tube(loss: LossSpec, lam=None):
    return _lam_of(loss, lam) * loss.epsilon


def psi0_value(loss: LossSpec, u, lam=None):
    """Per-channel loss value on an already scaled residual u."""
    u = np.asarray(u, dtype=float)
    k = loss.kind
    if k == "quadratic":
        return 0.5 * u * u
    if k == "absolute":
        return np.abs(u)
    if k == "huber":
        mu = _huber_knee(loss, lam)
        return np.where(np.abs(u) <= mu, u * u / (2.0 * mu), np.abs(u) - 0.5 * mu)
    if k == "ablog":
        mu = _ablog_shape(loss, lam)
        return np.abs(u) - np.log1p(mu * np.abs(u)) / mu
    if k == "vapnik":
        return np.maximum(np.abs(u) - _vapnik_tube(loss, lam), 0.0)
    lam = _lam_of(loss, lam)
    gamma = loss.gamma
    r = u / lam
    delta = gamma / lam
    return gamma * np.where(np.abs(r) <= delta, r * r / (2.0 * delta), np.abs(r) - 0.5 * delta)


def psi0_conj_value(loss: LossSpec, p, lam=None):
    """Convex conjugate value of psi0 at a dual point p inside its domain."""
    p = np.asarray(p, dtype=float)
    k = loss.kind
    if k == "quadratic":
        return 0.5 * p * p
    if k == "absolute":
        return np.zeros_like(p)
    if k == "huber":
        return 0.5 * _huber_knee(loss, lam) * p * p
    if k == "vapnik":
        return _vapnik_tube(loss, lam) * np.abs(p)
    if k == "ablog":
        ap = np.minimum(np.abs(p), 1.0 - 1e-16)
        return (-ap - np.log1p(-ap)) / _ablog_shape(loss, lam)
    lam = _lam_of(loss, lam)
    return 0.5 * lam * p * p


def psi0_conj_prox(loss: LossSpec, w, sigma, lam=None):
    """prox_{sigma * psi0^*}(w), elementwise."""
    w = np.asarray(w, dtype=float)
    k = loss.kind
    if k == "quadratic":
        return w / (1.0 + sigma)
    if k == "absolute":
        return np.clip(w, -1.0, 1.0)
    if k == "huber":
        return np.clip(w / (1.0 + sigma * _huber_knee(loss, lam)), -1.0, 1.0)
    if k == "vapnik":
        return np.clip(_soft(w, sigma * _vapnik_tube(loss, lam)), -1.0, 1.0)
    if k == "ablog":
        mu = _ablog_shape(loss, lam)
        aw = np.abs(w)
        bq = mu + mu * aw + sigma
        disc = np.maximum(bq * bq - 4.0 * mu * mu * aw, 0.0)
        root = 2.0 * mu * aw / (bq + np.sqrt(disc))
        return np.sign(w) * np.minimum(root, 1.0 - 1e-16)
    lam = _lam_of(loss, lam)
    gamma = loss.gamma
    return np.clip(w / (1.0 + sigma * lam), -gamma / lam, gamma / lam)


def psi0_subgrad_interval(loss: LossSpec, u, ktol: float = 1e-9, lam=None):
    """Subdifferential of psi0 at u as an interval (lo, hi).

    Points within ktol of a kink get the full kink interval, which is the
    honest treatment when u comes out of a numerical solver.
    """
    u = np.asarray(u, dtype=float)
    k = loss.kind
    if k == "quadratic":
        return u, u
    if k == "absolute":
        sgn = np.sign(u)
        lo = np.where(np.abs(u) <= ktol, -1.0, sgn)
        hi = np.where(np.abs(u) <= ktol, 1.0, sgn)
        return lo, hi
    if k == "huber":
        d = np.clip(u / _huber_knee(loss, lam), -1.0, 1.0)
        return d, d
    if k == "ablog":
        mu = _ablog_shape(loss, lam)
        d = mu * u / (1.0 + mu * np.abs(u))
        return d, d
    if k == "vapnik":
        if loss.epsilon == 0.0:
            return psi0_subgrad_interval(LossSpec.absolute(lam=loss.lam), u, ktol)
        eps = _vapnik_tube(loss, lam)
        sgn = np.sign(u)
        inside = np.abs(u) < eps - ktol
        outside = np.abs(u) > eps + ktol
        lo = np.where(inside, 0.0, np.where(outside, sgn, np.minimum(0.0, sgn)))
        hi = np.where(inside, 0.0, np.where(outside, sgn, np.maximum(0.0, sgn)))
        return lo, hi
    lam = _lam_of(loss, lam)
    d = (loss.gamma / lam) * np.clip(u / loss.gamma, -1.0, 1.0)
    return d, d
