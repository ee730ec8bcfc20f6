"""Discrete-time state observer driven by proximal measurement updates.

A step predicts through the system map, then pulls the prediction toward the
new measurement by solving

    min_z  0.5 * ||W^{-1}(z - x_pred)||^2 + sum_i psi0(u_i),
    u = V^{-1}(y - C z)

either exactly over all sensors at once (`update_full`, a dual first-order
method with a duality-gap certificate) or sensor by sensor with closed-form
corrections (`update_componentwise`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Callable, Optional

import numpy as np

from .errors import (NoConvergence, NonDiagonalV, NonFiniteMeasurement,
                     NonFiniteState, SingularInput, ZeroRow)
from .scalar_prox import (LossSpec, psi0_conj_prox, psi0_conj_value,
                          psi0_subgrad_interval, psi0_value, _ablog_shape,
                          _huber_knee, _soft, _vapnik_tube)


def seq_at(seq, t: int) -> np.ndarray:
    """Resolve a constant matrix, list of matrices, or callable at time t."""
    if callable(seq):
        return np.asarray(seq(t), dtype=float)
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 3:
        return seq[t]
    return seq


def check_spd(M: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Validate symmetry and positive definiteness, return the symmetrized M."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SingularInput(f"{name} is not square")
    sym = 0.5 * (M + M.T)
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-10 * (1.0 + np.abs(M).max())):
        raise SingularInput(f"{name} is not symmetric")
    w = np.linalg.eigvalsh(sym)
    if w[0] <= 1e-12 * max(1.0, w[-1]):
        raise SingularInput(f"{name} is not positive definite (min eig {w[0]:.3e})")
    return sym


def sqrtm_psd(M: np.ndarray) -> np.ndarray:
    """Symmetric square root through an eigendecomposition."""
    M = 0.5 * (np.asarray(M, dtype=float) + np.asarray(M, dtype=float).T)
    w, U = np.linalg.eigh(M)
    w = np.maximum(w, 0.0)
    return (U * np.sqrt(w)) @ U.T


@dataclass(frozen=True)
class SystemModel:
    """Dynamics x_{t+1} = transition(t, x_t), outputs y_t = observation(t) x_t.

    A, B and u describe the linear part when one exists; they feed the
    covariance recursions and certificate checks, while `transition` is what
    the observer actually predicts with.
    """

    n: int
    n_y: int
    transition: Callable[[int, np.ndarray], np.ndarray]
    observation: Callable[[int], np.ndarray]
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    u: Optional[Callable[[int], Any]] = None
    time_invariant_obs: bool = True

    @classmethod
    def linear(cls, A, C, B=None, u=None) -> "SystemModel":
        A = np.asarray(A, dtype=float)
        C = np.atleast_2d(np.asarray(C, dtype=float))
        B_arr = None if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        if B_arr is not None and B_arr.shape[0] != A.shape[0]:
            B_arr = B_arr.T

        def f(t, x):
            x_next = A @ x
            if B_arr is not None and u is not None:
                x_next = x_next + B_arr @ np.atleast_1d(np.asarray(u(t), dtype=float))
            return x_next

        return cls(n=A.shape[0], n_y=C.shape[0], transition=f,
                   observation=lambda t: C, A=A, B=B_arr, u=u)

    def C_at(self, t: int) -> np.ndarray:
        return np.atleast_2d(np.asarray(self.observation(t), dtype=float))


@dataclass(frozen=True)
class WeightingPolicy:
    """How the state weight W_t and measurement weight V_t evolve.

    kind "identity": W_t = I throughout.
    kind "fixed": W_t = W0 throughout.
    kind "kalman": W_t^2 follows the predicted covariance of a Kalman filter
        with process/measurement covariances Q and R, so V_t^2 = R_t.

    For identity/fixed kinds, V defaults to (1/loss.lam) * I so the loss sees
    the residual scaled by lam.
    """

    kind: str = "identity"
    W0: Optional[np.ndarray] = None
    V: Optional[np.ndarray] = None
    Q: Any = None
    R: Any = None
    P0: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("identity", "fixed", "kalman"):
            raise ValueError(f"unknown weighting kind: {self.kind!r}")
        if self.kind == "fixed" and self.W0 is None:
            raise ValueError("fixed weighting needs W0")
        if self.kind == "kalman" and (self.Q is None or self.R is None or self.P0 is None):
            raise ValueError("kalman weighting needs Q, R and P0")

    @classmethod
    def identity(cls, V=None):
        return cls(kind="identity", V=None if V is None else np.asarray(V, dtype=float))

    @classmethod
    def fixed(cls, W0, V=None):
        return cls(kind="fixed", W0=check_spd(W0, "W0"),
                   V=None if V is None else np.asarray(V, dtype=float))

    @classmethod
    def kalman(cls, Q, R, P0):
        return cls(kind="kalman", Q=Q, R=R, P0=check_spd(P0, "P0"))

    def initial_weight(self, model: SystemModel):
        """Return (W_0, aux).  For the kalman kind aux is the posterior
        covariance carried between steps."""
        if self.kind == "identity":
            return np.eye(model.n), None
        if self.kind == "fixed":
            return check_spd(self.W0, "W0"), None
        P0 = check_spd(self.P0, "P0")
        return sqrtm_psd(P0), P0

    def advance(self, model: SystemModel, t_new: int, W_prev: np.ndarray, aux):
        if self.kind != "kalman":
            return W_prev, aux
        if model.A is None:
            raise ValueError("kalman weighting needs a linear transition matrix")
        A = model.A
        Q_t = check_spd(seq_at(self.Q, t_new - 1), "Q")
        P_prior = A @ aux @ A.T + Q_t
        P_prior = 0.5 * (P_prior + P_prior.T)
        C = model.C_at(t_new)
        R_t = check_spd(seq_at(self.R, t_new), "R")
        S = C @ P_prior @ C.T + R_t
        PCt = P_prior @ C.T
        P_post = P_prior - PCt @ np.linalg.solve(S, PCt.T)
        P_post = 0.5 * (P_post + P_post.T)
        return sqrtm_psd(P_prior), P_post

    def V_at(self, model: SystemModel, loss: LossSpec, t: int) -> np.ndarray:
        if self.kind == "kalman":
            return sqrtm_psd(check_spd(seq_at(self.R, t), "R"))
        if self.V is not None:
            return np.asarray(self.V, dtype=float)
        return (1.0 / loss.lam) * np.eye(model.n_y)

    def lam_vector(self, model: SystemModel, loss: LossSpec, t: int) -> np.ndarray:
        """Per-sensor residual weights 1/diag(V); V must be diagonal."""
        V = self.V_at(model, loss, t)
        if np.any(V != np.diag(np.diag(V))):
            raise NonDiagonalV("sensor-by-sensor updates need a diagonal V")
        d = np.diag(V)
        if np.any(d <= 0):
            raise SingularInput("V diagonal must be positive")
        return 1.0 / d


@dataclass(frozen=True)
class ObserverState:
    """Estimate at time t with the weight used for its measurement update."""

    t: int
    x_hat: np.ndarray
    W: np.ndarray
    phi: Optional[np.ndarray] = None
    aux: Any = None


@dataclass(frozen=True)
class UpdateMode:
    """Which measurement update to run and with what knobs.

    sensor_order applies to the componentwise kind; tol and max_iter bound
    the dual solver of the full kind.
    """

    kind: str = "componentwise"
    sensor_order: Optional[tuple] = None
    tol: float = 1e-10
    max_iter: int = 20000

    def __post_init__(self):
        if self.kind not in ("componentwise", "full"):
            raise ValueError(f"unknown update kind: {self.kind!r}")

    def order(self, n_y: int):
        if self.sensor_order is None:
            return tuple(range(n_y))
        order = tuple(int(i) for i in self.sensor_order)
        if sorted(order) != list(range(n_y)):
            raise ValueError("sensor_order must be a permutation of range(n_y)")
        return order


def predict(obs: ObserverState, model: SystemModel) -> np.ndarray:
    """One-step state prediction x_hat_{t+1|t} = f_t(x_hat_t)."""
    x_pred = np.asarray(model.transition(obs.t, obs.x_hat), dtype=float)
    if not np.all(np.isfinite(x_pred)):
        raise NonFiniteState(f"prediction at t={obs.t} is not finite")
    return x_pred


def _clip1(v: float) -> float:
    return 1.0 if v > 1.0 else (-1.0 if v < -1.0 else v)


def _sensor_step(loss: LossSpec, r0: float, kappa: float, lam: float):
    """Closed-form correction coefficient for one sensor.

    Returns (coef, phi) with the state moved by coef * W^2 c.  r0 is the raw
    residual y_i - c_i' z and kappa = c_i' W^2 c_i.  The sensor weight lam
    multiplies the base loss of r0, so mu and epsilon act on the raw
    residual scale.
    """
    k = loss.kind
    if k == "absolute":
        return lam * _clip1(r0 / (lam * kappa)), None
    if k == "quadratic":
        return lam * lam * r0 / (1.0 + lam * lam * kappa), None
    if k == "huber":
        return lam * _clip1(r0 / (loss.mu + lam * kappa)), None
    if k == "vapnik":
        eps = loss.epsilon
        sigma = eps + lam * kappa
        if abs(r0) > sigma:
            d = math.copysign(1.0, r0)
        elif abs(r0) < eps:
            d = 0.0
        else:
            d = (r0 - eps * math.copysign(1.0, r0)) / (sigma - eps)
        return lam * d, None
    if k == "ablog":
        s = (r0 > 0.0) - (r0 < 0.0)
        if s == 0:
            return 0.0, None
        mu = loss.mu
        r = mu * r0 - s * (1.0 + mu * lam * kappa)
        disc = r * r + 4.0 * mu * abs(r0)
        omega = (r + s * math.sqrt(disc)) / (2.0 * mu)
        return lam * mu * omega / (1.0 + s * mu * omega), None
    # lasso
    eta = loss.gamma * (1.0 / lam + kappa)
    rho = r0 / eta
    coef = loss.gamma * _clip1(rho)
    phi = eta * (rho - _clip1(rho))
    return coef, phi


def update_componentwise(x_prior, y, C, W, lam, loss: LossSpec,
                         sensor_order=None):
    """Relaxed measurement update, one sensor at a time.

    Starting from the prediction, sensor i moves the estimate along W^2 c_i
    by a saturated amount, so a single wild measurement can push the state by
    at most lam_i * ||W^2 c_i|| (gamma_i * ||W^2 c_i|| for lasso).

    Args:
        x_prior: predicted state.
        y: measurement vector.
        C: observation matrix, rows c_i'.
        W: SPD state weight W_t.
        lam: per-sensor residual weights (1/diag(V)).
        loss: loss description shared by every sensor.
        sensor_order: iteration order, defaults to natural order.

    Returns:
        (z, phi) with phi a per-sensor vector for lasso, else None.
    """
    x_prior = np.asarray(x_prior, dtype=float)
    y = np.asarray(y, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (C.shape[0],))
    W2 = W @ W
    order = tuple(range(C.shape[0])) if sensor_order is None else tuple(sensor_order)
    z = x_prior.copy()
    phi = np.zeros(C.shape[0]) if loss.kind == "lasso" else None
    for i in order:
        c = C[i]
        w2c = W2 @ c
        kappa = float(c @ w2c)
        if kappa <= 0.0:
            raise ZeroRow(f"observation row {i} is zero")
        r0 = float(y[i]) - float(c @ z)
        coef, phi_i = _sensor_step(loss, r0, kappa, float(lam[i]))
        z = z + coef * w2c
        if phi is not None:
            phi[i] = phi_i
    return z, phi


def _conj_grad_terms(loss: LossSpec, p, lam_arr):
    """First and second derivatives of the smooth part of psi0^* at p.

    Channels where the conjugate is an indicator contribute zeros; the kink
    of the vapnik conjugate at 0 is handled by the caller.
    """
    k = loss.kind
    if k == "quadratic":
        return p, np.ones_like(p)
    if k == "absolute":
        return np.zeros_like(p), np.zeros_like(p)
    if k == "huber":
        knee = _huber_knee(loss, lam_arr)
        return knee * p, knee * np.ones_like(p)
    if k == "vapnik":
        return _vapnik_tube(loss, lam_arr) * np.sign(p), np.zeros_like(p)
    if k == "ablog":
        mu = _ablog_shape(loss, lam_arr)
        shrink = 1.0 - np.minimum(np.abs(p), 1.0 - 1e-16)
        return p / (mu * shrink), 1.0 / (mu * shrink * shrink)
    lam_v = loss.lam if lam_arr is None else lam_arr
    return lam_v * p, lam_v * np.ones_like(p)


def _active_set_refine(Q, rhat, p, loss: LossSpec, lam_arr):
    """Newton polish of the dual point with channel regimes frozen.

    Channels sitting on their domain edge (or at the vapnik kink) stay
    fixed; the stationarity system of the remaining channels is solved
    exactly.  The caller accepts the result only if the duality gap
    improves, so misclassified regimes are harmless.
    """
    m = len(p)
    k = loss.kind
    if k == "quadratic" or k == "ablog":
        edge = np.full(m, np.inf)
    elif k == "lasso":
        lam_v = np.full(m, loss.lam) if lam_arr is None else lam_arr
        edge = loss.gamma / lam_v
    else:
        edge = np.ones(m)
    pinned = np.abs(p) >= edge * (1.0 - 1e-9)
    at_zero = np.zeros(m, dtype=bool)
    if k == "vapnik" and loss.epsilon > 0.0:
        at_zero = np.abs(p) <= 1e-9
    free = ~(pinned | at_zero)
    q = p.copy()
    q[pinned] = np.sign(p[pinned]) * edge[pinned]
    q[at_zero] = 0.0
    if not np.any(free):
        return q
    idx = np.where(free)[0]
    for _ in range(40):
        s1, s2 = _conj_grad_terms(loss, q, lam_arr)
        resid = (Q @ q - rhat + s1)[idx]
        J = Q[np.ix_(idx, idx)] + np.diag(s2[idx])
        try:
            delta = np.linalg.solve(J, resid)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(J, resid, rcond=None)[0]
        q[idx] -= delta
        cap = edge[idx] if k != "ablog" else np.full(len(idx), 1.0 - 1e-16)
        q[idx] = np.clip(q[idx], -cap, cap)
        if float(np.max(np.abs(delta))) <= 1e-15 * (1.0 + float(np.max(np.abs(q)))):
            break
        if k != "ablog":
            break
    return q


def solve_separable_prox(x0, Pinv, G, r, loss: LossSpec, lam=None,
                         tol: float = 1e-10, max_iter: int = 20000):
    """Minimize 0.5 (z-x0)' Pinv^{-1} (z-x0) + sum_i psi0((r - G z)_i).

    Works on the dual, one variable per measurement channel, by exact
    cyclic coordinate minimization (each 1-d subproblem is a conjugate
    prox in closed form), interleaved with an active-set Newton polish
    that finishes off ill-conditioned instances.  Channels that pin their
    residual at a kink land there to machine precision.  The duality gap
    upper-bounds the primal objective suboptimality, which certifies the
    answer.

    Returns:
        (z, p, gap, iters) with p the dual point, also a subgradient vector
        of the separable loss at the optimal residual.
    """
    x0 = np.asarray(x0, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    r = np.asarray(r, dtype=float)
    m = G.shape[0]
    if m == 0:
        return x0.copy(), np.zeros(0), 0.0, 0
    GP = G @ Pinv
    Q = GP @ G.T
    Q = 0.5 * (Q + Q.T)
    rhat = r - G @ x0
    diag = np.diag(Q)
    if np.any(diag <= 0.0):
        raise ZeroRow("a measurement channel has zero response")

    def gap_at(p, Qp):
        u = rhat - Qp
        return (float(p @ Qp) - float(p @ rhat)
                + float(np.sum(psi0_value(loss, u, lam)))
                + float(np.sum(psi0_conj_value(loss, p, lam))))

    def kkt_at(p, Qp):
        lo, hi = psi0_subgrad_interval(loss, rhat - Qp, lam=lam)
        return float(np.max(np.abs(p - np.clip(p, lo, hi)), initial=0.0))

    lam_arr = None if lam is None else np.broadcast_to(np.asarray(lam, dtype=float), (m,))
    p = np.zeros(m)
    Qp = np.zeros(m)
    min_gap = gap_at(p, Qp)
    best_p, best_gap, best_kkt = None, np.inf, np.inf
    if min_gap <= tol:
        best_p, best_gap, best_kkt = p.copy(), min_gap, kkt_at(p, Qp)

    def consider(p, Qp, g):
        # among tol-feasible iterates prefer the one whose dual point is most
        # consistent as a subgradient; the gap alone saturates at the float
        # floor and cannot rank points closer than ~sqrt(eps)
        nonlocal best_p, best_gap, best_kkt, min_gap
        min_gap = min(min_gap, g)
        if g <= tol:
            k = kkt_at(p, Qp)
            if k < best_kkt:
                best_p, best_gap, best_kkt = p.copy(), g, k

    max_sweeps = max(60, max_iter // m)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        moved = 0.0
        for i in range(m):
            w = p[i] - (Qp[i] - rhat[i]) / diag[i]
            lam_i = None if lam_arr is None else lam_arr[i]
            s = float(psi0_conj_prox(loss, w, 1.0 / diag[i], lam_i))
            delta = s - p[i]
            if delta != 0.0:
                p[i] = s
                Qp += delta * Q[:, i]
                moved = max(moved, abs(delta))
        g = gap_at(p, Qp)
        consider(p, Qp, g)
        stalled = moved <= 1e-16 * (1.0 + float(np.max(np.abs(p))))
        if stalled or sweeps % 8 == 0:
            q = _active_set_refine(Q, rhat, p, loss, lam_arr)
            Qq = Q @ q
            gq = gap_at(q, Qq)
            consider(q, Qq, gq)
            if gq < g or (best_p is not None and np.array_equal(best_p, q)):
                p, Qp = q, Qq
            elif stalled:
                break
            if stalled and best_kkt <= 1e-13:
                break
    if best_p is None:
        raise NoConvergence(f"dual solver gap {min_gap:.3e} > tol {tol:.3e} "
                            f"after {sweeps} sweeps")
    z = x0 + Pinv @ (G.T @ best_p)
    return z, best_p, best_gap, sweeps * m


def _scaled_observation(C, V, y, loss: LossSpec):
    """Absorb V into the observation: returns (Ctil, ytil, lam_vec).

    The separable loss then acts on u = ytil - Ctil z.  For lasso the weight
    sits inside the loss, so V must be diagonal; other losses accept any SPD V.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    V = np.asarray(V, dtype=float)
    y = np.asarray(y, dtype=float)
    diag = np.diag(V)
    is_diag = not np.any(V != np.diag(diag))
    if loss.kind == "lasso" and not is_diag:
        raise NonDiagonalV("lasso update needs a diagonal V")
    if is_diag:
        if np.any(diag <= 0):
            raise SingularInput("V diagonal must be positive")
        lam_vec = 1.0 / diag
        return lam_vec[:, None] * C, lam_vec * y, lam_vec
    check_spd(V, "V")
    Ctil = np.linalg.solve(V, C)
    ytil = np.linalg.solve(V, y)
    return Ctil, ytil, None


def update_full(x_prior, y, C, W, V, loss: LossSpec, tol: float = 1e-10,
                max_iter: int = 20000):
    """Exact measurement update over all sensors jointly.

    Quadratic losses reduce to one linear solve.  Every other loss goes
    through the dual method of solve_separable_prox with a duality-gap
    stopping rule, so the result is within tol of the true optimum in
    objective value.

    Returns:
        (z, phi) with phi the recovered sparse components for lasso.
    """
    x_prior = np.asarray(x_prior, dtype=float)
    W2 = W @ W
    Ctil, ytil, lam_vec = _scaled_observation(C, V, y, loss)
    if np.any(np.all(Ctil == 0.0, axis=1)):
        raise ZeroRow("observation matrix has a zero row")
    if loss.kind == "quadratic":
        Q = Ctil @ W2 @ Ctil.T
        p = np.linalg.solve(Q + np.eye(Q.shape[0]), ytil - Ctil @ x_prior)
        z = x_prior + W2 @ (Ctil.T @ p)
        return z, None
    z, p, gap, iters = solve_separable_prox(
        x_prior, W2, -Ctil, -ytil, loss, lam_vec, tol=tol, max_iter=max_iter)
    if loss.kind == "lasso":
        r_raw = np.asarray(y, dtype=float) - np.atleast_2d(np.asarray(C, dtype=float)) @ z
        phi = _soft(r_raw, loss.gamma / lam_vec)
        return z, phi
    return z, None


def step(obs: ObserverState, y, model: SystemModel, loss: LossSpec,
         weights: WeightingPolicy, mode: UpdateMode) -> ObserverState:
    """Advance the observer by one measurement.

    Predicts with the system map at obs.t, advances the weighting policy to
    t+1, then applies the measurement update selected by mode.  Pure: the
    input state is never mutated.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.shape != (model.n_y,):
        raise ValueError(f"measurement has shape {y.shape}, expected ({model.n_y},)")
    if not np.all(np.isfinite(y)):
        raise NonFiniteMeasurement(f"measurement at t={obs.t + 1} is not finite")
    x_pred = predict(obs, model)
    t_new = obs.t + 1
    W_new, aux_new = weights.advance(model, t_new, obs.W, obs.aux)
    C = model.C_at(t_new)
    if mode.kind == "componentwise":
        lam = weights.lam_vector(model, loss, t_new)
        z, phi = update_componentwise(x_pred, y, C, W_new, lam, loss,
                                      mode.order(model.n_y))
    else:
        V = weights.V_at(model, loss, t_new)
        z, phi = update_full(x_pred, y, C, W_new, V, loss,
                             tol=mode.tol, max_iter=mode.max_iter)
    if not np.all(np.isfinite(z)):
        raise NonFiniteState(f"update at t={t_new} is not finite")
    return ObserverState(t=t_new, x_hat=z, W=W_new, phi=phi, aux=aux_new)
