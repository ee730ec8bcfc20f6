"""Time-varying Kalman filter against which the proximal observer is checked.

With a quadratic loss and covariance-driven weights the proximal observer
reproduces the Kalman filter exactly, so this module doubles as a
cross-implementation oracle.  It also carries the covariance-information
inequality used by the decrease certificates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import SingularCovariance, SingularInput
from .observer_core import SystemModel, check_spd, seq_at, sqrtm_psd


@dataclass(frozen=True)
class KalmanState:
    """Posterior estimate and covariance at time t."""

    t: int
    x_hat: np.ndarray
    P: np.ndarray


@dataclass(frozen=True)
class NoiseCovariances:
    """Process and measurement covariance sequences (constant, array or callable)."""

    Q: Any
    R: Any


def kf_step(ks: KalmanState, y, model: SystemModel, cov: NoiseCovariances) -> KalmanState:
    """One predict/update cycle of the Kalman filter.

    The covariance update uses the Joseph form and is re-symmetrized, which
    keeps P positive definite over long horizons.

    Args:
        ks: current posterior state.
        y: measurement at time ks.t + 1.
        model: system with a linear transition matrix A.
        cov: process covariance Q indexed at ks.t, measurement covariance R
            indexed at ks.t + 1.

    Returns:
        KalmanState at ks.t + 1.
    """
    if model.A is None:
        raise ValueError("kf_step needs a linear transition matrix")
    A = np.asarray(model.A, dtype=float)
    if abs(np.linalg.det(A)) < 1e-12:
        warnings.warn("transition matrix is singular; covariance bounds are "
                      "not guaranteed", stacklevel=2)
    t_new = ks.t + 1
    x_pred = np.asarray(model.transition(ks.t, ks.x_hat), dtype=float)
    Q = check_spd(seq_at(cov.Q, ks.t), "Q")
    P_prior = A @ ks.P @ A.T + Q
    P_prior = 0.5 * (P_prior + P_prior.T)
    C = model.C_at(t_new)
    R = check_spd(seq_at(cov.R, t_new), "R")
    S = C @ P_prior @ C.T + R
    try:
        K = np.linalg.solve(S, C @ P_prior).T
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"innovation covariance singular at t={t_new}") from exc
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x_new = x_pred + K @ (y - C @ x_pred)
    IKC = np.eye(model.n) - K @ C
    P_new = IKC @ P_prior @ IKC.T + K @ R @ K.T
    return KalmanState(t=t_new, x_hat=x_new, P=0.5 * (P_new + P_new.T))


def weight_recursion(W_prev, A, C, Q, V):
    """Advance the state weight so the quadratic observer tracks the filter.

    Computes W with W^2 = A (W_prev^-2 + C' V^-2 C)^-1 A' + Q, the covariance
    propagation written in terms of the square-root weights.
    """
    W_prev = check_spd(W_prev, "W_prev")
    V = check_spd(V, "V")
    A = np.asarray(A, dtype=float)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.asarray(Q, dtype=float)
    if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-10 * (1.0 + np.abs(Q).max())):
        raise SingularInput("Q is not symmetric")
    W2_inv = np.linalg.inv(W_prev @ W_prev)
    V2_inv = np.linalg.inv(V @ V)
    info = W2_inv + C.T @ V2_inv @ C
    try:
        core = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise SingularInput("information matrix singular") from exc
    W2 = A @ core @ A.T + Q
    W2 = 0.5 * (W2 + W2.T)
    if np.linalg.eigvalsh(W2)[0] <= 0.0:
        raise SingularInput("weight recursion produced a non-definite matrix")
    return sqrtm_psd(W2)


def information_decrease_margin(A, S, Q) -> float:
    """Largest eigenvalue of A'(Q + A S A')^{-1} A - S^{-1}.

    Nonpositive for any SPD S, Q: propagating a covariance through the
    dynamics and adding process noise can only lose information.
    """
    A = np.asarray(A, dtype=float)
    S = check_spd(S, "S")
    Q = check_spd(Q, "Q")
    outer = Q + A @ S @ A.T
    M = A.T @ np.linalg.solve(outer, A) - np.linalg.inv(S)
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])


def kalman_gain_sequence(model: SystemModel, cov: NoiseCovariances, P0, steps: int):
    """Gains L_k = P_{k|k-1} C_k' (C_k P C_k' + R_k)^{-1} for k = 0..steps-1.

    P0 is the prior covariance at k = 0.
    """
    if model.A is None:
        raise ValueError("gain sequence needs a linear transition matrix")
    A = np.asarray(model.A, dtype=float)
    P_prior = check_spd(P0, "P0")
    gains = []
    for k in range(steps):
        C = model.C_at(k)
        R = check_spd(seq_at(cov.R, k), "R")
        S = C @ P_prior @ C.T + R
        L = np.linalg.solve(S, C @ P_prior).T
        gains.append(L)
        P_post = P_prior - L @ C @ P_prior
        P_post = 0.5 * (P_post + P_post.T)
        Q = check_spd(seq_at(cov.Q, k), "Q")
        P_prior = A @ P_post @ A.T + Q
        P_prior = 0.5 * (P_prior + P_prior.T)
    return gains
