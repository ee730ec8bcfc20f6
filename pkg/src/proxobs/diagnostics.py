"""Certificates for the observer: decrease conditions, the implicit
subgradient solver, observability grammians, and the steady-error bound.

Everything here is a falsifier, not a prover: conditions quantified over all
of R^n are checked on sampled directions and scales and reported with the
worst margin found.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidDecay, NoConvergence, UnboundedF
from .observer_core import (SystemModel, WeightingPolicy, check_spd, seq_at,
                            solve_separable_prox, _scaled_observation)
from .scalar_prox import LossSpec, psi0_subgrad_interval, psi0_value


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of one sampled certificate sweep."""

    name: str
    satisfied: bool
    margin: float
    witness: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Grammian:
    """Observability grammian over the window [t0, t0+horizon]."""

    matrix: np.ndarray
    horizon: int
    t0: int

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])


@dataclass(frozen=True)
class ComposedLoss:
    """Separable loss composed with a linear map: f(v) = sum_i psi0((C v)_i).

    lam carries the per-channel sensor weights that shape each psi0 term;
    None falls back to the scalar weight stored on the loss.
    """

    loss: LossSpec
    C: np.ndarray
    lam: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "C", np.atleast_2d(np.asarray(self.C, dtype=float)))

    @classmethod
    def from_observation(cls, loss: LossSpec, C, V) -> "ComposedLoss":
        """f(v) = psi(V^-1 C v), the loss seen by the error dynamics."""
        C = np.atleast_2d(np.asarray(C, dtype=float))
        Ctil, _, lam = _scaled_observation(C, V, np.zeros(C.shape[0]), loss)
        return cls(loss=loss, C=Ctil, lam=lam)

    def value(self, v) -> float:
        u = self.C @ np.asarray(v, dtype=float)
        return float(np.sum(psi0_value(self.loss, u, self.lam)))


def subgradient_membership_residual(x, f: ComposedLoss, W, xi,
                                    iters: int = 2000) -> float:
    """Distance from xi to the subdifferential of f at x - W xi.

    The subdifferential is C' d over per-channel intervals d_i; the distance
    is found by a projected accelerated gradient method on the box, which is
    independent of how xi was produced.
    """
    W = np.asarray(W, dtype=float)
    xi = np.asarray(xi, dtype=float)
    v = np.asarray(x, dtype=float) - W @ xi
    u = f.C @ v
    lo, hi = psi0_subgrad_interval(f.loss, u, lam=f.lam)
    M = f.C
    H = M @ M.T
    L = float(np.linalg.eigvalsh(H)[-1])
    if L <= 0.0:
        return float(np.linalg.norm(xi))
    b = M @ xi
    d0, _, _, _ = np.linalg.lstsq(M.T, xi, rcond=None)
    d = np.clip(d0, lo, hi)

    def obj(d):
        r = M.T @ d - xi
        return 0.5 * float(r @ r)

    best = obj(d)
    best_d = d.copy()
    y_acc = d.copy()
    theta = 1.0
    prev = best
    for _ in range(iters):
        d_new = np.clip(y_acc - (H @ y_acc - b) / L, lo, hi)
        val = obj(d_new)
        if val < best:
            best, best_d = val, d_new.copy()
        if val > prev:
            theta = 1.0
            y_acc = d_new
        else:
            theta_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
            y_acc = d_new + ((theta - 1.0) / theta_next) * (d_new - d)
            theta = theta_next
        d = d_new
        prev = val
    return float(np.linalg.norm(M.T @ best_d - xi))


def solve_xi(x, f: ComposedLoss, W, tol: float = 1e-12,
             max_iter: int = 60000, membership_tol: float = 1e-8) -> np.ndarray:
    """The unique xi with xi in the subdifferential of f at x - W xi.

    Solved through the weighted prox v = argmin 0.5 (v-x)' W^-1 (v-x) + f(v),
    whose optimality condition is exactly the implicit equation with
    xi = W^-1 (x - v).  Membership of the result is verified before
    returning; a violation raises NoConvergence.
    """
    x = np.asarray(x, dtype=float)
    W = check_spd(W, "W")
    v, p, gap, _ = solve_separable_prox(x, W, -f.C, np.zeros(f.C.shape[0]),
                                        f.loss, f.lam, tol=tol, max_iter=max_iter)
    xi = f.C.T @ p
    # cheap certificate: project the dual point into the subgradient box at v
    u = f.C @ v
    lo, hi = psi0_subgrad_interval(f.loss, u, lam=f.lam)
    slack = float(np.linalg.norm(f.C.T @ (np.clip(p, lo, hi) - p)))
    if slack > membership_tol:
        resid = subgradient_membership_residual(x, f, W, xi)
        if resid > membership_tol:
            raise NoConvergence(f"implicit subgradient residual {resid:.3e} "
                                f"exceeds {membership_tol:.3e}")
    return xi


def eval_D(e, t: int, A_seq, C_seq, W_seq, V_seq, loss: LossSpec) -> float:
    """One-step decrease functional of the error certificate at time t >= 1.

    D = e'(A'_{t-1} W_t^-2 A_{t-1} - W_{t-1}^-2) e - 2 psi(V_{t-1}^-1 C_{t-1} e).
    Nonpositivity for all e is the drift condition behind the convergence
    guarantee.
    """
    if t < 1:
        raise ValueError("decrease functional is defined for t >= 1")
    e = np.asarray(e, dtype=float)
    A = seq_at(A_seq, t - 1)
    C = np.atleast_2d(seq_at(C_seq, t - 1))
    W_t = seq_at(W_seq, t)
    W_p = seq_at(W_seq, t - 1)
    V = seq_at(V_seq, t - 1)
    fwd = np.linalg.solve(W_t, A @ e)
    back = np.linalg.solve(W_p, e)
    f = ComposedLoss.from_observation(loss, C, V)
    return float(fwd @ fwd - back @ back) - 2.0 * f.value(e)


def _weight_trajectory(model: SystemModel, weights: WeightingPolicy, horizon: int):
    """W_t for t = 0..horizon under the policy."""
    W, aux = weights.initial_weight(model)
    Ws = [W]
    for t in range(1, horizon + 1):
        W, aux = weights.advance(model, t, W, aux)
        Ws.append(W)
    return Ws


def check_D_condition(model: SystemModel, weights: WeightingPolicy,
                      loss: LossSpec, sample_count: int = 200,
                      radius: float = 10.0, horizon: int = 1,
                      seed: int = 0) -> CertificateReport:
    """Sampled falsifier for the drift condition D_t(e) <= 0.

    Sweeps axis directions plus seeded random unit directions at several
    scales up to radius, for t = 1..horizon, and reports the worst value.
    """
    if model.A is None:
        raise ValueError("drift check needs a linear transition matrix")
    n = model.n
    Ws = _weight_trajectory(model, weights, horizon)
    rng = np.random.default_rng(seed)
    dirs = [v for i in range(n) for v in (np.eye(n)[i], -np.eye(n)[i])]
    dirs.append(np.ones(n) / math.sqrt(n))
    while len(dirs) < sample_count:
        v = rng.normal(size=n)
        dirs.append(v / np.linalg.norm(v))
    scales = radius * np.geomspace(1e-3, 1.0, 7)
    margin = -np.inf
    witness = None
    for t in range(1, horizon + 1):
        V = weights.V_at(model, loss, t - 1)
        C = model.C_at(t - 1)
        for d in dirs[:sample_count]:
            for s in scales:
                e = s * d
                val = eval_D(e, t, model.A, lambda k: C, Ws, lambda k: V, loss)
                if val > margin:
                    margin = val
                    witness = e
    satisfied = margin <= 1e-10
    return CertificateReport(name="decrease_condition", satisfied=satisfied,
                             margin=float(margin),
                             witness=None if satisfied else witness)


def eval_G(e, t: int, W, V, C, loss: LossSpec, xi=None) -> float:
    """Storage functional of the convergence argument.

    G_0(e) = e' W_0^-2 e; for t >= 1,
    G_t(e) = e' W_t^-2 e + 2 psi(V_t^-1 C_t e) + xi' W_t^2 xi, with xi the
    implicit subgradient that produced e (pass it in from the trajectory).
    """
    e = np.asarray(e, dtype=float)
    W = np.asarray(W, dtype=float)
    back = np.linalg.solve(W, e)
    quad = float(back @ back)
    if t == 0:
        return quad
    if xi is None:
        raise ValueError("t >= 1 needs the trajectory's xi")
    xi = np.asarray(xi, dtype=float)
    f = ComposedLoss.from_observation(loss, C, V)
    Wxi = W @ (W @ xi)
    return quad + 2.0 * f.value(e) + float(xi @ Wxi)


def eval_Sigma(e, t: int, T: int, model: SystemModel,
               weights: WeightingPolicy, loss: LossSpec,
               solver_tol: float = 1e-12) -> float:
    """Accumulated correction energy over the window ending at t.

    Rolls the noise-free implicit error recursion forward from e over T
    steps, summing xi_k' W_k^2 xi_k.  Strict positivity for e != 0 is the
    observability-type condition that forces the noise-free error to decay.
    """
    if T < 0 or t < T:
        raise ValueError("window needs t >= T >= 0")
    if model.A is None:
        raise ValueError("error recursion needs a linear transition matrix")
    Ws = _weight_trajectory(model, weights, t)
    A = model.A
    e_cur = np.asarray(e, dtype=float)
    total = 0.0
    for k in range(t - T + 1, t + 1):
        W_k = Ws[k]
        W2 = W_k @ W_k
        V_k = weights.V_at(model, loss, k)
        f = ComposedLoss.from_observation(loss, model.C_at(k), V_k)
        x = A @ e_cur
        xi = solve_xi(x, f, W2, tol=solver_tol)
        e_cur = x - W2 @ xi
        total += float(xi @ (W2 @ xi))
    return total


def uco_grammian(A_seq, C_seq, t0: int, T: int) -> Grammian:
    """Grammian of the stacked outputs C_k Phi(k, t0), k = t0..t0+T."""
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    C0 = np.atleast_2d(seq_at(C_seq, t0))
    n = C0.shape[1]
    blocks = [C0]
    Phi = np.eye(n)
    for k in range(t0 + 1, t0 + T + 1):
        Phi = seq_at(A_seq, k - 1) @ Phi
        blocks.append(np.atleast_2d(seq_at(C_seq, k)) @ Phi)
    Gamma = np.vstack(blocks)
    M = Gamma.T @ Gamma
    return Grammian(matrix=0.5 * (M + M.T), horizon=T, t0=t0)


def uco_equivalence_check(A_seq, C_seq, L_seq, t0: int, T: int) -> CertificateReport:
    """Observability transfer between a system and its gain-corrected closed loop.

    With Abar_k = (I - L_{k+1} C_{k+1}) A_k, positive definiteness of the
    open-loop and closed-loop grammians must agree as long as the per-step
    output deflations F_k = I - C_k L_k stay uniformly invertible.
    """
    F_svals = []
    for k in range(t0, t0 + T + 1):
        C = np.atleast_2d(seq_at(C_seq, k))
        L = seq_at(L_seq, k)
        F = np.eye(C.shape[0]) - C @ L
        s = np.linalg.svd(F, compute_uv=False)
        if s[-1] < 1e-8 or s[0] > 1e8:
            raise UnboundedF(f"output deflation at k={k} has singular values "
                             f"in [{s[-1]:.3e}, {s[0]:.3e}]")
        F_svals.extend(s)

    def Abar(k):
        C = np.atleast_2d(seq_at(C_seq, k + 1))
        L = seq_at(L_seq, k + 1)
        A = seq_at(A_seq, k)
        return (np.eye(A.shape[0]) - L @ C) @ A

    g_open = uco_grammian(A_seq, C_seq, t0, T)
    g_closed = uco_grammian(Abar, C_seq, t0, T)
    eig_open = g_open.min_eigenvalue()
    eig_closed = g_closed.min_eigenvalue()
    tol_open = 1e-10 * max(1.0, float(np.trace(g_open.matrix)))
    tol_closed = 1e-10 * max(1.0, float(np.trace(g_closed.matrix)))
    pd_open = eig_open > tol_open
    pd_closed = eig_closed > tol_closed
    satisfied = pd_open == pd_closed
    margin = min(eig_open, eig_closed)
    witness = None
    if not satisfied:
        weaker = g_open if eig_open <= eig_closed else g_closed
        witness = np.linalg.eigh(weaker.matrix)[1][:, 0]
    return CertificateReport(name="uco_equivalence", satisfied=satisfied,
                             margin=float(margin), witness=witness)


def estimate_decay(A, k_max: int = 200):
    """Fit (c, lam) with ||A^k||_2 <= c lam^k from powers up to k_max.

    A sampled estimate, not a certificate; only meaningful when the fitted
    lam comes out below 1.
    """
    A = np.asarray(A, dtype=float)
    norms = []
    P = np.eye(A.shape[0])
    for _ in range(k_max + 1):
        norms.append(np.linalg.norm(P, 2))
        P = A @ P
    norms = np.asarray(norms)
    keep = norms > 1e-280
    ks = np.arange(len(norms))[keep]
    logs = np.log(norms[keep])
    slope, intercept = np.polyfit(ks, logs, 1)
    lam = float(np.exp(slope))
    if lam >= 1.0:
        return float(np.max(norms)), lam
    c = float(np.max(norms[keep] / lam ** ks))
    return c, lam


def robustness_bound(model: SystemModel, weights: WeightingPolicy,
                     loss: LossSpec, c: float, lam_decay: float,
                     w_max: float = 0.0, horizon: int = 200) -> float:
    """Steady error bound under saturated corrections.

    R = q * delta * sqrt(n_y) * sup_t ||W_t^2 C_t' V_t^-1||_2 with
    q = c / (1 - lam_decay), plus q * w_max for bounded process noise.
    delta is the largest loss value over signed canonical residual
    directions, which caps every subgradient in the infinity norm; the cap
    needs the loss to satisfy the triangle inequality.
    """
    if not (0.0 < lam_decay < 1.0):
        raise InvalidDecay(f"decay rate {lam_decay} is not in (0, 1)")
    triangle = loss.kind == "absolute" or (loss.kind == "vapnik" and loss.epsilon == 0.0)
    if not triangle:
        raise ValueError(f"{loss.kind} loss does not satisfy the triangle inequality")
    n_y = model.n_y
    delta = 0.0
    for i in range(n_y):
        p = np.eye(n_y)[i]
        delta = max(delta, float(np.sum(psi0_value(loss, p))),
                    float(np.sum(psi0_value(loss, -p))))
    steps = horizon if weights.kind == "kalman" or not model.time_invariant_obs else 1
    Ws = _weight_trajectory(model, weights, steps)
    sup_norm = 0.0
    for t in range(1, steps + 1):
        W = Ws[t]
        C = model.C_at(t)
        V = weights.V_at(model, loss, t)
        gain = W @ W @ C.T @ np.linalg.inv(V)
        sup_norm = max(sup_norm, float(np.linalg.norm(gain, 2)))
    q = c / (1.0 - lam_decay)
    return q * delta * math.sqrt(n_y) * sup_norm + q * w_max


def report_to_text(reports) -> str:
    """Key-value rendering of certificate reports, one block per report."""
    if isinstance(reports, CertificateReport):
        reports = [reports]
    blocks = []
    for r in reports:
        lines = [f"[{r.name}]",
                 f"satisfied: {'yes' if r.satisfied else 'no'}",
                 f"margin: {r.margin:.12g}"]
        if r.witness is not None:
            vals = ", ".join(f"{v:.12g}" for v in np.asarray(r.witness).ravel())
            lines.append(f"witness: [{vals}]")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"
