"""Benchmark systems, dense and impulsive noise generation, trajectory
simulation, and the Monte-Carlo experiment runner.

Noise streams are counter-based and keyed by (seed, realization, purpose,
channel), so realizations are reproducible and order-independent, and a
dwell sweep reuses the same underlying draws.  The optional two-stage
update removes suspect sensors per step: a robust pass flags channels whose
residual exceeds a shrinking per-sensor threshold, then a correction pass
runs on the remaining channels only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import NonFiniteState
from .observer_core import (SystemModel, UpdateMode, WeightingPolicy,
                            update_componentwise, update_full)
from .scalar_prox import LossSpec, sat

# stream purposes inside one (seed, realization) block
_TAG_PROCESS = 0
_TAG_MEASUREMENT = 1
_TAG_SPIKE_TIMES = 2
_TAG_SPIKE_VALUES = 3


def _stream(seed: int, realization: int, tag: int, channel: int) -> np.random.Generator:
    """Independent generator for one noise channel of one realization."""
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=(int(seed), int(realization), tag, channel))))


def gen_sparse_noise(n_y: int, horizon: int, std: float, dwell: int, seed: int,
                     rate: float = 1.0, realization: int = 0) -> np.ndarray:
    """Impulsive noise matrix of shape (horizon, n_y) with a dwell-time gap.

    Candidate spike instants are drawn per channel with probability rate and
    thinned left to right so consecutive spikes are at least dwell apart.
    Kept spikes carry Gaussian(0, std^2) values drawn in spike order, so the
    k-th spike of a channel has the same value under every dwell setting.

    Args:
        n_y: number of channels.
        horizon: number of time steps.
        std: Gaussian standard deviation of the nonzero entries.
        dwell: minimum spacing between consecutive nonzero instants.
        seed: master seed; identical seeds give identical matrices.
        rate: candidate probability per instant, 1.0 packs spikes as densely
            as the dwell constraint allows.
        realization: extra key so Monte-Carlo runs get independent draws.

    Returns:
        Array (horizon, n_y); entry [t, i] is the spike value or 0.
    """
    if dwell < 1:
        raise ValueError("dwell must be at least 1")
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    zeta = np.zeros((horizon, n_y))
    if std == 0.0 or horizon == 0:
        return zeta
    for i in range(n_y):
        times = _stream(seed, realization, _TAG_SPIKE_TIMES, i)
        values = _stream(seed, realization, _TAG_SPIKE_VALUES, i)
        candidate = (np.ones(horizon, dtype=bool) if rate >= 1.0
                     else times.uniform(size=horizon) < rate)
        last = -dwell
        for t in np.flatnonzero(candidate):
            if t - last >= dwell:
                zeta[t, i] = std * values.standard_normal()
                last = t
    return zeta


@dataclass(frozen=True)
class ImpulseNoise:
    """Sparse measurement disturbance: Gaussian spikes with a dwell gap."""

    std: float = 10.0
    dwell: int = 5
    enabled: bool = True
    rate: float = 1.0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError("std must be nonnegative")
        if self.dwell < 1:
            raise ValueError("dwell must be at least 1")
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")


@dataclass(frozen=True)
class NoiseModel:
    """All disturbance sources of a run.

    dense_process and dense_measurement are half-widths of centered uniform
    supports (0 disables them); the impulsive part adds sparse Gaussian
    spikes to the measurements.  Same seed, same sequences.
    """

    dense_process: float = 0.0
    dense_measurement: float = 0.0
    impulsive: ImpulseNoise = field(default_factory=ImpulseNoise)
    seed: int = 0

    def __post_init__(self):
        if self.dense_process < 0 or self.dense_measurement < 0:
            raise ValueError("uniform support half-widths must be nonnegative")

    def draw(self, n: int, n_y: int, horizon: int, realization: int = 0):
        """Sample (w, nu, zeta): process noise (horizon, n) and the two
        measurement components (horizon + 1, n_y) for instants 0..horizon."""
        w = np.zeros((horizon, n))
        nu = np.zeros((horizon + 1, n_y))
        if self.dense_process > 0.0:
            for j in range(n):
                g = _stream(self.seed, realization, _TAG_PROCESS, j)
                w[:, j] = g.uniform(-self.dense_process, self.dense_process, size=horizon)
        if self.dense_measurement > 0.0:
            for i in range(n_y):
                g = _stream(self.seed, realization, _TAG_MEASUREMENT, i)
                nu[:, i] = g.uniform(-self.dense_measurement, self.dense_measurement,
                                     size=horizon + 1)
        if self.impulsive.enabled and self.impulsive.std > 0.0:
            zeta = gen_sparse_noise(n_y, horizon + 1, self.impulsive.std,
                                    self.impulsive.dwell, self.seed,
                                    rate=self.impulsive.rate, realization=realization)
        else:
            zeta = np.zeros((horizon + 1, n_y))
        return w, nu, zeta


@dataclass(frozen=True)
class BenchmarkSystem:
    """A system to simulate: model, initial state and known input."""

    model: SystemModel
    x0: np.ndarray
    input: Optional[Callable[[int], float]] = None
    name: str = ""

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.model.n,):
            raise ValueError(f"x0 has shape {x0.shape}, expected ({self.model.n},)")
        object.__setattr__(self, "x0", x0)


@dataclass(frozen=True)
class SimRecord:
    """One simulated run: states x_0..x_H, measurements y_0..y_H, and the
    noise kept separately (w drives states, nu + zeta corrupts outputs)."""

    bench: BenchmarkSystem
    states: np.ndarray
    measurements: np.ndarray
    w: np.ndarray
    nu: np.ndarray
    zeta: np.ndarray

    @property
    def horizon(self) -> int:
        return self.states.shape[0] - 1


def simulate(bench: BenchmarkSystem, noise: NoiseModel, horizon: int,
             realization: int = 0) -> SimRecord:
    """Run the forward recursion x_{t+1} = f_t(x_t) + w_t, y_t = C_t x_t + v_t.

    Args:
        bench: system, initial state and input.
        noise: disturbance model; v_t = nu_t + zeta_t entrywise.
        horizon: number of transition steps; states/measurements cover
            t = 0..horizon.
        realization: forwarded to the noise streams.

    Returns:
        SimRecord with all trajectories and the separated noise record.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    model = bench.model
    w, nu, zeta = noise.draw(model.n, model.n_y, horizon, realization)
    states = np.zeros((horizon + 1, model.n))
    states[0] = bench.x0
    for t in range(horizon):
        x_next = np.asarray(model.transition(t, states[t]), dtype=float) + w[t]
        if not np.all(np.isfinite(x_next)):
            raise NonFiniteState(f"simulated state at t={t + 1} is not finite")
        states[t + 1] = x_next
    measurements = np.zeros((horizon + 1, model.n_y))
    for t in range(horizon + 1):
        measurements[t] = model.C_at(t) @ states[t] + nu[t] + zeta[t]
    return SimRecord(bench=bench, states=states, measurements=measurements,
                     w=w, nu=nu, zeta=zeta)


@dataclass(frozen=True)
class DetectionState:
    """Per-sensor shrinking thresholds for bad-data removal.

    A sensor is flagged when its current residual exceeds the smallest
    residual seen so far, floored at epsilon0.
    """

    thresholds: np.ndarray
    epsilon0: float = 0.01

    @classmethod
    def fresh(cls, n_y: int, epsilon0: float = 0.01) -> "DetectionState":
        return cls(thresholds=np.full(n_y, np.inf), epsilon0=epsilon0)

    def update(self, residuals):
        """Shrink thresholds toward the residuals and flag exceedances.

        Returns:
            (next state, boolean bad mask).
        """
        r = np.abs(np.asarray(residuals, dtype=float))
        new = np.maximum(np.minimum(self.thresholds, r), self.epsilon0)
        return DetectionState(thresholds=new, epsilon0=self.epsilon0), r > new


@dataclass(frozen=True)
class ExperimentResult:
    """Error trajectory of one run or a Monte-Carlo average.

    error_norm_trace[k] is ||x_hat_t - x_t||_2 at t = k + 1 (averaged over
    realizations when several were run); steady_state_error is its mean over
    the final window.
    """

    error_norm_trace: np.ndarray
    steady_state_error: float
    config_echo: dict
    per_realization_traces: Optional[np.ndarray] = None


def _steady_mean(trace: np.ndarray, fraction: float) -> float:
    window = max(1, int(round(fraction * len(trace))))
    return float(np.mean(trace[-window:]))


def _masked_update(x_pred, y, C, W, lam_vec, V, loss, mode, good):
    """Measurement update restricted to the sensors marked good."""
    if not np.any(good):
        return x_pred
    Cg = C[good]
    yg = y[good]
    if mode.kind == "componentwise":
        z, _ = update_componentwise(x_pred, yg, Cg, W, lam_vec[good], loss)
    else:
        Vg = V[np.ix_(good, good)]
        z, _ = update_full(x_pred, yg, Cg, W, Vg, loss,
                           tol=mode.tol, max_iter=mode.max_iter)
    return z


def run_observer(traj: SimRecord, loss: LossSpec, weights: WeightingPolicy,
                 mode: Optional[UpdateMode] = None,
                 detection: Optional[DetectionState] = None,
                 x0_hat=None, corrector: Optional[LossSpec] = None,
                 steady_fraction: float = 0.1) -> ExperimentResult:
    """Drive the observer over one simulated trajectory and score it.

    Without detection each step is predict + robust update on all sensors.
    With detection each step runs two passes: the robust update supplies
    residuals that shrink the per-sensor thresholds and flag bad channels,
    then the corrector loss (default: quadratic with unit weight on linear
    systems, the robust loss itself otherwise) is applied to the remaining
    channels from the same prediction.

    Args:
        traj: output of simulate.
        loss: robust loss of the observer (and of the detection pass).
        weights: weighting policy for W_t and V_t.
        mode: update mode; defaults to the sensor-by-sensor scheme.
        detection: initial DetectionState to enable two-stage updates.
        x0_hat: initial estimate, zeros when omitted.
        corrector: loss of the correction pass when detection is enabled.
        steady_fraction: tail fraction averaged into steady_state_error.

    Returns:
        ExperimentResult for this single realization.
    """
    model = traj.bench.model
    mode = mode or UpdateMode()
    x_hat = np.zeros(model.n) if x0_hat is None else np.asarray(x0_hat, dtype=float)
    if detection is not None and corrector is None:
        corrector = LossSpec.quadratic(1.0) if model.A is not None else loss
    W, aux = weights.initial_weight(model)
    horizon = traj.horizon
    errors = np.zeros(horizon)
    det = detection
    for t in range(1, horizon + 1):
        x_pred = np.asarray(model.transition(t - 1, x_hat), dtype=float)
        if not np.all(np.isfinite(x_pred)):
            raise NonFiniteState(f"prediction at t={t} is not finite")
        W, aux = weights.advance(model, t, W, aux)
        C = model.C_at(t)
        y = traj.measurements[t]
        lam_vec = weights.lam_vector(model, loss, t) if mode.kind == "componentwise" else None
        V = weights.V_at(model, loss, t)
        if mode.kind == "componentwise":
            z, _ = update_componentwise(x_pred, y, C, W, lam_vec, loss,
                                        mode.order(model.n_y))
        else:
            z, _ = update_full(x_pred, y, C, W, V, loss,
                               tol=mode.tol, max_iter=mode.max_iter)
        if det is not None:
            det, bad = det.update(y - C @ z)
            lam_corr = (weights.lam_vector(model, corrector, t)
                        if mode.kind == "componentwise" else None)
            V_corr = weights.V_at(model, corrector, t)
            z = _masked_update(x_pred, y, C, W, lam_corr, V_corr,
                               corrector, mode, ~bad)
        if not np.all(np.isfinite(z)):
            raise NonFiniteState(f"update at t={t} is not finite")
        x_hat = z
        errors[t - 1] = float(np.linalg.norm(x_hat - traj.states[t]))
    echo = {"loss": _loss_echo(loss), "weights": weights.kind, "mode": mode.kind,
            "detection": detection is not None, "horizon": horizon,
            "steady_fraction": steady_fraction}
    return ExperimentResult(error_norm_trace=errors,
                            steady_state_error=_steady_mean(errors, steady_fraction),
                            config_echo=echo)


@dataclass(frozen=True)
class MonteCarloConfig:
    """Everything one averaged experiment needs."""

    bench: BenchmarkSystem
    loss: LossSpec
    noise: NoiseModel
    weights: WeightingPolicy = field(default_factory=WeightingPolicy.identity)
    mode: UpdateMode = field(default_factory=UpdateMode)
    horizon: int = 500
    realizations: int = 100
    detection: bool = False
    x0_hat: Optional[np.ndarray] = None
    steady_fraction: float = 0.1
    keep_traces: bool = True

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.realizations < 1:
            raise ValueError("realizations must be at least 1")
        if not 0.0 < self.steady_fraction <= 1.0:
            raise ValueError("steady_fraction must lie in (0, 1]")


def run_monte_carlo(config: MonteCarloConfig) -> ExperimentResult:
    """Average run_observer over independent realizations.

    Realization r draws its noise from streams keyed by (seed, r, ...), so
    the result does not depend on execution order and is bit-stable under
    the master seed.

    Returns:
        ExperimentResult with the pointwise mean trace; steady_state_error
        averages the final window of the mean trace.
    """
    traces = np.zeros((config.realizations, config.horizon))
    for r in range(config.realizations):
        traj = simulate(config.bench, config.noise, config.horizon, realization=r)
        det = DetectionState.fresh(config.bench.model.n_y) if config.detection else None
        res = run_observer(traj, config.loss, config.weights, config.mode,
                           detection=det, x0_hat=config.x0_hat,
                           steady_fraction=config.steady_fraction)
        traces[r] = res.error_norm_trace
    mean_trace = traces.mean(axis=0)
    echo = {"system": config.bench.name, "loss": _loss_echo(config.loss),
            "weights": config.weights.kind, "mode": config.mode.kind,
            "horizon": config.horizon, "realizations": config.realizations,
            "detection": config.detection, "seed": config.noise.seed,
            "noise": {"dense_process": config.noise.dense_process,
                      "dense_measurement": config.noise.dense_measurement,
                      "impulsive": {"std": config.noise.impulsive.std,
                                    "dwell": config.noise.impulsive.dwell,
                                    "enabled": config.noise.impulsive.enabled,
                                    "rate": config.noise.impulsive.rate}},
            "steady_fraction": config.steady_fraction}
    return ExperimentResult(
        error_norm_trace=mean_trace,
        steady_state_error=_steady_mean(mean_trace, config.steady_fraction),
        config_echo=echo,
        per_realization_traces=traces if config.keep_traces else None)


def linear_example() -> BenchmarkSystem:
    """Three-state sampled oscillator-like benchmark with two sensors.

    All eigenvalues of A lie on the unit circle, so errors neither decay nor
    blow up on their own and the estimator has to do the work.
    """
    A = np.array([[-1.0, 1.0, 0.0],
                  [-1.0, 0.0, 0.0],
                  [0.0, -1.0, -1.0]])
    B = np.array([[-1.0], [0.0], [0.0]])
    C = np.array([[1.0, 0.0, 0.0],
                  [0.0, 0.0, 1.0]])

    def u(t):
        return math.sin(0.02 * math.pi * t)

    model = SystemModel.linear(A, C, B=B, u=u)
    return BenchmarkSystem(model=model, x0=np.array([10.0, 5.0, 5.0]),
                           input=u, name="linear")


def nonlinear_example() -> BenchmarkSystem:
    """The linear benchmark plus a bounded nonlinear field and one sensor."""
    base = linear_example()
    A, B = base.model.A, base.model.B
    u = base.input
    c = np.array([[1.0, 1.0, 1.0]])

    def f(t, x):
        drift = np.array([math.sin(x[0] + x[1]),
                          math.sin(x[0]) * math.cos(x[1]),
                          float(sat(x[2], 1.0))])
        return A @ x + B @ np.atleast_1d(u(t)) + drift

    model = SystemModel(n=3, n_y=1, transition=f, observation=lambda t: c,
                        A=A, B=B, u=u)
    return BenchmarkSystem(model=model, x0=base.x0.copy(), input=u,
                           name="nonlinear")


# --- configuration schema ---------------------------------------------------
#
# Experiments are described by a plain mapping (read from YAML by the CLI):
#
#   system: linear | nonlinear
#   horizon: 500
#   realizations: 100
#   seed: 0
#   mode: componentwise | full
#   detection: false
#   weights: {kind: identity}            # or {kind: fixed, W0: ...} /
#                                        # {kind: kalman, Q: q, R: r, P0: p}
#   losses:                              # one entry per estimator column
#     - {kind: lasso, lam: 2.0, gamma: 0.1}
#     - {kind: absolute, lam: 0.1}
#   noise:
#     dense_process: 0.0                 # uniform half-width on w_t
#     dense_measurement: 0.0             # uniform half-width on nu_t
#     impulsive: {enabled: true, std: 10.0, dwell: 5, rate: 1.0}
#   dwell_sweep: [2, 5, 10, 20]          # optional steady-error sweep
#   steady_fraction: 0.1
#   x0_hat: [0, 0, 0]                    # optional initial estimate


def default_experiment_config() -> dict:
    """The benchmark setup: five robust estimators, unit W, impulses only."""
    return {
        "system": "linear",
        "horizon": 500,
        "realizations": 100,
        "seed": 0,
        "mode": "componentwise",
        "detection": False,
        "weights": {"kind": "identity"},
        "losses": [
            {"kind": "lasso", "lam": 2.0, "gamma": 0.1},
            {"kind": "absolute", "lam": 0.1},
            {"kind": "ablog", "lam": 0.1, "mu": 1000.0},
            {"kind": "huber", "lam": 0.1, "mu": 0.08},
            {"kind": "vapnik", "lam": 0.1, "epsilon": 0.07},
        ],
        "noise": {
            "dense_process": 0.0,
            "dense_measurement": 0.0,
            "impulsive": {"enabled": True, "std": 10.0, "dwell": 5, "rate": 1.0},
        },
        "steady_fraction": 0.1,
    }


def loss_from_config(entry: dict) -> LossSpec:
    """Build a LossSpec from one mapping of the config schema."""
    if not isinstance(entry, dict) or "kind" not in entry:
        raise ValueError(f"loss entry needs a 'kind' field: {entry!r}")
    known = {"kind", "lam", "gamma", "mu", "epsilon", "alpha"}
    extra = set(entry) - known
    if extra:
        raise ValueError(f"unknown loss fields: {sorted(extra)}")
    return LossSpec(**entry)


def _loss_echo(loss: LossSpec) -> dict:
    out = {"kind": loss.kind, "lam": loss.lam}
    for name in ("gamma", "mu", "epsilon"):
        v = getattr(loss, name)
        if v is not None:
            out[name] = v
    return out


def loss_label(loss: LossSpec) -> str:
    return loss.kind


def system_from_config(name: str) -> BenchmarkSystem:
    if name == "linear":
        return linear_example()
    if name == "nonlinear":
        return nonlinear_example()
    raise ValueError(f"unknown system: {name!r} (expected linear or nonlinear)")


def weights_from_config(entry: Optional[dict], n: int, n_y: int) -> WeightingPolicy:
    """Build a WeightingPolicy; scalar Q/R/P0/V entries scale identities."""
    entry = dict(entry or {"kind": "identity"})
    kind = entry.pop("kind", "identity")

    def mat(v, size):
        v = np.asarray(v, dtype=float)
        return float(v) * np.eye(size) if v.ndim == 0 else v

    if kind == "identity":
        V = entry.pop("V", None)
        policy = WeightingPolicy.identity(V=None if V is None else mat(V, n_y))
    elif kind == "fixed":
        if "W0" not in entry:
            raise ValueError("fixed weighting needs W0")
        V = entry.pop("V", None)
        policy = WeightingPolicy.fixed(mat(entry.pop("W0"), n),
                                       V=None if V is None else mat(V, n_y))
    elif kind == "kalman":
        missing = {"Q", "R", "P0"} - set(entry)
        if missing:
            raise ValueError(f"kalman weighting needs {sorted(missing)}")
        policy = WeightingPolicy.kalman(mat(entry.pop("Q"), n),
                                        mat(entry.pop("R"), n_y),
                                        mat(entry.pop("P0"), n))
    else:
        raise ValueError(f"unknown weighting kind: {kind!r}")
    if entry:
        raise ValueError(f"unknown weighting fields: {sorted(entry)}")
    return policy


def noise_from_config(entry: Optional[dict], seed: int) -> NoiseModel:
    entry = dict(entry or {})
    imp = dict(entry.pop("impulsive", {}))
    known = {"enabled", "std", "dwell", "rate"}
    extra = set(imp) - known
    if extra:
        raise ValueError(f"unknown impulsive fields: {sorted(extra)}")
    impulsive = ImpulseNoise(**imp) if imp else ImpulseNoise()
    dense_p = float(entry.pop("dense_process", 0.0))
    dense_m = float(entry.pop("dense_measurement", 0.0))
    if entry:
        raise ValueError(f"unknown noise fields: {sorted(entry)}")
    return NoiseModel(dense_process=dense_p, dense_measurement=dense_m,
                      impulsive=impulsive, seed=seed)


@dataclass(frozen=True)
class ExperimentSummary:
    """Output of one configured experiment: a column per loss plus the
    optional dwell sweep of steady-state errors."""

    labels: list
    results: dict
    dwell_sweep: Optional[dict]
    config_echo: dict

    @property
    def horizon(self) -> int:
        return len(next(iter(self.results.values())).error_norm_trace)


def run_experiment(config: dict) -> ExperimentSummary:
    """Run every configured loss (and optional dwell sweep) per the schema.

    Args:
        config: mapping following the documented schema; missing fields fall
            back to default_experiment_config values.

    Returns:
        ExperimentSummary keyed by loss label.
    """
    merged = default_experiment_config()
    merged.update(config or {})
    known = set(default_experiment_config()) | {"dwell_sweep", "x0_hat"}
    extra = set(merged) - known
    if extra:
        raise ValueError(f"unknown config fields: {sorted(extra)}")
    bench = system_from_config(merged["system"])
    noise = noise_from_config(merged.get("noise"), int(merged.get("seed", 0)))
    weights = weights_from_config(merged.get("weights"),
                                  bench.model.n, bench.model.n_y)
    mode = UpdateMode(kind=merged.get("mode", "componentwise"))
    losses = [loss_from_config(e) for e in merged["losses"]]
    labels = []
    for loss in losses:
        label = loss_label(loss)
        if label in labels:
            label = f"{label}{labels.count(label) + 1}"
        labels.append(label)
    x0_hat = merged.get("x0_hat")

    def mc(loss, dwell=None):
        nz = noise if dwell is None else replace(
            noise, impulsive=replace(noise.impulsive, dwell=int(dwell)))
        return run_monte_carlo(MonteCarloConfig(
            bench=bench, loss=loss, noise=nz, weights=weights, mode=mode,
            horizon=int(merged["horizon"]), realizations=int(merged["realizations"]),
            detection=bool(merged["detection"]), x0_hat=x0_hat,
            steady_fraction=float(merged["steady_fraction"]), keep_traces=False))

    results = {lab: mc(loss) for lab, loss in zip(labels, losses)}
    sweep = None
    if merged.get("dwell_sweep"):
        sweep = {}
        for dwell in merged["dwell_sweep"]:
            sweep[int(dwell)] = {lab: mc(loss, dwell).steady_state_error
                                 for lab, loss in zip(labels, losses)}
    echo = {k: merged[k] for k in sorted(merged)}
    return ExperimentSummary(labels=labels, results=results,
                             dwell_sweep=sweep, config_echo=echo)
