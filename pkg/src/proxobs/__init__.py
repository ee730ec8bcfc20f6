"""Proximal observers for state estimation under sparse impulsive noise.

The package splits into scalar proxes (closed forms plus a search oracle),
the observer core (componentwise and full measurement updates), a Kalman
bridge, certificate diagnostics, simulation benchmarks, and front ends
(CLI and HTTP service).
"""

from .diagnostics import (CertificateReport, ComposedLoss, Grammian,
                          check_D_condition, estimate_decay, eval_D, eval_G,
                          eval_Sigma, report_to_text, robustness_bound,
                          solve_xi, subgradient_membership_residual,
                          uco_equivalence_check, uco_grammian)
from .errors import (EstimatorError, InvalidDecay, NoConvergence,
                     NonDiagonalV, NonFiniteMeasurement, NonFiniteState,
                     SingularCovariance, SingularInput, UnboundedF, ZeroDirection,
                     ZeroRow)
from .kalman_bridge import (KalmanState, NoiseCovariances,
                            information_decrease_margin, kalman_gain_sequence,
                            kf_step, weight_recursion)
from .noise_and_sim import (BenchmarkSystem, DetectionState, ExperimentResult,
                            ExperimentSummary, ImpulseNoise, MonteCarloConfig,
                            NoiseModel, SimRecord, default_experiment_config,
                            gen_sparse_noise, linear_example, loss_from_config,
                            loss_label, noise_from_config, nonlinear_example,
                            run_experiment, run_monte_carlo, run_observer,
                            simulate, system_from_config, weights_from_config)
from .observer_core import (ObserverState, SystemModel, UpdateMode,
                            WeightingPolicy, predict, solve_separable_prox,
                            step, update_componentwise, update_full)
from .scalar_prox import (KINDS, AffineForm, LossSpec, ProxResult, deadzone,
                          prox_closed_form, prox_oracle_1d, prox_oracle_batch,
                          psi0_conj_prox, psi0_conj_value,
                          psi0_subgrad_interval, psi0_value, sat)

__version__ = "0.1.0"

__all__ = [
    "AffineForm", "BenchmarkSystem", "CertificateReport", "ComposedLoss",
    "DetectionState", "EstimatorError", "ExperimentResult", "ExperimentSummary",
    "Grammian", "ImpulseNoise", "InvalidDecay", "KINDS", "KalmanState",
    "LossSpec", "MonteCarloConfig", "NoConvergence", "NoiseCovariances",
    "NoiseModel", "NonDiagonalV", "NonFiniteMeasurement", "NonFiniteState",
    "ObserverState", "ProxResult", "SimRecord", "SingularCovariance",
    "SingularInput", "SystemModel", "UnboundedF", "UpdateMode",
    "WeightingPolicy", "ZeroDirection", "ZeroRow", "check_D_condition",
    "deadzone", "default_experiment_config", "estimate_decay", "eval_D",
    "eval_G", "eval_Sigma", "gen_sparse_noise", "information_decrease_margin",
    "kalman_gain_sequence", "kf_step", "linear_example", "loss_from_config",
    "loss_label", "noise_from_config", "nonlinear_example", "predict",
    "prox_closed_form", "prox_oracle_1d", "prox_oracle_batch",
    "psi0_conj_prox", "psi0_conj_value", "psi0_subgrad_interval", "psi0_value",
    "report_to_text", "robustness_bound", "run_experiment", "run_monte_carlo",
    "run_observer", "sat", "simulate", "solve_separable_prox", "solve_xi",
    "step", "subgradient_membership_residual", "system_from_config",
    "uco_equivalence_check", "uco_grammian", "update_componentwise",
    "update_full", "weight_recursion", "weights_from_config",
]
