"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from ..scalar_prox import KINDS


class LossParams(BaseModel):
    kind: str = Field(pattern="^(" + "|".join(KINDS) + ")$")
    lam: float = 1.0
    gamma: Optional[float] = None
    mu: Optional[float] = None
    epsilon: Optional[float] = None
    alpha: float = 1.0


class ProxRequest(BaseModel):
    loss: LossParams
    x: List[float]
    a: List[float]
    b: float = 0.0


class ProxResponse(BaseModel):
    z: List[float]
    phi: Optional[float] = None
    oracle_gap: float


class ExperimentRequest(BaseModel):
    config: dict = Field(default_factory=dict)


class ExperimentResponse(BaseModel):
    labels: List[str]
    steady_state_error: Dict[str, float]
    dwell_sweep: Optional[Dict[int, Dict[str, float]]] = None
    csv: str
    summary: str
    config_echo: dict


class CheckRequest(BaseModel):
    config: dict


class CheckResponse(BaseModel):
    report: str
    satisfied: Dict[str, bool]


class SessionCreate(BaseModel):
    """Observer session: a system plus one loss and weighting choice.

    system is an experiment-schema system entry; x0_hat defaults to zero.
    """

    system: str = "linear"
    loss: LossParams
    weights: dict = Field(default_factory=lambda: {"kind": "identity"})
    mode: str = "componentwise"
    x0_hat: Optional[List[float]] = None


class SessionInfo(BaseModel):
    session_id: str
    t: int
    x_hat: List[float]
    n_y: int


class StepRequest(BaseModel):
    y: List[float]


class StepResponse(BaseModel):
    session_id: str
    t: int
    x_hat: List[float]
    phi: Optional[List[float]] = None
