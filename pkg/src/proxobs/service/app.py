"""FastAPI front end over the estimator library.

Stateless routes (/prox, /experiment, /check) mirror the CLI subcommands so
the CLI can run against a remote service with identical output.  Session
routes keep an observer alive between requests for streaming measurements.
"""

from __future__ import annotations

import threading
import uuid
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from ..cli import (UsageError, _objective_gap, _validate_experiment_config,
                   render_csv, render_summary, run_check)
from ..diagnostics import report_to_text
from ..errors import EstimatorError
from ..noise_and_sim import run_experiment, system_from_config, weights_from_config
from ..observer_core import ObserverState, UpdateMode, step
from ..scalar_prox import AffineForm, LossSpec, prox_closed_form, prox_oracle_1d
from .schemas import (CheckRequest, CheckResponse, ExperimentRequest,
                      ExperimentResponse, LossParams, ProxRequest,
                      ProxResponse, SessionCreate, SessionInfo, StepRequest,
                      StepResponse)


def _loss_spec(params: LossParams) -> LossSpec:
    fields = {"kind": params.kind, "lam": params.lam, "alpha": params.alpha}
    for name in ("gamma", "mu", "epsilon"):
        value = getattr(params, name)
        if value is not None:
            fields[name] = value
    try:
        return LossSpec(**fields)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def _session_info(sid: str, entry: dict) -> SessionInfo:
    obs = entry["obs"]
    return SessionInfo(session_id=sid, t=obs.t, x_hat=list(map(float, obs.x_hat)),
                       n_y=entry["model"].n_y)


def create_app() -> FastAPI:
    app = FastAPI(title="proxobs", description="proximal observer service")
    sessions: dict = {}
    lock = threading.Lock()

    @app.exception_handler(UsageError)
    async def _bad_request(_req: Request, exc: UsageError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(EstimatorError)
    async def _estimator_failure(_req: Request, exc: EstimatorError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    def _get_session(sid: str) -> dict:
        entry = sessions.get(sid)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"unknown session: {sid}")
        return entry

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/prox", response_model=ProxResponse)
    def prox(req: ProxRequest):
        """One closed-form prox evaluation cross-checked against the oracle."""
        loss = _loss_spec(req.loss)
        x = np.asarray(req.x, dtype=float)
        a = np.asarray(req.a, dtype=float)
        if a.shape != x.shape:
            raise UsageError(f"a has length {a.size}, x has length {x.size}")
        form = AffineForm(a=a, b=req.b)
        res = prox_closed_form(x, form, loss)
        oracle = prox_oracle_1d(x, form, loss)
        gap = _objective_gap(loss, form, x, res.z_star, oracle.z_star)
        phi = None if res.phi_star is None else float(res.phi_star)
        return ProxResponse(z=np.atleast_1d(res.z_star).tolist(), phi=phi,
                            oracle_gap=gap)

    @app.post("/experiment", response_model=ExperimentResponse)
    def experiment(req: ExperimentRequest):
        """Run the Monte-Carlo experiment and return CSV plus summary text."""
        config = dict(req.config)
        _validate_experiment_config(config)
        summary = run_experiment(config)
        steady = {lab: float(summary.results[lab].steady_state_error)
                  for lab in summary.labels}
        return ExperimentResponse(labels=list(summary.labels),
                                  steady_state_error=steady,
                                  dwell_sweep=summary.dwell_sweep,
                                  csv=render_csv(summary.labels, summary),
                                  summary=render_summary(summary),
                                  config_echo=summary.config_echo)

    @app.post("/check", response_model=CheckResponse)
    def check(req: CheckRequest):
        """Certificate report for a config, same text as the CLI."""
        if not req.config:
            raise UsageError("check config is empty")
        reports = run_check(dict(req.config))
        return CheckResponse(report=report_to_text(reports),
                             satisfied={rep.name: rep.satisfied for rep in reports})

    @app.post("/sessions", response_model=SessionInfo)
    def create_session(req: SessionCreate):
        """Start an observer session; measurements arrive via /step."""
        try:
            bench = system_from_config(req.system)
            weights = weights_from_config(req.weights, bench.model.n,
                                          bench.model.n_y)
        except (ValueError, TypeError) as exc:
            raise UsageError(str(exc)) from exc
        if req.mode not in ("componentwise", "full"):
            raise UsageError(f"unknown mode: {req.mode!r}")
        model = bench.model
        if req.x0_hat is None:
            x0 = np.zeros(model.n)
        else:
            x0 = np.asarray(req.x0_hat, dtype=float)
            if x0.shape != (model.n,):
                raise UsageError(f"x0_hat has length {x0.size}, state is {model.n}")
        W0, aux = weights.initial_weight(model)
        entry = {"obs": ObserverState(t=0, x_hat=x0, W=W0, aux=aux),
                 "model": model, "loss": _loss_spec(req.loss),
                 "weights": weights, "mode": UpdateMode(kind=req.mode)}
        sid = uuid.uuid4().hex
        with lock:
            sessions[sid] = entry
        return _session_info(sid, entry)

    @app.get("/sessions/{sid}", response_model=SessionInfo)
    def get_session(sid: str):
        with lock:
            return _session_info(sid, _get_session(sid))

    @app.delete("/sessions/{sid}")
    def delete_session(sid: str):
        with lock:
            _get_session(sid)
            del sessions[sid]
        return {"session_id": sid, "deleted": True}

    @app.post("/sessions/{sid}/step", response_model=StepResponse)
    def step_session(sid: str, req: StepRequest):
        """Feed one measurement to the session's observer."""
        with lock:
            entry = _get_session(sid)
            try:
                obs = step(entry["obs"], req.y, entry["model"], entry["loss"],
                           entry["weights"], entry["mode"])
            except ValueError as exc:
                raise UsageError(str(exc)) from exc
            entry["obs"] = obs
        phi: Optional[list] = None
        if obs.phi is not None:
            phi = np.atleast_1d(obs.phi).tolist()
        return StepResponse(session_id=sid, t=obs.t,
                            x_hat=list(map(float, obs.x_hat)), phi=phi)

    return app


app = create_app()
