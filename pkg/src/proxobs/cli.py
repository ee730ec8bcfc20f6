"""Command-line front end: prox evaluation, simulation, experiments, checks.

Every subcommand runs in-process by default.  Passing --server URL turns the
command into a thin client that posts the same request to a running service
instance and renders its response, so scripted callers see identical output
either way.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from .diagnostics import (CertificateReport, check_D_condition, estimate_decay,
                          report_to_text, robustness_bound, uco_grammian)
from .errors import EstimatorError
from .kalman_bridge import information_decrease_margin
from .noise_and_sim import (default_experiment_config, loss_from_config,
                            noise_from_config, run_experiment,
                            system_from_config, weights_from_config)
from .observer_core import WeightingPolicy
from .scalar_prox import (AffineForm, KINDS, LossSpec, prox_closed_form,
                          prox_oracle_1d, _scalar_objective)


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


def _fmt(v: float) -> str:
    return f"{float(v):.12g}"


def _parse_vector(text: str) -> np.ndarray:
    try:
        vals = [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"not a number list: {text!r}") from exc
    if not vals:
        raise UsageError("empty vector")
    return np.array(vals)


def load_config(path) -> dict:
    """Parse a YAML config file into a dict; empty file gives {}."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config does not parse: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError("config root must be a mapping")
    return data


_TOP_LEVEL_KEYS = set(default_experiment_config()) | {"dwell_sweep", "x0_hat", "check"}


def apply_overrides(config: dict, pairs) -> dict:
    """Apply --set key=value pairs onto a config.

    Keys use dots for nesting (noise.impulsive.std=100) and integer
    segments for list items (losses.0.lam=0.2).  Values parse as YAML.
    Top-level schema keys may be introduced; nested paths must exist.
    """
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"override {pair!r} is not key=value")
        key, raw = pair.split("=", 1)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise UsageError(f"override value {raw!r} does not parse") from exc
        parts = key.split(".")
        if parts[0] not in _TOP_LEVEL_KEYS:
            raise UsageError(f"unknown config key: {parts[0]!r}")
        node = config
        for i, part in enumerate(parts[:-1]):
            nxt = _descend(node, part, key)
            if not isinstance(nxt, (dict, list)):
                raise UsageError(f"cannot descend into {'.'.join(parts[:i + 1])!r}")
            node = nxt
        last = parts[-1]
        if isinstance(node, list):
            node[_index(node, last, key)] = value
        elif len(parts) > 1 and last not in node:
            raise UsageError(f"override references missing key: {key!r}")
        else:
            node[last] = value
    return config


def _descend(node, part, key):
    if isinstance(node, list):
        return node[_index(node, part, key)]
    if part not in node:
        raise UsageError(f"override references missing key: {key!r}")
    return node[part]


def _index(node, part, key):
    try:
        idx = int(part)
    except ValueError as exc:
        raise UsageError(f"list index expected in {key!r}") from exc
    if not (0 <= idx < len(node)):
        raise UsageError(f"index {idx} out of range in {key!r}")
    return idx


def _loss_from_flags(args) -> LossSpec:
    fields = dict(kind=args.loss, lam=args.lam, alpha=args.alpha)
    if args.gamma is not None:
        fields["gamma"] = args.gamma
    if args.mu is not None:
        fields["mu"] = args.mu
    if args.eps is not None:
        fields["epsilon"] = args.eps
    try:
        return LossSpec(**fields)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_prox(args) -> int:
    """Evaluate one closed-form prox and cross-check it against the oracle."""
    loss = _loss_from_flags(args)
    x = _parse_vector(args.x)
    a = _parse_vector(args.a)
    if a.shape != x.shape:
        raise UsageError(f"a has length {a.size}, x has length {x.size}")
    if args.server:
        payload = {"loss": _loss_dict(loss), "x": x.tolist(),
                   "a": a.tolist(), "b": args.b}
        body = _post(args.server, "/prox", payload)
        _print_prox(np.array(body["z"]), body.get("phi"), body["oracle_gap"])
        return 0
    form = AffineForm(a=a, b=args.b)
    try:
        res = prox_closed_form(x, form, loss)
        oracle = prox_oracle_1d(x, form, loss)
    except EstimatorError as exc:
        raise UsageError(str(exc)) from exc
    gap = _objective_gap(loss, form, x, res.z_star, oracle.z_star)
    _print_prox(res.z_star, res.phi_star, gap)
    return 0


def _objective_gap(loss, form, x, z_closed, z_oracle) -> float:
    g = _scalar_objective(loss, 1e-11)

    def full(z):
        d = z - x
        return 0.5 * float(d @ d) + g(float(form.a @ z) + form.b)

    return abs(full(z_closed) - full(z_oracle))


def _print_prox(z, phi, gap):
    print("z:", " ".join(_fmt(v) for v in np.atleast_1d(z)))
    if phi is not None:
        print("phi:", _fmt(phi))
    print("oracle_gap:", _fmt(gap))


def _loss_dict(loss: LossSpec) -> dict:
    out = {"kind": loss.kind, "lam": loss.lam, "alpha": loss.alpha}
    if loss.gamma is not None:
        out["gamma"] = loss.gamma
    if loss.mu is not None:
        out["mu"] = loss.mu
    if loss.epsilon is not None:
        out["epsilon"] = loss.epsilon
    return out


def _validate_experiment_config(config: dict) -> dict:
    """Parse-only pass over the experiment schema; raises UsageError."""
    merged = default_experiment_config()
    merged.update(config or {})
    extra = set(merged) - (_TOP_LEVEL_KEYS - {"check"})
    try:
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        bench = system_from_config(merged["system"])
        noise_from_config(merged.get("noise"), int(merged.get("seed", 0)))
        weights_from_config(merged.get("weights"), bench.model.n, bench.model.n_y)
        for entry in merged["losses"]:
            loss_from_config(entry)
        if int(merged["horizon"]) < 1 or int(merged["realizations"]) < 1:
            raise ValueError("horizon and realizations must be positive")
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    return merged


def render_csv(labels, summary) -> str:
    """Averaged error traces as RFC-4180 text, one column per loss."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["t"] + list(labels))
    traces = [summary.results[lab].error_norm_trace for lab in labels]
    for t in range(summary.horizon):
        writer.writerow([str(t + 1)] + [_fmt(tr[t]) for tr in traces])
    return buf.getvalue()


def _write_csv(path, labels, summary):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_csv(labels, summary))


def render_summary(summary) -> str:
    lines = ["steady-state error:"]
    for lab in summary.labels:
        lines.append(f"  {lab} {_fmt(summary.results[lab].steady_state_error)}")
    if summary.dwell_sweep:
        lines.append("dwell sweep:")
        lines.append("  dwell " + " ".join(summary.labels))
        for dwell in sorted(summary.dwell_sweep):
            row = summary.dwell_sweep[dwell]
            lines.append(f"  {dwell} "
                         + " ".join(_fmt(row[lab]) for lab in summary.labels))
    return "\n".join(lines) + "\n"


def _print_experiment_summary(summary):
    print(render_summary(summary), end="")


def _run_experiment_to_csv(args, single_run: bool) -> int:
    config = load_config(args.config) if args.config else {}
    apply_overrides(config, args.set)
    if single_run:
        config["realizations"] = 1
    _validate_experiment_config(config)
    if args.server:
        body = _post(args.server, "/experiment", {"config": config})
        with open(args.output, "w", encoding="utf-8", newline="") as fh:
            fh.write(body["csv"])
        print(f"wrote {args.output}")
        print(body["summary"], end="")
        return 0
    try:
        summary = run_experiment(config)
        _write_csv(args.output, summary.labels, summary)
    except Exception:
        if os.path.exists(args.output):
            os.remove(args.output)
        raise
    print(f"wrote {args.output}")
    _print_experiment_summary(summary)
    return 0


def cmd_experiment(args) -> int:
    """Monte-Carlo experiment: CSV of averaged error traces plus a summary."""
    return _run_experiment_to_csv(args, single_run=False)


def cmd_simulate(args) -> int:
    """Single-realization run with the experiment schema and CSV format."""
    return _run_experiment_to_csv(args, single_run=True)


def run_check(config: dict, bench=None) -> list:
    """Assemble the certificate reports for a check config.

    Args:
        config: experiment-schema mapping, optionally with a check section
            holding window (grammian horizon), samples, radius, seed and
            bound: {c, lam_decay, w_max} with c: auto fitting the decay
            from the transition matrix.
        bench: already-built benchmark; overrides the system entry.

    Returns:
        list of CertificateReport, one per requested certificate.
    """
    merged = default_experiment_config()
    merged.update(config or {})
    if bench is None:
        bench = system_from_config(merged["system"])
    model = bench.model
    weights = weights_from_config(merged.get("weights"), model.n, model.n_y)
    losses = [loss_from_config(e) for e in merged["losses"]]
    check_cfg = merged.get("check") or {}
    window = int(check_cfg.get("window", model.n - 1))
    samples = int(check_cfg.get("samples", 200))
    radius = float(check_cfg.get("radius", 10.0))
    seed = int(check_cfg.get("seed", merged.get("seed", 0)))
    if model.A is None:
        raise EstimatorError("check needs a linear transition matrix")
    A = np.asarray(model.A, dtype=float)

    reports = []
    gram = uco_grammian(lambda t: A, lambda t: model.observation(t), 0, window)
    min_eig = gram.min_eigenvalue()
    reports.append(CertificateReport(name=f"uco_grammian[T={window}]",
                                     satisfied=min_eig > 0.0, margin=min_eig))
    for loss in losses:
        rep = check_D_condition(model, weights, loss, sample_count=samples,
                                radius=radius, seed=seed)
        reports.append(replace(rep, name=f"{rep.name}[{loss.kind}]"))
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(20):
        F = rng.normal(size=(model.n, model.n))
        S = F @ F.T + 1e-3 * np.eye(model.n)
        F = rng.normal(size=(model.n, model.n))
        Q = F @ F.T + 1e-3 * np.eye(model.n)
        worst = max(worst, information_decrease_margin(rng.normal(size=A.shape), S, Q))
    reports.append(CertificateReport(name="information_decrease",
                                     satisfied=worst <= 1e-10, margin=worst))
    bound_cfg = check_cfg.get("bound")
    if bound_cfg:
        c = bound_cfg.get("c", "auto")
        lam_decay = bound_cfg.get("lam_decay")
        if c == "auto" or lam_decay is None:
            c_fit, lam_fit = estimate_decay(A)
            c = c_fit if c == "auto" else float(c)
            lam_decay = lam_fit if lam_decay is None else float(lam_decay)
        target = next((l for l in losses if l.kind == "absolute"), losses[0])
        bound = robustness_bound(model, weights, target, float(c), float(lam_decay),
                                 w_max=float(bound_cfg.get("w_max", 0.0)))
        reports.append(CertificateReport(name=f"robustness_bound[{target.kind}]",
                                         satisfied=True, margin=bound))
    return reports


def cmd_check(args) -> int:
    """Certificate report: observability, drift margins, decrease spot checks."""
    if not args.config:
        raise UsageError("check needs --config")
    config = load_config(args.config)
    apply_overrides(config, args.set)
    if not config:
        raise UsageError("check config is empty")
    if args.server:
        body = _post(args.server, "/check", {"config": config})
        print(body["report"], end="")
        return 0
    reports = run_check(config)
    print(report_to_text(reports), end="")
    return 0


def cmd_serve(args) -> int:
    """Run the HTTP service (blocks until interrupted)."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _post(server: str, route: str, payload: dict) -> dict:
    import httpx

    resp = httpx.post(server.rstrip("/") + route, json=payload, timeout=600.0)
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise EstimatorError(f"server returned {resp.status_code}: {detail}")
    return resp.json()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proxobs",
        description="Proximal observers for state estimation under impulsive noise.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("prox", help="evaluate a closed-form prox")
    p.add_argument("--loss", required=True, choices=list(KINDS))
    p.add_argument("--x", required=True, help="comma-separated point")
    p.add_argument("--a", required=True, help="comma-separated direction")
    p.add_argument("--b", type=float, default=0.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--server", default=None, help="service URL")
    p.set_defaults(func=cmd_prox)

    for name, func, help_text in (
            ("experiment", cmd_experiment, "Monte-Carlo error traces to CSV"),
            ("simulate", cmd_simulate, "single-realization run to CSV")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="YAML config path")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable")
        p.add_argument("--output", default=f"{name}.csv")
        p.add_argument("--server", default=None, help="service URL")
        p.set_defaults(func=func)

    p = sub.add_parser("check", help="run stability and observability certificates")
    p.add_argument("--config", default=None, help="YAML config path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--server", default=None, help="service URL")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(f"usage: see `proxobs {args.subcommand} --help`", file=sys.stderr)
        return 2
    except (EstimatorError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
