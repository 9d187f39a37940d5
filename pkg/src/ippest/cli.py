"""Command-line front end: ``ippest <command> --config run.json [overrides]``.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 estimation error.  Every run is deterministic given the config and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .errors import ConfigError, DimensionMismatch, EstimationError, InputError
from .mme import MomentSpec, default_moments, mme_covariance, mme_estimate
from .model import model_from_config
from .multistep import MODES, estimate_pipeline, fisher_inverse
from .paths import SAMPLERS, read_sample, simulate_sample, write_sample
from .quad import QuadConfig, fisher_info
from .study import ESTIMATORS, StudyConfig, run_study

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ESTIMATION = 0, 2, 3, 4

SECTIONS = {
    "model": None,
    "moments": None,
    "seed": {"base_seed", "replication"},
    "simulate": {"n", "method", "output"},
    "estimate": {"input", "delta", "mode", "output"},
    "trace": {"input", "delta", "mode", "stride", "exact", "output"},
    "study": {
        "n", "M", "estimators", "delta", "s_values", "replication_offset",
        "method", "threads", "output", "summary",
    },
    "quad": {"rel_tol", "abs_tol", "max_subdivisions"},
}


# ---------------------------------------------------------------- config


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(cfg) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    for name, allowed in SECTIONS.items():
        if name not in cfg:
            continue
        if not isinstance(cfg[name], dict):
            raise ConfigError(f"section {name!r} must be an object")
        if allowed is not None and set(cfg[name]) - allowed:
            raise ConfigError(f"unknown field(s) in {name}: {sorted(set(cfg[name]) - allowed)}")
    return cfg


def _section(cfg: dict, name: str) -> dict:
    return dict(cfg.get(name, {}))


def _pick(args, attr: str, section: dict, key: str, default=None):
    """Command-line value if given, else the config value, else the default."""
    value = getattr(args, attr, None)
    if value is not None:
        return value
    return section.get(key, default)


def _int(value, name: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def _model(cfg: dict, args):
    if "model" not in cfg:
        raise ConfigError("a model section is required")
    mc = model_from_config(cfg["model"])
    theta = mc.theta
    if getattr(args, "theta", None) is not None:
        theta = np.array([float(v) for v in args.theta.split(",")])
        if theta.shape != (mc.model.param_dim,):
            raise ConfigError(f"--theta has {theta.size} entries, model expects {mc.model.param_dim}")
    return mc.model, theta


def _need_theta(model, theta):
    if theta is None:
        raise ConfigError(f"this command needs parameter values ({', '.join(model.param_names)}) in the model section")
    return model.theta(theta)


def _moments(cfg: dict, model) -> MomentSpec:
    spec = MomentSpec.from_config(cfg["moments"]) if "moments" in cfg else default_moments(model)
    spec.check(model)
    return spec


def _quad(cfg: dict) -> QuadConfig:
    try:
        return QuadConfig(**_section(cfg, "quad"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"quad: {exc}") from None


def _seed(cfg: dict, args) -> tuple[int, int]:
    sec = _section(cfg, "seed")
    base = _int(_pick(args, "seed", sec, "base_seed", 0), "base_seed", 0)
    rep = _int(sec.get("replication", 0), "replication", 0)
    return base, rep


# ---------------------------------------------------------------- output


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _emit(text: str, output: str | None) -> None:
    if output is None or output == "-":
        sys.stdout.write(text)
        return
    with open(output, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _float_list(values) -> list:
    return [float(v) for v in np.ravel(values)]


# ---------------------------------------------------------------- commands


def cmd_simulate(args, cfg) -> int:
    model, theta = _model(cfg, args)
    theta = _need_theta(model, theta)
    sec = _section(cfg, "simulate")
    n = _int(_pick(args, "n", sec, "n"), "n", 1)
    method = _pick(args, "method", sec, "method")
    if method is not None and method not in SAMPLERS:
        raise ConfigError(f"unknown sampler {method!r}; choose from {sorted(SAMPLERS)}")
    base, rep = _seed(cfg, args)
    sample = simulate_sample(model, theta, n, base, rep, method)
    output = _pick(args, "output", sec, "output")
    buf = io.StringIO()
    write_sample(sample, buf)
    _emit(buf.getvalue(), output)
    total = int(sample.counts.sum())
    summary = f"n={n} total_events={total} mean_per_path={total / n!r}\n"
    (sys.stderr if output in (None, "-") else sys.stdout).write(summary)
    return EXIT_OK


def _read_events(args, sec, model):
    source = _pick(args, "input", sec, "input")
    if source is None:
        raise ConfigError("no event file given (--input or the 'input' field)")
    return read_sample(source, model.domain)


def cmd_mme(args, cfg) -> int:
    model, _ = _model(cfg, args)
    sec = _section(cfg, "estimate")
    moments = _moments(cfg, model)
    sample = _read_events(args, sec, model)
    est = mme_estimate(sample, moments, model, _quad(cfg))
    out = {"estimator": "mme", "theta": _float_list(est.theta), "preliminary": None, "N": None, "flags": est.flags}
    _emit(_dumps(out), _pick(args, "output", sec, "output"))
    return EXIT_OK


def _mode(args, sec) -> str:
    mode = _pick(args, "mode", sec, "mode", "onestep")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def _delta(args, sec, mode) -> float:
    default = 0.6 if mode == "onestep" else 4.0 / 9.0
    delta = _pick(args, "delta", sec, "delta", default)
    if isinstance(delta, bool) or not isinstance(delta, (int, float)):
        raise ConfigError(f"delta must be a number, got {delta!r}")
    return float(delta)


def cmd_onestep(args, cfg) -> int:
    model, _ = _model(cfg, args)
    sec = _section(cfg, "estimate")
    mode = _mode(args, sec)
    delta = _delta(args, sec, mode)
    moments = _moments(cfg, model)
    sample = _read_events(args, sec, model)
    result = estimate_pipeline(model, sample, moments, delta, mode, cfg=_quad(cfg))
    _emit(_dumps(result.to_json()), _pick(args, "output", sec, "output"))
    return EXIT_OK


def cmd_trace(args, cfg) -> int:
    model, _ = _model(cfg, args)
    sec = _section(cfg, "trace")
    mode = _mode(args, sec)
    delta = _delta(args, sec, mode)
    stride = _int(_pick(args, "stride", sec, "stride", 1), "stride", 1)
    exact = bool(args.exact or sec.get("exact", False))
    moments = _moments(cfg, model)
    sample = _read_events(args, sec, model)
    result = estimate_pipeline(model, sample, moments, delta, mode, process=True, stride=stride, cfg=_quad(cfg), exact=exact)
    trace = result.trace
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["k"] + [f"theta_{i + 1}" for i in range(model.param_dim)] + ["clipped_flag"])
    for k, est, clipped in zip(trace.k_values, trace.estimates, trace.clipped):
        writer.writerow([int(k)] + [repr(float(v)) for v in est] + [int(clipped)])
    _emit(buf.getvalue(), _pick(args, "output", sec, "output"))
    return EXIT_OK


def cmd_fisher(args, cfg) -> int:
    model, theta = _model(cfg, args)
    theta = _need_theta(model, theta)
    qc = _quad(cfg)
    info = fisher_info(model, theta, qc)
    inv, _ = fisher_inverse(model, theta, qc)
    d = model.param_dim
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["quantity", "row"] + [f"col_{j + 1}" for j in range(d)])
    blocks = [("fisher", info), ("fisher_inverse", inv)]
    D = None
    if "moments" in cfg:
        D = mme_covariance(model, theta, _moments(cfg, model), qc)
        blocks.append(("mme_covariance", D))
    for name, mat in blocks:
        for i, row in enumerate(mat):
            writer.writerow([name, i + 1] + [f"{v:.12g}" for v in row])
    if D is not None:
        writer.writerow(["trace", "fisher_inverse", f"{np.trace(inv):.12g}"] + [""] * (d - 1))
        writer.writerow(["trace", "mme_covariance", f"{np.trace(D):.12g}"] + [""] * (d - 1))
    _emit(buf.getvalue(), args.output)
    return EXIT_OK


def cmd_study(args, cfg) -> int:
    model, theta = _model(cfg, args)
    theta = _need_theta(model, theta)
    sec = _section(cfg, "study")
    n = _int(_pick(args, "n", sec, "n"), "n", 4)
    M = _int(_pick(args, "M", sec, "M"), "M", 2)
    estimators = tuple(sec.get("estimators", ["mme"]))
    if args.estimators:
        estimators = tuple(args.estimators.split(","))
    bad = [e for e in estimators if e not in ESTIMATORS]
    if bad:
        raise ConfigError(f"unknown estimator(s) {bad}; choose from {ESTIMATORS}")
    delta = sec.get("delta", {})
    if not isinstance(delta, dict):
        raise ConfigError("study.delta must map estimator names to delta values")
    threads = _int(_pick(args, "threads", sec, "threads", os.cpu_count() or 1), "threads", 1)
    base, _ = _seed(cfg, args)
    config = StudyConfig(
        model=model,
        theta0=tuple(theta),
        n=n,
        M=M,
        estimators=estimators,
        delta=delta,
        base_seed=base,
        s_values=tuple(sec.get("s_values", [1.0])),
        moments=_moments(cfg, model),
        cfg=_quad(cfg),
        workers=threads,
        replication_offset=_int(sec.get("replication_offset", 0), "replication_offset", 0),
        method=sec.get("method"),
    )
    report = run_study(config)
    _emit(_dumps(report.to_json()), _pick(args, "output", sec, "output"))
    summary = _pick(args, "summary", sec, "summary")
    if summary is not None:
        _emit(report.summary_csv(), summary)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "mme": cmd_mme,
    "onestep": cmd_onestep,
    "trace": cmd_trace,
    "fisher": cmd_fisher,
    "study": cmd_study,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ippest", description="Estimation for inhomogeneous Poisson paths.")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", "-c", help="JSON run configuration")
        p.add_argument("--output", "-o", help="output file (default: stdout)")
        p.add_argument("--theta", help="comma-separated parameter values, overrides the model section")
        return p

    p = command("simulate", "simulate n paths to NDJSON")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=sorted(SAMPLERS))

    p = command("mme", "method-of-moments estimate from an event file")
    p.add_argument("--input", "-i")

    for name, help_text in (("onestep", "one-step or two-step estimate"), ("trace", "CSV trace of the estimator process")):
        p = command(name, help_text)
        p.add_argument("--input", "-i")
        p.add_argument("--delta", type=float)
        p.add_argument("--mode", choices=MODES)
        if name == "trace":
            p.add_argument("--stride", type=int)
            p.add_argument("--exact", action="store_true", help="per-k adaptive compensators")

    command("fisher", "Fisher information, its inverse and the MME covariance")

    p = command("study", "Monte Carlo replication study")
    p.add_argument("--n", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--estimators", help="comma-separated subset of " + ",".join(ESTIMATORS))
    p.add_argument("--summary", help="CSV summary file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, load_config(args.config))
    except (ConfigError, DimensionMismatch) as exc:
        code, message = EXIT_CONFIG, f"{exc.kind}: {exc}"
    except (InputError, OSError) as exc:
        code, message = EXIT_IO, f"{getattr(exc, 'kind', type(exc).__name__)}: {exc}"
    except EstimationError as exc:
        code, message = EXIT_ESTIMATION, f"{exc.kind}: {exc}"
    except ValueError as exc:
        code, message = EXIT_CONFIG, f"ConfigError: {exc}"
    print(f"ippest {args.command}: {message}", file=sys.stderr)
    return code
