"""Command-line surface: run experiments, solve steady states, run studies.

Subcommands: run, limit, stationary, doeblin, epsilon-study, large-input,
presets, version.  Experiments come from ``--preset`` or a ``--config``
file (flags override both).  The only environment variable consulted is
ELAPSEDNET_NUM_THREADS, which caps the BLAS/OpenMP thread pools.
"""

from __future__ import annotations

import os

_threads = os.environ.get("ELAPSEDNET_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import sys

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    Experiment,
    ExperimentConfig,
    build_experiment,
    parse_config,
    with_overrides,
)
from .diagnostics import doeblin_check, fit_decay, homogenization_metrics, regime_certificates
from .fixedpoint import PicardError
from .grids import GridError
from .limit import epsilon_study, limit_run
from .models import ModelError
from .output import OutputSink, fmt, write_record
from .presets import get_preset, list_presets
from .renewal import CFLError, NegativeDensityError, large_input_run, nonlinear_run
from .stationary import StationaryProblem, default_multistart, solve_stationary

SOLVER_ERRORS = (CFLError, NegativeDensityError, PicardError, GridError,
                 ModelError, ConfigError, ValueError, RuntimeError)


def _load_config(args) -> ExperimentConfig:
    if args.preset and args.config:
        raise ConfigError("give either --preset or --config, not both")
    if args.preset:
        cfg = get_preset(args.preset).config
    elif args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    else:
        cfg = parse_config("")
    overrides = {}
    if getattr(args, "t_end", None) is not None:
        overrides["t_end"] = args.t_end
    if getattr(args, "epsilon", None) is not None:
        overrides["epsilon"] = args.epsilon
    if getattr(args, "save_every", None) is not None:
        overrides["save_every"] = args.save_every
    if getattr(args, "picard", None) is not None:
        overrides["picard"] = args.picard
    if getattr(args, "tol", None) is not None:
        overrides["picard_tol"] = args.tol
    if args.out is not None:
        overrides["out"] = args.out
    return with_overrides(cfg, **overrides)


def _sink_for(cfg, fallback: str) -> OutputSink:
    directory = cfg.out or cfg.preset or fallback
    sink = OutputSink(directory)
    exp_meta = {
        "nx": str(cfg.nx), "ns": str(cfg.ns), "s_max": fmt(cfg.s_max),
        "dt": fmt(cfg.resolved_dt()), "epsilon": fmt(cfg.epsilon),
        "t_end": fmt(cfg.t_end), "preset": cfg.preset or "custom",
    }
    sink.metadata.update(exp_meta)
    return sink


def _certificate_lines(exp: Experiment) -> list[str]:
    certs = regime_certificates(
        exp.model, exp.rule, exp.w0, exp.g,
        exp.input_model.evaluate(exp.space), n0_max=float(exp.n0.values.max()),
    )
    lines = ["[certificates]"]
    for c in certs:
        verdict = "holds" if c.holds else "outside proved regime"
        lines.append(f"{c.name}: lhs = {fmt(c.lhs)} -> {verdict}  ({c.description})")
    return lines


def cmd_run(args) -> int:
    cfg = _load_config(args)
    exp = build_experiment(cfg)
    sink = _sink_for(cfg, "run_output")
    try:
        record = nonlinear_run(
            exp.n0, exp.w0, exp.model, exp.rule, exp.input_model, exp.solver,
            cfg.t_end, save_every=cfg.save_every,
            snapshot_times=(0.0, cfg.t_end / 2.0, cfg.t_end),
        )
    except SOLVER_ERRORS as exc:
        sink.write_manifest(status="incomplete", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_record(sink, record)
    metrics = homogenization_metrics(record)
    summary = [
        "[run]",
        f"final ||w - <w>||_inf = {fmt(metrics.w_deviation[-1])}",
        f"final N spread = {fmt(metrics.N_deviation[-1])}",
        f"final S spread = {fmt(metrics.S_deviation[-1])}",
        f"max |mass - g| = {fmt(float(np.abs(record.mass_series - exp.g).max()))}",
    ]
    try:
        ref = record.final_N()
        dist = np.abs(record.N_series - ref).max(axis=1)
        decay = fit_decay(record.times, dist)
        summary.append(
            f"activity decay rate = {fmt(decay.lambda_hat)} (r^2 = {fmt(decay.r_squared)})"
        )
    except Exception:
        summary.append("activity decay rate = not fitted")
    summary += _certificate_lines(exp)
    sink.write_text("summary.txt", "\n".join(summary) + "\n")
    sink.write_manifest()
    print(f"wrote {len(sink.files) + 1} files to {sink.directory}")
    return 0


def cmd_limit(args) -> int:
    cfg = _load_config(args)
    if cfg.system != "limit":
        cfg = with_overrides(cfg, system="limit")
    exp = build_experiment(cfg)
    sink = _sink_for(cfg, "limit_output")
    try:
        record = limit_run(
            exp.w0, exp.g, exp.model, exp.rule, exp.input_model, exp.age,
            dt=cfg.resolved_dt(), t_end=cfg.t_end, save_every=cfg.save_every,
            snapshot_times=(0.0, cfg.t_end),
            inner_tol=cfg.picard_tol,
        )
    except SOLVER_ERRORS as exc:
        sink.write_manifest(status="incomplete", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_record(sink, record)
    metrics = homogenization_metrics(record)
    summary = [
        "[limit]",
        f"final ||w - <w>||_inf = {fmt(metrics.w_deviation[-1])}",
        f"final N spread = {fmt(metrics.N_deviation[-1])}",
        f"final S spread = {fmt(metrics.S_deviation[-1])}",
    ]
    summary += _certificate_lines(exp)
    sink.write_text("summary.txt", "\n".join(summary) + "\n")
    sink.write_manifest()
    print(f"wrote {len(sink.files) + 1} files to {sink.directory}")
    return 0


def cmd_stationary(args) -> int:
    cfg = _load_config(args)
    exp = build_experiment(cfg)
    sink = _sink_for(cfg, "stationary_output")
    tol = args.tol if args.tol is not None else 1e-12
    problem = StationaryProblem(
        exp.space, exp.age, exp.g, exp.model, exp.rule,
        exp.input_model.evaluate(exp.space),
    )
    try:
        states = solve_stationary(problem, tol=tol, multistart=default_multistart(problem))
        if not states:
            raise PicardError("no converged stationary state from any start", float("nan"))
    except SOLVER_ERRORS as exc:
        sink.write_manifest(status="incomplete", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    state = states[0]
    rows = ([x, s, n] for x, s, n in zip(exp.space.nodes, state.S_star, state.N_star))
    sink.write_csv("stationary.csv", ["x", "S_star", "N_star"], rows)
    w = state.w_star.values
    rows = ([x, y, w[i, j]] for i, x in enumerate(exp.space.nodes)
            for j, y in enumerate(exp.space.nodes))
    sink.write_csv("w_star.csv", ["x", "y", "w"], rows)
    cert = state.contraction_certificate
    summary = [
        "[stationary]",
        f"residual = {fmt(state.residual)}",
        f"iterations = {state.iterations}",
        f"distinct fixed points found = {len(states)}",
        f"contraction certificate: bound = {fmt(cert.bound)} -> "
        + ("holds" if cert.holds else "outside proved regime"),
    ]
    summary += _certificate_lines(exp)
    sink.write_text("summary.txt", "\n".join(summary) + "\n")
    sink.write_manifest()
    print(f"stationary residual {fmt(state.residual)}; wrote to {sink.directory}")
    return 0


def cmd_doeblin(args) -> int:
    cfg = _load_config(args)
    exp = build_experiment(cfg)
    sink = _sink_for(cfg, "doeblin_output")
    I_vals = exp.input_model.evaluate(exp.space)
    try:
        report = doeblin_check(exp.n0, I_vals, exp.model)
    except SOLVER_ERRORS as exc:
        sink.write_manifest(status="incomplete", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summary = [
        "[doeblin]",
        f"alpha = {fmt(report.alpha)}",
        f"lambda_theory = {fmt(report.lambda_theory)}",
        f"t0 = {fmt(report.t0)}",
        f"p_star = {fmt(report.p_star)}, s_star = {fmt(report.s_star)}",
        f"minorization margin = {fmt(report.minorization_margin)} "
        f"(tolerated down to {fmt(-2 * exp.age.ds)})",
        f"degenerate = {report.degenerate}",
    ]
    sink.write_text("summary.txt", "\n".join(summary) + "\n")
    sink.write_manifest()
    print("\n".join(summary))
    return 0


def cmd_epsilon_study(args) -> int:
    cfg = _load_config(args)
    exp = build_experiment(cfg)
    sink = _sink_for(cfg, "epsilon_output")
    try:
        study = epsilon_study(
            cfg.epsilon_list, exp.n0, exp.w0, exp.model, exp.rule,
            exp.input_model, T=cfg.t_end,
        )
    except SOLVER_ERRORS as exc:
        sink.write_manifest(status="incomplete", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rows = ([e, dn, dN] for e, dn, dN in
            zip(study.epsilons, study.dist_n, study.dist_N))
    sink.write_csv("epsilon_distances.csv",
                   ["epsilon", "dist_n_L1_tsx", "dist_N_L1_tx"], rows)
    summary = [
        "[epsilon-study]",
        f"T = {fmt(study.T)}",
        f"fitted order in epsilon = {fmt(study.fitted_order)}",
    ]
    sink.write_text("summary.txt", "\n".join(summary) + "\n")
    sink.write_manifest()
    print("\n".join(summary))
    return 0


def cmd_large_input(args) -> int:
    cfg = _load_config(args)
    if cfg.sigma == "identity":
        # the frozen large-stimulation rate must stay on the age grid
        cfg = with_overrides(cfg, sigma="bounded",
                             sigma_max=min(2.0, cfg.s_max / 4.0))
    exp = build_experiment(cfg)
    sink = _sink_for(cfg, "large_input_output")
    try:
        study = large_input_run(
            cfg.large_input_k, exp.n0, exp.w0, exp.model, exp.rule,
            exp.input_model, exp.solver, t_end=cfg.t_end,
            sample_times=(cfg.t_end / 2.0, cfg.t_end),
        )
    except SOLVER_ERRORS as exc:
        sink.write_manifest(status="incomplete", error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    header = ["k"] + [f"dist_t{fmt(t)}" for t in study.sample_times]
    rows = ([k, *study.distances[i]] for i, k in enumerate(study.ks))
    sink.write_csv("large_input_distances.csv", header, rows)
    summary = ["[large-input]"]
    for i, k in enumerate(study.ks):
        summary.append(f"k = {fmt(k)}: final distance = {fmt(study.distances[i, -1])}")
    sink.write_text("summary.txt", "\n".join(summary) + "\n")
    sink.write_manifest()
    print("\n".join(summary))
    return 0


def cmd_presets(args) -> int:
    for preset in list_presets():
        print(f"{preset.name:10s} {preset.description}")
    return 0


def cmd_version(args) -> int:
    print(f"elapsednet {__version__}")
    return 0


def _add_common(parser: argparse.ArgumentParser, with_solver_flags: bool = True) -> None:
    parser.add_argument("--preset", help="named experiment preset")
    parser.add_argument("--config", help="path to a key = value configuration file")
    parser.add_argument("--out", help="output directory")
    if with_solver_flags:
        parser.add_argument("--t-end", type=float, dest="t_end")
        parser.add_argument("--epsilon", type=float)
        parser.add_argument("--save-every", type=float, dest="save_every")
        parser.add_argument("--picard", choices=("lagged", "iterate"))
        parser.add_argument("--tol", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elapsednet",
        description="Solvers for a spatially extended elapsed-time neural network "
                    "with kernel learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, help_text in [
        ("run", cmd_run, "integrate the full density/kernel system"),
        ("limit", cmd_limit, "integrate the slow-learning limit system"),
        ("stationary", cmd_stationary, "solve the stationary fixed point"),
        ("doeblin", cmd_doeblin, "check the minorization bound of the frozen dynamics"),
        ("epsilon-study", cmd_epsilon_study, "distances to the limit system over epsilon"),
        ("large-input", cmd_large_input, "distances to the frozen-rate limit over k"),
        ("presets", cmd_presets, "list the named presets"),
        ("version", cmd_version, "print the package version"),
    ]:
        p = sub.add_parser(name, help=help_text)
        if name not in ("presets", "version"):
            _add_common(p)
        p.set_defaults(fn=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
