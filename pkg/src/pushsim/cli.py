"""Command-line front end.

Subcommands:
  raps    averaging demo on the configured network, optional audit
  rasgp   optimization experiment with the centralized baseline
  verify  audit campaign: rebuild runs as linear systems and cross-check
  ratio   centralized/decentralized error-ratio study over network sizes
  replay  re-run a recorded experiment and byte-compare raw outputs

Exit status: 0 success, 1 verification failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .audit import verify_run
from .engine import run_protocol
from .errors import ConfigurationError, PushsimError, VerificationError
from .faultnet import realize_schedule
from .harness import (ExperimentConfig, build_problem, ratio_study,
                      replay, run_experiment, write_line_plot)
from .pushsum import dump_state_trace
from .rng import Role, stream, uniform_box

AUDIT_SPAN_CAP = 1000   # bounds audit memory when attached to long runs


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pushsim",
        description="Fault-tolerant push-based averaging and optimization "
                    "simulator with a linear-system audit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True,
                           help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override master seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--runs", type=int, default=None,
                       help="override Monte Carlo run count")
        p.add_argument("--horizon", type=int, default=None,
                       help="override slot horizon")
        p.add_argument("--verify", action="store_true",
                       help="attach the linear-system audit")
        p.add_argument("--plot", action="store_true",
                       help="also write an SVG line plot")

    common(sub.add_parser("raps", help="averaging demo + verification"))
    common(sub.add_parser("rasgp", help="optimization experiment"))
    common(sub.add_parser("verify", help="audit campaign"))
    common(sub.add_parser("ratio", help="error-ratio study over sizes"))
    rp = sub.add_parser("replay", help="re-run a recorded experiment")
    rp.add_argument("--out", required=True,
                    help="directory holding manifest.json and raw CSVs")
    rp.add_argument("--target", default=None,
                    help="where to place the re-run (default <out>/replay)")
    return parser


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config = replace(config, master_seed=args.seed)
    if args.runs is not None:
        config = replace(config, runs=args.runs)
    if args.horizon is not None:
        config = replace(config, horizon=args.horizon)
    return config


def _outdir(args, config: ExperimentConfig) -> Path:
    if args.out is not None:
        return Path(args.out)
    if config.outdir is not None:
        return Path(config.outdir)
    return Path(f"out_{config.name}" if config.name else "out")


def _averaging_x0(config: ExperimentConfig, n: int, dim: int) -> np.ndarray:
    g = stream(config.master_seed, 0, Role.INIT, 0)
    return uniform_box(g.random((n, dim)), 3.0)


def _cmd_raps(args) -> int:
    config = _load_config(args)
    outdir = _outdir(args, config)
    outdir.mkdir(parents=True, exist_ok=True)
    topo = config.topology.build(config.master_seed)
    dim = 3 if config.objective.kind == "svm" else config.objective.dim
    x0 = _averaging_x0(config, topo.n, dim)
    result = run_protocol(topo, config.faults, x0, config.horizon,
                          config.master_seed, runs=(0,), record_trace=True)
    trace = result.trace
    dump_state_trace(trace, outdir / "raps_trace.csv")
    mean = x0.mean(axis=0)
    err = np.abs(trace.z - mean[None, None, :]).max(axis=(1, 2))
    lines = ["k,max_error"]
    lines += [f"{k},{err[k]:.17g}" for k in range(err.shape[0])]
    (outdir / "consensus.csv").write_text("\n".join(lines) + "\n")
    if args.plot:
        ks = np.arange(1, err.shape[0])
        write_line_plot(outdir / "consensus.svg",
                        {"max_error": (ks, err[1:])},
                        config.name or "averaging")
    print(f"raps: n={topo.n} K={config.horizon} "
          f"final max error {err[-1]:.3e}")
    if args.verify:
        span = min(config.horizon, AUDIT_SPAN_CAP)
        report = verify_run(topo, config.faults, x0, span,
                            config.master_seed, run=0)
        (outdir / "verify.txt").write_text(report.to_text())
        for line in report.lines():
            print(line)
    return 0


def _cmd_rasgp(args) -> int:
    config = _load_config(args)
    outdir = _outdir(args, config)
    result = run_experiment(config, outdir, plot=args.plot)
    last = result.series
    print(f"rasgp: n={config.topology.n} K={config.horizon} "
          f"R={config.runs} final E_dist {last.e_dist[-1]:.3e} "
          f"E_c {last.e_c[-1]:.3e}")
    if args.verify:
        report = _audit_optimizer_run(config)
        (outdir / "verify.txt").write_text(report.to_text())
        for line in report.lines():
            print(line)
    return 0


def _audit_optimizer_run(config: ExperimentConfig):
    """Rebuild run 0 of the experiment over a capped span and cross-check."""
    from .audit import cross_validate, run_linear_audit
    from .optimizer import (OPTIMIZER_INIT_TIMESTAMP, StepSizeLedger,
                            run_gradient_push)

    span = min(config.horizon, AUDIT_SPAN_CAP)
    problem = build_problem(config)
    ledger = StepSizeLedger(numerator=problem.topology.n,
                            mu=problem.objective.mu_total,
                            horizon=span, k0=config.step_offset)
    result = run_gradient_push(problem.topology, config.faults,
                               problem.objective, problem.noise, ledger,
                               span, config.master_seed, runs=(0,),
                               record_trace=True)
    trace = result.trace
    schedule = realize_schedule(problem.topology, config.faults, span,
                                config.master_seed, 0)
    audit = run_linear_audit(schedule, trace.x[0],
                             OPTIMIZER_INIT_TIMESTAMP,
                             applied=trace.applied)
    report = cross_validate(trace, audit, trace.x[0],
                            applied=trace.applied)
    report.raise_on_failure()
    return report


def _cmd_verify(args) -> int:
    config = _load_config(args)
    outdir = _outdir(args, config)
    outdir.mkdir(parents=True, exist_ok=True)
    topo = config.topology.build(config.master_seed)
    dim = 3 if config.objective.kind == "svm" else config.objective.dim
    lines = []
    failed = False
    for run in range(config.runs):
        x0 = uniform_box(
            stream(config.master_seed, run, Role.INIT, 0).random((topo.n,
                                                                  dim)),
            3.0)
        try:
            report = verify_run(topo, config.faults, x0, config.horizon,
                                config.master_seed, run=run)
        except VerificationError as exc:
            lines.append(f"run {run}: FAILED: {exc}")
            failed = True
            continue
        lines.append(f"run {run}:")
        lines.extend("  " + ln for ln in report.lines())
    text = "\n".join(lines) + "\n"
    (outdir / "verification.txt").write_text(text)
    print(text, end="")
    if failed:
        raise VerificationError("audit campaign found failing identities")
    return 0


def _cmd_ratio(args) -> int:
    config = _load_config(args)
    if config.ratio is None:
        raise ConfigurationError(
            "ratio subcommand needs a 'ratio' section in the config")
    outdir = _outdir(args, config)
    rows = ratio_study(config, config.ratio.sizes,
                       config.ratio.checkpoints, outdir)
    for row in rows:
        print(f"n={row.n} k={row.k} ratio={row.ratio:.4f} "
              f"band={row.ratio_std:.4f}")
    if args.plot:
        curves = {}
        for k in config.ratio.checkpoints:
            pts = [(row.n, row.ratio) for row in rows if row.k == k]
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            curves[f"k={k}"] = (xs, ys)
        write_line_plot(outdir / "ratio.svg", curves, "error ratio")
    return 0


def _cmd_replay(args) -> int:
    identical = replay(args.out, args.target)
    if not identical:
        raise VerificationError("replay diverged from recorded raw series")
    print("replay: raw series byte-identical")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "raps": _cmd_raps,
        "rasgp": _cmd_rasgp,
        "verify": _cmd_verify,
        "ratio": _cmd_ratio,
        "replay": _cmd_replay,
    }
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except PushsimError as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
