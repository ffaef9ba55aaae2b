"""Command-line driver: ``lodsim validate|inspect|run|consistency``.

Exit status: 0 success, 1 domain violation (invalid model, failed run,
inconsistent experiment), 2 usage or file errors.  Output files go to
``--out``, defaulting to ``$LODSIM_OUT`` or ``./lodsim-out``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .agents import AgentError
from .levels import classify_edges, transitive_closure
from .lod import LodError
from .modelfile import ModelFormatError, ModelValidationError, load_model, model_report
from .scheduler import SchedulerError

OK, VIOLATION, USAGE = 0, 1, 2
OUT_ENV = "LODSIM_OUT"

log = logging.getLogger("lodsim")


def _out_dir(arg: Optional[str]) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV) or "lodsim-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model_path(ref: str) -> Path:
    from .scenario import resolve

    return resolve(ref, (".model",))


def cmd_validate(args) -> int:
    model = load_model(_model_path(args.model), validate=False)
    report = model_report(model)
    for line in report.lines():
        print(line)
    if report.ok:
        print(f"{args.model}: valid ({len(model.levels)} levels)")
        return OK
    print(f"{args.model}: {len(report.violations)} violation(s)")
    return VIOLATION


def cmd_inspect(args) -> int:
    model = load_model(_model_path(args.model), validate=False)
    closure = transitive_closure(model)
    print("levels:")
    for level in model.levels.values():
        hz = "" if level.hz is None else f" {level.hz} Hz"
        scale = "" if level.scale is None else f" scale={level.scale[0]}/{level.scale[1]}"
        print(f"  {level.name}{scale}{hz}")
    print("relations:")
    for rel in sorted(classify_edges(model), key=str):
        print(f"  {rel}")
    print("inclusion order (closed):")
    for a, b in sorted(closure.inclusion_order):
        print(f"  {a} < {b}")
    print("complementarity classes:")
    for cls in closure.complementarity_classes:
        print("  {" + ", ".join(sorted(cls)) + "}")
    print("label bindings:")
    for (a, b), labels in sorted(model.hierarchy.items()):
        for label in sorted(labels):
            sig = model.aggregations.get(label)
            desc = "undeclared" if sig is None else (
                "spirit-only" if sig.spirit_only else f"-> {sig.output_class} @ {sig.output_level}"
            )
            print(f"  {a} -> {b}: {label} ({desc})")
    if model.strategy:
        print(f"strategy: {model.strategy}")
    for a, b in sorted(model.precedence):
        print(f"precedence: {a} < {b}")
    report = model_report(model)
    print("valid" if report.ok else "INVALID")
    for line in report.lines():
        print(f"  {line}")
    return OK if report.ok else VIOLATION


def _run_summary(sim, args) -> str:
    stats = sim.stats
    lines = [
        f"scenario: {args.scenario}",
        f"mode: {args.mode}",
        f"seed: {args.seed}",
        f"duration: {args.duration}",
        f"agent steps: {stats.agent_steps}",
    ]
    for level in sorted(sim.clocks):
        lines.append(
            f"  {level}: {stats.firings[level]} firings, {stats.steps_by_level[level]} steps, "
            f"final {sim.clocks[level].current_frequency_hz} Hz"
        )
    lines += [
        f"aggregations: {stats.aggregations}",
        f"disaggregations: {stats.disaggregations}",
        f"conflicts: {stats.conflicts}",
        f"final agents: {len(sim.world.agents)}",
    ]
    return "\n".join(lines) + "\n"


def cmd_run(args) -> int:
    from .scenario import build_simulation, load_scenario

    scenario = load_scenario(args.scenario)
    out = _out_dir(args.out)
    began = time.perf_counter()
    sim = build_simulation(scenario, args.seed, args.mode)
    runlog = sim.run(Fraction(args.duration))
    elapsed = time.perf_counter() - began
    runlog.write_csv(out / "runlog.csv")
    summary = _run_summary(sim, args)
    (out / "summary.txt").write_text(summary)
    if not args.no_plots:
        from . import plotting

        plotting.trajectories(runlog, out / "trajectories.png")
        plotting.firings(runlog, out / "firings.png")
    sys.stdout.write(summary)
    print(f"wall time: {elapsed:.2f} s")
    print(f"wrote {out}")
    return OK


def cmd_consistency(args) -> int:
    from .consistency import ExperimentError, load_experiment, run_experiment

    exp = load_experiment(args.experiment)
    if args.replicates is not None:
        if args.replicates < 1:
            print("error: --replicates must be at least 1", file=sys.stderr)
            return USAGE
        exp.replicates, exp.seeds = args.replicates, None
    out = _out_dir(args.out)
    try:
        report = run_experiment(exp)
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VIOLATION
    report.write(out)
    if not args.no_plots:
        from . import plotting

        plotting.consistency(report, out / "consistency.png")
    sys.stdout.write(report.summary())
    print(f"wall time: full {report.runtime['full']:.2f} s, lod {report.runtime['lod']:.2f} s")
    print(f"wrote {out}")
    return OK if report.consistent else VIOLATION


def _duration(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("duration must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lodsim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file against the level graph rules")
    p.add_argument("model", help="model file, or the name of a bundled one")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("inspect", help="show derived inclusion order, classes and label bindings")
    p.add_argument("model")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("run", help="run a scenario and write its run log")
    p.add_argument("scenario", help="scenario file, or a bundled name such as 'platoon'")
    p.add_argument("--duration", type=_duration, default=Fraction(30), help="simulated seconds (default 30)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("full", "lod"), default="lod")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./lodsim-out)")
    p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("consistency", help="compare full-resolution and LOD runs")
    p.add_argument("experiment", help="experiment file, or a bundled name such as 'platoon_experiment'")
    p.add_argument("--replicates", type=int, help="override the replicate count")
    p.add_argument("--out")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_consistency)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    from .consistency import ExperimentError
    from .scenario import ScenarioError

    try:
        return args.func(args)
    except ModelValidationError as exc:
        print(exc, file=sys.stderr)
        return VIOLATION
    except (ModelFormatError, ScenarioError, ExperimentError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    except (SchedulerError, AgentError, LodError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VIOLATION


if __name__ == "__main__":
    sys.exit(main())
