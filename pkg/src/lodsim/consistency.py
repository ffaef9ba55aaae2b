"""Weak consistency between full-resolution and dynamic-LOD runs.

Both modes run the same scenario with the same seeds.  At each sample time
the significant elements are read from the world: individual members count
once, an aggregate counts for every member it represents and contributes the
value its aggregation subfunction computed.  Because the projection uses the
mean subfunction, a full-resolution population and its aggregated image give
the same value when the aggregate is faithful.  Per-mode means over the
replicates are then compared with a dissimilarity metric.
"""
from __future__ import annotations

import csv
import math
import time as wallclock
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence

import yaml

from .agents import World
from .lod import AggregationFunctionSpec, SubfunctionSpec
from .runlog import format_number
from .scenario import ScenarioDefinition, ScenarioError, build_simulation, load_scenario, resolve


class ExperimentError(Exception):
    pass


# -- dissimilarity ------------------------------------------------------------


def range_normalized(a: Mapping[str, float], b: Mapping[str, float], ranges: Mapping[str, float]) -> float:
    """Mean over elements of ``|a - b| / range``; zero-range elements count 0."""
    if not a:
        return 0.0
    terms = []
    for name in sorted(a):
        r = ranges.get(name, 0.0)
        terms.append(0.0 if r == 0 else abs(a[name] - b[name]) / r)
    return math.fsum(terms) / len(terms)


def max_normalized(a, b, ranges) -> float:
    return max((0.0 if ranges.get(k, 0.0) == 0 else abs(a[k] - b[k]) / ranges[k] for k in a), default=0.0)


METRICS: dict[str, Callable] = {"range": range_normalized, "max-range": max_normalized}


def register_metric(name: str, fn: Callable) -> None:
    METRICS[name] = fn


def dissimilarity(a: Mapping[str, float], b: Mapping[str, float], ranges: Mapping[str, float], metric: str = "range") -> float:
    if set(a) != set(b):
        raise ExperimentError(f"element sets differ: {sorted(set(a) ^ set(b))}")
    try:
        fn = METRICS[metric]
    except KeyError:
        raise ExperimentError(f"unknown metric {metric!r} (have {', '.join(METRICS)})") from None
    return fn(a, b, ranges)


# -- projection ---------------------------------------------------------------


@dataclass(frozen=True)
class Element:
    """A significant quantity: ``variable`` of ``classes`` bodies in ``level``.

    Aggregates built by one of ``functions`` are projected through the
    subfunction that outputs ``variable``.
    """

    name: str
    variable: str
    classes: tuple[str, ...]
    level: Optional[str] = None
    functions: tuple[str, ...] = ()
    component: Optional[int] = None
    where: Mapping[str, Any] = field(default_factory=dict)


def _subfunction(spec: AggregationFunctionSpec, variable: str) -> Optional[SubfunctionSpec]:
    for sub in spec.subfunctions:
        if sub.output == variable:
            return sub
    return None


def project(world: World, element: Element, specs: Mapping[str, AggregationFunctionSpec]) -> float:
    """Member-weighted mean of ``element`` over everything the world represents."""
    for name in element.functions:
        sub = _subfunction(specs[name], element.variable)
        if sub is None or sub.combiner != "mean":
            raise ExperimentError(f"{element.name}: {name} has no mean subfunction for {element.variable}")
    values, weights = [], []
    for agent_id in sorted(world.agents):
        agent = world.agents[agent_id]
        if agent.aggregate is None:
            if agent.class_name not in element.classes:
                continue
            level, weight = element.level, 1
        else:
            weight = sum(n for cls, n in agent.represented().items() if cls in element.classes)
            if weight == 0:
                continue
            if agent.aggregate.function not in element.functions:
                raise ExperimentError(
                    f"{element.name}: {agent.agent_id} stands for {weight} members but was built by "
                    f"{agent.aggregate.function}, which is not a projection function of this element"
                )
            level = specs[agent.aggregate.function].output_level
        try:
            if any(agent.value(k, level) != v for k, v in element.where.items()):
                continue
            value = agent.value(element.variable, level)
        except KeyError:
            continue
        if element.component is not None:
            value = value[element.component]
        values.append(float(value) * weight)
        weights.append(weight)
    if not weights:
        return math.nan
    return math.fsum(values) / sum(weights)


# -- experiment ---------------------------------------------------------------


@dataclass
class ConsistencyExperiment:
    scenario: str
    elements: list[Element]
    duration: Fraction
    replicates: int = 1
    seeds: Optional[list[int]] = None
    metric: str = "range"
    tolerance: float = 0.05
    checkpoints: list[Fraction] = field(default_factory=list)
    disable_lod: bool = False
    base_dir: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        if self.replicates < 1:
            raise ExperimentError("replicates must be at least 1")
        if self.seeds is not None and len(self.seeds) != self.replicates:
            raise ExperimentError(f"{len(self.seeds)} seeds given for {self.replicates} replicates")
        if self.duration < 0:
            raise ExperimentError("duration must be non-negative")
        if not self.elements:
            raise ExperimentError("no significant elements")
        if not self.tolerance >= 0:
            raise ExperimentError("tolerance must be non-negative")
        if self.metric not in METRICS:
            raise ExperimentError(f"unknown metric {self.metric!r}")
        if any(not 0 < c < self.duration for c in self.checkpoints):
            raise ExperimentError("checkpoints must lie strictly inside the run")

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds is not None else list(range(1, self.replicates + 1))

    def load_scenario(self) -> ScenarioDefinition:
        return load_scenario(resolve(self.scenario, (".yaml",), self.base_dir))

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "scenario": self.scenario,
            "duration": _plain(self.duration),
            "replicates": self.replicates,
        }
        if self.seeds is not None:
            out["seeds"] = list(self.seeds)
        out["metric"] = self.metric
        out["tolerance"] = self.tolerance
        if self.checkpoints:
            out["checkpoints"] = [_plain(c) for c in self.checkpoints]
        if self.disable_lod:
            out["disable_lod"] = True
        out["elements"] = []
        for e in self.elements:
            item = {"name": e.name, "variable": e.variable, "classes": list(e.classes)}
            for key in ("level", "component"):
                if getattr(e, key) is not None:
                    item[key] = getattr(e, key)
            if e.functions:
                item["functions"] = list(e.functions)
            if e.where:
                item["where"] = dict(e.where)
            out["elements"].append(item)
        return out


def _plain(t: Fraction):
    return t.numerator if t.denominator == 1 else str(t)


def _time(value) -> Fraction:
    return Fraction(str(value))


def parse_experiment(text: str, source: str = "<string>", base_dir: Optional[Path] = None) -> ConsistencyExperiment:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ExperimentError(f"{source}: {exc}") from None
    if not isinstance(data, dict):
        raise ExperimentError(f"{source}: expected a mapping at top level")
    known = {"scenario", "elements", "duration", "replicates", "seeds", "metric", "tolerance", "checkpoints", "disable_lod"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ExperimentError(f"{source}: unknown keys {', '.join(unknown)}")
    for key in ("scenario", "elements", "duration"):
        if key not in data:
            raise ExperimentError(f"{source}: missing {key!r}")
    try:
        elements = []
        for raw in data["elements"]:
            raw = dict(raw)
            raw["classes"] = tuple(raw.get("classes", ()))
            raw["functions"] = tuple(raw.get("functions", ()))
            raw["where"] = dict(raw.get("where") or {})
            elements.append(Element(**raw))
        return ConsistencyExperiment(
            scenario=str(data["scenario"]),
            elements=elements,
            duration=_time(data["duration"]),
            replicates=int(data.get("replicates", 1)),
            seeds=[int(s) for s in data["seeds"]] if data.get("seeds") is not None else None,
            metric=str(data.get("metric", "range")),
            tolerance=float(data.get("tolerance", 0.05)),
            checkpoints=[_time(c) for c in data.get("checkpoints") or []],
            disable_lod=bool(data.get("disable_lod", False)),
            base_dir=base_dir,
        )
    except (TypeError, ValueError) as exc:
        raise ExperimentError(f"{source}: {exc}") from None


def load_experiment(path: Path | str) -> ConsistencyExperiment:
    try:
        path = resolve(path, (".yaml",))
        text = path.read_text()
    except (OSError, ScenarioError) as exc:
        raise ExperimentError(str(exc)) from None
    return parse_experiment(text, str(path), path.parent)


def dump_experiment(exp: ConsistencyExperiment) -> str:
    return yaml.safe_dump(exp.to_dict(), sort_keys=False)


@dataclass(frozen=True)
class Sample:
    replicate: int
    seed: int
    mode: str
    time: Fraction
    element: str
    value: float


@dataclass
class ConsistencyReport:
    elements: tuple[str, ...]
    full_means: dict[str, float]
    lod_means: dict[str, float]
    ranges: dict[str, float]
    dissimilarity: float
    tolerance: float
    metric: str
    samples: list[Sample]
    agent_steps: dict[str, int]
    checkpoint_dissimilarity: dict[Fraction, float]
    runtime: dict[str, float] = field(default_factory=dict, compare=False)

    @property
    def consistent(self) -> bool:
        return self.dissimilarity <= self.tolerance

    def summary(self) -> str:
        lines = [
            f"metric: {self.metric}",
            f"dissimilarity: {self.dissimilarity:.6g}",
            f"tolerance: {self.tolerance:g}",
            f"consistent: {'yes' if self.consistent else 'no'}",
            f"agent steps full: {self.agent_steps['full']}",
            f"agent steps lod: {self.agent_steps['lod']}",
        ]
        if self.agent_steps["full"]:
            lines.append(f"step ratio lod/full: {self.agent_steps['lod'] / self.agent_steps['full']:.4f}")
        lines.append("element means at final time (full, lod, observed range):")
        for name in self.elements:
            lines.append(
                f"  {name}: {self.full_means[name]:.6f} {self.lod_means[name]:.6f} {self.ranges[name]:.6f}"
            )
        if self.checkpoint_dissimilarity:
            lines.append("checkpoints (extension, not part of the verdict):")
            for t, d in sorted(self.checkpoint_dissimilarity.items()):
                lines.append(f"  t={format_number(t)}: {d:.6g}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: Path | str) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        rows = out_dir / "consistency.csv"
        with rows.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("replicate", "seed", "mode", "time", "element", "value"))
            for s in self.samples:
                writer.writerow((s.replicate, s.seed, s.mode, format_number(s.time), s.element, repr(s.value)))
        summary = out_dir / "summary.txt"
        summary.write_text(self.summary())
        return rows, summary


def _means(samples: Sequence[Sample], mode: str, t: Fraction, names) -> dict[str, float]:
    out = {}
    for name in names:
        vals = [s.value for s in samples if s.mode == mode and s.time == t and s.element == name]
        out[name] = math.fsum(vals) / len(vals)
    return out


def run_experiment(exp: ConsistencyExperiment, scenario: Optional[ScenarioDefinition] = None) -> ConsistencyReport:
    scenario = scenario or exp.load_scenario()
    model = scenario.load_model()
    if exp.disable_lod:
        lod = dict(scenario.lod)
        lod["thresholds"] = {name: math.inf for name in model.aggregations}
        scenario = ScenarioDefinition(**{**vars(scenario), "lod": lod})
    names = tuple(e.name for e in exp.elements)
    if len(set(names)) != len(names):
        raise ExperimentError("element names must be unique")
    samples: list[Sample] = []
    steps = {"full": 0, "lod": 0}
    runtime = {"full": 0.0, "lod": 0.0}
    for rep, seed in enumerate(exp.seed_list()):
        for mode in ("full", "lod"):
            began = wallclock.perf_counter()
            try:
                sim = build_simulation(scenario, seed, mode, model=model, record_states=False)
                specs = {s.name: s for s in sim.lod.specs}
                for e in exp.elements:
                    for name in e.functions:
                        if name not in specs:
                            raise ExperimentError(f"element {e.name}: unknown aggregation function {name}")
                # checkpoints are read before any level acts at that instant; the
                # final sample is the state reached over [0, duration)
                for t in exp.checkpoints:
                    sim.at(t, lambda s, t=t: _sample(s, exp, specs, rep, seed, mode, t, samples))
                _sample(sim, exp, specs, rep, seed, mode, Fraction(0), samples)
                sim.run(exp.duration)
                if exp.duration > 0:
                    _sample(sim, exp, specs, rep, seed, mode, exp.duration, samples)
            except ExperimentError:
                raise
            except Exception as exc:
                raise ExperimentError(f"replicate {rep} ({mode} mode, seed {seed}) failed: {exc}") from exc
            steps[mode] += sim.stats.agent_steps
            runtime[mode] += wallclock.perf_counter() - began

    ranges = {}
    for name in names:
        vals = [s.value for s in samples if s.element == name]
        ranges[name] = max(vals) - min(vals)
    final = exp.duration
    full = _means(samples, "full", final, names)
    lod = _means(samples, "lod", final, names)
    checkpoints = {
        t: dissimilarity(_means(samples, "full", t, names), _means(samples, "lod", t, names), ranges, exp.metric)
        for t in exp.checkpoints
    }
    return ConsistencyReport(
        elements=names,
        full_means=full,
        lod_means=lod,
        ranges=ranges,
        dissimilarity=dissimilarity(full, lod, ranges, exp.metric),
        tolerance=exp.tolerance,
        metric=exp.metric,
        samples=samples,
        agent_steps=steps,
        checkpoint_dissimilarity=checkpoints,
        runtime=runtime,
    )


def _sample(sim, exp, specs, rep, seed, mode, t, out):
    for e in exp.elements:
        out.append(Sample(rep, seed, mode, t, e.name, project(sim.world, e, specs)))
