"""Scenario files (YAML) and the runs built from them.

A scenario names a model file, the convoys to place on the road, behavior
bindings per class, the LOD policy and optional per-level frequency
overrides.  Relative paths resolve against the scenario file; bare names such
as ``platoon`` resolve to the bundled data files.
"""
from __future__ import annotations

import copy
import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .levels import HierarchicalModel
from .lod import AffinityFunction, LodPolicy
from .modelfile import load_model
from .platoon import (
    BEHAVIORS,
    DIAGNOSTICS,
    TRAFFIC,
    Dynamics,
    ObserverZone,
    Road,
    crew_spec,
    platoon_policy,
    platoon_spec,
)
from .runlog import RunLog
from .scheduler import Simulation

MODES = ("full", "lod")


class ScenarioError(ValueError):
    pass


def data_path(name: str) -> Path:
    return Path(str(resources.files("lodsim") / "data" / name))


def resolve(ref: str | Path, suffixes: tuple[str, ...], base: Optional[Path] = None) -> Path:
    """A file path, relative to ``base`` if given, or the name of a bundled file."""
    ref = Path(ref)
    candidates = [ref] if base is None or ref.is_absolute() else [base / ref, ref]
    for c in candidates:
        if c.is_file():
            return c
    if ref.parent == Path("."):
        for suffix in ("",) + suffixes:
            bundled = data_path(ref.name + suffix)
            if bundled.is_file():
                return bundled
    raise ScenarioError(f"cannot find {ref}")


@dataclass(frozen=True)
class Convoy:
    name: str
    lane: int
    head_x: float
    cruise: float
    followers: int
    gap: float = 8.0
    speed: Optional[float] = None
    stamina: float = 1.0


@dataclass
class ScenarioDefinition:
    model: str
    convoys: list[Convoy]
    behaviors: dict[str, str]
    road: dict[str, Any] = field(default_factory=dict)
    dynamics: dict[str, Any] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)
    lod: dict[str, Any] = field(default_factory=dict)
    jitter: dict[str, float] = field(default_factory=dict)
    frequencies: dict[str, Any] = field(default_factory=dict)
    base_dir: Optional[Path] = field(default=None, compare=False)

    def model_path(self) -> Path:
        return resolve(self.model, (".model",), self.base_dir)

    def load_model(self) -> HierarchicalModel:
        return load_model(self.model_path())

    def to_dict(self) -> dict:
        out = {
            "model": self.model,
            "behaviors": dict(self.behaviors),
            "convoys": [
                {k: v for k, v in vars(c).items() if v is not None} for c in self.convoys
            ],
        }
        for key in ("road", "dynamics", "diagnostics", "lod", "jitter", "frequencies"):
            value = getattr(self, key)
            if value:
                out[key] = copy.deepcopy(value)
        return out


def _where(node) -> str:
    mark = getattr(node, "start_mark", None)
    return f"line {mark.line + 1}, column {mark.column + 1}" if mark else "?"


def _node_for(root, key, want_key=False):
    if isinstance(root, yaml.MappingNode):
        for k, v in root.value:
            if k.value == key:
                return k if want_key else v
    return root


def parse_scenario(text: str, source: str = "<string>", base_dir: Optional[Path] = None) -> ScenarioDefinition:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{source}: expected a mapping at top level")

    def fail(key, msg, at_key=False):
        raise ScenarioError(f"{source}:{_where(_node_for(node, key, at_key))}: {msg}")

    known = {"model", "behaviors", "convoys", "road", "dynamics", "diagnostics", "lod", "jitter", "frequencies"}
    for key in data:
        if key not in known:
            fail(key, f"unknown key {key!r}", at_key=True)
    if "model" not in data:
        raise ScenarioError(f"{source}: missing 'model'")
    behaviors = data.get("behaviors") or {}
    for cls, name in behaviors.items():
        if name not in BEHAVIORS:
            fail("behaviors", f"class {cls} bound to unknown behavior {name!r} (have {', '.join(BEHAVIORS)})")
    convoys = []
    for i, raw in enumerate(data.get("convoys") or []):
        try:
            convoy = Convoy(**raw)
        except TypeError as exc:
            fail("convoys", f"convoy {i}: {exc}")
        if convoy.followers < 0:
            fail("convoys", f"convoy {convoy.name}: follower count must be non-negative")
        convoys.append(convoy)
    if len({c.name for c in convoys}) != len(convoys):
        fail("convoys", "convoy names must be unique")
    return ScenarioDefinition(
        model=str(data["model"]),
        convoys=convoys,
        behaviors=dict(behaviors),
        road=dict(data.get("road") or {}),
        dynamics=dict(data.get("dynamics") or {}),
        diagnostics=dict(data.get("diagnostics") or {}),
        lod=dict(data.get("lod") or {}),
        jitter=dict(data.get("jitter") or {}),
        frequencies=dict(data.get("frequencies") or {}),
        base_dir=base_dir,
    )


def load_scenario(path: Path | str, check: bool = True) -> ScenarioDefinition:
    """Read a scenario; with ``check`` the model is loaded and references verified."""
    path = resolve(path, (".yaml", ".yml"))
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror}") from None
    scenario = parse_scenario(text, str(path), path.parent)
    if check:
        model = scenario.load_model()
        classes = {"Leader", "Follower"} | {s.output_class for s in model.aggregations.values()}
        missing = sorted(c for c in classes if c not in scenario.behaviors)
        if missing:
            raise ScenarioError(f"{path}: no behavior bound for {', '.join(missing)}")
    return scenario


def dump_scenario(scenario: ScenarioDefinition) -> str:
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False)


# -- building runs ------------------------------------------------------------


def populate(sim: Simulation, scenario: ScenarioDefinition, seed: int) -> None:
    """Place every convoy, with seeded jitter on initial positions and speeds."""
    rng = random.Random(f"populate:{seed}")
    road = Road(**_road_args(scenario.road))
    pos_j = float(scenario.jitter.get("position", 0.0))
    speed_j = float(scenario.jitter.get("speed", 0.0))
    for convoy in scenario.convoys:
        y = road.path[0][1] + convoy.lane * road.lane_width if road.path else 0.0
        speed0 = convoy.cruise if convoy.speed is None else convoy.speed
        ahead = ""
        for k in range(convoy.followers + 1):
            leader = k == 0
            agent_id = f"{convoy.name}-L" if leader else f"{convoy.name}-F{k}"
            x = convoy.head_x - k * convoy.gap + (rng.uniform(-pos_j, pos_j) if k else 0.0)
            state = {
                "position": (x, y),
                "speed": speed0 + rng.uniform(-speed_j, speed_j),
                "lane": convoy.lane,
            }
            internal = {"stamina": convoy.stamina, "cruise": convoy.cruise, "heading": (1.0, 0.0)}
            if leader:
                internal["waypoint"] = 0
            else:
                internal.update(follows=ahead, gap=convoy.gap)
            sim.world.spawn_conceptual_agent(
                "Leader" if leader else "Follower",
                [(TRAFFIC, state), (DIAGNOSTICS, {"wear": 0.0}, False)],
                internal,
                agent_id=agent_id,
            )
            ahead = agent_id


def _road_args(raw: dict) -> dict:
    args = dict(raw)
    if "path" in args:
        args["path"] = tuple(tuple(float(c) for c in p) for p in args["path"])
    else:
        args["path"] = ((1e9, 0.0),)
    return args


def build_policy(model: HierarchicalModel, scenario: ScenarioDefinition, mode: str) -> LodPolicy:
    lod = scenario.lod
    zone_cfg = scenario.diagnostics.get("zone", [math.inf, math.inf])
    zone = ObserverZone(
        float(zone_cfg[0]),
        float(zone_cfg[1]),
        float(lod.get("margin", 40.0)),
        float(lod.get("clearance", 0.0)),
    )
    aff_cfg = lod.get("affinity", {})
    affinity = AffinityFunction(
        "speed-lane",
        tuple((str(v), float(s)) for v, s in aff_cfg.get("variables", [["speed", 2.0], ["lane", 1.0]])),
        aff_cfg.get("decimals"),
    )
    thresholds = lod.get("thresholds", {})
    specs = []
    for name, sig in model.aggregations.items():
        threshold = float(thresholds.get(name, sig.threshold if sig.threshold is not None else math.inf))
        if sig.spirit_only:
            specs.append(crew_spec(sig, threshold))
        else:
            specs.append(
                platoon_spec(
                    sig,
                    threshold,
                    reference_speed=float(lod.get("reference_speed", 20.0)),
                    affinity=affinity,
                    radius=lod.get("radius"),
                    refractory=Fraction(str(lod.get("refractory", 0))),
                    spacing=float(lod.get("spacing", 8.0)),
                )
            )
    return platoon_policy(
        specs,
        zone,
        strategy=lod.get("strategy", model.strategy or "global"),
        precedence=tuple(sorted(model.precedence)),
        check_hz=lod.get("check_hz", 1),
        start=Fraction(str(lod.get("start", 0))),
        aggregation_enabled=(mode == "lod"),
    )


def build_simulation(
    scenario: ScenarioDefinition,
    seed: int = 0,
    mode: str = "lod",
    *,
    model: Optional[HierarchicalModel] = None,
    record_states: bool = True,
) -> Simulation:
    """A ready-to-run simulation.  ``full`` keeps every vehicle detailed;
    ``lod`` lets the policy aggregate and split platoons."""
    if mode not in MODES:
        raise ScenarioError(f"mode must be one of {', '.join(MODES)}, not {mode!r}")
    model = model or scenario.load_model()
    road = Road(**_road_args(scenario.road))
    dynamics = Dynamics(**scenario.dynamics)
    wear_rate = float(scenario.diagnostics.get("wear_rate", 1e-3))
    behaviors = {}
    for cls, name in scenario.behaviors.items():
        kind = BEHAVIORS[name]
        if name == "platoon":
            behaviors[cls] = kind(road, dynamics)
        else:
            behaviors[cls] = kind(road, dynamics, wear_rate)
    sim = Simulation(
        model,
        behaviors,
        frequencies=scenario.frequencies,
        lod=build_policy(model, scenario, mode),
        seed=seed,
        record_states=record_states,
    )
    populate(sim, scenario, seed)
    return sim


def run_scenario(
    scenario: ScenarioDefinition, duration, seed: int = 0, mode: str = "lod", **kw
) -> tuple[Simulation, RunLog]:
    sim = build_simulation(scenario, seed, mode, **kw)
    return sim, sim.run(Fraction(str(duration)))
