"""Platoon demonstration: vehicles on a road, platoons over them, diagnostics beside.

Level ``l1`` holds vehicle bodies (Leader, Follower), ``l2`` platoon bodies and
``l3`` the vehicles' diagnostic bodies, which share l1's scale.  A leader drives
a waypoint path at its cruise speed; a follower steers toward its predecessor
and regulates the gap, with its speed clamped.  A platoon body drives the same
path as its leader would.  Diagnostic bodies only wake up inside the observer
zone, and platoons split up before entering it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

from . import arith
from .agents import Action, Behavior, BodyAgent, ConceptualAgent, Influence, Perception, World
from .lod import (
    AffinityFunction,
    AggregationFunctionSpec,
    DisaggregationSpec,
    LineFormation,
    LodPolicy,
    MemorizationSpec,
    MemorizedVariable,
    StaminaSpeedPriority,
    SubfunctionInput,
    SubfunctionSpec,
)

TRAFFIC, PLATOONS, DIAGNOSTICS = "l1", "l2", "l3"


@dataclass(frozen=True)
class Road:
    path: tuple[tuple[float, float], ...]
    lane_width: float = 4.0
    reach: float = 5.0

    def waypoint(self, index: int, lane: int) -> Optional[tuple[float, float]]:
        if index >= len(self.path):
            return None
        x, y = self.path[index]
        return (x, y + lane * self.lane_width)


@dataclass(frozen=True)
class Dynamics:
    max_speed: float = 25.0
    accel: float = 3.0
    gain: float = 0.8


def _unit(v) -> tuple[float, float]:
    n = math.hypot(*v)
    return (1.0, 0.0) if n == 0 else (v[0] / n, v[1] / n)


def _clamp(v, lo, hi):
    return min(max(v, lo), hi)


def _drive(state, internal, dt, road: Road, dyn: Dynamics):
    """Waypoint following at cruise speed; returns (action, new internal)."""
    pos, speed, lane = state["position"], state["speed"], state["lane"]
    index = internal.get("waypoint", 0)
    target = road.waypoint(index, lane)
    while target is not None and math.dist(pos, target) <= road.reach:
        index += 1
        target = road.waypoint(index, lane)
    heading = internal.get("heading", (1.0, 0.0)) if target is None else _unit(arith.sub(target, pos))
    dv = _clamp(internal["cruise"] - speed, -dyn.accel * dt, dyn.accel * dt)
    new_speed = _clamp(speed + dv, 0.0, dyn.max_speed)
    step = arith.scale(heading, new_speed * dt)
    internal = dict(internal, waypoint=index, heading=heading)
    return Action("drive", {"position": step, "speed": new_speed - speed}), internal


class _Driving(Behavior):
    def __init__(self, road: Road, dynamics: Dynamics):
        self.road = road
        self.dynamics = dynamics

    def execute(self, body: BodyAgent, action: Action, perception: Perception):
        if action.name == "drive":
            yield Influence(body.owner, body.level, body.body_id, dict(action.params))
        elif action.name == "inspect":
            yield Influence(body.owner, body.level, body.body_id, {"wear": action.params["wear"]})


class Vehicle(_Driving):
    """Shared by leaders and followers: driving in l1, wear monitoring in l3."""

    functions = {TRAFFIC: {"steering": 30}, DIAGNOSTICS: {"diagnostic": 60}}

    def __init__(self, road: Road, dynamics: Dynamics, wear_rate: float = 1e-3):
        super().__init__(road, dynamics)
        self.wear_rate = wear_rate

    def actions(self, body, perception):
        return ("inspect",) if body.level == DIAGNOSTICS else ("drive",)

    def decide(self, internal, perception, actions, rng):
        dt = float(perception.dt)
        if perception.body.level == DIAGNOSTICS:
            road_body = perception.find(perception.body.owner, TRAFFIC)
            speed = road_body.state["speed"] if road_body else 0.0
            return Action("inspect", {"wear": self.wear_rate * speed * dt}), internal
        return self.steer(perception.body.state, internal, perception, dt)

    def steer(self, state, internal, perception, dt):
        raise NotImplementedError


class Leader(Vehicle):
    def steer(self, state, internal, perception, dt):
        return _drive(state, internal, dt, self.road, self.dynamics)


class Follower(Vehicle):
    def steer(self, state, internal, perception, dt):
        dyn = self.dynamics
        ahead = perception.find(internal.get("follows", ""), TRAFFIC)
        pos, speed = state["position"], state["speed"]
        if ahead is None:
            # predecessor out of sight: hold speed and heading
            heading = internal.get("heading", (1.0, 0.0))
            step = arith.scale(heading, speed * dt)
            return Action("drive", {"position": step, "speed": 0.0}), internal
        to_ahead = arith.sub(ahead.state["position"], pos)
        heading = _unit(to_ahead)
        wanted = ahead.state["speed"] + dyn.gain * (math.hypot(*to_ahead) - internal["gap"])
        wanted = _clamp(wanted, 0.0, dyn.max_speed)
        new_speed = speed + _clamp(wanted - speed, -dyn.accel * dt, dyn.accel * dt)
        step = arith.scale(heading, new_speed * dt)
        return (
            Action("drive", {"position": step, "speed": new_speed - speed}),
            dict(internal, heading=heading),
        )


class Platoon(_Driving):
    functions = {PLATOONS: {"convoy": 20}}

    def actions(self, body, perception):
        return ("drive",)

    def decide(self, internal, perception, actions, rng):
        return _drive(perception.body.state, internal, float(perception.dt), self.road, self.dynamics)


BEHAVIORS = {"leader": Leader, "follower": Follower, "platoon": Platoon}


# -- LOD configuration --------------------------------------------------------


def platoon_subfunctions(reference_speed: float) -> tuple[SubfunctionSpec, ...]:
    both = ("Leader", "Follower")
    return (
        SubfunctionSpec("mean_position", tuple(SubfunctionInput(c, "position", TRAFFIC) for c in both), "position"),
        SubfunctionSpec("mean_speed", tuple(SubfunctionInput(c, "speed", TRAFFIC) for c in both), "speed"),
        SubfunctionSpec("lane", (SubfunctionInput("Leader", "lane", TRAFFIC),), "lane", combiner="first"),
        SubfunctionSpec(
            "priority",
            tuple(
                inp
                for c in both
                for inp in (SubfunctionInput(c, "stamina"), SubfunctionInput(c, "speed", TRAFFIC))
            ),
            "priority",
            target="internal",
            combiner=StaminaSpeedPriority(reference_speed),
        ),
        SubfunctionSpec("cruise", (SubfunctionInput("Leader", "cruise"),), "cruise", "internal", "first"),
        SubfunctionSpec("waypoint", (SubfunctionInput("Leader", "waypoint"),), "waypoint", "internal", "first"),
        SubfunctionSpec("heading", (SubfunctionInput("Leader", "heading"),), "heading", "internal", "first"),
    )


PLATOON_MEMORY = MemorizationSpec(
    (
        MemorizedVariable("position", relative_to="position"),
        MemorizedVariable("speed", relative_to="speed"),
        MemorizedVariable("lane"),
        MemorizedVariable("stamina", state="internal"),
        MemorizedVariable("cruise", state="internal"),
        MemorizedVariable("follows", state="internal"),
        MemorizedVariable("gap", state="internal"),
    )
)
# waypoint and heading are deliberately not memorized: members pick up the
# platoon's current values, which are newer than anything stored at merge time


def platoon_spec(
    signature,
    threshold: float,
    *,
    reference_speed: float = 20.0,
    affinity: Optional[AffinityFunction] = None,
    radius: Optional[float] = None,
    refractory=0,
    spacing: float = 8.0,
) -> AggregationFunctionSpec:
    return AggregationFunctionSpec(
        signature,
        threshold,
        subfunctions=platoon_subfunctions(reference_speed),
        disaggregation=DisaggregationSpec(
            inherit={"speed": "speed", "lane": "lane"},
            layout=LineFormation("position", spacing),
        ),
        memorization=PLATOON_MEMORY,
        affinity=affinity or AffinityFunction("speed-lane", (("speed", 2.0), ("lane", 1.0))),
        radius=radius,
        refractory=Fraction(refractory),
    )


def crew_spec(signature, threshold: float) -> AggregationFunctionSpec:
    """Spirit-only merge of followers' decision state (the l1 loop)."""
    return AggregationFunctionSpec(
        signature,
        threshold,
        subfunctions=(
            SubfunctionSpec("stamina", (SubfunctionInput("Follower", "stamina"),), "stamina", "internal"),
        ),
    )


@dataclass(frozen=True)
class ObserverZone:
    """Stretch of road ``[start, end]`` (along x) where vehicles must be detailed.

    Platoons split ``margin`` before the zone.  Vehicles may merge again once
    ``margin`` past it, except convoy heads, which wait for another
    ``clearance`` so their followers are out too before any group is formed.
    """

    start: float
    end: float
    margin: float = 40.0
    clearance: float = 0.0

    def inside(self, x: float) -> bool:
        return self.start <= x <= self.end

    def near(self, x: float) -> bool:
        return self.start - self.margin <= x <= self.end + self.margin

    def split_trigger(self, world: World, agent: ConceptualAgent, now) -> bool:
        body = agent.body_in(PLATOONS)
        return body is not None and self.near(body.external_state["position"][0])

    def eligible(self, world: World, agent: ConceptualAgent, now) -> bool:
        body = agent.body_in(TRAFFIC)
        if body is None or not body.active:
            return False
        x = body.external_state["position"][0]
        tail = self.clearance if agent.class_name == "Leader" else 0.0
        return not self.start - self.margin <= x <= self.end + self.margin + tail

    def activation(self, world: World, body: BodyAgent, now) -> Optional[bool]:
        if body.level != DIAGNOSTICS:
            return None
        road = world.agents[body.owner].body_in(TRAFFIC)
        return road is not None and road.active and self.inside(road.external_state["position"][0])


def platoon_policy(specs: Sequence[AggregationFunctionSpec], zone: ObserverZone, **kw) -> LodPolicy:
    return LodPolicy(
        specs,
        triggers=(zone.split_trigger,),
        activation=zone.activation,
        eligible=zone.eligible,
        **kw,
    )
