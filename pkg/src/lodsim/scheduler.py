"""Multi-rate discrete-event scheduler.

Every level owns a clock with an exact rational frequency.  Firing times are
``Fraction`` seconds so commensurate rates (60 Hz / 20 Hz) interleave exactly
and incommensurate ones never drift.  A level runs over the half-open window
``[0, duration)``.

At one instant the loop does, in order: control callbacks, the LOD tick (if
due), the act phase of every firing level (all bodies read the snapshot taken
at instant start), then the reaction of every firing level.  Ties between
levels are broken by level name.
"""
from __future__ import annotations

import heapq
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational
from typing import Callable, Iterable, Mapping, Optional

from .agents import (
    AgentError,
    Behavior,
    BehaviorError,
    Environment,
    World,
    agent_life_cycle_step,
    reaction,
)
from .levels import HierarchicalModel, validate_hierarchical_graph
from .runlog import RunLog

log = logging.getLogger(__name__)


class SchedulerError(Exception):
    pass


def as_hz(value) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float literal."""
    if isinstance(value, Rational):
        hz = Fraction(value)
    elif isinstance(value, str):
        hz = Fraction(value.strip())
    else:
        # floats come from config files; take the shortest decimal they print as
        hz = Fraction(repr(float(value)))
    if hz <= 0:
        raise SchedulerError(f"frequency must be positive, got {value!r}")
    return hz


@dataclass(frozen=True)
class AgentFunction:
    level: str
    name: str
    hz: Fraction


@dataclass(frozen=True)
class InfluenceDemand:
    source: str
    demander: str
    hz: Fraction


FrequencyConstraint = AgentFunction | InfluenceDemand


def effective_frequency(
    level: str, constraints: Iterable[FrequencyConstraint], base: Optional[Fraction] = None
) -> Fraction:
    """Highest of the base rate, agent function minimums and influence demands."""
    rates = [] if base is None else [Fraction(base)]
    for c in constraints:
        if c.hz <= 0:
            raise SchedulerError(f"constraint {c} must require a positive rate")
        if isinstance(c, AgentFunction) and c.level == level:
            rates.append(c.hz)
        elif isinstance(c, InfluenceDemand) and c.source == level:
            rates.append(c.hz)
    if not rates:
        raise SchedulerError(f"no frequency information for level {level!r}")
    return max(rates)


@dataclass
class LevelClock:
    level: str
    base_frequency_hz: Fraction
    current_frequency_hz: Fraction
    next_fire_time: Fraction = Fraction(0)
    firings: int = 0

    @property
    def period(self) -> Fraction:
        return 1 / self.current_frequency_hz


@dataclass
class RunStats:
    agent_steps: int = 0
    steps_by_level: Counter = field(default_factory=Counter)
    firings: Counter = field(default_factory=Counter)
    aggregations: int = 0
    disaggregations: int = 0
    conflicts: int = 0


class Simulation:
    """One run of a multi-level model: world, clocks, behaviors and the event loop."""

    def __init__(
        self,
        model: HierarchicalModel,
        behaviors: Mapping[str, Behavior],
        *,
        frequencies: Optional[Mapping[str, object]] = None,
        environments: Optional[Mapping[str, Environment]] = None,
        lod=None,
        seed: int = 0,
        record_states: bool = True,
        reaction_policies: Optional[Mapping[str, Mapping[str, object]]] = None,
    ):
        report = validate_hierarchical_graph(model)
        if not report.ok:
            raise SchedulerError("model is not valid:\n" + "\n".join(report.lines()))
        self.model = model
        self.world = World(model, environments)
        self.behaviors = dict(behaviors)
        self.lod = lod
        self.seed = seed
        self.rng = random.Random(seed)
        self.record_states = record_states
        self.reaction_policies = dict(reaction_policies or {})
        self.base: dict[str, Fraction] = {}
        for name, level in model.levels.items():
            if level.hz is not None:
                self.base[name] = as_hz(level.hz)
        for name, hz in (frequencies or {}).items():
            if name not in model.levels:
                raise SchedulerError(f"frequency given for unknown level {name!r}")
            self.base[name] = as_hz(hz)
        self.demands: dict[tuple[str, str], Fraction] = {}
        self.clocks: dict[str, LevelClock] = {}
        self.log = RunLog()
        self.stats = RunStats()
        self._controls: list[tuple[Fraction, int, Callable]] = []
        self._started = False

    # -- frequencies --------------------------------------------------------

    def behavior_for(self, class_name: str) -> Behavior:
        try:
            return self.behaviors[class_name]
        except KeyError:
            raise SchedulerError(f"no behavior registered for class {class_name!r}") from None

    def constraints(self, level: str) -> list[FrequencyConstraint]:
        out: list[FrequencyConstraint] = []
        classes = sorted(
            {self.world.agents[b.owner].class_name for b in self.world.levels[level].active_bodies()}
        )
        for cls in classes:
            for fname, hz in sorted(self.behavior_for(cls).functions.get(level, {}).items()):
                out.append(AgentFunction(level, f"{cls}.{fname}", as_hz(hz)))
        for (source, demander), hz in sorted(self.demands.items()):
            if source == level:
                out.append(InfluenceDemand(source, demander, hz))
        return out

    def frequency_of(self, level: str) -> Fraction:
        clock = self.clocks.get(level)
        base = clock.base_frequency_hz if clock else self.base.get(level)
        return effective_frequency(level, self.constraints(level), base)

    def _refresh(self, now: Fraction) -> None:
        for name, clock in self.clocks.items():
            try:
                hz = self.frequency_of(name)
            except SchedulerError:
                continue
            if hz != clock.current_frequency_hz:
                clock.current_frequency_hz = hz
                self.log.append(now, name, "frequency", "", "hz", hz)

    def set_frequency_demand(self, source: str, demander: str, hz) -> None:
        """``demander`` (influenced by ``source``) needs ``source`` to run at least at ``hz``."""
        if (source, demander) not in self.model.influence:
            raise SchedulerError(f"{source} does not influence {demander}; demand rejected")
        self.demands[(source, demander)] = as_hz(hz)
        if self._started:
            self._refresh(self.world.time)

    def clear_frequency_demand(self, source: str, demander: str) -> None:
        self.demands.pop((source, demander), None)
        if self._started:
            self._refresh(self.world.time)

    def at(self, time, callback: Callable[["Simulation"], None]) -> None:
        """Run ``callback(sim)`` at simulated ``time``, before any level fires then."""
        self._controls.append((Fraction(time), len(self._controls), callback))

    # -- execution ----------------------------------------------------------

    def _start(self) -> None:
        for name in sorted(self.model.levels):
            constraints = self.constraints(name)
            try:
                hz = effective_frequency(name, constraints, self.base.get(name))
            except SchedulerError:
                raise SchedulerError(
                    f"level {name!r} has neither a base frequency nor frequency constraints"
                ) from None
            base = self.base.get(name, hz)
            self.clocks[name] = LevelClock(name, base, hz)
            self.log.append(0, name, "frequency", "", "hz", hz)
        if self.record_states:
            for agent_id in sorted(self.world.agents):
                agent = self.world.agents[agent_id]
                for body in sorted(agent.bodies.values(), key=lambda b: b.body_id):
                    for var in sorted(body.external_state):
                        self.log.append(0, body.level, "init", agent_id, var, body.external_state[var])
        self._started = True

    def _act(self, level: str, views, now: Fraction) -> None:
        clock = self.clocks[level]
        dt = clock.period
        for body in self.world.levels[level].active_bodies():
            agent = self.world.agents[body.owner]
            behavior = self.behavior_for(agent.class_name)
            influences, _ = agent_life_cycle_step(
                self.world, body, behavior, views, time=now, dt=dt, rng=self.rng
            )
            for inf in influences:
                self.world.levels[inf.target_level].pending.append(inf)
            self.stats.agent_steps += 1
            self.stats.steps_by_level[level] += 1

    def _react(self, level: str, now: Fraction) -> None:
        state = self.world.levels[level]
        pending, state.pending = state.pending, []
        outcome = reaction(
            state,
            pending,
            time=now,
            dt=self.clocks[level].period,
            policies=self.reaction_policies.get(level),
        )
        for message in outcome.conflicts:
            self.stats.conflicts += 1
            self.log.append(now, level, "conflict", "", "", message)
        if self.record_states:
            for target, var, value in outcome.changes:
                owner = state.bodies[target].owner if target is not None else ""
                self.log.append(now, level, "state", owner, var, value)

    def _lod_tick(self, now: Fraction) -> None:
        from .lod import lod_policy_tick

        for event in lod_policy_tick(self.world, self.lod, now, self.rng):
            if event.kind == "aggregate":
                self.stats.aggregations += 1
            elif event.kind == "disaggregate":
                self.stats.disaggregations += 1
            self.log.append(now, event.level or "", event.kind, event.agent_id, event.function, event.detail)
        self._refresh(now)

    def run(self, duration) -> RunLog:
        duration = Fraction(duration)
        if duration < 0:
            raise SchedulerError("duration must be non-negative")
        if self._started:
            raise SchedulerError("a Simulation runs once")
        self._start()
        heap = [(clock.next_fire_time, name) for name, clock in self.clocks.items()]
        heapq.heapify(heap)
        controls = sorted(self._controls)
        lod_period = None
        next_lod = None
        if self.lod is not None and self.lod.check_hz:
            lod_period = 1 / as_hz(self.lod.check_hz)
            next_lod = Fraction(str(getattr(self.lod, "start", 0)))

        while True:
            candidates = [heap[0][0]] if heap else []
            if controls:
                candidates.append(controls[0][0])
            if next_lod is not None:
                candidates.append(next_lod)
            if not candidates:
                break
            now = min(candidates)
            if now >= duration:
                break
            self.world.time = now
            if controls and controls[0][0] == now:
                while controls and controls[0][0] == now:
                    controls.pop(0)[2](self)
                self._refresh(now)
            if next_lod == now:
                self._lod_tick(now)
                next_lod += lod_period
            firing = []
            while heap and heap[0][0] == now:
                firing.append(heapq.heappop(heap)[1])
            if not firing:
                continue
            views = self.world.snapshot()
            try:
                for level in firing:
                    self.log.append(now, level, "fire", "", "hz", self.clocks[level].current_frequency_hz)
                    self._act(level, views, now)
                for level in firing:
                    self._react(level, now)
            except BehaviorError:
                raise
            except AgentError as exc:
                raise BehaviorError(str(exc), time=now) from exc
            for level in firing:
                clock = self.clocks[level]
                clock.firings += 1
                self.stats.firings[level] += 1
                clock.next_fire_time = now + clock.period
                heapq.heappush(heap, (clock.next_fire_time, level))
        self.world.time = duration
        return self.log
