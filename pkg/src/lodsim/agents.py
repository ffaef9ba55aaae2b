"""Spirit/body agents and the influence-reaction step of one level.

A conceptual agent is one unsituated spirit (internal state, decision module)
plus one or more bodies, each situated in exactly one level (external state,
action module).  A body step runs the five-phase life cycle and only emits
influences; the level's reaction applies them all at once.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from . import arith
from .levels import Closure, HierarchicalModel, transitive_closure

log = logging.getLogger(__name__)

ENV_PREFIX = "env:"


class AgentError(Exception):
    pass


class BehaviorError(AgentError):
    """A decision or action module misbehaved; carries where it happened."""

    def __init__(self, message, *, level=None, time=None, agent_id=None):
        where = ", ".join(
            f"{k}={v}" for k, v in (("level", level), ("time", time), ("agent", agent_id)) if v is not None
        )
        super().__init__(f"{message} ({where})" if where else message)
        self.level, self.time, self.agent_id = level, time, agent_id


@dataclass
class BodyAgent:
    body_id: str
    owner: str
    level: str
    external_state: dict[str, Any]
    active: bool = True


@dataclass
class SpiritAgent:
    agent_id: str
    class_name: str
    internal_state: dict[str, Any]


@dataclass(frozen=True)
class MemberTrace:
    """Who went into an aggregate: identity, slot level and detached bodies."""

    agent_id: str
    class_name: str
    level: Optional[str]
    body_ids: tuple[str, ...]
    parked: tuple[BodyAgent, ...] = ()
    nested: Optional["AggregateInfo"] = None


@dataclass(frozen=True)
class AggregateInfo:
    function: str
    members: tuple[MemberTrace, ...]
    created_at: Fraction
    spirit_only: bool
    record: Optional[object] = None

    def composition(self) -> Counter:
        return Counter((m.class_name, m.level) for m in self.members)


@dataclass
class ConceptualAgent:
    agent_id: str
    class_name: str
    spirit: SpiritAgent
    bodies: dict[str, BodyAgent] = field(default_factory=dict)
    aggregate: Optional[AggregateInfo] = None

    def body_in(self, level: Optional[str]) -> Optional[BodyAgent]:
        for body_id in sorted(self.bodies):
            body = self.bodies[body_id]
            if body.level == level:
                return body
        return None

    def represented(self) -> Counter:
        """Underlying (non-aggregate) member classes this agent stands for."""
        if self.aggregate is None:
            return Counter({self.class_name: 1})
        return _represented(self.aggregate)

    def value(self, variable: str, level: Optional[str] = None):
        """Variable lookup: external state of the body in ``level``, else internal state."""
        body = self.body_in(level) if level is not None else None
        if body is not None and variable in body.external_state:
            return body.external_state[variable]
        if variable in self.spirit.internal_state:
            return self.spirit.internal_state[variable]
        if level is None:
            for body_id in sorted(self.bodies):
                state = self.bodies[body_id].external_state
                if variable in state:
                    return state[variable]
        raise KeyError(f"{self.agent_id} has no variable {variable!r}")


def _represented(info: AggregateInfo) -> Counter:
    out = Counter()
    for m in info.members:
        out += _represented(m.nested) if m.nested else Counter({m.class_name: 1})
    return out


@dataclass(frozen=True)
class Influence:
    """A proposed change to ``target`` (body id, or None for the level itself)."""

    source: str
    target_level: str
    target: Optional[str]
    changes: Mapping[str, Any]
    mode: str = "add"


@dataclass(frozen=True)
class Action:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class BodyView:
    body_id: str
    owner: str
    class_name: str
    level: str
    state: Mapping[str, Any]


@dataclass(frozen=True)
class LevelView:
    level: str
    bodies: Mapping[str, BodyView]
    inert: Mapping[str, Any]
    by_owner: Mapping[str, str] = field(default_factory=dict)

    def owned_by(self, agent_id: str) -> Optional[BodyView]:
        body_id = self.by_owner.get(agent_id)
        return self.bodies[body_id] if body_id is not None else None


@dataclass(frozen=True)
class Perception:
    body: BodyView
    time: Fraction
    dt: Fraction
    levels: Mapping[str, LevelView]

    def find(self, agent_id: str, level: Optional[str] = None) -> Optional[BodyView]:
        order = [level] if level else list(self.levels)
        for name in order:
            view = self.levels.get(name)
            if view is not None:
                hit = view.owned_by(agent_id)
                if hit is not None:
                    return hit
        return None


class Behavior:
    """Decision module plus per-level action modules for one agent class.

    Subclasses override what they need; the defaults describe an agent that
    never acts.  ``functions`` maps level -> {function name: minimal Hz}.
    """

    functions: Mapping[str, Mapping[str, float]] = {}

    def actions(self, body: BodyAgent, perception: Perception) -> Sequence[str]:
        return ()

    def decide(self, internal: dict, perception: Perception, actions: Sequence[str], rng):
        return None, internal

    def execute(self, body: BodyAgent, action: Action, perception: Perception) -> Iterable[Influence]:
        return ()


class Environment:
    def natural_influences(self, view: LevelView, time: Fraction, dt: Fraction) -> Iterable[Influence]:
        return ()


class Drift(Environment):
    """Adds a constant ``delta`` to ``attribute`` of every body at each reaction."""

    def __init__(self, attribute: str, delta):
        self.attribute = attribute
        self.delta = delta

    def natural_influences(self, view, time, dt):
        for body_id in sorted(view.bodies):
            if self.attribute in view.bodies[body_id].state:
                yield Influence(
                    ENV_PREFIX + view.level, view.level, body_id, {self.attribute: self.delta}
                )


@dataclass
class LevelState:
    level: str
    bodies: dict[str, BodyAgent] = field(default_factory=dict)
    inert: dict[str, Any] = field(default_factory=dict)
    environment: Optional[Environment] = None
    pending: list[Influence] = field(default_factory=list)

    def active_bodies(self) -> list[BodyAgent]:
        return [self.bodies[k] for k in sorted(self.bodies) if self.bodies[k].active]


ReactionPolicy = Callable[[Any, Sequence[Influence]], Any]


@dataclass(frozen=True)
class ReactionOutcome:
    changes: tuple[tuple[Optional[str], str, Any], ...]
    conflicts: tuple[str, ...]


def _combine(current, influences: Sequence[Influence], attr: str, policy):
    values = [inf.changes[attr] for inf in influences]
    if policy == "add":
        return arith.add(current, arith.total(values)), None
    if policy == "set":
        return values[-1], None
    if callable(policy):
        return policy(current, influences), None
    modes = {inf.mode for inf in influences}
    if modes == {"set"}:
        return values[-1], None
    if modes == {"add"} and arith.is_numeric(current) and all(arith.is_numeric(v) for v in values):
        try:
            return arith.add(current, arith.total(values)), None
        except TypeError:
            pass
    first = influences[0]
    kept = first.changes[attr] if first.mode == "set" else arith.add(current, first.changes[attr])
    return kept, (
        f"conflict on {attr}: kept {first.source}, rejected "
        + ", ".join(inf.source for inf in influences[1:])
    )


def reaction(
    level: LevelState,
    influences: Iterable[Influence],
    *,
    time: Fraction = Fraction(0),
    dt: Fraction = Fraction(1),
    policies: Optional[Mapping[str, Any]] = None,
) -> ReactionOutcome:
    """Combine all influences aimed at ``level`` and apply them in one go.

    Environment influences are appended after agent influences.  Influences on
    vanished or inactive bodies are dropped and reported as conflicts.
    """
    policies = policies or {}
    influences = list(influences)
    for inf in influences:
        if inf.target_level != level.level:
            raise AgentError(f"influence for {inf.target_level} delivered to {level.level}")
    if level.environment is not None:
        influences.extend(level.environment.natural_influences(view_level(level), time, dt))

    grouped: dict[tuple[Optional[str], str], list[Influence]] = {}
    conflicts: list[str] = []
    for inf in influences:
        if inf.target is not None:
            body = level.bodies.get(inf.target)
            if body is None or not body.active:
                conflicts.append(f"dropped influence from {inf.source}: {inf.target} not active in {level.level}")
                continue
        for attr in inf.changes:
            grouped.setdefault((inf.target, attr), []).append(inf)

    changes = []
    for (target, attr), group in grouped.items():
        state = level.inert if target is None else level.bodies[target].external_state
        if attr not in state and not all(i.mode == "set" for i in group):
            conflicts.append(f"dropped additive influence on missing {attr} of {target}")
            continue
        new, conflict = _combine(state.get(attr), group, attr, policies.get(attr))
        if conflict:
            conflicts.append(f"{target}: {conflict}")
        changes.append((target, attr, new))

    # all reads above saw the old state; now commit
    for target, attr, new in changes:
        state = level.inert if target is None else level.bodies[target].external_state
        state[attr] = new
    for c in conflicts:
        log.debug("%s t=%s %s", level.level, time, c)
    return ReactionOutcome(tuple(changes), tuple(conflicts))


def view_body(body: BodyAgent, class_name: str) -> BodyView:
    return BodyView(
        body.body_id, body.owner, class_name, body.level, MappingProxyType(dict(body.external_state))
    )


def view_level(level: LevelState, classes: Optional[Mapping[str, str]] = None) -> LevelView:
    classes = classes or {}
    bodies = {b.body_id: view_body(b, classes.get(b.owner, "")) for b in level.active_bodies()}
    by_owner: dict[str, str] = {}
    for body_id, view in bodies.items():
        by_owner.setdefault(view.owner, body_id)
    return LevelView(
        level.level, MappingProxyType(bodies), MappingProxyType(dict(level.inert)), MappingProxyType(by_owner)
    )


class World:
    """The current agent population and, per level, the bodies situated there."""

    def __init__(self, model: HierarchicalModel, environments: Optional[Mapping[str, Environment]] = None):
        self.model = model
        self.closure: Closure = transitive_closure(model)
        environments = environments or {}
        self.levels: dict[str, LevelState] = {
            name: LevelState(name, environment=environments.get(name)) for name in sorted(model.levels)
        }
        self.agents: dict[str, ConceptualAgent] = {}
        self.time = Fraction(0)
        self.warnings: list[str] = []
        self.refractory: dict[str, Fraction] = {}
        self._serial = Counter()

    def new_id(self, prefix: str) -> str:
        self._serial[prefix] += 1
        return f"{prefix}#{self._serial[prefix]}"

    # -- registration -------------------------------------------------------

    def add_agent(self, agent: ConceptualAgent) -> ConceptualAgent:
        if agent.agent_id in self.agents:
            raise AgentError(f"agent id {agent.agent_id} already in use")
        for body in agent.bodies.values():
            if body.level not in self.levels:
                raise AgentError(f"unknown level {body.level!r}")
            if body.body_id in self.levels[body.level].bodies:
                raise AgentError(f"body id {body.body_id} already in {body.level}")
            body.owner = agent.agent_id
        self.agents[agent.agent_id] = agent
        for body in agent.bodies.values():
            self.levels[body.level].bodies[body.body_id] = body
        return agent

    def remove_agent(self, agent_id: str) -> ConceptualAgent:
        agent = self.agents.pop(agent_id)
        for body in agent.bodies.values():
            self.levels[body.level].bodies.pop(body.body_id, None)
        return agent

    def spawn_conceptual_agent(
        self,
        class_name: str,
        bodies: Sequence[tuple],
        internal_state: Optional[Mapping[str, Any]] = None,
        agent_id: Optional[str] = None,
    ) -> ConceptualAgent:
        """Create a spirit with one body per ``(level, external_state[, active])``."""
        if not bodies:
            raise AgentError(f"{class_name} needs at least one body")
        agent_id = agent_id or self.new_id(class_name)
        levels = [b[0] for b in bodies]
        for level in levels:
            if level not in self.levels:
                raise AgentError(f"unknown level {level!r}")
        for i, a in enumerate(levels):
            for b in levels[i + 1:]:
                if self.closure.included(a, b) or self.closure.included(b, a):
                    msg = (
                        f"{agent_id} has bodies in nested levels {a} and {b}; "
                        "those are normally alternatives switched by aggregation"
                    )
                    log.warning(msg)
                    self.warnings.append(msg)
        agent = ConceptualAgent(agent_id, class_name, SpiritAgent(agent_id, class_name, dict(internal_state or {})))
        for spec in bodies:
            level, state = spec[0], spec[1]
            active = spec[2] if len(spec) > 2 else True
            body_id = f"{agent_id}@{level}"
            if body_id in agent.bodies:
                body_id = self.new_id(body_id)
            agent.bodies[body_id] = BodyAgent(body_id, agent_id, level, dict(state), active)
        return self.add_agent(agent)

    # -- queries ------------------------------------------------------------

    def body(self, body_id: str) -> BodyAgent:
        for level in self.levels.values():
            if body_id in level.bodies:
                return level.bodies[body_id]
        raise KeyError(body_id)

    def owner_of(self, body: BodyAgent) -> ConceptualAgent:
        return self.agents[body.owner]

    def snapshot(self, levels: Optional[Iterable[str]] = None) -> dict[str, LevelView]:
        classes = {aid: a.class_name for aid, a in self.agents.items()}
        names = sorted(levels) if levels is not None else sorted(self.levels)
        return {name: view_level(self.levels[name], classes) for name in names}

    def represented(self) -> Counter:
        out = Counter()
        for agent in self.agents.values():
            out += agent.represented()
        return out

    def check_invariants(self) -> None:
        seen = {}
        for name, level in self.levels.items():
            for body_id, body in level.bodies.items():
                if body.level != name:
                    raise AgentError(f"{body_id} filed under {name} but situated in {body.level}")
                if body_id in seen:
                    raise AgentError(f"{body_id} appears in {seen[body_id]} and {name}")
                seen[body_id] = name
                owner = self.agents.get(body.owner)
                if owner is None or owner.bodies.get(body_id) is not body:
                    raise AgentError(f"{body_id} has no owning spirit")
        for agent in self.agents.values():
            if not agent.bodies:
                raise AgentError(f"{agent.agent_id} owns no body")


def agent_life_cycle_step(
    world: World,
    body: BodyAgent,
    behavior: Behavior,
    views: Mapping[str, LevelView],
    *,
    time: Fraction,
    dt: Fraction,
    rng=None,
) -> tuple[list[Influence], dict]:
    """Run perceive -> forward -> update -> choose -> act for one active body."""
    if not body.active:
        raise AgentError(f"{body.body_id} is inactive")
    agent = world.agents[body.owner]
    perceived = {name: views[name] for name in world.model.perceives(body.level) if name in views}
    own = views[body.level].bodies.get(body.body_id) if body.level in views else None
    if own is None:
        own = view_body(body, agent.class_name)
    perception = Perception(own, time, dt, MappingProxyType(perceived))

    try:
        available = list(behavior.actions(body, perception))
        action, internal = behavior.decide(dict(agent.spirit.internal_state), perception, available, rng)
    except AgentError:
        raise
    except Exception as exc:
        raise BehaviorError(f"decision failed: {exc!r}", level=body.level, time=time, agent_id=agent.agent_id) from exc
    agent.spirit.internal_state = dict(internal)

    if action is None or not available:
        return [], agent.spirit.internal_state
    if action.name not in available:
        raise BehaviorError(
            f"chose unavailable action {action.name!r}", level=body.level, time=time, agent_id=agent.agent_id
        )
    try:
        influences = list(behavior.execute(body, action, perception))
    except Exception as exc:
        raise BehaviorError(f"action failed: {exc!r}", level=body.level, time=time, agent_id=agent.agent_id) from exc
    allowed = set(world.model.influences(body.level))
    for inf in influences:
        if inf.target_level not in allowed:
            raise BehaviorError(
                f"influence into {inf.target_level} but {body.level} may only influence "
                + ", ".join(sorted(allowed)),
                level=body.level, time=time, agent_id=agent.agent_id,
            )
    return influences, agent.spirit.internal_state
