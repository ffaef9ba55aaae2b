"""Level-of-detail changes: aggregation, memorization, disaggregation, selection.

An aggregation function merges a cardinality-constrained set of conceptual
agents into one aggregate.  Body-aggregating functions replace the member
bodies by one aggregate body in a higher level; spirit-only functions merge
the spirits and leave the bodies where they are.  Aggregate state is built
by subfunctions; a memorization record, captured at aggregation time and
never touched afterwards, lets disaggregation rebuild plausible members from
the aggregate's current state.

Which groups to aggregate is decided by per-function affinity scores and one
of three strategies: global best, fixed order, partial order.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from . import arith
from .agents import (
    AggregateInfo,
    BodyAgent,
    ConceptualAgent,
    MemberTrace,
    SpiritAgent,
    World,
)
from .levels import AggregationSignature, MemberSlot, close_order


class LodError(Exception):
    pass


class CardinalityError(LodError):
    pass


class ClassMismatchError(LodError):
    pass


class AlreadyAggregatedError(LodError):
    pass


class RecordMismatchError(LodError):
    pass


class PrecedenceCycleError(LodError):
    pass


class SubfunctionError(LodError):
    pass


# -- subfunctions -------------------------------------------------------------


class StaminaSpeedPriority:
    """Mean of ``stamina * speed / reference_speed`` per member, clipped to [0, 1]."""

    def __init__(self, reference_speed: float):
        if reference_speed <= 0:
            raise ValueError("reference_speed must be positive")
        self.reference_speed = reference_speed

    def __call__(self, values):
        scores = []
        for stamina, speed in values:
            s = min(max(float(stamina), 0.0), 1.0)
            v = min(max(arith.norm(speed) / self.reference_speed, 0.0), 1.0)
            scores.append(s * v)
        return math.fsum(scores) / len(scores)


COMBINERS: dict[str, Callable[[list], Any]] = {
    "mean": arith.mean,
    "sum": arith.total,
    "first": lambda values: values[0],
    "min": min,
    "max": max,
    "count": len,
}


@dataclass(frozen=True)
class SubfunctionInput:
    class_name: str
    variable: str
    level: Optional[str] = None


@dataclass(frozen=True)
class SubfunctionSpec:
    """Reduces member variables to one aggregate variable.

    When a class contributes one input the combiner sees one value per member;
    with several inputs it sees one tuple per member.
    """

    name: str
    inputs: tuple[SubfunctionInput, ...]
    output: str
    target: str = "external"
    combiner: str | Callable = "mean"

    def __post_init__(self):
        if self.target not in ("external", "internal"):
            raise ValueError(f"target must be external or internal, not {self.target!r}")
        if not self.inputs:
            raise ValueError(f"subfunction {self.name} has no inputs")
        if isinstance(self.combiner, str) and self.combiner not in COMBINERS:
            raise ValueError(f"unknown combiner {self.combiner!r}")

    def reducer(self) -> Callable[[list], Any]:
        return COMBINERS[self.combiner] if isinstance(self.combiner, str) else self.combiner

    @property
    def composite(self) -> bool:
        per_class: dict[str, int] = {}
        for inp in self.inputs:
            per_class[inp.class_name] = per_class.get(inp.class_name, 0) + 1
        return any(n > 1 for n in per_class.values())


def apply_subfunction(sub: SubfunctionSpec, members: Sequence[ConceptualAgent]) -> tuple[str, Any]:
    values = []
    composite = sub.composite
    for member in members:
        mine = [inp for inp in sub.inputs if inp.class_name == member.class_name]
        if not mine:
            continue
        try:
            got = [member.value(inp.variable, inp.level) for inp in mine]
        except KeyError as exc:
            raise SubfunctionError(f"{sub.name}: {exc.args[0]}") from None
        values.append(tuple(got) if composite else got[0])
    if not values:
        raise SubfunctionError(f"{sub.name}: no member supplies any input")
    return sub.output, sub.reducer()(values)


# -- memorization / disaggregation specs ---------------------------------------


@dataclass(frozen=True)
class MemorizedVariable:
    """Member variable kept at aggregation time.

    With ``relative_to`` the stored value is the exact offset from that
    aggregate variable; otherwise the absolute value is stored.
    """

    variable: str
    relative_to: Optional[str] = None
    state: str = "external"


@dataclass(frozen=True)
class MemorizationSpec:
    variables: tuple[MemorizedVariable, ...]


@dataclass(frozen=True)
class RetainedValue:
    variable: str
    state: str
    relative_to: Optional[str]
    value: Any


@dataclass(frozen=True)
class MemberMemo:
    agent_id: str
    class_name: str
    level: Optional[str]
    retained: tuple[RetainedValue, ...]


@dataclass(frozen=True)
class MemorizationRecord:
    function: str
    counts: tuple[tuple[str, Optional[str], int], ...]
    members: tuple[MemberMemo, ...]
    created_at: Fraction


class LineFormation:
    """Fallback layout: members evenly spaced on a line centred on the aggregate.

    Centring keeps the members' mean equal to the aggregate variable.
    """

    def __init__(self, variable: str = "position", spacing: float = 1.0, direction=(-1.0, 0.0)):
        self.variable = variable
        self.spacing = spacing
        self.direction = direction

    def __call__(self, aggregate: ConceptualAgent, traces: Sequence[MemberTrace], level) -> list[dict]:
        centre = aggregate.value(self.variable, level)
        n = len(traces)
        out = []
        for k in range(n):
            shift = self.spacing * (k - (n - 1) / 2)
            if isinstance(centre, tuple):
                value = tuple(c + shift * d for c, d in zip(centre, self.direction))
            else:
                value = centre + shift * self.direction[0]
            out.append({self.variable: value})
        return out


@dataclass(frozen=True)
class DisaggregationSpec:
    """How members are rebuilt: ``inherit`` copies aggregate variables
    (member var <- aggregate var) before memorized values are applied;
    ``layout`` is used when no memorization record exists."""

    inherit: Mapping[str, str] = field(default_factory=dict)
    layout: Optional[Callable] = None
    defaults: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)


# -- affinity -----------------------------------------------------------------


@dataclass(frozen=True)
class AffinityFunction:
    """Normalized inverse distance averaged over all member pairs.

    ``variables`` lists ``(name, scale)``; a pair's distance is the Euclidean
    norm of scaled differences and its similarity ``1 / (1 + d)``.  ``rule``
    replaces the whole scoring when given.  ``decimals`` rounds scores so that
    numerically indistinguishable groups tie.
    """

    name: str
    variables: tuple[tuple[str, float], ...] = ()
    decimals: Optional[int] = None
    rule: Optional[Callable[[Sequence[ConceptualAgent]], float]] = None

    def similarity(self, a: ConceptualAgent, b: ConceptualAgent, level_a=None, level_b=None) -> float:
        d2 = 0.0
        for var, scale in self.variables:
            diff = arith.norm(arith.sub(a.value(var, level_a), b.value(var, level_b))) / scale
            d2 += diff * diff
        return 1.0 / (1.0 + math.sqrt(d2))

    def score(self, group: Sequence[ConceptualAgent], levels: Optional[Sequence] = None) -> float:
        if self.rule is not None:
            value = float(self.rule(group))
        elif len(group) < 2:
            value = 1.0
        else:
            levels = levels or [None] * len(group)
            sims = [
                self.similarity(group[i], group[j], levels[i], levels[j])
                for i, j in itertools.combinations(range(len(group)), 2)
            ]
            value = math.fsum(sims) / len(sims)
        return round(value, self.decimals) if self.decimals is not None else value


# -- aggregation function -----------------------------------------------------


@dataclass(frozen=True)
class AggregationFunctionSpec:
    signature: AggregationSignature
    threshold: float
    subfunctions: tuple[SubfunctionSpec, ...] = ()
    disaggregation: DisaggregationSpec = field(default_factory=DisaggregationSpec)
    memorization: Optional[MemorizationSpec] = None
    affinity: AffinityFunction = field(default_factory=lambda: AffinityFunction("constant"))
    radius: Optional[float] = None
    neighborhood: str = "position"
    refractory: Fraction = Fraction(0)

    def __post_init__(self):
        classes = [s.class_name for s in self.signature.members]
        if len(set(classes)) != len(classes):
            raise ValueError(f"{self.name}: a class may fill only one member slot")
        outputs = [s.output for s in self.subfunctions]
        if len(set(outputs)) != len(outputs):
            raise ValueError(f"{self.name}: subfunction outputs must be distinct")
        if self.spirit_only and any(s.target == "external" for s in self.subfunctions):
            raise ValueError(f"{self.name}: spirit-only aggregation cannot build external state")
        has_level = [s.level is not None for s in self.signature.members]
        if any(has_level) and not all(has_level):
            raise ValueError(f"{self.name}: either every slot names a level or none does")
        if all(has_level) != (self.signature.output_level is not None):
            raise ValueError(f"{self.name}: body slots need an output level and vice versa")

    name = property(lambda self: self.signature.name)
    members = property(lambda self: self.signature.members)
    output_class = property(lambda self: self.signature.output_class)
    output_level = property(lambda self: self.signature.output_level)
    spirit_only = property(lambda self: self.signature.spirit_only)

    def slot_for(self, class_name: str) -> Optional[MemberSlot]:
        for slot in self.signature.members:
            if slot.class_name == class_name:
                return slot
        return None

    def slot_index(self, class_name: str) -> int:
        for i, slot in enumerate(self.signature.members):
            if slot.class_name == class_name:
                return i
        return len(self.signature.members)

    def candidate(self, agent: ConceptualAgent) -> bool:
        """Whether ``agent`` could fill one of this function's slots right now."""
        slot = self.slot_for(agent.class_name)
        if slot is None:
            return False
        if slot.level is None:
            return True
        body = agent.body_in(slot.level)
        if body is None or not body.active:
            return False
        return all(not b.active for b in agent.bodies.values() if b.level != slot.level)


def _canonical(spec: AggregationFunctionSpec, members: Iterable[ConceptualAgent]) -> list[ConceptualAgent]:
    return sorted(members, key=lambda m: (spec.slot_index(m.class_name), m.agent_id))


def check_members(world: World, spec: AggregationFunctionSpec, members: Sequence[ConceptualAgent]) -> None:
    ids = [m.agent_id for m in members]
    if len(set(ids)) != len(ids):
        raise LodError(f"{spec.name}: duplicate members")
    for m in members:
        if world.agents.get(m.agent_id) is not m:
            raise AlreadyAggregatedError(f"{spec.name}: {m.agent_id} is not a live agent (already aggregated?)")
        if spec.slot_for(m.class_name) is None:
            raise ClassMismatchError(f"{spec.name}: no slot accepts class {m.class_name}")
    for slot in spec.members:
        n = sum(1 for m in members if m.class_name == slot.class_name)
        if not slot.admits(n):
            raise CardinalityError(
                f"{spec.name}: {n} {slot.class_name} given, needs [{slot.min};{slot.max}]"
            )
    for m in members:
        if not spec.candidate(m):
            slot = spec.slot_for(m.class_name)
            raise LodError(
                f"{spec.name}: {m.agent_id} needs an active body in {slot.level} "
                "and no other active body"
            )


def _read(agent: ConceptualAgent, variable: str, state: str, level):
    if state == "internal":
        if variable not in agent.spirit.internal_state:
            raise KeyError(f"{agent.agent_id} has no internal variable {variable!r}")
        return agent.spirit.internal_state[variable]
    body = agent.body_in(level) if level is not None else None
    if body is not None:
        if variable not in body.external_state:
            raise KeyError(f"{agent.agent_id} has no external variable {variable!r} in {level}")
        return body.external_state[variable]
    return agent.value(variable)


def memorize(
    spec: AggregationFunctionSpec,
    members: Sequence[ConceptualAgent],
    aggregate: ConceptualAgent,
    now,
) -> MemorizationRecord:
    """Snapshot retained member variables, offsets relative to the aggregate."""
    memo_spec = spec.memorization or MemorizationSpec(())
    memos = []
    for m in _canonical(spec, members):
        level = spec.slot_for(m.class_name).level
        kept = []
        for mv in memo_spec.variables:
            try:
                value = _read(m, mv.variable, mv.state, level)
            except KeyError:
                continue
            if mv.relative_to is not None:
                ref = aggregate.value(mv.relative_to, spec.output_level)
                value = arith.exact_offset(value, ref)
            kept.append(RetainedValue(mv.variable, mv.state, mv.relative_to, value))
        memos.append(MemberMemo(m.agent_id, m.class_name, level, tuple(kept)))
    counts = tuple(
        (slot.class_name, slot.level, sum(1 for m in memos if m.class_name == slot.class_name))
        for slot in spec.members
    )
    return MemorizationRecord(spec.name, counts, tuple(memos), Fraction(now))


def aggregate(
    world: World, spec: AggregationFunctionSpec, members: Sequence[ConceptualAgent], now=0
) -> tuple[ConceptualAgent, Optional[MemorizationRecord]]:
    check_members(world, spec, members)
    members = _canonical(spec, members)
    internal, external = {}, {}
    for sub in spec.subfunctions:
        name, value = apply_subfunction(sub, members)
        (internal if sub.target == "internal" else external)[name] = value

    agg_id = world.new_id(spec.output_class)
    traces = []
    for m in members:
        level = spec.slot_for(m.class_name).level
        parked = tuple(b for b in m.bodies.values() if level is not None and b.level != level)
        traces.append(
            MemberTrace(m.agent_id, m.class_name, level, tuple(sorted(m.bodies)), parked, m.aggregate)
        )

    if spec.spirit_only:
        bodies = {}
        for m in members:
            world.remove_agent(m.agent_id)
            bodies.update(m.bodies)
    else:
        body_id = f"{agg_id}@{spec.output_level}"
        bodies = {body_id: BodyAgent(body_id, agg_id, spec.output_level, external)}
    agent = ConceptualAgent(agg_id, spec.output_class, SpiritAgent(agg_id, spec.output_class, internal), bodies)

    record = memorize(spec, members, agent, now) if spec.memorization is not None else None
    agent.aggregate = AggregateInfo(spec.name, tuple(traces), Fraction(now), spec.spirit_only, record)
    if not spec.spirit_only:
        for m in members:
            world.remove_agent(m.agent_id)
    world.add_agent(agent)
    return agent, record


_STORED = object()


def disaggregate(
    world: World,
    spec: AggregationFunctionSpec,
    agent: ConceptualAgent,
    record: Optional[MemorizationRecord] | object = _STORED,
    now=0,
) -> list[ConceptualAgent]:
    """Rebuild the members of ``agent`` from its current state and ``record``.

    By default the record captured at aggregation time is used; pass ``None``
    to force the spec's fallback layout.
    """
    info = agent.aggregate
    if world.agents.get(agent.agent_id) is not agent or info is None:
        raise AlreadyAggregatedError(f"{agent.agent_id} is not a live aggregate (already disaggregated?)")
    if info.function != spec.name:
        raise RecordMismatchError(f"{agent.agent_id} was built by {info.function}, not {spec.name}")
    if record is _STORED:
        record = info.record
    if record is not None:
        if record.function != spec.name:
            raise RecordMismatchError(f"record of {record.function} given to {spec.name}")
        if [m.agent_id for m in record.members] != [t.agent_id for t in info.members]:
            raise RecordMismatchError(f"record does not describe the members of {agent.agent_id}")

    layout = None
    if record is None:
        layout_fn = spec.disaggregation.layout
        if layout_fn is None and not spec.spirit_only:
            raise LodError(f"{spec.name}: no memorization record and no default layout")
        if layout_fn is not None:
            layout = layout_fn(agent, info.members, spec.output_level)

    merged_internal = dict(agent.spirit.internal_state)
    world.remove_agent(agent.agent_id)
    rebuilt = []
    for k, trace in enumerate(info.members):
        internal = dict(merged_internal)
        external: dict[str, Any] = {}
        if not spec.spirit_only:
            external.update(spec.disaggregation.defaults.get(trace.class_name, {}))
            for var, agg_var in spec.disaggregation.inherit.items():
                external[var] = agent.value(agg_var, spec.output_level)
            if layout is not None:
                external.update(layout[k])
        if record is not None:
            for kept in record.members[k].retained:
                value = kept.value
                if kept.relative_to is not None:
                    value = arith.apply_offset(agent.value(kept.relative_to, spec.output_level), value)
                (internal if kept.state == "internal" else external)[kept.variable] = value

        if spec.spirit_only:
            bodies = {bid: agent.bodies[bid] for bid in trace.body_ids}
        else:
            main_id = next(
                (bid for bid in trace.body_ids if bid not in {p.body_id for p in trace.parked}),
                f"{trace.agent_id}@{trace.level}",
            )
            bodies = {main_id: BodyAgent(main_id, trace.agent_id, trace.level, external, True)}
            for parked in trace.parked:
                bodies[parked.body_id] = parked
        member = ConceptualAgent(
            trace.agent_id,
            trace.class_name,
            SpiritAgent(trace.agent_id, trace.class_name, internal),
            bodies,
            trace.nested,
        )
        world.add_agent(member)
        rebuilt.append(member)
    return rebuilt


# -- group scoring and selection ----------------------------------------------


@dataclass(frozen=True)
class ScoredGroup:
    function: str
    members: tuple[str, ...]
    score: float

    def key(self):
        return (-self.score, -len(self.members), tuple(sorted(self.members)), self.function)


def _within(spec: AggregationFunctionSpec, a: ConceptualAgent, b: ConceptualAgent) -> bool:
    if spec.radius is None:
        return True
    la = spec.slot_for(a.class_name).level
    lb = spec.slot_for(b.class_name).level
    d = arith.norm(arith.sub(a.value(spec.neighborhood, la), b.value(spec.neighborhood, lb)))
    return d <= spec.radius


def feasible_groups(spec: AggregationFunctionSpec, pool: Iterable[ConceptualAgent]) -> list[list[ConceptualAgent]]:
    """All slot-feasible groups whose members are pairwise within ``spec.radius``.

    Enumeration grows groups one candidate at a time and drops any branch that
    leaves the neighbourhood, which is exact for the pairwise criterion.
    """
    by_slot = []
    for slot in spec.members:
        cands = sorted(
            (a for a in pool if a.class_name == slot.class_name and spec.candidate(a)),
            key=lambda a: a.agent_id,
        )
        if len(cands) < slot.min:
            return []
        by_slot.append((slot, cands))

    out: list[list[ConceptualAgent]] = []

    def fill(slot_idx: int, start: int, taken: int, chosen: list[ConceptualAgent]):
        slot, cands = by_slot[slot_idx]
        if taken >= slot.min:
            if slot_idx + 1 == len(by_slot):
                out.append(list(chosen))
            else:
                fill(slot_idx + 1, 0, 0, chosen)
        if taken == slot.max:
            return
        for i in range(start, len(cands)):
            if len(cands) - i < slot.min - taken:
                break
            c = cands[i]
            if all(_within(spec, c, other) for other in chosen):
                chosen.append(c)
                fill(slot_idx, i + 1, taken + 1, chosen)
                chosen.pop()

    fill(0, 0, 0, [])
    return out


def score_groups(spec: AggregationFunctionSpec, pool: Iterable[ConceptualAgent]) -> list[ScoredGroup]:
    """Feasible groups scoring at least the spec threshold, best first."""
    pool = list(pool)
    scored = []
    for group in feasible_groups(spec, pool):
        levels = [spec.slot_for(m.class_name).level for m in group]
        score = spec.affinity.score(group, levels)
        if score >= spec.threshold:
            scored.append(ScoredGroup(spec.name, tuple(m.agent_id for m in group), score))
    scored.sort(key=ScoredGroup.key)
    return scored


class Strategy(enum.Enum):
    GLOBAL_BEST = "global"
    FIXED_ORDER = "fixed"
    PARTIAL_ORDER = "partial"


def precedence_layers(names: Sequence[str], precedence: Iterable[tuple[str, str]]) -> list[list[str]]:
    """Group spec names into layers; every ``(a, b)`` puts ``a`` in an earlier layer."""
    names = list(names)
    pairs = [(a, b) for a, b in precedence if a in names and b in names]
    closed = close_order(pairs)
    if any(a == b for a, b in closed):
        cyc = sorted(a for a, b in closed if a == b)
        raise PrecedenceCycleError("cyclic precedence among " + ", ".join(cyc))
    depth = {n: 0 for n in names}
    for _ in names:
        for a, b in pairs:
            depth[b] = max(depth[b], depth[a] + 1)
    layers: dict[int, list[str]] = {}
    for n in names:
        layers.setdefault(depth[n], []).append(n)
    return [layers[k] for k in sorted(layers)]


def _greedy(candidates: list[ScoredGroup], consumed: set[str]) -> list[ScoredGroup]:
    chosen = []
    for group in sorted(candidates, key=ScoredGroup.key):
        if consumed.isdisjoint(group.members):
            chosen.append(group)
            consumed.update(group.members)
    return chosen


def plan_aggregations(
    strategy: Strategy | str,
    specs: Sequence[AggregationFunctionSpec],
    pool: Iterable[ConceptualAgent],
    precedence: Iterable[tuple[str, str]] = (),
) -> list[ScoredGroup]:
    """Pure selection: which groups each strategy instantiates, in order."""
    strategy = Strategy(strategy)
    pool = list(pool)
    by_name = {s.name: s for s in specs}
    scored = {s.name: score_groups(s, pool) for s in specs}
    consumed: set[str] = set()
    if strategy is Strategy.GLOBAL_BEST:
        return _greedy([g for s in specs for g in scored[s.name]], consumed)
    if strategy is Strategy.FIXED_ORDER:
        out = []
        for s in specs:
            out += _greedy(scored[s.name], consumed)
        return out
    out = []
    for layer in precedence_layers([s.name for s in specs], precedence):
        out += _greedy([g for name in layer for g in scored[by_name[name].name]], consumed)
    return out


@dataclass(frozen=True)
class Applied:
    function: str
    aggregate_id: str
    members: tuple[str, ...]
    score: float


def select_and_apply(
    world: World,
    strategy: Strategy | str,
    specs: Sequence[AggregationFunctionSpec],
    pool: Iterable[ConceptualAgent],
    precedence: Iterable[tuple[str, str]] = (),
    now=0,
) -> list[Applied]:
    by_name = {s.name: s for s in specs}
    applied = []
    for group in plan_aggregations(strategy, specs, pool, precedence):
        members = [world.agents[a] for a in group.members]
        agent, _ = aggregate(world, by_name[group.function], members, now)
        applied.append(Applied(group.function, agent.agent_id, group.members, group.score))
    return applied


# -- policy tick --------------------------------------------------------------


Trigger = Callable[[World, ConceptualAgent, Fraction], bool]


@dataclass
class LodPolicy:
    specs: Sequence[AggregationFunctionSpec]
    strategy: Strategy | str = Strategy.GLOBAL_BEST
    precedence: Sequence[tuple[str, str]] = ()
    check_hz: Any = 1
    start: Any = 0
    triggers: Sequence[Trigger] = ()
    activation: Optional[Callable[[World, BodyAgent, Fraction], Optional[bool]]] = None
    eligible: Optional[Callable[[World, ConceptualAgent, Fraction], bool]] = None
    aggregation_enabled: bool = True

    def spec(self, name: str) -> Optional[AggregationFunctionSpec]:
        for s in self.specs:
            if s.name == name:
                return s
        return None


@dataclass(frozen=True)
class LodEvent:
    kind: str
    level: Optional[str]
    agent_id: str
    function: str = ""
    detail: Any = ""


def lod_policy_tick(world: World, policy: Optional[LodPolicy], now, rng=None) -> list[LodEvent]:
    """Disaggregation triggers, then body activation, then aggregation."""
    if policy is None:
        return []
    now = Fraction(now)
    events: list[LodEvent] = []

    for agent_id in sorted(world.agents):
        agent = world.agents.get(agent_id)
        if agent is None or agent.aggregate is None:
            continue
        spec = policy.spec(agent.aggregate.function)
        if spec is None or not any(t(world, agent, now) for t in policy.triggers):
            continue
        members = disaggregate(world, spec, agent, now=now)
        for m in members:
            world.refractory[m.agent_id] = now + Fraction(spec.refractory)
        events.append(
            LodEvent("disaggregate", spec.output_level, agent_id, spec.name, tuple(m.agent_id for m in members))
        )

    if policy.activation is not None:
        for name in sorted(world.levels):
            level = world.levels[name]
            for body_id in sorted(level.bodies):
                body = level.bodies[body_id]
                want = policy.activation(world, body, now)
                if want is not None and bool(want) != body.active:
                    body.active = bool(want)
                    events.append(LodEvent("activate" if want else "deactivate", name, body.owner, "", body_id))

    if policy.aggregation_enabled and policy.specs:
        pool = [
            world.agents[a]
            for a in sorted(world.agents)
            if world.refractory.get(a, Fraction(-1)) <= now
            and (policy.eligible is None or policy.eligible(world, world.agents[a], now))
        ]
        for done in select_and_apply(world, policy.strategy, policy.specs, pool, policy.precedence, now):
            spec = policy.spec(done.function)
            events.append(
                LodEvent("aggregate", spec.output_level, done.aggregate_id, done.function, done.members)
            )
    for a in [a for a, until in world.refractory.items() if until <= now]:
        del world.refractory[a]
    return events
