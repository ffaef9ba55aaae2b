"""Levels and the three inter-level digraphs (influence, perception, hierarchy).

The hierarchy digraph encodes three relations:

* a simple edge ``(a, b)`` means ``a`` is included in ``b`` (``a < b``);
* a symmetric pair ``(a, b), (b, a)`` means ``a`` and ``b`` are complementary
  (same scale, different domain);
* a loop ``(a, a)`` means spirits of bodies in ``a`` may be merged while the
  bodies stay in place.

Everything here is a pure function over immutable values.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Optional

Edge = tuple[str, str]


@dataclass(frozen=True)
class Level:
    name: str
    space: Optional[str] = None
    time: Optional[str] = None
    hz: Optional[Fraction] = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("level name must be non-empty")

    @property
    def scale(self) -> Optional[tuple[Optional[str], Optional[str]]]:
        if self.space is None and self.time is None:
            return None
        return (self.space, self.time)


@dataclass(frozen=True)
class MemberSlot:
    """One ``<[min;max] class, level>`` argument of an aggregation function."""

    class_name: str
    min: int
    max: int
    level: Optional[str] = None

    def __post_init__(self):
        if not (1 <= self.min <= self.max):
            raise ValueError(
                f"invalid cardinality [{self.min};{self.max}] for {self.class_name}"
            )

    def admits(self, count: int) -> bool:
        return self.min <= count <= self.max


@dataclass(frozen=True)
class AggregationSignature:
    name: str
    members: tuple[MemberSlot, ...]
    output_class: str
    output_level: Optional[str] = None
    threshold: Optional[float] = None

    @property
    def spirit_only(self) -> bool:
        return self.output_level is None and all(s.level is None for s in self.members)


@dataclass(frozen=True)
class HierarchicalModel:
    levels: Mapping[str, Level]
    influence: frozenset[Edge] = frozenset()
    perception: frozenset[Edge] = frozenset()
    hierarchy: Mapping[Edge, frozenset[str]] = field(default_factory=dict)
    aggregations: Mapping[str, AggregationSignature] = field(default_factory=dict)
    strategy: Optional[str] = None
    precedence: frozenset[Edge] = frozenset()

    @classmethod
    def build(
        cls,
        levels: Iterable[Level | str],
        influence: Iterable[Edge] = (),
        perception: Iterable[Edge] = (),
        hierarchy: Mapping[Edge, Iterable[str]] | Iterable[Edge] = (),
        aggregations: Iterable[AggregationSignature] = (),
        strategy: Optional[str] = None,
        precedence: Iterable[Edge] = (),
    ) -> "HierarchicalModel":
        lv = {}
        for item in levels:
            level = item if isinstance(item, Level) else Level(item)
            if level.name in lv:
                raise ValueError(f"duplicate level {level.name!r}")
            lv[level.name] = level
        if isinstance(hierarchy, Mapping):
            h = {tuple(e): frozenset(labels) for e, labels in hierarchy.items()}
        else:
            h = {tuple(e): frozenset() for e in hierarchy}
        return cls(
            levels=lv,
            influence=frozenset(map(tuple, influence)),
            perception=frozenset(map(tuple, perception)),
            hierarchy=h,
            aggregations={a.name: a for a in aggregations},
            strategy=strategy,
            precedence=frozenset(map(tuple, precedence)),
        )

    def influences(self, level: str) -> list[str]:
        """Levels that bodies in ``level`` may send influences to (own level first)."""
        return [level] + sorted(b for a, b in self.influence if a == level and b != level)

    def perceives(self, level: str) -> list[str]:
        return [level] + sorted(b for a, b in self.perception if a == level and b != level)


class RelationKind(enum.Enum):
    INCLUSION = "inclusion"
    COMPLEMENTARITY = "complementarity"
    SPIRIT_LOOP = "spirit-loop"


@dataclass(frozen=True)
class LevelRelation:
    kind: RelationKind
    source: str
    target: str

    def __str__(self):
        sym = {"inclusion": "<", "complementarity": "=", "spirit-loop": "@"}[self.kind.value]
        if self.kind is RelationKind.SPIRIT_LOOP:
            return f"loop({self.source})"
        return f"{self.source} {sym} {self.target}"


def inclusion(a: str, b: str) -> LevelRelation:
    return LevelRelation(RelationKind.INCLUSION, a, b)


def complementarity(a: str, b: str) -> LevelRelation:
    a, b = sorted((a, b))
    return LevelRelation(RelationKind.COMPLEMENTARITY, a, b)


def spirit_loop(a: str) -> LevelRelation:
    return LevelRelation(RelationKind.SPIRIT_LOOP, a, a)


def edge_kind(edges: Iterable[Edge] | Mapping[Edge, object], edge: Edge) -> RelationKind:
    a, b = edge
    if a == b:
        return RelationKind.SPIRIT_LOOP
    if (b, a) in edges:
        return RelationKind.COMPLEMENTARITY
    return RelationKind.INCLUSION


def classify_edges(model: HierarchicalModel) -> frozenset[LevelRelation]:
    out = set()
    for a, b in model.hierarchy:
        kind = edge_kind(model.hierarchy, (a, b))
        if kind is RelationKind.SPIRIT_LOOP:
            out.add(spirit_loop(a))
        elif kind is RelationKind.COMPLEMENTARITY:
            out.add(complementarity(a, b))
        else:
            out.add(inclusion(a, b))
    return frozenset(out)


def _inclusion_adjacency(model: HierarchicalModel) -> dict[str, list[str]]:
    adj: dict[str, list[str]] = {name: [] for name in model.levels}
    for a, b in sorted(model.hierarchy):
        if edge_kind(model.hierarchy, (a, b)) is RelationKind.INCLUSION:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, [])
    return adj


def _closure(adj: Mapping[str, Iterable[str]]) -> frozenset[Edge]:
    pairs = set()
    for start in adj:
        stack = list(adj[start])
        seen = set()
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            pairs.add((start, node))
            stack.extend(adj.get(node, ()))
    return frozenset(pairs)


def _complementarity_classes(model: HierarchicalModel) -> tuple[frozenset[str], ...]:
    parent = {name: name for name in model.levels}
    for a, b in model.hierarchy:
        parent.setdefault(a, a)
        parent.setdefault(b, b)

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in model.hierarchy:
        if a != b and (b, a) in model.hierarchy:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[str, set[str]] = {}
    for name in parent:
        groups.setdefault(find(name), set()).add(name)
    return tuple(sorted((frozenset(g) for g in groups.values()), key=min))


@dataclass(frozen=True)
class Closure:
    inclusion_order: frozenset[Edge]
    complementarity_classes: tuple[frozenset[str], ...]

    def __post_init__(self):
        index = {name: i for i, cls in enumerate(self.complementarity_classes) for name in cls}
        object.__setattr__(self, "_class_of", index)

    def included(self, a: str, b: str) -> bool:
        return (a, b) in self.inclusion_order

    def complementary(self, a: str, b: str) -> bool:
        ca = self._class_of.get(a)
        return a != b and ca is not None and ca == self._class_of.get(b)


def transitive_closure(model: HierarchicalModel, adjacency=None) -> Closure:
    adjacency = adjacency if adjacency is not None else _inclusion_adjacency(model)
    return Closure(
        inclusion_order=_closure(adjacency),
        complementarity_classes=_complementarity_classes(model),
    )


def close_order(pairs: Iterable[Edge]) -> frozenset[Edge]:
    """Transitive closure of an arbitrary relation given as pairs."""
    adj: dict[str, list[str]] = {}
    for a, b in pairs:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, [])
    return _closure(adj)


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str
    witness: tuple = ()

    def __str__(self):
        return f"[{self.rule}] {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()
    warnings: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}

    def __add__(self, other: "ValidationReport") -> "ValidationReport":
        return ValidationReport(
            self.violations + other.violations, self.warnings + other.warnings
        )

    def lines(self) -> list[str]:
        out = [str(v) for v in self.violations]
        out += [f"warning: {w}" for w in self.warnings]
        return out


def _find_cycle(adj: Mapping[str, list[str]]) -> list[list[str]]:
    """One witness cycle per strongly connected component of size >= 2 (Tarjan)."""
    index: dict[str, int] = {}
    low: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    components: list[list[str]] = []
    counter = 0

    def strongconnect(v):
        nonlocal counter
        index[v] = low[v] = counter
        counter += 1
        stack.append(v)
        on_stack.add(v)
        for w in adj.get(v, ()):
            if w == v:
                continue
            if w not in index:
                strongconnect(w)
                low[v] = min(low[v], low[w])
            elif w in on_stack:
                low[v] = min(low[v], index[w])
        if low[v] == index[v]:
            comp = []
            while True:
                w = stack.pop()
                on_stack.discard(w)
                comp.append(w)
                if w == v:
                    break
            if len(comp) > 1:
                components.append(comp)

    for v in sorted(adj):
        if v not in index:
            strongconnect(v)

    cycles = []
    for comp in components:
        members = set(comp)
        start = min(comp)
        # walk inside the component until a node repeats
        path, seen = [start], {start: 0}
        node = start
        while True:
            node = min(w for w in adj[node] if w in members and w != node)
            if node in seen:
                cycle = path[seen[node]:] + [node]
                break
            seen[node] = len(path)
            path.append(node)
        cycles.append(cycle)
    return sorted(cycles)


def _class_path(model: HierarchicalModel, a: str, b: str) -> list[str]:
    adj: dict[str, list[str]] = {}
    for x, y in sorted(model.hierarchy):
        if x != y and (y, x) in model.hierarchy:
            adj.setdefault(x, []).append(y)
    prev = {a: None}
    queue = [a]
    while queue:
        node = queue.pop(0)
        if node == b:
            break
        for nxt in adj.get(node, ()):
            if nxt not in prev:
                prev[nxt] = node
                queue.append(nxt)
    path = [b]
    while prev.get(path[-1]) is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def validate_hierarchical_graph(model: HierarchicalModel) -> ValidationReport:
    violations: list[Violation] = []
    levels = set(model.levels)
    if not levels:
        violations.append(Violation("levels", "model declares no levels"))

    for kind, edges in (
        ("influence", model.influence),
        ("perception", model.perception),
        ("hierarchy", model.hierarchy),
    ):
        for edge in sorted(edges):
            missing = [x for x in edge if x not in levels]
            if missing:
                violations.append(
                    Violation(
                        "unknown-level",
                        f"{kind} edge {edge[0]}->{edge[1]} names undeclared level(s) "
                        + ", ".join(sorted(set(missing))),
                        edge,
                    )
                )

    for edge, labels in sorted(model.hierarchy.items()):
        kind = edge_kind(model.hierarchy, edge)
        if kind is RelationKind.COMPLEMENTARITY and labels:
            violations.append(
                Violation(
                    "label-placement",
                    f"symmetric edge {edge[0]}->{edge[1]} must not carry labels "
                    f"(has {', '.join(sorted(labels))})",
                    edge,
                )
            )
        elif kind is not RelationKind.COMPLEMENTARITY and not labels:
            violations.append(
                Violation(
                    "label-placement",
                    f"{kind.value} edge {edge[0]}->{edge[1]} needs at least one "
                    "aggregation function label",
                    edge,
                )
            )

    adjacency = _inclusion_adjacency(model)
    closure = transitive_closure(model, adjacency)

    # Rule 1: complementarity is transitive, so every class must share one scale.
    for cls in closure.complementarity_classes:
        scaled = sorted(
            (name for name in cls if name in model.levels and model.levels[name].scale),
        )
        for other in scaled[1:]:
            first = scaled[0]
            if model.levels[first].scale != model.levels[other].scale:
                path = _class_path(model, first, other)
                violations.append(
                    Violation(
                        "rule1",
                        f"{first} and {other} are complementary through "
                        f"{' = '.join(path)} but declare different scales",
                        tuple(path),
                    )
                )

    # Rule 2: no level included in itself once symmetric pairs and loops are gone.
    for cycle in _find_cycle(adjacency):
        violations.append(
            Violation(
                "rule2",
                "inclusion cycle " + " -> ".join(cycle),
                tuple(cycle),
            )
        )

    # Rule 3: no two distinct levels both nested and complementary.
    reported = set()
    for a, b in sorted(closure.inclusion_order):
        if a != b and closure.complementary(a, b):
            key = tuple(sorted((a, b)))
            if key in reported:
                continue
            reported.add(key)
            violations.append(
                Violation(
                    "rule3",
                    f"{a} < {b} and {a} = {b} "
                    f"(via {' = '.join(_class_path(model, a, b))})",
                    (a, b),
                )
            )
    return ValidationReport(tuple(violations))


def _compatible(model: HierarchicalModel, edge: Edge, spec) -> bool:
    a, b = edge
    kind = edge_kind(model.hierarchy, edge)
    spirit_only = spec.output_level is None and all(s.level is None for s in spec.members)
    if kind is RelationKind.SPIRIT_LOOP:
        return spirit_only
    if kind is RelationKind.INCLUSION:
        return (
            not spirit_only
            and spec.output_level == b
            and all(s.level == a for s in spec.members)
        )
    return False


def check_label_bindings(model: HierarchicalModel, registry: Iterable) -> ValidationReport:
    """Check every hierarchy label against registered aggregation signatures.

    ``registry`` holds objects exposing ``name``, ``members`` (slots with a
    ``level``) and ``output_level``.
    """
    specs = {spec.name: spec for spec in registry}
    violations: list[Violation] = []
    warnings: list[str] = []
    placed: set[str] = set()
    for edge, labels in sorted(model.hierarchy.items()):
        for label in sorted(labels):
            spec = specs.get(label)
            if spec is None:
                violations.append(
                    Violation(
                        "unknown-label",
                        f"label {label} on {edge[0]}->{edge[1]} names no registered "
                        "aggregation function",
                        (edge, label),
                    )
                )
                continue
            placed.add(label)
            if not _compatible(model, edge, spec):
                violations.append(
                    Violation(
                        "signature-mismatch",
                        f"{label} cannot label {edge_kind(model.hierarchy, edge).value} "
                        f"edge {edge[0]}->{edge[1]}",
                        (edge, label),
                    )
                )
    for name in sorted(specs):
        spec = specs[name]
        if name not in placed:
            violations.append(
                Violation("unplaced-spec", f"{name} labels no hierarchy edge", (name,))
            )
        if spec.output_level is not None:
            for src in sorted({s.level for s in spec.members if s.level is not None}):
                if src != spec.output_level and (src, spec.output_level) not in model.influence:
                    warnings.append(
                        f"{name} aggregates {src} bodies into {spec.output_level} "
                        f"but {src} cannot influence {spec.output_level}"
                    )
    return ValidationReport(tuple(violations), tuple(warnings))
