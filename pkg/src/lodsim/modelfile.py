"""Reader and writer for the line-oriented model description format.

One directive per line, ``#`` starts a comment::

    level l1 space=road time=s hz=60
    influence l1 -> l2
    perceive l1 -> l3
    hierarchy l1 -> l1 : F_Ag1
    hierarchy l1 -> l2 : F_Ag2, F_Ag3
    hierarchy l1 <-> l3
    aggregation F_Ag2 ([1;1] Leader @ l1, [4;9] Follower @ l1) -> Platoon @ l2 threshold=0.9
    aggregation F_Ag1 ([2;9] Follower) -> Crew
    strategy fixed
    precedence F_Ag2 < F_Ag3

Directives may come in any order; repeated edges collapse and their labels
merge.  Errors name the file, line and column.
"""
from __future__ import annotations

import re
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .levels import (
    AggregationSignature,
    HierarchicalModel,
    Level,
    MemberSlot,
    ValidationReport,
    check_label_bindings,
    validate_hierarchical_graph,
)

NAME = r"[A-Za-z_][\w.\-]*"
STRATEGIES = ("global", "fixed", "partial")


class ModelFormatError(ValueError):
    def __init__(self, message: str, path: str = "<string>", line: int = 0, column: int = 0):
        self.path, self.line, self.column = path, line, column
        super().__init__(f"{path}:{line}:{column}: {message}")


class ModelValidationError(ValueError):
    def __init__(self, report: ValidationReport, path: str = "<string>"):
        self.report = report
        super().__init__(f"{path}: model is not valid\n" + "\n".join(report.lines()))


_EDGE = re.compile(rf"^({NAME})\s*(->|<->)\s*({NAME})\s*(?::\s*(.*))?$")
_SLOT = re.compile(rf"^\[\s*(\d+)\s*;\s*(\d+)\s*\]\s*({NAME})\s*(?:@\s*({NAME}))?$")
_AGG = re.compile(
    rf"^({NAME})\s*\((.*)\)\s*->\s*({NAME})\s*(?:@\s*({NAME}))?\s*(?:threshold\s*=\s*(\S+))?$"
)
_PREC = re.compile(rf"^({NAME})\s*<\s*({NAME})$")


def parse_model(text: str, path: str = "<string>") -> HierarchicalModel:
    levels: dict[str, Level] = {}
    influence, perception, precedence = set(), set(), set()
    hierarchy: dict[tuple[str, str], set[str]] = {}
    aggregations: dict[str, AggregationSignature] = {}
    strategy: Optional[str] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        keyword, _, rest = line.strip().partition(" ")
        rest = rest.strip()
        col = indent + len(keyword) + 2

        def fail(msg, column=col):
            raise ModelFormatError(msg, path, lineno, column)

        if keyword == "level":
            parts = rest.split()
            if not parts or not re.fullmatch(NAME, parts[0]):
                fail("expected a level name")
            name = parts[0]
            if name in levels:
                fail(f"level {name!r} declared twice")
            attrs = {}
            for item in parts[1:]:
                key, eq, value = item.partition("=")
                if not eq or key not in ("space", "time", "hz") or not value:
                    fail(f"bad level attribute {item!r} (use space=, time=, hz=)", col + rest.find(item))
                attrs[key] = value
            hz = None
            if "hz" in attrs:
                try:
                    hz = Fraction(attrs["hz"])
                except (ValueError, ZeroDivisionError):
                    fail(f"bad frequency {attrs['hz']!r}")
                if hz <= 0:
                    fail("frequency must be positive")
            levels[name] = Level(name, attrs.get("space"), attrs.get("time"), hz)

        elif keyword in ("influence", "perceive", "hierarchy"):
            m = _EDGE.match(rest)
            if not m:
                fail(f"expected '<level> -> <level>' after {keyword}")
            a, arrow, b, labels = m.groups()
            names = set()
            if labels is not None:
                if keyword != "hierarchy":
                    fail("only hierarchy edges carry labels", col + m.start(4))
                for label in labels.split(","):
                    label = label.strip()
                    if not re.fullmatch(NAME, label):
                        fail(f"bad label {label!r}", col + m.start(4))
                    names.add(label)
            pairs = [(a, b)] + ([(b, a)] if arrow == "<->" else [])
            for edge in pairs:
                if keyword == "influence":
                    influence.add(edge)
                elif keyword == "perceive":
                    perception.add(edge)
                else:
                    hierarchy.setdefault(edge, set()).update(names)

        elif keyword == "aggregation":
            m = _AGG.match(rest)
            if not m:
                fail("expected 'aggregation <name> (<slots>) -> <Class> [@ <level>] [threshold=<x>]'")
            name, slot_text, out_cls, out_level, threshold = m.groups()
            if name in aggregations:
                fail(f"aggregation {name!r} declared twice")
            slots = []
            for piece in slot_text.split(","):
                sm = _SLOT.match(piece.strip())
                if not sm:
                    fail(f"bad member slot {piece.strip()!r}; expected '[min;max] Class [@ level]'",
                         col + m.start(2))
                lo, hi, cls, lvl = sm.groups()
                try:
                    slots.append(MemberSlot(cls, int(lo), int(hi), lvl))
                except ValueError as exc:
                    fail(str(exc), col + m.start(2))
            thr = None
            if threshold is not None:
                try:
                    thr = float(threshold)
                except ValueError:
                    fail(f"bad threshold {threshold!r}", col + m.start(5))
            aggregations[name] = AggregationSignature(name, tuple(slots), out_cls, out_level, thr)

        elif keyword == "strategy":
            if rest not in STRATEGIES:
                fail(f"strategy must be one of {', '.join(STRATEGIES)}")
            strategy = rest

        elif keyword == "precedence":
            m = _PREC.match(rest)
            if not m:
                fail("expected 'precedence <F_a> < <F_b>'")
            precedence.add(m.groups())

        else:
            raise ModelFormatError(f"unknown directive {keyword!r}", path, lineno, indent + 1)

    if not levels:
        raise ModelFormatError("no levels declared", path, 0, 0)
    return HierarchicalModel(
        levels=levels,
        influence=frozenset(influence),
        perception=frozenset(perception),
        hierarchy={e: frozenset(v) for e, v in hierarchy.items()},
        aggregations=aggregations,
        strategy=strategy,
        precedence=frozenset(precedence),
    )


def model_report(model: HierarchicalModel) -> ValidationReport:
    """Graph rules, plus label bindings when the model declares aggregations."""
    report = validate_hierarchical_graph(model)
    if model.aggregations:
        report = report + check_label_bindings(model, model.aggregations.values())
    elif any(model.hierarchy.values()):
        report = report + ValidationReport(warnings=("no aggregation declarations; labels left unchecked",))
    return report


def load_model(path: Path | str, validate: bool = True) -> HierarchicalModel:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ModelFormatError(f"cannot read model: {exc.strerror}", str(path)) from None
    model = parse_model(text, str(path))
    if validate:
        report = model_report(model)
        if not report.ok:
            raise ModelValidationError(report, str(path))
    return model


def _fmt_hz(hz: Fraction) -> str:
    return str(hz.numerator) if hz.denominator == 1 else f"{hz.numerator}/{hz.denominator}"


def _fmt_slot(s: MemberSlot) -> str:
    return f"[{s.min};{s.max}] {s.class_name}" + (f" @ {s.level}" if s.level else "")


def dump_model(model: HierarchicalModel) -> str:
    lines = []
    for level in model.levels.values():
        parts = ["level", level.name]
        if level.space is not None:
            parts.append(f"space={level.space}")
        if level.time is not None:
            parts.append(f"time={level.time}")
        if level.hz is not None:
            parts.append(f"hz={_fmt_hz(Fraction(level.hz))}")
        lines.append(" ".join(parts))
    for a, b in sorted(model.influence):
        lines.append(f"influence {a} -> {b}")
    for a, b in sorted(model.perception):
        lines.append(f"perceive {a} -> {b}")
    done = set()
    for (a, b), labels in sorted(model.hierarchy.items()):
        if (a, b) in done:
            continue
        back = model.hierarchy.get((b, a))
        if a != b and back is not None and not labels and not back:
            lines.append(f"hierarchy {a} <-> {b}")
            done.add((b, a))
        else:
            suffix = f" : {', '.join(sorted(labels))}" if labels else ""
            lines.append(f"hierarchy {a} -> {b}{suffix}")
    for sig in model.aggregations.values():
        out = f"aggregation {sig.name} ({', '.join(map(_fmt_slot, sig.members))}) -> {sig.output_class}"
        if sig.output_level:
            out += f" @ {sig.output_level}"
        if sig.threshold is not None:
            out += f" threshold={sig.threshold!r}"
        lines.append(out)
    if model.strategy:
        lines.append(f"strategy {model.strategy}")
    for a, b in sorted(model.precedence):
        lines.append(f"precedence {a} < {b}")
    return "\n".join(lines) + "\n"
