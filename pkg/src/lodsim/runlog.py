"""Append-only run log with CSV and JSON-lines writers."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterator

COLUMNS = ("time", "level", "event", "agent_id", "variable", "value")


def format_number(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, Fraction):
        return str(value.numerator) if value.denominator == 1 else repr(float(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_value(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return ";".join(format_value(v) for v in value)
    return format_number(value)


@dataclass(frozen=True)
class RunRecord:
    time: Fraction
    level: str
    event: str
    agent_id: str = ""
    variable: str = ""
    value: Any = ""

    def row(self) -> list[str]:
        return [
            format_number(self.time),
            self.level,
            self.event,
            self.agent_id,
            self.variable,
            format_value(self.value),
        ]


class RunLog:
    def __init__(self):
        self.records: list[RunRecord] = []

    def append(self, time, level, event, agent_id="", variable="", value="") -> None:
        self.records.append(RunRecord(Fraction(time), level, event, agent_id, variable, value))

    def __iter__(self) -> Iterator[RunRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def events(self, kind: str) -> list[RunRecord]:
        return [r for r in self.records if r.event == kind]

    def write_csv(self, path: Path | str) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(COLUMNS)
            for rec in self.records:
                writer.writerow(rec.row())
        return path

    def write_jsonl(self, path: Path | str) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            for rec in self.records:
                fh.write(json.dumps(dict(zip(COLUMNS, rec.row())), sort_keys=False) + "\n")
        return path


def read_csv(path: Path | str) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
