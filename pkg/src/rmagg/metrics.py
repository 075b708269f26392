"""Correct/rejected/incorrect accounting and sweep tables.

A model is anything with ``predict(inputs) -> list[Verdict]``.  Accepted
verdicts score correct when the label matches and incorrect otherwise;
rejections land in the middle bucket.  The three percentages always sum
to 100 within 1e-6.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .data import Dataset

AXES = ("ec", "sigma", "tau", "epsilon")


class MetricsError(ValueError):
    """Evaluation input or table contents violate the contract."""


@dataclass(frozen=True)
class EvalTriple:
    correct: float
    rejected: float
    incorrect: float

    def __post_init__(self):
        parts = (self.correct, self.rejected, self.incorrect)
        if any(p < 0 for p in parts):
            raise MetricsError(f"negative percentage in {parts}")
        if abs(sum(parts) - 100.0) > 1e-6:
            raise MetricsError(f"percentages sum to {sum(parts)}, expected 100")

    @classmethod
    def from_counts(cls, correct: int, rejected: int, incorrect: int) -> "EvalTriple":
        total = correct + rejected + incorrect
        if total <= 0:
            raise MetricsError("cannot build a triple from zero outcomes")
        return cls(
            correct=100.0 * correct / total,
            rejected=100.0 * rejected / total,
            incorrect=100.0 * incorrect / total,
        )


def evaluate(model, dataset: Dataset) -> EvalTriple:
    """Score a verdict-producing model on a labeled dataset."""
    if len(dataset) == 0:
        raise MetricsError("cannot evaluate on an empty dataset")
    verdicts = model.predict(dataset.inputs)
    correct = rejected = incorrect = 0
    for verdict, label in zip(verdicts, dataset.labels):
        if not verdict.accepted:
            rejected += 1
        elif verdict.label == int(label):
            correct += 1
        else:
            incorrect += 1
    return EvalTriple.from_counts(correct, rejected, incorrect)


@dataclass(frozen=True)
class SweepTable:
    """Evaluation triples along one strictly increasing setting axis."""

    axis: str
    rows: tuple[tuple[float, EvalTriple], ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.axis not in AXES:
            raise MetricsError(f"axis must be one of {AXES}, got {self.axis!r}")
        values = [v for v, _ in self.rows]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise MetricsError(f"axis values must be strictly increasing, got {values}")

    def values(self) -> list[float]:
        return [v for v, _ in self.rows]

    def triples(self) -> list[EvalTriple]:
        return [t for _, t in self.rows]


def sweep(
    configure: Callable[[float], object],
    axis: str,
    values: Sequence[float],
    dataset: Dataset,
    meta: dict | None = None,
) -> SweepTable:
    """Evaluate one model per axis value.

    ``configure`` should reconfigure a single trained model (threshold,
    budget), not retrain it, so the networks are shared across rows.
    """
    rows = tuple((float(v), evaluate(configure(v), dataset)) for v in values)
    return SweepTable(axis=axis, rows=rows, meta=dict(meta or {}))


def _format_value(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else str(v)


def to_csv(table: SweepTable) -> str:
    lines = [f"{table.axis},correct,rejected,incorrect"]
    for value, t in table.rows:
        lines.append(f"{_format_value(value)},{t.correct:.2f},{t.rejected:.2f},{t.incorrect:.2f}")
    return "\n".join(lines) + "\n"


def to_markdown(table: SweepTable) -> str:
    header = [table.axis, "correct", "rejected", "incorrect"]
    body = [
        [_format_value(value), f"{t.correct:.2f}", f"{t.rejected:.2f}", f"{t.incorrect:.2f}"]
        for value, t in table.rows
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(4)]
    def line(cells):
        return "| " + " | ".join(c.rjust(w) for c, w in zip(cells, widths)) + " |"
    rule = "| " + " | ".join("-" * w for w in widths) + " |"
    return "\n".join([line(header), rule] + [line(row) for row in body]) + "\n"


def table_to_dict(table: SweepTable) -> dict:
    return {
        "axis": table.axis,
        "meta": table.meta,
        "rows": [
            {"value": value, "correct": t.correct, "rejected": t.rejected, "incorrect": t.incorrect}
            for value, t in table.rows
        ],
    }


def table_from_dict(raw: dict) -> SweepTable:
    rows = tuple(
        (
            float(row["value"]),
            EvalTriple(
                correct=float(row["correct"]),
                rejected=float(row["rejected"]),
                incorrect=float(row["incorrect"]),
            ),
        )
        for row in raw["rows"]
    )
    return SweepTable(axis=str(raw["axis"]), rows=rows, meta=dict(raw.get("meta", {})))


def save_table(table: SweepTable, stem: str | Path) -> list[Path]:
    """Write CSV, aligned markdown, and a JSON sidecar next to ``stem``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = [stem.with_suffix(".csv"), stem.with_suffix(".md"), stem.with_suffix(".json")]
    paths[0].write_text(to_csv(table))
    paths[1].write_text(to_markdown(table))
    paths[2].write_text(json.dumps(table_to_dict(table), indent=2, sort_keys=True) + "\n")
    return paths


def load_table(json_path: str | Path) -> SweepTable:
    return table_from_dict(json.loads(Path(json_path).read_text()))
