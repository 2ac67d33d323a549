"""Efficiency and behavior metrics.

Covers the position of the first correct reasoning step within a response,
token efficiency (accuracy percent per generated token), mean single-sample
accuracy over repeated runs, and the rank statistics of the end-of-thinking
token inside candidate windows. Segmentation is text-level: responses split
on the literal blank-line delimiter and re-join byte-exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import EmptyGrid, EmptyResponse, NoObservations, ShapeMismatch, ZeroLength
from .trace import SearchTrace
from .verifiers import Verifier

STEP_DELIMITER = "\n\n"

CSV_COLUMNS = (
    "strategy",
    "pass1",
    "len",
    "think_len",
    "te",
    "rfcs_lt1_count",
    "rfcs_avg",
    "eot_rank_ratio",
)


def split_steps(text: str) -> list[str]:
    """Split a rendered response into reasoning steps on the blank-line delimiter."""
    if text == "":
        raise EmptyResponse("cannot segment an empty response")
    return text.split(STEP_DELIMITER)


def join_steps(steps: Sequence[str]) -> str:
    """Inverse of split_steps; join(split(text)) == text byte-exactly."""
    return STEP_DELIMITER.join(steps)


def rfcs(response_text: str, gold_answer: str, verifier: Verifier) -> float | None:
    """Ratio of the first correct step.

    1-based index of the first step whose text verifies against the gold
    answer, divided by the total step count. Defined only for responses whose
    final answer verifies; returns None otherwise. Occurrence is decided by
    the same pluggable verifier used for final answers (extract-and-match),
    not raw substring search.
    """
    bound = verifier.bind(gold_answer)
    steps = split_steps(response_text)
    if not bound.check(response_text):
        return None
    for i, step in enumerate(steps, start=1):
        if bound.check(step):
            return i / len(steps)
    # The answer only materializes across a step boundary; treat it as
    # appearing at the very end.
    return 1.0


def token_efficiency(pass1_percent: float, mean_len: float) -> float:
    """Accuracy percent divided by mean response length in tokens."""
    if mean_len <= 0:
        raise ZeroLength("token efficiency is undefined for non-positive mean length")
    return pass1_percent / mean_len


def pass_at_1_mean(results: Sequence[Sequence[bool]]) -> float:
    """Mean over runs of per-run accuracy; the grid is runs x problems."""
    if not results or not results[0]:
        raise EmptyGrid("need at least one run over at least one problem")
    width = len(results[0])
    for row in results:
        if len(row) != width:
            raise ShapeMismatch("result grid must be rectangular")
    per_run = [sum(1.0 for ok in row if ok) / width for row in results]
    return sum(per_run) / len(per_run)


def eot_rank_ratio_stats(traces: Iterable[SearchTrace]) -> float:
    """Mean rank ratio of the end-of-thinking token over all window sightings."""
    ratios = [obs.rank_ratio for trace in traces for obs in trace.observations]
    if not ratios:
        raise NoObservations("no end-of-thinking window observations in the traces")
    return sum(ratios) / len(ratios)


@dataclass(frozen=True)
class RfcsSummary:
    """Per-response and per-problem aggregates of the first-correct-step ratio."""

    per_response_avg: float | None
    per_problem_avg: float | None
    lt1_count: int


def rfcs_group_summary(values: Sequence[tuple[str, float]]) -> RfcsSummary:
    """Aggregate (problem_id, rfcs) pairs both per response and per problem."""
    if not values:
        return RfcsSummary(None, None, 0)
    per_response = [v for _, v in values]
    by_problem: dict[str, list[float]] = {}
    for pid, v in values:
        by_problem.setdefault(pid, []).append(v)
    problem_means = [sum(vs) / len(vs) for vs in by_problem.values()]
    return RfcsSummary(
        per_response_avg=sum(per_response) / len(per_response),
        per_problem_avg=sum(problem_means) / len(problem_means),
        lt1_count=sum(1 for v in per_response if v < 1.0),
    )


@dataclass(frozen=True)
class MetricRow:
    """One strategy's aggregate results in the fixed reporting order."""

    strategy: str
    pass1: float
    mean_len: float
    mean_think_len: float
    te: float | None
    rfcs_lt1_count: int
    rfcs_avg: float | None
    eot_rank_ratio: float | None


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return format(value, ".12g")


def row_values(row: MetricRow) -> tuple[str, ...]:
    return (
        row.strategy,
        _fmt(row.pass1),
        _fmt(row.mean_len),
        _fmt(row.mean_think_len),
        _fmt(row.te),
        _fmt(row.rfcs_lt1_count),
        _fmt(row.rfcs_avg),
        _fmt(row.eot_rank_ratio),
    )


def rows_to_csv(rows: Sequence[MetricRow]) -> str:
    """Fixed-column CSV; deterministic float formatting for byte-stable output."""
    buf = io.StringIO()
    buf.write(",".join(CSV_COLUMNS) + "\n")
    for row in rows:
        buf.write(",".join(row_values(row)) + "\n")
    return buf.getvalue()


def rows_to_text(rows: Sequence[MetricRow]) -> str:
    """Aligned plain-text rendering of the same table."""
    table = [CSV_COLUMNS] + [row_values(r) for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(CSV_COLUMNS))]
    lines = []
    for line in table:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip())
    return "\n".join(lines) + "\n"
