"""Usability-study records and rating statistics.

The bundled fixture (data/study_prompts.csv) transcribes the 27 recorded
prompt attempts: 9 participants x 3 attempts, each with a 1-7 rating and a
prompt group (A = resembles the prop in shape and size, B = no resemblance,
C = broad spectrum of shapes).  Group labels are ingested, never inferred.

Standard deviations default to the population convention (divisor n), which
reproduces the published Group B value exactly from the transcript; the
sample convention sits behind a flag.  The A and C published deviations
differ from both conventions by <= 0.07 (rounding or transcription nuance in
the source), so consumers should allow a wider margin there.
"""

from __future__ import annotations

import csv
import importlib.resources
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

GROUPS = ("A", "B", "C")

# Published questionnaire aggregates (7-point scale), kept as reference
# constants: the per-participant responses behind them are not available,
# so they are never recomputed.
QUESTIONNAIRE_REFERENCE = {
    "expectation_match": {"mean": 4.8, "stddev": 0.97},
    "perceived_realism": {"mean": 5.2, "stddev": 1.48},
    "engagement": {"mean": 6.4, "stddev": 0.52},
    "adoption_interest": {"mean": 6.1, "stddev": 0.78},
}


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptySelection(ValueError):
    pass


@dataclass(frozen=True)
class PromptRecord:
    participant: str
    attempt: int
    prompt: str
    rating: int
    group: str | None  # None for live ratings captured outside the study

    def __post_init__(self):
        if not (1 <= self.rating <= 7):
            raise ValueError(f"rating {self.rating} outside [1, 7]")
        if not (1 <= self.attempt <= 3):
            raise ValueError(f"attempt {self.attempt} outside [1, 3]")
        if self.group is not None and self.group not in GROUPS:
            raise ValueError(f"group must be one of {GROUPS}")

    def to_dict(self) -> dict:
        return {
            "participant": self.participant,
            "attempt": self.attempt,
            "prompt": self.prompt,
            "rating": self.rating,
            "group": self.group,
        }


@dataclass(frozen=True)
class LikertSummary:
    n: int
    mean: float
    stddev: float

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "stddev": self.stddev}


def load_records(source: str | Path | bytes) -> list[PromptRecord]:
    """Load prompt records from CSV with header
    participant,attempt,prompt,rating,group."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(1, "empty file") from None
    if [h.strip() for h in header] != ["participant", "attempt", "prompt", "rating", "group"]:
        raise ParseError(1, f"unexpected header {header}")
    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise ParseError(line_no, f"expected 5 fields, got {len(row)}")
        participant, attempt, prompt, rating, group = (f.strip() for f in row)
        try:
            records.append(
                PromptRecord(participant, int(attempt), prompt, int(rating), group)
            )
        except ValueError as e:
            raise ParseError(line_no, str(e)) from None
    return records


def load_study_fixture() -> list[PromptRecord]:
    """The embedded 27-record study transcript."""
    data = importlib.resources.files("propmorph.data").joinpath("study_prompts.csv").read_bytes()
    return load_records(data)


def summarize(
    records: list[PromptRecord], group: str = "all", use_sample_stddev: bool = False
) -> LikertSummary:
    """Mean and standard deviation of ratings, optionally filtered by group.

    group "all" keeps every record (including ungrouped live ratings);
    "A"/"B"/"C" keep matching records only.
    """
    if group != "all":
        if group not in GROUPS:
            raise ValueError(f"group must be one of {GROUPS} or 'all'")
        records = [r for r in records if r.group == group]
    if not records:
        raise EmptySelection(f"no records for group {group!r}")
    ratings = [r.rating for r in records]
    n = len(ratings)
    # integer sums keep the result exact and order-independent
    total = sum(ratings)
    squares = sum(r * r for r in ratings)
    mean = total / n
    divisor = (n - 1) if (use_sample_stddev and n > 1) else n
    var = (squares * n - total * total) / (n * n) * (n / divisor) if divisor else 0.0
    return LikertSummary(n=n, mean=mean, stddev=math.sqrt(max(0.0, var)))


def report(records: list[PromptRecord], use_sample_stddev: bool = False) -> dict:
    """Per-group summaries plus an all-records row."""
    if not records:
        raise EmptySelection("no records")
    out: dict = {"groups": {}}
    for g in GROUPS:
        if any(r.group == g for r in records):
            out["groups"][g] = summarize(records, g, use_sample_stddev).to_dict()
    out["overall"] = summarize(records, "all", use_sample_stddev).to_dict()
    return out


def render_report(rep: dict) -> str:
    rows = [("group", "n", "mean", "stddev")]
    for g, s in rep["groups"].items():
        rows.append((g, str(s["n"]), f"{s['mean']:.3f}", f"{s['stddev']:.3f}"))
    s = rep["overall"]
    rows.append(("all", str(s["n"]), f"{s['mean']:.3f}", f"{s['stddev']:.3f}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)


def report_json(rep: dict) -> str:
    return json.dumps(rep, indent=2, sort_keys=True)
