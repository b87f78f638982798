"""Interaction-log data model: parsing, validation, ordering, and the
correct/incorrect and slip-estimable partitions.

Log CSV columns (names can be remapped with ``schema``)::

    student_id, question_id, start_ms, end_ms, skills, correct,
    input_type, actions_required, gaming_options[, duration]

``skills`` is semicolon-separated. ``duration`` (seconds) is optional and
derived from the timestamps when absent.

Scores CSV columns::

    student_id, pretest, posttest, delayed_posttest[, gaming, confrustion]
"""

from __future__ import annotations

import csv
import io
import os
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np

from careless.errors import (
    EmptyDataset,
    MalformedRow,
    MissingColumn,
    MultiSkillUnsupported,
    OrderingViolation,
    ValidationError,
)

INPUT_TYPES = ("slider", "radio", "text")
ACTIONS_REQUIRED = ("one", "multiple")
GAMING_OPTIONS = ("multiple", "limited")

LOG_COLUMNS = (
    "student_id",
    "question_id",
    "start_ms",
    "end_ms",
    "skills",
    "correct",
    "input_type",
    "actions_required",
    "gaming_options",
)
SCORE_COLUMNS = ("student_id", "pretest", "posttest", "delayed_posttest")
OPTIONAL_SCORE_COLUMNS = ("gaming", "confrustion")

DEFAULT_SCORE_MAX = 24.0


@dataclass(frozen=True)
class QuestionEvent:
    """First attempt at one question step."""

    student_id: str
    question_id: str
    seq_index: int
    skills: tuple[str, ...]
    start_ms: int
    end_ms: int
    correct: bool
    input_type: str = "slider"
    actions_required: str = "one"
    gaming_options: str = "limited"
    duration: float | None = None

    def __post_init__(self):
        if not self.skills:
            raise ValidationError(f"event {self.student_id}/{self.seq_index} has no skills")
        if self.end_ms < self.start_ms:
            raise ValidationError(
                f"event {self.student_id}/{self.seq_index}: end_ms < start_ms"
            )
        if self.input_type not in INPUT_TYPES:
            raise ValidationError(f"unknown input_type {self.input_type!r}")
        if self.actions_required not in ACTIONS_REQUIRED:
            raise ValidationError(f"unknown actions_required {self.actions_required!r}")
        if self.gaming_options not in GAMING_OPTIONS:
            raise ValidationError(f"unknown gaming_options {self.gaming_options!r}")
        if self.duration is None:
            object.__setattr__(self, "duration", (self.end_ms - self.start_ms) / 1000.0)
        elif self.duration < 0:
            raise ValidationError("negative duration")

    @property
    def skill(self) -> str:
        """The single skill of a single-skill event."""
        if len(self.skills) != 1:
            raise MultiSkillUnsupported(
                f"event {self.student_id}/{self.seq_index} has skills {self.skills}"
            )
        return self.skills[0]


@dataclass(frozen=True)
class StudentRecord:
    student_id: str
    events: tuple[QuestionEvent, ...]
    pretest: float | None = None
    posttest: float | None = None
    delayed_posttest: float | None = None
    gaming: float | None = None
    confrustion: float | None = None

    def __post_init__(self):
        for i, ev in enumerate(self.events):
            if ev.seq_index != i:
                raise ValidationError(
                    f"student {self.student_id}: seq_index gap at position {i}"
                )
            if ev.student_id != self.student_id:
                raise ValidationError(f"event of {ev.student_id} filed under {self.student_id}")


@dataclass(frozen=True)
class Dataset:
    """Validated collection of student records.

    Test scores are kept as raw values; ``score_max`` is the raw maximum and
    :meth:`scores` returns them normalized to ``[0, 1]``.
    """

    students: tuple[StudentRecord, ...]
    score_max: float = DEFAULT_SCORE_MAX
    metadata: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        ids = [s.student_id for s in self.students]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate student_id")
        for s in self.students:
            for name in ("pretest", "posttest", "delayed_posttest"):
                v = getattr(s, name)
                if v is not None and not 0.0 <= v <= self.score_max:
                    raise ValidationError(
                        f"student {s.student_id}: {name}={v} outside [0, {self.score_max}]"
                    )

    @cached_property
    def skills(self) -> tuple[str, ...]:
        return tuple(sorted({sk for ev in self.events for sk in ev.skills}))

    @cached_property
    def events(self) -> tuple[QuestionEvent, ...]:
        """All events, student by student, each in seq_index order."""
        return tuple(ev for s in self.students for ev in s.events)

    @cached_property
    def student_ids(self) -> tuple[str, ...]:
        return tuple(s.student_id for s in self.students)

    @cached_property
    def event_student(self) -> np.ndarray:
        """Index into ``students`` for every event."""
        return np.repeat(np.arange(len(self.students)), [len(s.events) for s in self.students])

    @cached_property
    def correct(self) -> np.ndarray:
        return np.array([ev.correct for ev in self.events], dtype=bool)

    @cached_property
    def durations(self) -> np.ndarray:
        return np.array([ev.duration for ev in self.events], dtype=float)

    @property
    def n_events(self) -> int:
        return len(self.events)

    def is_single_skill(self) -> bool:
        return all(len(ev.skills) == 1 for ev in self.events)

    def scores(self, name: str, normalized: bool = True) -> np.ndarray:
        """Per-student score column (NaN where missing)."""
        vals = np.array(
            [np.nan if getattr(s, name) is None else getattr(s, name) for s in self.students],
            dtype=float,
        )
        if normalized and name in ("pretest", "posttest", "delayed_posttest"):
            vals = vals / self.score_max
        return vals


def _read_text(src) -> str:
    if isinstance(src, (bytes, bytearray)):
        return bytes(src).decode("utf-8")
    if isinstance(src, (str, os.PathLike)):
        with open(src, encoding="utf-8") as fh:
            return fh.read()
    return src.read().decode("utf-8") if hasattr(src, "read") else str(src)


def _csv_rows(text: str):
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return csv.DictReader(io.StringIO("\n".join(lines)))


def _parse_bool(v: str) -> bool:
    v = v.strip().lower()
    if v in ("1", "true", "t", "yes"):
        return True
    if v in ("0", "false", "f", "no"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_float(v):
    if v is None or v.strip() == "":
        return None
    return float(v)


def parse_log(
    log,
    scores=None,
    schema: Mapping[str, str] | None = None,
    score_max: float = DEFAULT_SCORE_MAX,
    metadata: Mapping | None = None,
) -> Dataset:
    """Parse a UTF-8 interaction-log CSV (and optional scores CSV).

    Parameters
    ----------
    log, scores : bytes, path, or binary file object
        Lines starting with ``#`` are ignored (provenance headers).
    schema : mapping, optional
        Canonical column name -> column name used in the file.
    score_max : float
        Raw maximum of the test scores (24 for counts, 100 for percentages).

    Rows are grouped by student in order of first appearance and sorted by
    ``start_ms``; ties keep file order and emit :class:`OrderingViolation`.
    """
    schema = dict(schema or {})
    col = {c: schema.get(c, c) for c in LOG_COLUMNS + ("duration",)}
    reader = _csv_rows(_read_text(log))
    header = reader.fieldnames or []
    missing = [c for c in LOG_COLUMNS if col[c] not in header]
    if missing:
        raise MissingColumn(f"log CSV lacks required columns: {missing}")
    has_duration = col["duration"] in header

    by_student: dict[str, list] = defaultdict(list)
    for row_no, row in enumerate(reader, start=1):
        try:
            sid = row[col["student_id"]].strip()
            if not sid:
                raise ValueError("empty student_id")
            skills = tuple(s.strip() for s in row[col["skills"]].split(";") if s.strip())
            if not skills:
                raise ValueError("no skills")
            rec = dict(
                student_id=sid,
                question_id=row[col["question_id"]].strip(),
                skills=skills,
                start_ms=int(row[col["start_ms"]]),
                end_ms=int(row[col["end_ms"]]),
                correct=_parse_bool(row[col["correct"]]),
                input_type=row[col["input_type"]].strip(),
                actions_required=row[col["actions_required"]].strip(),
                gaming_options=row[col["gaming_options"]].strip(),
                duration=_opt_float(row[col["duration"]]) if has_duration else None,
            )
            # validates enums and timestamps before ordering
            QuestionEvent(seq_index=0, **rec)
        except (ValueError, TypeError, KeyError, ValidationError) as exc:
            raise MalformedRow(row_no, str(exc)) from None
        by_student[sid].append(rec)

    if not by_student:
        raise EmptyDataset("log CSV has no rows")

    score_rows = _parse_scores(scores, score_max) if scores is not None else {}

    students = []
    for sid, recs in by_student.items():
        order = sorted(range(len(recs)), key=lambda i: recs[i]["start_ms"])
        starts = [recs[i]["start_ms"] for i in order]
        if len(set(starts)) != len(starts):
            warnings.warn(
                f"student {sid}: duplicate start times, file order kept", OrderingViolation
            )
        events = tuple(QuestionEvent(seq_index=n, **recs[i]) for n, i in enumerate(order))
        students.append(StudentRecord(student_id=sid, events=events, **score_rows.get(sid, {})))

    meta = {"source": "csv"}
    meta.update(metadata or {})
    return Dataset(students=tuple(students), score_max=score_max, metadata=meta)


def _parse_scores(src, score_max):
    reader = _csv_rows(_read_text(src))
    header = reader.fieldnames or []
    missing = [c for c in SCORE_COLUMNS if c not in header]
    if missing:
        raise MissingColumn(f"scores CSV lacks required columns: {missing}")
    out = {}
    for row_no, row in enumerate(reader, start=1):
        try:
            vals = {c: _opt_float(row[c]) for c in SCORE_COLUMNS[1:]}
            for c in OPTIONAL_SCORE_COLUMNS:
                if c in header:
                    vals[c] = _opt_float(row[c])
            for c in SCORE_COLUMNS[1:]:
                if vals[c] is not None and not 0 <= vals[c] <= score_max:
                    raise ValueError(f"{c}={vals[c]} outside [0, {score_max}]")
        except ValueError as exc:
            raise MalformedRow(row_no, str(exc)) from None
        out[row["student_id"].strip()] = vals
    return out


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def serialize_log(d: Dataset, header_lines=()) -> tuple[bytes, bytes]:
    """Write ``d`` as (log CSV, scores CSV) bytes; inverse of :func:`parse_log`."""
    buf = io.StringIO()
    for ln in header_lines:
        buf.write(f"# {ln}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS + ("duration",))
    for ev in d.events:
        w.writerow(
            [
                ev.student_id,
                ev.question_id,
                ev.start_ms,
                ev.end_ms,
                ";".join(ev.skills),
                int(ev.correct),
                ev.input_type,
                ev.actions_required,
                ev.gaming_options,
                repr(float(ev.duration)),
            ]
        )
    sbuf = io.StringIO()
    for ln in header_lines:
        sbuf.write(f"# {ln}\n")
    w = csv.writer(sbuf, lineterminator="\n")
    w.writerow(SCORE_COLUMNS + OPTIONAL_SCORE_COLUMNS)
    for s in d.students:
        w.writerow(
            [s.student_id]
            + [_fmt(getattr(s, c)) for c in SCORE_COLUMNS[1:] + OPTIONAL_SCORE_COLUMNS]
        )
    return buf.getvalue().encode("utf-8"), sbuf.getvalue().encode("utf-8")


def split_correct_incorrect(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Indices (into ``d.events``) of correct and of incorrect first attempts."""
    idx = np.arange(d.n_events)
    return idx[d.correct], idx[~d.correct]


def opportunity_index(d: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """For single-skill data: per event, its 0-based opportunity number on its
    skill for that student, and the total number of such opportunities."""
    opp = np.empty(d.n_events, dtype=int)
    total = np.empty(d.n_events, dtype=int)
    i = 0
    for s in d.students:
        counts: dict[str, int] = defaultdict(int)
        start = i
        for ev in s.events:
            sk = ev.skill
            opp[i] = counts[sk]
            counts[sk] += 1
            i += 1
        for j, ev in enumerate(s.events):
            total[start + j] = counts[ev.skills[0]]
    return opp, total


def slip_estimable_events(d: Dataset) -> np.ndarray:
    """Incorrect events followed by at least two later same-skill
    opportunities of the same student.

    Raises :class:`MultiSkillUnsupported` if any event carries more than
    one skill, since "the next two same-skill questions" is then undefined.
    """
    opp, total = opportunity_index(d)
    mask = (~d.correct) & (total - opp - 1 >= 2)
    return np.flatnonzero(mask)
