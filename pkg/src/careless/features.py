"""Behavioral features for every event.

Seventeen features, encoded as 18 numeric predictors (input type expands to
two dummies with slider as baseline). Column order is a stable interface:
fitted models record a hash of it.

For multi-skill events "same skill" means any earlier event sharing at
least one skill; the skill z-score groups events by their exact skill set.
"""

from __future__ import annotations

import csv
import hashlib
import io
from collections import defaultdict
from dataclasses import astuple, dataclass, fields

import numpy as np

from careless.events import Dataset

COLUMNS = (
    "duration",
    "z_problem",
    "z_skill",
    "student_diff",
    "total_time",
    "total_time_skill",
    "dur_prev",
    "dur_prev2",
    "sd_last3_skill",
    "n_attempted",
    "n_attempted_skill",
    "prev_correct",
    "n_correct_prev2",
    "pct_errors_skill",
    "input_type_radio",
    "input_type_text",
    "actions_required_one",
    "gaming_options_multiple",
)
# z-scores use dataset-level statistics, so they are not prefix-stable
DATASET_LEVEL = ("z_problem", "z_skill")


def manifest_hash(columns=COLUMNS) -> str:
    return hashlib.sha256("\n".join(columns).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class FeatureVector:
    duration: float = 0.0
    z_problem: float = 0.0
    z_skill: float = 0.0
    student_diff: float = 0.0
    total_time: float = 0.0
    total_time_skill: float = 0.0
    dur_prev: float = 0.0
    dur_prev2: float = 0.0
    sd_last3_skill: float = 0.0
    n_attempted: int = 0
    n_attempted_skill: int = 0
    prev_correct: int = 0
    n_correct_prev2: int = 0
    pct_errors_skill: float = 0.0
    input_type: str = "slider"
    actions_required: str = "multiple"
    gaming_options: str = "limited"


def encode(fv: FeatureVector) -> np.ndarray:
    vals = astuple(fv)
    numeric = [float(v) for v in vals[:14]]
    return np.array(
        numeric
        + [
            float(fv.input_type == "radio"),
            float(fv.input_type == "text"),
            float(fv.actions_required == "one"),
            float(fv.gaming_options == "multiple"),
        ]
    )


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    columns: tuple[str, ...] = COLUMNS

    @property
    def manifest(self) -> str:
        return manifest_hash(self.columns)

    def __len__(self):
        return self.values.shape[0]

    def rows(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.values[idx], self.columns)

    def to_csv(self, d: Dataset, header_lines=()) -> bytes:
        buf = io.StringIO()
        buf.write(f"# manifest={self.manifest}\n")
        buf.write(f"# dataset_level={','.join(DATASET_LEVEL)}\n")
        for ln in header_lines:
            buf.write(f"# {ln}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("student_id", "seq_index") + self.columns)
        for ev, row in zip(d.events, self.values):
            w.writerow([ev.student_id, ev.seq_index] + [repr(float(v)) for v in row])
        return buf.getvalue().encode()


def _zscores(values, groups, online_order=None):
    """z of each value against all values in its group (sample SD).

    With ``online_order`` (a sort key per value), each value is compared with
    the strictly earlier values of its group instead.
    """
    z = np.zeros(len(values))
    members = defaultdict(list)
    for i, g in enumerate(groups):
        members[g].append(i)
    for idx in members.values():
        idx = np.asarray(idx)
        v = values[idx]
        if online_order is None:
            if len(v) < 2:
                continue
            sd = v.std(ddof=1)
            if sd > 0:
                z[idx] = (v - v.mean()) / sd
        else:
            order = idx[np.argsort(online_order[idx], kind="stable")]
            seen = []
            for i in order:
                if len(seen) >= 2:
                    sd = np.std(seen, ddof=1)
                    if sd > 0:
                        z[i] = (values[i] - np.mean(seen)) / sd
                seen.append(values[i])
    return z


def extract_features(d: Dataset, zscore_mode: str = "retrospective") -> FeatureMatrix:
    """Feature matrix aligned to ``d.events``.

    Everything except the z-scores is computed from the student's own
    earlier events (and the current event's duration). Cold-start values are
    zero. ``zscore_mode="online"`` compares each duration only with earlier
    (by start time) durations from all students.
    """
    if zscore_mode not in ("retrospective", "online"):
        raise ValueError(f"unknown zscore_mode {zscore_mode!r}")
    n = d.n_events
    X = np.zeros((n, len(COLUMNS)))
    dur = d.durations
    X[:, 0] = dur
    order = None
    if zscore_mode == "online":
        order = np.array([ev.start_ms for ev in d.events], dtype=float)
    X[:, 1] = _zscores(dur, [ev.question_id for ev in d.events], order)
    X[:, 2] = _zscores(dur, [tuple(sorted(ev.skills)) for ev in d.events], order)

    i = 0
    for st in d.students:
        hist_dur: list[float] = []
        hist_ok: list[bool] = []
        hist_skills: list[tuple] = []
        for ev in st.events:
            cur = ev.duration
            same = [k for k, sk in enumerate(hist_skills) if set(sk) & set(ev.skills)]
            row = X[i]
            row[3] = cur - np.mean(hist_dur) if hist_dur else 0.0
            row[4] = sum(hist_dur) + cur
            row[5] = sum(hist_dur[k] for k in same) + cur
            row[6] = hist_dur[-1] if hist_dur else 0.0
            row[7] = hist_dur[-1] + hist_dur[-2] if len(hist_dur) >= 2 else 0.0
            last3 = [hist_dur[k] for k in same[-2:]] + [cur]
            row[8] = np.std(last3, ddof=1) if len(last3) == 3 else 0.0
            row[9] = len(hist_dur) + 1
            row[10] = len(same) + 1
            row[11] = float(hist_ok[-1]) if hist_ok else 0.0
            row[12] = float(sum(hist_ok[-2:]))
            row[13] = (sum(not hist_ok[k] for k in same) / len(same)) if same else 0.0
            row[14] = ev.input_type == "radio"
            row[15] = ev.input_type == "text"
            row[16] = ev.actions_required == "one"
            row[17] = ev.gaming_options == "multiple"
            hist_dur.append(cur)
            hist_ok.append(ev.correct)
            hist_skills.append(ev.skills)
            i += 1
    return FeatureMatrix(X)


def feature_vector(d: Dataset, X: FeatureMatrix, i: int) -> FeatureVector:
    """Decode row ``i`` back to a :class:`FeatureVector`."""
    ev = d.events[i]
    row = X.values[i]
    names = [f.name for f in fields(FeatureVector)][:14]
    kw = {name: row[k] for k, name in enumerate(names)}
    for name in ("n_attempted", "n_attempted_skill", "prev_correct", "n_correct_prev2"):
        kw[name] = int(kw[name])
    return FeatureVector(
        **kw,
        input_type=ev.input_type,
        actions_required=ev.actions_required,
        gaming_options=ev.gaming_options,
    )
