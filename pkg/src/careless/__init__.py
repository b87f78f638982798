"""Carelessness detection for interaction logs.

Three detectors are provided:

* the BKT-based contextual slip model (:mod:`careless.bkt`),
* a machine-learned contextual slip model (:mod:`careless.forest`),
* the PFA-based beyond-knowledge feature carelessness model
  (:mod:`careless.pfa` + :mod:`careless.bkfc`),

together with a learner simulator with ground truth (:mod:`careless.sim`)
and the comparison statistics (:mod:`careless.stats`).
"""

from careless.events import (
    Dataset,
    QuestionEvent,
    StudentRecord,
    parse_log,
    serialize_log,
    slip_estimable_events,
    split_correct_incorrect,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "QuestionEvent",
    "StudentRecord",
    "parse_log",
    "serialize_log",
    "slip_estimable_events",
    "split_correct_incorrect",
]
