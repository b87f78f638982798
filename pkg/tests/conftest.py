import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from careless.pipeline import RunConfig  # noqa: E402

# a run small enough for CLI round trips: 30 students, coarse grid, 10 trees
SMALL_RUN = {
    "seed": 11,
    "sim": {"preset": "default", "n_students": 30},
    "model": {
        "grid": {"coarse_step": 0.1, "fine_step": 0.05, "fine_radius": 0.05},
        "ensemble": {"n_trees": 10},
        "cv_folds": 3,
    },
}


@pytest.fixture
def small_run_blob():
    return {k: (dict(v) if isinstance(v, dict) else v) for k, v in SMALL_RUN.items()}


@pytest.fixture
def small_run(small_run_blob, tmp_path):
    return RunConfig.from_dict({**small_run_blob, "out": str(tmp_path / "run")})


# one verdict line per acceptance criterion, printed after the run
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
