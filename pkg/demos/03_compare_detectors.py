"""
Do careless students learn more or less?
========================================

Run the whole comparison on the default simulated class (200 students, with
tests before and after): fit all three detectors, average each one's
estimates per student, and regress post-test scores on that average while
controlling for final knowledge. About a minute single-threaded.

The same run from the shell:

    careless all --config configs/default.json --out careless-out
"""

import sys

from careless.cli import summarize_report
from careless.pipeline import RunConfig, run_all

n_jobs = int(sys.argv[1]) if len(sys.argv) > 1 else 1
report = run_all(RunConfig(n_jobs=n_jobs))
print(summarize_report(report))

# the slip-based detectors and the behavioral one disagree in sign
for m, block in report["learning"].items():
    c = block["posttest"]["coefficients"]["carelessness"]
    print(f"{m:<16} {'+' if c['b'] > 0 else '-'}  (p = {c['p']:.3f})")
