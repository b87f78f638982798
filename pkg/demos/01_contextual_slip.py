"""
Contextual slip on a simulated class
====================================

Fit BKT to one skill by grid search, then ask, for each wrong answer, how
likely it was that the student already knew the skill. The estimate looks
two answers ahead.
"""

import numpy as np

from careless.bkt import BktParams, GridSpec, contextual_slip, fit_bkt, trace_knowledge
from careless.events import slip_estimable_events
from careless.sim import simulate, single_skill_config

# 150 students, 20 questions each on skill "A"; 10% of known answers go wrong
truth = BktParams(L0=0.4, T=0.15, G=0.2, S=0.08)
d, gt = simulate(single_skill_config(150, 20, params=truth, careless_rate=0.1, seed=3))
print(f"{d.n_events} answers, {(~d.correct).sum()} wrong")

# a coarse grid keeps this quick; the default grid is 0.05 then 0.01
params = fit_bkt(d, GridSpec(coarse_step=0.1, fine_step=0.02, fine_radius=0.06))
# careless errors look like extra slips to BKT: S comes out near 0.08 + 0.1 * 0.92
print("fitted", params["A"].as_tuple(), "generating", truth.as_tuple())

# only errors with two later answers on the same skill can be scored
trace = trace_knowledge(d, params)
slips = contextual_slip(d, trace, params)
print(f"{len(slip_estimable_events(d))} errors have two answers after them")

p = np.array([s.probability for s in slips])
idx = np.array([s.event for s in slips])
known = gt.known[idx]
print(f"mean estimate when the student knew the skill:   {p[known].mean():.3f}")
print(f"mean estimate when the student did not know it:  {p[~known].mean():.3f}")

# the estimates pile up near 0 and 1
hist, _ = np.histogram(p, bins=10, range=(0, 1))
for k, h in enumerate(hist):
    print(f"{k / 10:.1f}-{(k + 1) / 10:.1f} {'#' * (h // 5)}")
