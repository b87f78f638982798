"""
Carelessness from behavior, not from what comes next
====================================================

PFA predicts each answer from prior successes and failures. A second
logistic layer adds 18 behavioral features; for a wrong answer, their
weighted sum (omega) becomes a carelessness probability through the normal
CDF. Every wrong answer gets a score, including multi-skill questions.
"""

import numpy as np

from careless.bkfc import bkfc_estimates, fit_bkfc, load_published_model, omega
from careless.features import COLUMNS, FeatureVector, encode, extract_features
from careless.pfa import fit_pfa, pfa_trace
from careless.sim import multi_skill_config, simulate

# the shipped published weights, applied to a hand-built answer
published = load_published_model()
x = encode(FeatureVector(duration=10.0, pct_errors_skill=0.5, input_type="radio"))
print(f"omega for a 10 s radio answer, half this skill wrong so far: {omega(x, published):.3f}")

# fit both layers on data where some questions carry two skills
d, gt = simulate(multi_skill_config(n_students=80, seed=4))
X = extract_features(d)
pfa = fit_pfa(d)
model = fit_bkfc(d, pfa_trace(d, pfa), X)

print("\nlargest fitted behavioral weights")
for j in np.argsort(-np.abs(model.omega_betas))[:5]:
    print(f"  {COLUMNS[j]:<24} {model.omega_betas[j]:+.4f}")

est = bkfc_estimates(d, X, model)
multi = sum(len(e.skills) > 1 for e in est)
print(f"\nscored {len(est)} of {(~d.correct).sum()} wrong answers ({multi} multi-skill)")

p = np.array([e.probability for e in est])
careless = gt.careless_error[[e.event for e in est]]
print(f"mean on careless errors {p[careless].mean():.3f}, on the rest {p[~careless].mean():.3f}")
print(f"spread of estimates: sd {p.std(ddof=1):.3f}")
