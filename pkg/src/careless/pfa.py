"""Performance Factor Analysis.

For a question tagged with skills ``KCs``, a student's logit of success is::

    m = sum_{j in KCs} (beta_j + gamma_j * s_j + rho_j * f_j)
    p(m) = 1 / (1 + exp(-m))

where ``s_j``/``f_j`` count the student's earlier successes/failures on
skill ``j``. Multi-skill questions are handled natively: every tagged skill
contributes its own term, and the outcome updates every tagged skill's
counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import expit

from careless.errors import NoData, SchemaError, UnknownSkill
from careless.events import Dataset
from careless.logistic import LogisticFit, OptSpec, fit_logistic, gradient, loglik


@dataclass(frozen=True)
class PfaParams:
    skills: tuple[str, ...]
    beta: np.ndarray
    gamma: np.ndarray
    rho: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("beta", "gamma", "rho"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (len(self.skills),) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be {len(self.skills)} finite values")
            object.__setattr__(self, name, arr)

    def index(self, skill) -> int:
        try:
            return self._index[skill]
        except KeyError:
            raise UnknownSkill(f"no PFA parameters for skill {skill!r}") from None

    @property
    def _index(self):
        return {sk: i for i, sk in enumerate(self.skills)}

    def vector(self) -> np.ndarray:
        """Interleaved (beta, gamma, rho) per skill, the design-column order."""
        return np.column_stack([self.beta, self.gamma, self.rho]).ravel()

    @classmethod
    def from_vector(cls, skills, vec, diagnostics=None):
        v = np.asarray(vec, dtype=float).reshape(len(skills), 3)
        return cls(tuple(skills), v[:, 0], v[:, 1], v[:, 2], diagnostics or {})

    def to_dict(self):
        return {
            "skills": {
                sk: {"beta": float(b), "gamma": float(g), "rho": float(r)}
                for sk, b, g, r in zip(self.skills, self.beta, self.gamma, self.rho)
            },
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, blob):
        try:
            skills = tuple(blob["skills"])
            vals = [blob["skills"][sk] for sk in skills]
            return cls(
                skills,
                np.array([v["beta"] for v in vals]),
                np.array([v["gamma"] for v in vals]),
                np.array([v["rho"] for v in vals]),
                blob.get("diagnostics", {}),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"bad PFA parameter file: {exc}") from None


def pfa_m(skills, s: Mapping[str, float], f: Mapping[str, float], params: PfaParams) -> float:
    total = 0.0
    for sk in skills:
        j = params.index(sk)
        total += params.beta[j] + params.gamma[j] * s[sk] + params.rho[j] * f[sk]
    return float(total)


def p_of_m(m):
    return expit(m)


def causal_counts(d: Dataset) -> list[tuple[dict, dict]]:
    """Per event, the (successes, failures) per tagged skill from the same
    student's earlier events."""
    out = []
    for st in d.students:
        succ: dict[str, int] = {}
        fail: dict[str, int] = {}
        for ev in st.events:
            out.append(
                ({sk: succ.get(sk, 0) for sk in ev.skills}, {sk: fail.get(sk, 0) for sk in ev.skills})
            )
            table = succ if ev.correct else fail
            for sk in ev.skills:
                table[sk] = table.get(sk, 0) + 1
    return out


def pfa_design(d: Dataset, skills=None) -> tuple[np.ndarray, tuple[str, ...]]:
    """Design matrix with columns (indicator, s, f) per skill, interleaved."""
    skills = tuple(skills) if skills is not None else d.skills
    col = {sk: i for i, sk in enumerate(skills)}
    X = np.zeros((d.n_events, 3 * len(skills)))
    for i, (ev, (s, f)) in enumerate(zip(d.events, causal_counts(d))):
        for sk in ev.skills:
            if sk not in col:
                raise UnknownSkill(f"skill {sk!r} not in parameter set")
            j = 3 * col[sk]
            X[i, j] += 1.0
            X[i, j + 1] += s[sk]
            X[i, j + 2] += f[sk]
    return X, skills


def pfa_loglik(vec, X, y) -> float:
    return loglik(vec, X, y)


def pfa_gradient(vec, X, y) -> np.ndarray:
    """Analytic gradient of :func:`pfa_loglik`."""
    return gradient(vec, X, y)


def fit_pfa(d: Dataset, opt: OptSpec = OptSpec()) -> PfaParams:
    """Maximum-likelihood (beta, gamma, rho) for every skill, from zeros."""
    if d.n_events == 0:
        raise NoData("empty dataset")
    X, skills = pfa_design(d)
    y = d.correct.astype(float)
    fit: LogisticFit = fit_logistic(X, y, opt)
    return PfaParams.from_vector(skills, fit.coef, fit.diagnostics())


def fit_pfa_intercepts(d: Dataset, opt: OptSpec = OptSpec()) -> PfaParams:
    """Restricted fit with gamma = rho = 0 (the nested difficulty-only model)."""
    X, skills = pfa_design(d)
    active = np.zeros(X.shape[1], dtype=bool)
    active[0::3] = True
    fit = fit_logistic(X, d.correct.astype(float), opt, active=active)
    return PfaParams.from_vector(skills, fit.coef, fit.diagnostics())


@dataclass(frozen=True)
class PfaEstimate:
    event: int
    m: float
    p_m: float
    s_counts: dict
    f_counts: dict


@dataclass(frozen=True)
class PfaTrace:
    """Per-event PFA estimates aligned to ``Dataset.events``."""

    m: np.ndarray
    p_m: np.ndarray
    counts: tuple

    def __len__(self):
        return len(self.m)

    def __getitem__(self, i) -> PfaEstimate:
        s, f = self.counts[i]
        return PfaEstimate(int(i), float(self.m[i]), float(self.p_m[i]), s, f)


def pfa_trace(d: Dataset, params: PfaParams) -> PfaTrace:
    counts = causal_counts(d)
    m = np.array([pfa_m(ev.skills, s, f, params) for ev, (s, f) in zip(d.events, counts)])
    return PfaTrace(m=m, p_m=p_of_m(m), counts=tuple(counts))


def dataset_loglik(d: Dataset, params: PfaParams) -> float:
    X, _ = pfa_design(d, params.skills)
    return pfa_loglik(params.vector(), X, d.correct.astype(float))


def save_params(params: PfaParams, path, provenance=None):
    blob = params.to_dict()
    if provenance:
        blob["provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)


def load_params(path) -> PfaParams:
    with open(path) as fh:
        return PfaParams.from_dict(json.load(fh))
