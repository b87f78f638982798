"""Bayesian Knowledge Tracing: brute-force grid fitting, knowledge traces,
and contextual slip estimates for incorrect answers.

The contextual slip of an incorrect answer at opportunity N is the
probability the skill was known at N given the next two same-skill
answers::

    P(L_N | A_{N+1}, A_{N+2})
        = p * P(A | known) / (p * P(A | known) + (1 - p) * P(A | unknown))

with ``p`` the knowledge estimate entering N (no forgetting; learning
transition ``T`` after every opportunity).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
from joblib import Parallel, delayed

from careless.errors import (
    DegenerateUpdate,
    InsufficientLookahead,
    MissingParams,
    MultiSkillUnsupported,
    NoData,
    SchemaError,
)
from careless.events import Dataset, opportunity_index, slip_estimable_events


@dataclass(frozen=True)
class BktParams:
    L0: float
    T: float
    G: float
    S: float
    sse: float | None = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("L0", "T", "G", "S"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def as_tuple(self):
        return (self.L0, self.T, self.G, self.S)


@dataclass(frozen=True)
class GridSpec:
    """Search space for :func:`fit_bkt_grid`.

    Two-stage by default: a ``coarse_step`` lattice over ``[0, 1]^4`` (G and
    S capped at ``g_max``/``s_max``), then a ``fine_step`` lattice within
    ``fine_radius`` of the coarse optimum. Passing ``values`` (four explicit
    value lists, in L0, T, G, S order) replaces both stages with one
    exhaustive pass over their product.
    """

    coarse_step: float = 0.05
    fine_step: float = 0.01
    fine_radius: float = 0.05
    g_max: float = 0.5
    s_max: float = 0.5
    values: tuple | None = None
    chunk: int = 4096


def _lattice(lo, hi, step):
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 10)


@dataclass
class SkillSequences:
    """Observations of one skill as a padded (students x opportunities) array.

    Rows are ordered by student_id so that sums do not depend on the order of
    students in the dataset.
    """

    obs: np.ndarray
    mask: np.ndarray
    lengths: np.ndarray
    student_ids: tuple


def skill_sequences(d: Dataset, skill: str) -> SkillSequences:
    seqs = {}
    for s in d.students:
        obs = [ev.correct for ev in s.events if skill in ev.skills]
        if any(len(ev.skills) != 1 for ev in s.events if skill in ev.skills):
            raise MultiSkillUnsupported(f"skill {skill!r} appears on multi-skill items")
        if obs:
            seqs[s.student_id] = obs
    ids = tuple(sorted(seqs))
    n = max((len(v) for v in seqs.values()), default=0)
    obs = np.zeros((len(ids), n))
    mask = np.zeros((len(ids), n), dtype=bool)
    for r, sid in enumerate(ids):
        k = len(seqs[sid])
        obs[r, :k] = seqs[sid]
        mask[r, :k] = True
    return SkillSequences(obs, mask, mask.sum(axis=1), ids)


def bkt_predict_correct(pL, params: BktParams):
    """P(correct) = pL (1 - S) + (1 - pL) G."""
    return pL * (1.0 - params.S) + (1.0 - pL) * params.G


def bkt_update(pL: float, observed_correct: bool, params: BktParams) -> tuple[float, float]:
    """Bayes update on one observation followed by the learning transition.

    Returns ``(posterior_obs, next_prior)``.
    """
    S, G, T = params.S, params.G, params.T
    if observed_correct:
        num = pL * (1.0 - S)
        den = num + (1.0 - pL) * G
    else:
        num = pL * S
        den = num + (1.0 - pL) * (1.0 - G)
    if den <= 0.0:
        raise DegenerateUpdate(f"zero evidence for observation correct={observed_correct}")
    post = num / den
    return post, post + (1.0 - post) * T


@dataclass
class PrefixLevel:
    """Distinct response prefixes of length t among students with an answer
    at step t: how many answered correct/incorrect next, and which
    (prefix, answer) pairs continue to step t + 1."""

    n_correct: np.ndarray
    n_incorrect: np.ndarray
    child_parent: np.ndarray
    child_obs: np.ndarray


def prefix_levels(seq: SkillSequences) -> list[PrefixLevel]:
    """Students sharing a response prefix share every knowledge estimate up
    to that point, so the SSE only needs one evaluation per distinct prefix.
    Prefix ids are ranks of (parent, answer) keys, hence independent of
    student order."""
    obs = seq.obs.astype(np.int64)
    lengths = seq.lengths
    ids = np.zeros(len(lengths), dtype=np.int64)
    levels = []
    n_prefix = 1
    for t in range(obs.shape[1]):
        act = lengths > t
        y = obs[act, t]
        total = np.bincount(ids[act], minlength=n_prefix)
        n1 = np.bincount(ids[act], weights=y, minlength=n_prefix)
        nxt = lengths > t + 1
        key = ids[nxt] * 2 + obs[nxt, t]
        ukeys, inv = np.unique(key, return_inverse=True)
        levels.append(PrefixLevel(n1, total - n1, ukeys // 2, ukeys % 2))
        ids = np.full(len(lengths), -1, dtype=np.int64)
        ids[nxt] = inv
        n_prefix = len(ukeys)
    return levels


def grid_sse(seq, cells: np.ndarray, levels=None) -> np.ndarray:
    """Sum of squared prediction errors for every cell (rows of L0, T, G, S).

    Cells producing a zero-denominator Bayes update get ``inf``.
    """
    if levels is None:
        levels = prefix_levels(seq)
    L0, T, G, S = (cells[:, k : k + 1] for k in range(4))
    slope = 1.0 - S - G
    pL = L0
    sse = np.zeros(len(cells))
    bad = np.zeros(len(cells), dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for lv in levels:
            pred = G + pL * slope
            sse += (lv.n_correct * (1.0 - pred) ** 2 + lv.n_incorrect * pred**2).sum(axis=1)
            bad |= ((pred <= 0.0) & (lv.n_correct > 0)).any(axis=1)
            bad |= ((pred >= 1.0) & (lv.n_incorrect > 0)).any(axis=1)
            if len(lv.child_parent) == 0:
                break
            pp = pL[:, lv.child_parent] if pL.shape[1] > 1 else pL
            pr = pred[:, lv.child_parent] if pred.shape[1] > 1 else pred
            post = np.where(
                lv.child_obs == 1, pp * (1.0 - S) / pr, pp * S / (1.0 - pr)
            )
            pL = post + (1.0 - post) * T
    sse[bad] = np.inf
    return sse


def _best_cell(seq, axes, chunk):
    cells = np.array(list(itertools.product(*axes)), dtype=float)
    levels = prefix_levels(seq)
    sse = np.concatenate(
        [grid_sse(seq, cells[i : i + chunk], levels) for i in range(0, len(cells), chunk)]
    )
    if not np.isfinite(sse).any():
        raise NoData("every grid cell is degenerate for this skill")
    # lowest SSE, then lexicographically smallest (L0, T, G, S)
    order = np.lexsort((cells[:, 3], cells[:, 2], cells[:, 1], cells[:, 0], sse))
    best = order[0]
    return cells[best], float(sse[best])


def fit_bkt_grid(d: Dataset, skill: str, grid: GridSpec = GridSpec()) -> BktParams:
    """Brute-force least-squares BKT fit for one skill."""
    seq = skill_sequences(d, skill)
    if seq.obs.size == 0 or not seq.mask.any():
        raise NoData(f"no opportunities on skill {skill!r}")
    if grid.values is not None:
        axes = [np.asarray(v, dtype=float) for v in grid.values]
        cell, sse = _best_cell(seq, axes, grid.chunk)
        return BktParams(*cell, sse=sse)

    bounds = (1.0, 1.0, grid.g_max, grid.s_max)
    axes = [_lattice(0.0, hi, grid.coarse_step) for hi in bounds]
    cell, sse = _best_cell(seq, axes, grid.chunk)
    fine = []
    for c, hi in zip(cell, bounds):
        lo_, hi_ = max(0.0, c - grid.fine_radius), min(hi, c + grid.fine_radius)
        fine.append(_lattice(lo_, hi_, grid.fine_step))
    cell, sse = _best_cell(seq, fine, grid.chunk)
    return BktParams(*(float(v) for v in cell), sse=sse)


def fit_bkt(d: Dataset, grid: GridSpec = GridSpec(), n_jobs: int = 1) -> dict[str, BktParams]:
    """Fit every skill in ``d``; skills are independent and run in parallel."""
    fits = Parallel(n_jobs=n_jobs)(delayed(fit_bkt_grid)(d, sk, grid) for sk in d.skills)
    return dict(zip(d.skills, fits))


@dataclass(frozen=True)
class KnowledgeTrace:
    """Per-event knowledge estimates, aligned to ``Dataset.events``.

    ``prior`` is P(L_n) entering the opportunity, ``posterior_obs`` the Bayes
    posterior after observing it, ``posterior`` the posterior after the
    learning transition (the prior of the next opportunity).
    """

    prior: np.ndarray
    posterior_obs: np.ndarray
    posterior: np.ndarray
    skill: tuple

    def for_student_skill(self, d: Dataset, student_id: str, skill: str):
        """Ordered (prior, posterior) pairs for one student and skill."""
        idx = [
            i
            for i, ev in enumerate(d.events)
            if ev.student_id == student_id and ev.skills[0] == skill
        ]
        return [(float(self.prior[i]), float(self.posterior[i])) for i in idx]


def trace_knowledge(d: Dataset, params: Mapping[str, BktParams]) -> KnowledgeTrace:
    n = d.n_events
    prior = np.empty(n)
    post_obs = np.empty(n)
    post = np.empty(n)
    skills = []
    i = 0
    for s in d.students:
        state: dict[str, float] = {}
        for ev in s.events:
            sk = ev.skill
            if sk not in params:
                raise MissingParams(f"no BKT parameters for skill {sk!r}")
            p = params[sk]
            pL = state.get(sk, p.L0)
            po, nxt = bkt_update(pL, ev.correct, p)
            prior[i], post_obs[i], post[i] = pL, po, nxt
            state[sk] = nxt
            skills.append(sk)
            i += 1
    return KnowledgeTrace(prior, post_obs, post, tuple(skills))


def _emit(known_p_correct, obs):
    return known_p_correct if obs else 1.0 - known_p_correct


def lookahead_slip(prior: float, next1: bool, next2: bool, params: BktParams) -> float:
    """Closed-form P(L_N | A_{N+1}, A_{N+2}) given P(L_N) = ``prior``."""
    T, G, S = params.T, params.G, params.S
    k1, k2 = _emit(1.0 - S, next1), _emit(1.0 - S, next2)
    u1, u2 = _emit(G, next1), _emit(G, next2)
    like_known = k1 * k2
    like_unknown = T * k1 * k2 + (1.0 - T) * u1 * (T * k2 + (1.0 - T) * u2)
    num = prior * like_known
    den = num + (1.0 - prior) * like_unknown
    if den <= 0.0:
        raise DegenerateUpdate("lookahead observations have zero probability")
    return num / den


@dataclass(frozen=True)
class SlipEstimate:
    event: int
    student_id: str
    seq_index: int
    skill: str
    probability: float
    model: str


def contextual_slip(
    d: Dataset,
    traces: KnowledgeTrace,
    params: Mapping[str, BktParams],
    condition_on_current: bool = False,
) -> list[SlipEstimate]:
    """Contextual slip probability for every slip-estimable incorrect event.

    With ``condition_on_current`` the prior is the posterior after observing
    the incorrect answer itself instead of the knowledge estimate entering it.
    """
    events = d.events
    opp, total = opportunity_index(d)
    # position of each (student, skill) opportunity -> event index
    lookup = {}
    for i, ev in enumerate(events):
        lookup[(d.event_student[i], ev.skills[0], opp[i])] = i
    out = []
    for i in slip_estimable_events(d):
        ev = events[i]
        key = (d.event_student[i], ev.skills[0])
        try:
            n1 = lookup[key + (opp[i] + 1,)]
            n2 = lookup[key + (opp[i] + 2,)]
        except KeyError:
            raise InsufficientLookahead(f"event {i}") from None
        p = params[ev.skills[0]]
        prior = traces.posterior_obs[i] if condition_on_current else traces.prior[i]
        prob = lookahead_slip(prior, events[n1].correct, events[n2].correct, p)
        out.append(
            SlipEstimate(int(i), ev.student_id, ev.seq_index, ev.skills[0], prob, "bkt_contextual")
        )
    return out


def save_params(params: Mapping[str, BktParams], path, provenance=None):
    blob = {"skills": {k: asdict(v) for k, v in sorted(params.items())}}
    if provenance:
        blob["provenance"] = provenance
    with open(path, "w") as fh:
        json.dump(blob, fh, indent=2, sort_keys=True)


def load_params(path) -> dict[str, BktParams]:
    with open(path) as fh:
        blob = json.load(fh)
    try:
        return {k: BktParams(**v) for k, v in blob["skills"].items()}
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad BKT parameter file: {exc}") from None
