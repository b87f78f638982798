"""Learner simulator with ground-truth knowledge and careless-behavior labels.

Each student walks the curriculum in order. Knowledge of each skill starts
as Bernoulli(L0) and, after every opportunity on that skill, an unknown
skill becomes known with probability T (no forgetting). On every question
the student acts carelessly with their own careless rate; careless actions
are fast and (by default) always wrong. Otherwise the answer is correct
with probability ``1 - S`` when every tagged skill is known and ``G``
otherwise. For multi-skill items the slip probability is
``1 - prod(1 - S_j)`` and the guess probability ``prod G_j`` over the
unknown skills.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import ndtri

from careless.bkt import BktParams
from careless.errors import InvalidConfig
from careless.events import (
    ACTIONS_REQUIRED,
    GAMING_OPTIONS,
    INPUT_TYPES,
    Dataset,
    QuestionEvent,
    StudentRecord,
)

SCORE_ITEMS = 24


@dataclass(frozen=True)
class ItemTemplate:
    question_id: str
    skills: tuple[str, ...]
    input_type: str = "slider"
    actions_required: str = "one"
    gaming_options: str = "limited"
    duration_mu: float = 3.0
    duration_sigma: float = 0.4


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``careless_rate`` is the mean per-question probability of careless
    behavior. With ``careless_concentration`` set, each student's own rate is
    drawn from a Beta distribution with that mean and concentration
    (``a + b``); otherwise every student shares the same rate.
    ``careless_incorrect_prob`` is the chance a careless action is wrong
    (1 = always). ``knowledge_gated`` restricts careless behavior to
    questions whose skills are all known. ``test_carelessness`` (in [0, 1])
    scales how much of the student's careless rate carries over to the 24
    test items: the expected score is
    ``24 * knowledge * (1 - test_carelessness * rate)``. With
    ``careless_blocks_learning`` a careless attempt is not a learning
    opportunity.
    """

    n_students: int
    skills: tuple[tuple[str, BktParams], ...]
    curriculum: tuple[ItemTemplate, ...]
    careless_rate: float = 0.1
    careless_concentration: float | None = None
    careless_speed_factor: float = 0.5
    careless_incorrect_prob: float = 1.0
    knowledge_gated: bool = False
    test_carelessness: float = 0.0
    careless_blocks_learning: bool = False
    posttest_noise_sd: float = 1.0
    gap_mean_s: float = 5.0
    seed: int = 0

    def validate(self):
        if self.n_students < 1:
            raise InvalidConfig("n_students must be >= 1")
        if not self.curriculum:
            raise InvalidConfig("curriculum is empty")
        if not self.skills:
            raise InvalidConfig("no skills")
        known = {sk for sk, _ in self.skills}
        if len(known) != len(self.skills):
            raise InvalidConfig("duplicate skill id")
        for name in ("careless_rate", "careless_incorrect_prob", "test_carelessness"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfig(f"{name} outside [0, 1]")
        if not 0.0 < self.careless_speed_factor <= 1.0:
            raise InvalidConfig("careless_speed_factor must be in (0, 1]")
        if self.careless_concentration is not None and self.careless_concentration <= 0:
            raise InvalidConfig("careless_concentration must be positive")
        if self.posttest_noise_sd < 0 or self.gap_mean_s < 0:
            raise InvalidConfig("negative noise or gap")
        for it in self.curriculum:
            if not it.skills or any(sk not in known for sk in it.skills):
                raise InvalidConfig(f"item {it.question_id} has unknown or no skills")
            if (
                it.input_type not in INPUT_TYPES
                or it.actions_required not in ACTIONS_REQUIRED
                or it.gaming_options not in GAMING_OPTIONS
            ):
                raise InvalidConfig(f"item {it.question_id} has bad UI metadata")
            if it.duration_sigma < 0:
                raise InvalidConfig("negative duration_sigma")
        return self

    def to_dict(self):
        blob = asdict(self)
        blob["skills"] = [[sk, asdict(p)] for sk, p in self.skills]
        return blob

    @classmethod
    def from_dict(cls, blob):
        try:
            blob = dict(blob)
            blob["skills"] = tuple(
                (sk, BktParams(**{k: v for k, v in p.items() if k != "sse"}))
                for sk, p in blob["skills"]
            )
            blob["curriculum"] = tuple(
                ItemTemplate(**{**it, "skills": tuple(it["skills"])}) for it in blob["curriculum"]
            )
            return cls(**blob).validate()
        except (TypeError, KeyError, ValueError) as exc:
            raise InvalidConfig(str(exc)) from None


@dataclass
class GroundTruth:
    """Event-level arrays aligned to ``Dataset.events`` plus per-student truth.

    ``known`` is True when every skill of the event was known when it was
    answered; ``knowledge_draw`` is the uniform used by the non-careless
    answer path, kept so counterfactual correctness can be recomputed.
    """

    known: np.ndarray
    careless_behavior: np.ndarray
    knowledge_draw: np.ndarray
    careless_error: np.ndarray | None
    final_knowledge: np.ndarray
    careless_rate: np.ndarray
    skills: tuple[str, ...] = field(default=())
    skill_known: tuple = field(default=())

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        arrays = ("known", "careless_behavior", "knowledge_draw", "careless_error",
                  "final_knowledge", "careless_rate")
        return self.skills == other.skills and self.skill_known == other.skill_known and all(
            np.array_equal(getattr(self, a), getattr(other, a)) for a in arrays
        )


def item_guess_slip(item: ItemTemplate, params: dict[str, BktParams], known_skills):
    """(probability of a correct answer on the knowledge path, all known?)"""
    all_known = all(known_skills)
    if all_known:
        p_slip = 1.0 - np.prod([1.0 - params[sk].S for sk in item.skills])
        return 1.0 - p_slip, True
    g = np.prod([params[sk].G for sk, k in zip(item.skills, known_skills) if not k])
    return float(g), False


def _simulate_student(cfg: SimConfig, index: int, params):
    rng = np.random.default_rng([cfg.seed, index])
    skill_ids = [sk for sk, _ in cfg.skills]
    if cfg.careless_concentration is None or cfg.careless_rate in (0.0, 1.0):
        rate = cfg.careless_rate
    else:
        a = cfg.careless_rate * cfg.careless_concentration
        b = (1.0 - cfg.careless_rate) * cfg.careless_concentration
        rate = float(rng.beta(a, b))
    init = rng.random(len(skill_ids))
    state = {sk: bool(u < params[sk].L0) for sk, u in zip(skill_ids, init)}
    initial_mean = float(np.mean([state[sk] for sk in skill_ids]))

    sid = f"s{index:04d}"
    rows = []
    clock = 0
    for n, item in enumerate(cfg.curriculum):
        u_care, u_know, u_force, z_dur, u_gap = rng.random(5)
        u_learn = rng.random(len(item.skills))
        known_skills = [state[sk] for sk in item.skills]
        p_know_path, all_known = item_guess_slip(item, params, known_skills)
        can_be_careless = all_known or not cfg.knowledge_gated
        careless = bool(can_be_careless and u_care < rate)
        path_correct = bool(u_know < p_know_path)
        if careless and u_force < cfg.careless_incorrect_prob:
            correct = False
        else:
            correct = path_correct
        dur = float(np.exp(item.duration_mu + item.duration_sigma * _norm_ppf(z_dur)))
        if careless:
            dur *= cfg.careless_speed_factor
        dur_ms = max(1, int(round(dur * 1000)))
        gap_ms = int(round(-np.log1p(-u_gap) * cfg.gap_mean_s * 1000))
        start = clock + gap_ms
        end = start + dur_ms
        clock = end
        rows.append(
            dict(
                event=QuestionEvent(
                    student_id=sid,
                    question_id=item.question_id,
                    seq_index=n,
                    skills=item.skills,
                    start_ms=start,
                    end_ms=end,
                    correct=correct,
                    input_type=item.input_type,
                    actions_required=item.actions_required,
                    gaming_options=item.gaming_options,
                ),
                known=all_known,
                skill_known=tuple(known_skills),
                careless=careless,
                draw=float(u_know),
            )
        )
        for sk, u in zip(item.skills, u_learn):
            if careless and cfg.careless_blocks_learning:
                break
            if not state[sk] and u < params[sk].T:
                state[sk] = True
    final = np.array([state[sk] for sk in skill_ids], dtype=float)
    return sid, rows, initial_mean, final, rate, rng


def _norm_ppf(u):
    return float(ndtri(min(max(u, 1e-12), 1 - 1e-12)))


def _score(rng, mean_knowledge, sd):
    noise = rng.normal(0.0, sd) if sd > 0 else 0.0
    raw = round(SCORE_ITEMS * mean_knowledge + noise)
    return float(min(max(raw, 0), SCORE_ITEMS))


def simulate(cfg: SimConfig) -> tuple[Dataset, GroundTruth]:
    """Generate a dataset and its ground truth; deterministic given ``cfg.seed``.

    Each student uses its own RNG stream seeded by ``(seed, student_index)``.
    """
    cfg.validate()
    params = dict(cfg.skills)
    students, known, careless, draws, finals, rates = [], [], [], [], [], []
    skill_known = []
    for i in range(cfg.n_students):
        sid, rows, init_mean, final, rate, rng = _simulate_student(cfg, i, params)
        keep = 1.0 - cfg.test_carelessness * rate * cfg.careless_incorrect_prob
        pre = _score(rng, init_mean * keep, cfg.posttest_noise_sd)
        post = _score(rng, final.mean() * keep, cfg.posttest_noise_sd)
        delayed = _score(rng, final.mean() * keep, cfg.posttest_noise_sd)
        students.append(
            StudentRecord(
                student_id=sid,
                events=tuple(r["event"] for r in rows),
                pretest=pre,
                posttest=post,
                delayed_posttest=delayed,
            )
        )
        known += [r["known"] for r in rows]
        skill_known += [r["skill_known"] for r in rows]
        careless += [r["careless"] for r in rows]
        draws += [r["draw"] for r in rows]
        finals.append(final)
        rates.append(rate)
    d = Dataset(
        students=tuple(students),
        score_max=float(SCORE_ITEMS),
        metadata={"source": "synthetic", "seed": cfg.seed},
    )
    truth = GroundTruth(
        known=np.array(known, dtype=bool),
        careless_behavior=np.array(careless, dtype=bool),
        knowledge_draw=np.array(draws),
        careless_error=None,
        final_knowledge=np.array(finals),
        careless_rate=np.array(rates),
        skills=tuple(sk for sk, _ in cfg.skills),
        skill_known=tuple(skill_known),
    )
    return d, label_counterfactuals(d, truth, cfg)


def label_counterfactuals(d: Dataset, truth: GroundTruth, cfg: SimConfig) -> GroundTruth:
    """Fill ``careless_error``: careless behavior on an answer that is wrong
    but would have been right on the non-careless path with the same draw."""
    params = dict(cfg.skills)
    items = {it.question_id: it for it in cfg.curriculum}
    flags = np.zeros(d.n_events, dtype=bool)
    for i, ev in enumerate(d.events):
        if not truth.careless_behavior[i] or ev.correct:
            continue
        item = items.get(ev.question_id) or ItemTemplate(ev.question_id, ev.skills)
        p, _ = item_guess_slip(item, params, truth.skill_known[i])
        flags[i] = truth.knowledge_draw[i] < p
    return replace(truth, careless_error=flags)


def ground_truth_csv(d: Dataset, truth: GroundTruth) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student_id", "seq_index", "known", "careless_behavior", "careless_error",
                "knowledge_draw"])
    for i, ev in enumerate(d.events):
        w.writerow([ev.student_id, ev.seq_index, int(truth.known[i]),
                    int(truth.careless_behavior[i]), int(truth.careless_error[i]),
                    repr(float(truth.knowledge_draw[i]))])
    return buf.getvalue().encode()


def student_truth_csv(d: Dataset, truth: GroundTruth) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["student_id", "careless_rate", "final_knowledge"] +
               [f"final_{sk}" for sk in truth.skills])
    for s, rate, fin in zip(d.students, truth.careless_rate, truth.final_knowledge):
        w.writerow([s.student_id, repr(float(rate)), repr(float(fin.mean()))] +
                   [int(v) for v in fin])
    return buf.getvalue().encode()


def config_json(cfg: SimConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)


def single_skill_config(
    n_students=500,
    n_opportunities=40,
    params=BktParams(0.4, 0.15, 0.20, 0.08),
    careless_rate=0.0,
    seed=0,
    **kw,
) -> SimConfig:
    """One skill practiced ``n_opportunities`` times."""
    items = tuple(ItemTemplate(f"q{k:03d}", ("A",)) for k in range(n_opportunities))
    return SimConfig(
        n_students=n_students,
        skills=(("A", params),),
        curriculum=items,
        careless_rate=careless_rate,
        seed=seed,
        **kw,
    )


DECIMAL_GAMES = ("sorting", "number_line", "sequence", "bucket", "addition")
_GAME_UI = {
    "sorting": ("slider", "multiple", "multiple"),
    "number_line": ("slider", "one", "limited"),
    "sequence": ("text", "multiple", "limited"),
    "bucket": ("radio", "multiple", "multiple"),
    "addition": ("text", "one", "limited"),
}


def default_config(
    n_students=200,
    seed=2016,
    rounds=3,
    units=2,
    duration_sigma=0.35,
    ps_params=(0.35, 0.12, 0.08, 0.06),
    se_params=(0.4, 0.15, 0.12, 0.06),
    **kw,
) -> SimConfig:
    """A decimal-arithmetic game curriculum: five games, each a problem-solving step
    followed by a multiple-choice self-explanation step. Each game comes in
    ``units`` variants with their own skills (``10 * units`` skills), and the
    whole set is cycled ``rounds`` times. ``ps_params``/``se_params`` are the
    (L0, T, G, S) of the problem-solving and self-explanation skills."""
    rng = np.random.default_rng(seed)
    skills = []
    for u in range(units):
        for g in DECIMAL_GAMES:
            skills.append((f"ps_{g}_{u}", BktParams(*ps_params)))
            skills.append((f"se_{g}_{u}", BktParams(*se_params)))
    mus = {
        (u, g): (float(np.log(25.0) + rng.normal(0, 0.2)), float(np.log(15.0) + rng.normal(0, 0.2)))
        for u in range(units)
        for g in DECIMAL_GAMES
    }
    items = []
    for r in range(rounds):
        for u in range(units):
            for g in DECIMAL_GAMES:
                it, ar, go = _GAME_UI[g]
                mu_ps, mu_se = mus[u, g]
                items.append(ItemTemplate(f"{g}_{u}_{r}_ps", (f"ps_{g}_{u}",), it, ar, go, mu_ps,
                                          duration_sigma))
                items.append(ItemTemplate(f"{g}_{u}_{r}_se", (f"se_{g}_{u}",), "radio", "one",
                                          "limited", mu_se, duration_sigma))
    base = dict(
        n_students=n_students,
        skills=tuple(skills),
        curriculum=tuple(items),
        careless_rate=0.12,
        careless_concentration=2.0,
        careless_speed_factor=0.5,
        test_carelessness=1.0,
        careless_blocks_learning=True,
        posttest_noise_sd=1.0,
        seed=seed,
    )
    base.update(kw)
    return SimConfig(**base)


def multi_skill_config(n_students=100, seed=7, **kw) -> SimConfig:
    """Curriculum where some items carry two or three skills."""
    skills = tuple((k, BktParams(0.35, 0.15, 0.2, 0.08)) for k in "ABCD")
    tags = [("A", "B", "C"), ("A", "C"), ("A", "D"), ("B", "C", "D"), ("A",), ("B",),
            ("C",), ("D",)]
    items = tuple(
        ItemTemplate(f"q{r}_{k}", t, INPUT_TYPES[k % 3], ACTIONS_REQUIRED[k % 2],
                     GAMING_OPTIONS[(k // 2) % 2], 3.0, 0.4)
        for r in range(5)
        for k, t in enumerate(tags)
    )
    base = dict(n_students=n_students, skills=skills, curriculum=items, careless_rate=0.1,
                careless_concentration=5.0, seed=seed)
    base.update(kw)
    return SimConfig(**base)
