"""End-to-end analysis: fit the three detectors, score incorrect answers, and
compare the detectors against each other, test outcomes and (for simulated
data) the ground truth.

Everything here is deterministic given the run configuration; the report is
plain JSON-ready data so two runs can be compared byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from careless import bkfc as bkfc_mod
from careless import bkt as bkt_mod
from careless import forest
from careless.errors import CarelessError, InvalidConfig, ValidationError
from careless.events import Dataset, slip_estimable_events
from careless.features import FeatureMatrix, extract_features
from careless.logistic import OptSpec
from careless.pfa import PfaParams, fit_pfa, pfa_trace
from careless.sim import (
    GroundTruth,
    SimConfig,
    default_config,
    multi_skill_config,
    single_skill_config,
)
from careless.stats import (
    final_knowledge,
    ols,
    spearman,
    student_level_carelessness,
    summarize_distribution,
)

MODELS = ("bkt_contextual", "ml_contextual", "bkfc")
OUTCOMES = ("posttest", "delayed_posttest")
EXTERNAL = ("gaming", "confrustion")
PRESETS = {
    "default": default_config,
    "single_skill": single_skill_config,
    "multi_skill": multi_skill_config,
}


@dataclass(frozen=True)
class ModelSpec:
    grid: bkt_mod.GridSpec = bkt_mod.GridSpec()
    opt: OptSpec = OptSpec()
    ensemble: forest.EnsembleConfig = forest.EnsembleConfig()
    cdf_mode: str = "raw"
    zscore_mode: str = "retrospective"
    condition_on_current: bool = False
    bkfc_center: bool = True
    cv_folds: int = 5

    def to_dict(self):
        blob = asdict(self)
        blob["ensemble"].pop("seed")
        blob["ensemble"].pop("n_jobs")
        return blob

    @classmethod
    def from_dict(cls, blob):
        blob = dict(blob or {})
        _check_keys(blob, cls, "model")
        try:
            if "grid" in blob:
                g = dict(blob["grid"])
                if g.get("values") is not None:
                    g["values"] = tuple(tuple(v) for v in g["values"])
                blob["grid"] = bkt_mod.GridSpec(**g)
            if "opt" in blob:
                blob["opt"] = OptSpec(**blob["opt"])
            if "ensemble" in blob:
                blob["ensemble"] = forest.EnsembleConfig(**blob["ensemble"])
            spec = cls(**blob)
        except TypeError as exc:
            raise InvalidConfig(f"model section: {exc}") from None
        if spec.cdf_mode not in ("raw", "standardized"):
            raise InvalidConfig(f"cdf_mode must be raw or standardized, not {spec.cdf_mode!r}")
        if spec.zscore_mode not in ("retrospective", "online"):
            raise InvalidConfig(f"unknown zscore_mode {spec.zscore_mode!r}")
        if spec.cv_folds < 2:
            raise InvalidConfig("cv_folds must be at least 2")
        return spec


def _check_keys(blob, cls, section):
    unknown = set(blob) - {f.name for f in fields(cls)}
    if unknown:
        raise InvalidConfig(f"unknown keys in {section} section: {sorted(unknown)}")


@dataclass(frozen=True)
class RunConfig:
    """One analysis run.

    ``sim`` selects a simulator preset (``{"preset": "default", ...}``; other
    keys are passed to the preset) or a complete simulator configuration
    (``{"config": {...}}``). ``log``/``scores`` name input CSVs for real data;
    when ``log`` is unset the pipeline reads the simulated files from ``out``.
    ``n_jobs`` only changes speed, never results, so it is not hashed.
    """

    seed: int = 2016
    out: str = "careless-out"
    log: str | None = None
    scores: str | None = None
    score_max: float = 24.0
    sim: dict = field(default_factory=lambda: {"preset": "default"})
    model: ModelSpec = ModelSpec()
    n_jobs: int = 1

    def to_dict(self):
        return {
            "seed": self.seed,
            "log": self.log,
            "scores": self.scores,
            "score_max": self.score_max,
            "sim": self.sim,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, blob):
        blob = dict(blob)
        _check_keys(blob, cls, "top-level")
        if "model" in blob:
            blob["model"] = ModelSpec.from_dict(blob["model"])
        if "seed" in blob and not isinstance(blob["seed"], int):
            raise InvalidConfig("seed must be an integer")
        try:
            cfg = cls(**blob)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None
        cfg.sim_config()
        return cfg

    @property
    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed}

    def sim_config(self) -> SimConfig:
        sim = dict(self.sim)
        if "config" in sim:
            blob = {**sim["config"], "seed": self.seed}
            return SimConfig.from_dict(blob)
        preset = sim.pop("preset", "default")
        if preset not in PRESETS:
            raise InvalidConfig(f"unknown simulator preset {preset!r}")
        try:
            return PRESETS[preset](seed=self.seed, **sim).validate()
        except TypeError as exc:
            raise InvalidConfig(f"sim section: {exc}") from None

    def ensemble_config(self) -> forest.EnsembleConfig:
        return replace(self.model.ensemble, seed=self.seed, n_jobs=self.n_jobs)


# ---------------------------------------------------------------- fitting


@dataclass
class FittedModels:
    pfa: PfaParams
    bkfc: bkfc_mod.BkfcModel
    bkt: dict | None = None
    ml: forest.EnsembleModel | None = None
    cv: forest.CvReport | None = None
    skipped: dict = field(default_factory=dict)


def fit_models(d: Dataset, cfg: RunConfig, X: FeatureMatrix | None = None) -> FittedModels:
    """PFA + BKFC always; BKT, the tree ensemble and its cross-validation
    only on single-skill data (the contextual slip labels need one skill per
    answer)."""
    spec = cfg.model
    X = X if X is not None else extract_features(d, spec.zscore_mode)
    pfa = fit_pfa(d, spec.opt)
    bkfc = bkfc_mod.fit_bkfc(d, pfa_trace(d, pfa), X, spec.opt, center=spec.bkfc_center)
    fitted = FittedModels(pfa=pfa, bkfc=bkfc)
    if not d.is_single_skill():
        reason = "dataset contains multi-skill events"
        fitted.skipped = {"bkt_contextual": reason, "ml_contextual": reason}
        return fitted
    fitted.bkt = bkt_mod.fit_bkt(d, spec.grid, n_jobs=cfg.n_jobs)
    trace = bkt_mod.trace_knowledge(d, fitted.bkt)
    slips = bkt_mod.contextual_slip(d, trace, fitted.bkt, spec.condition_on_current)
    if not slips:
        fitted.skipped = {"ml_contextual": "no slip-estimable events"}
        return fitted
    rows = np.array([s.event for s in slips])
    y = np.array([s.probability for s in slips])
    ens = cfg.ensemble_config()
    fitted.ml = forest.train_ensemble(X.rows(rows), y, ens)
    groups = [s.student_id for s in slips]
    fitted.cv = forest.crossvalidate(groups, X.rows(rows), y, spec.cv_folds, cfg.seed, ens)
    return fitted


# --------------------------------------------------------------- detection


@dataclass(frozen=True)
class Estimate:
    event: int
    student_id: str
    seq_index: int
    skills: tuple
    probability: float
    model: str
    omega: float | None = None


def detect(d: Dataset, models: FittedModels, cfg: RunConfig, X: FeatureMatrix | None = None):
    """Estimates per detector: contextual slip on slip-estimable errors, the
    tree ensemble and BKFC on every incorrect answer."""
    spec = cfg.model
    X = X if X is not None else extract_features(d, spec.zscore_mode)
    out = {m: [] for m in MODELS}
    events = d.events
    if models.bkt is not None:
        trace = bkt_mod.trace_knowledge(d, models.bkt)
        for s in bkt_mod.contextual_slip(d, trace, models.bkt, spec.condition_on_current):
            out["bkt_contextual"].append(
                Estimate(s.event, s.student_id, s.seq_index, (s.skill,), s.probability,
                         "bkt_contextual")
            )
    wrong = np.flatnonzero(~d.correct)
    if models.ml is not None and len(wrong):
        probs = forest.predict(models.ml, X.rows(wrong))
        out["ml_contextual"] = [
            Estimate(int(i), events[i].student_id, events[i].seq_index, events[i].skills,
                     float(p), "ml_contextual")
            for i, p in zip(wrong, probs)
        ]
    if len(wrong):
        out["bkfc"] = [
            Estimate(e.event, e.student_id, e.seq_index, e.skills, e.probability, "bkfc", e.omega)
            for e in bkfc_mod.bkfc_estimates(d, X, models.bkfc, spec.cdf_mode)
        ]
    return out


def estimates_csv(estimates, header_lines=()) -> bytes:
    """``student_id, seq_index, skill, p_slip, model[, omega]``."""
    lines = [f"# {ln}" for ln in header_lines]
    with_omega = any(e.omega is not None for e in estimates)
    cols = ["student_id", "seq_index", "skill", "p_slip", "model"] + (["omega"] if with_omega else [])
    lines.append(",".join(cols))
    for e in estimates:
        row = [e.student_id, str(e.seq_index), ";".join(e.skills), repr(float(e.probability)), e.model]
        if with_omega:
            row.append(repr(float(e.omega)))
        lines.append(",".join(row))
    return ("\n".join(lines) + "\n").encode()


def read_estimates(text: str, d: Dataset, model: str):
    """Inverse of :func:`estimates_csv`, resolving rows back to events."""
    import csv
    import io

    index = {(ev.student_id, ev.seq_index): i for i, ev in enumerate(d.events)}
    body = "\n".join(ln for ln in text.splitlines() if not ln.startswith("#"))
    out = []
    for row_no, row in enumerate(csv.DictReader(io.StringIO(body)), start=1):
        try:
            key = (row["student_id"], int(row["seq_index"]))
            i = index[key]
            omega = float(row["omega"]) if row.get("omega") else None
            out.append(Estimate(i, key[0], key[1], d.events[i].skills, float(row["p_slip"]),
                                model, omega))
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"{model} estimates row {row_no}: {exc}") from None
    return out


# -------------------------------------------------------------- comparison


@dataclass(frozen=True)
class TruthTable:
    """The parts of the simulator's ground truth the report uses."""

    known: np.ndarray
    careless_behavior: np.ndarray
    careless_error: np.ndarray
    careless_rate: np.ndarray

    @classmethod
    def from_truth(cls, truth: GroundTruth):
        return cls(truth.known, truth.careless_behavior, truth.careless_error, truth.careless_rate)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _guarded(fn, *args, **kw):
    try:
        return fn(*args, **kw).to_dict()
    except (CarelessError, ValueError) as exc:
        return {"error": f"{type(exc).__name__}: {exc}"}


def _student_frame(d: Dataset, estimates):
    """{student_id: mean estimate} for students with at least one estimate."""
    return student_level_carelessness(estimates, d).as_dict()


def compare(
    d: Dataset,
    estimates: dict,
    bkt_params: dict | None,
    pfa_params: PfaParams,
    truth: TruthTable | None = None,
    cv: dict | None = None,
    provenance: dict | None = None,
    skipped: dict | None = None,
) -> dict:
    """Assemble the comparison report (see README for the layout).

    When contextual slip estimates exist, the headline blocks compare all
    detectors on the errors the slip model can score (``analysis_set`` is
    ``slip_estimable``); the same blocks over every error the other
    detectors score are under ``all_incorrect``.
    """
    n_wrong = int((~d.correct).sum())
    slip_events = {e.event for e in estimates.get("bkt_contextual", [])}
    report = {
        "provenance": provenance or {},
        "data": {
            "n_students": len(d.students),
            "n_events": d.n_events,
            "n_correct": int(d.correct.sum()),
            "n_incorrect": n_wrong,
            "n_slip_estimable": len(slip_estimable_events(d)) if d.is_single_skill() else None,
            "single_skill": d.is_single_skill(),
        },
        "coverage": {
            m: {
                "n_estimates": len(estimates.get(m, [])),
                "fraction_of_incorrect": len(estimates.get(m, [])) / n_wrong if n_wrong else None,
            }
            for m in MODELS
        },
    }
    if skipped:
        report["skipped"] = dict(skipped)
    fk = {}
    if bkt_params is not None:
        fk["bkt"] = final_knowledge(d, bkt_mod.trace_knowledge(d, bkt_params).prior)
    fk["pfa"] = final_knowledge(d, pfa_trace(d, pfa_params).p_m)

    everything = {m: list(v) for m, v in estimates.items() if v}
    if slip_events:
        subset = {m: [e for e in v if e.event in slip_events] for m, v in everything.items()}
        report["analysis_set"] = "slip_estimable"
        report.update(_blocks(d, subset, fk, truth))
        report["all_incorrect"] = _blocks(d, everything, fk, truth)
    else:
        report["analysis_set"] = "all_incorrect"
        report.update(_blocks(d, everything, fk, truth))
    if cv is not None:
        report["ml_cv"] = cv
    return _clean(report)


def _blocks(d: Dataset, estimates: dict, fk: dict, truth) -> dict:
    """Distribution, pairwise, learning, external-measure and ground-truth
    blocks for one set of estimates."""
    present = [m for m in MODELS if estimates.get(m)]
    out = {
        "distributions": {
            m: _guarded(summarize_distribution, [e.probability for e in estimates[m]])
            for m in present
        }
    }
    means = {m: _student_frame(d, estimates[m]) for m in present}
    pairs = {}
    for a_i, a in enumerate(present):
        for b in present[a_i + 1:]:
            both = [s for s in d.student_ids if s in means[a] and s in means[b]]
            pairs[f"{a}~{b}"] = _guarded(
                spearman, [means[a][s] for s in both], [means[b][s] for s in both]
            )
    out["correlations"] = pairs

    source = {"bkt_contextual": "bkt", "ml_contextual": "bkt", "bkfc": "pfa"}
    pos = {s: k for k, s in enumerate(d.student_ids)}
    learning = {}
    for m in present:
        k_est = fk.get(source[m])
        if k_est is None:
            continue
        block = {"final_knowledge": source[m], "excluded_students": len(d.students) - len(means[m])}
        for outcome in OUTCOMES:
            y = d.scores(outcome, normalized=False)
            rows = [
                pos[s] for s in d.student_ids
                if s in means[m] and np.isfinite(y[pos[s]]) and np.isfinite(k_est[pos[s]])
            ]
            care = np.array([means[m][d.student_ids[r]] for r in rows])
            block[outcome] = _guarded(
                ols, y[rows], np.column_stack([k_est[rows], care]) if rows else np.empty((0, 2)),
                names=("final_knowledge", "carelessness"),
            )
        learning[m] = block
    out["learning"] = learning

    external = {}
    for measure in EXTERNAL:
        if not _has_scores(d, measure):
            continue
        vals = d.scores(measure, normalized=False)
        external[measure] = {}
        for m in present:
            rows = [pos[s] for s in d.student_ids if s in means[m] and np.isfinite(vals[pos[s]])]
            external[measure][m] = _guarded(
                spearman, vals[rows], [means[m][d.student_ids[r]] for r in rows]
            )
    out["external"] = external
    if truth is not None:
        out["ground_truth"] = _validity(d, estimates, present, means, truth)
    return out


def _has_scores(d: Dataset, name: str) -> bool:
    return any(getattr(s, name) is not None for s in d.students)


def _validity(d, estimates, present, means, truth: TruthTable) -> dict:
    out = {}
    for m in present:
        idx = np.array([e.event for e in estimates[m]])
        p = np.array([e.probability for e in estimates[m]])
        known, cerr = truth.known[idx], truth.careless_error[idx]
        block = {
            "mean_on_careless_known_errors": float(p[cerr & known].mean()) if (cerr & known).any() else None,
            "mean_on_unknown_errors": float(p[~known].mean()) if (~known).any() else None,
            "mean_on_careless_errors": float(p[cerr].mean()) if cerr.any() else None,
            "mean_on_other_errors": float(p[~cerr].mean()) if (~cerr).any() else None,
        }
        a, b = block["mean_on_careless_known_errors"], block["mean_on_unknown_errors"]
        block["known_careless_gap"] = a - b if a is not None and b is not None else None
        ids = [s for s in d.student_ids if s in means[m]]
        rate = dict(zip(d.student_ids, truth.careless_rate))
        block["student_rate_spearman"] = _guarded(
            spearman, [means[m][s] for s in ids], [rate[s] for s in ids]
        )
        out[m] = block
    out["n_careless_behavior"] = int(truth.careless_behavior.sum())
    out["n_careless_errors"] = int(truth.careless_error.sum())
    return out


def report_json(report: dict) -> bytes:
    return (json.dumps(report, indent=2, sort_keys=True) + "\n").encode()


def cv_summary(cv: forest.CvReport) -> dict:
    sizes = [0] * len(cv.fold_rmse)
    for f in cv.folds.values():
        sizes[f] += 1
    return {
        "k": len(cv.fold_rmse),
        "fold_students": sizes,
        "fold_rmse": cv.fold_rmse,
        "pooled_rmse": cv.pooled_rmse,
        "baseline_rmse": cv.baseline_rmse,
    }


def run_all(cfg: RunConfig, d: Dataset | None = None, truth: GroundTruth | None = None) -> dict:
    """simulate (unless ``d`` is given) -> fit -> detect -> compare, in memory."""
    from careless.sim import simulate

    if d is None:
        d, truth = simulate(cfg.sim_config())
    X = extract_features(d, cfg.model.zscore_mode)
    models = fit_models(d, cfg, X)
    est = detect(d, models, cfg, X)
    return compare(
        d, est, models.bkt, models.pfa,
        truth=TruthTable.from_truth(truth) if truth is not None else None,
        cv=cv_summary(models.cv) if models.cv is not None else None,
        provenance=cfg.provenance,
        skipped=models.skipped,
    )
