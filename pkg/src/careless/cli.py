"""Command line interface.

    careless simulate|fit|detect|compare|report [--config run.json] [--seed N] [--out DIR]

Settings come from the config file, then ``CARELESS_*`` environment
variables, then flags (later wins). Exit status: 0 success, 1 invalid input
or missing artifacts, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from careless import bkfc as bkfc_mod
from careless import bkt as bkt_mod
from careless import forest, pfa, pipeline
from careless.errors import CarelessError, InvalidConfig, MissingArtifact, ValidationError
from careless.events import parse_log, serialize_log
from careless.features import extract_features
from careless.sim import config_json, ground_truth_csv, simulate, student_truth_csv

ENV_PREFIX = "CARELESS_"
ENV_KEYS = {"SEED": ("seed", int), "OUT": ("out", str), "LOG": ("log", str),
            "SCORES": ("scores", str), "N_JOBS": ("n_jobs", int)}

LOG_FILE = "events.csv"
SCORES_FILE = "scores.csv"
TRUTH_FILE = "ground_truth.csv"
STUDENT_TRUTH_FILE = "student_truth.csv"
SIM_CONFIG_FILE = "sim_config.json"
BKT_FILE = "bkt_params.json"
PFA_FILE = "pfa_params.json"
BKFC_FILE = "bkfc_model.json"
ML_FILE = "ml_model.json"
CV_FILE = "cv_report.json"
FIT_STATUS_FILE = "fit_status.json"
REPORT_FILE = "report.json"
SUMMARY_FILE = "report.txt"


def load_config(path=None, env=None, seed=None, out=None, n_jobs=None) -> pipeline.RunConfig:
    blob = {}
    env = os.environ if env is None else env
    path = path or env.get(ENV_PREFIX + "CONFIG")
    if path:
        try:
            with open(path) as fh:
                blob = json.load(fh)
        except FileNotFoundError:
            raise InvalidConfig(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config file is not valid JSON: {exc}") from None
        if not isinstance(blob, dict):
            raise InvalidConfig("config file must hold a JSON object")
    for key, (name, conv) in ENV_KEYS.items():
        if ENV_PREFIX + key in env:
            try:
                blob[name] = conv(env[ENV_PREFIX + key])
            except ValueError:
                raise InvalidConfig(f"bad value for {ENV_PREFIX + key}") from None
    for name, value in (("seed", seed), ("out", out), ("n_jobs", n_jobs)):
        if value is not None:
            blob[name] = value
    return pipeline.RunConfig.from_dict(blob)


def _headers(cfg: pipeline.RunConfig):
    return (f"config_hash={cfg.config_hash}", f"seed={cfg.seed}")


def _with_headers(data: bytes, cfg) -> bytes:
    return "".join(f"# {h}\n" for h in _headers(cfg)).encode() + data


def _write(path: Path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data if isinstance(data, bytes) else data.encode())


def _write_json(path: Path, blob, cfg):
    blob = {**blob, "provenance": cfg.provenance}
    _write(path, json.dumps(pipeline._clean(blob), indent=2, sort_keys=True) + "\n")


def _need(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifact(f"required artifact not found: {path}")
    return path


def _dataset(cfg: pipeline.RunConfig):
    out = Path(cfg.out)
    log = Path(cfg.log) if cfg.log else _need(out / LOG_FILE)
    scores = cfg.scores if cfg.scores else (out / SCORES_FILE if not cfg.log else None)
    if cfg.log and not log.exists():
        raise MissingArtifact(f"log file not found: {log}")
    if scores is not None and not Path(scores).exists():
        if cfg.scores:
            raise MissingArtifact(f"scores file not found: {scores}")
        scores = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return parse_log(log, scores, score_max=cfg.score_max)


def cmd_simulate(cfg: pipeline.RunConfig) -> list[Path]:
    sim = cfg.sim_config()
    d, truth = simulate(sim)
    out = Path(cfg.out)
    log, scores = serialize_log(d, _headers(cfg))
    files = {
        LOG_FILE: log,
        SCORES_FILE: scores,
        TRUTH_FILE: _with_headers(ground_truth_csv(d, truth), cfg),
        STUDENT_TRUTH_FILE: _with_headers(student_truth_csv(d, truth), cfg),
    }
    for name, data in files.items():
        _write(out / name, data)
    _write_json(out / SIM_CONFIG_FILE, json.loads(config_json(sim)), cfg)
    return [out / n for n in [*files, SIM_CONFIG_FILE]]


def cmd_fit(cfg: pipeline.RunConfig) -> list[Path]:
    d = _dataset(cfg)
    out = Path(cfg.out)
    X = extract_features(d, cfg.model.zscore_mode)
    models = pipeline.fit_models(d, cfg, X)
    prov = cfg.provenance
    out.mkdir(parents=True, exist_ok=True)
    written = [out / PFA_FILE, out / BKFC_FILE, out / FIT_STATUS_FILE]
    pfa.save_params(models.pfa, out / PFA_FILE, prov)
    bkfc_mod.save_model(models.bkfc, out / BKFC_FILE, prov)
    for name, model in ((BKT_FILE, models.bkt), (ML_FILE, models.ml), (CV_FILE, models.cv)):
        if model is None and (out / name).exists():
            (out / name).unlink()
    if models.bkt is not None:
        bkt_mod.save_params(models.bkt, out / BKT_FILE, prov)
        written.append(out / BKT_FILE)
    if models.ml is not None:
        forest.save_model(models.ml, out / ML_FILE, prov)
        _write_json(out / CV_FILE, pipeline.cv_summary(models.cv), cfg)
        written += [out / ML_FILE, out / CV_FILE]
    _write_json(out / FIT_STATUS_FILE, {"skipped": models.skipped}, cfg)
    _write(out / "features.csv", X.to_csv(d, _headers(cfg)))
    written.append(out / "features.csv")
    return written


def _load_models(cfg, d) -> pipeline.FittedModels:
    out = Path(cfg.out)
    status = json.loads(_need(out / FIT_STATUS_FILE).read_text())
    skipped = status.get("skipped", {})
    models = pipeline.FittedModels(
        pfa=pfa.load_params(_need(out / PFA_FILE)),
        bkfc=bkfc_mod.load_model(_need(out / BKFC_FILE)),
        skipped=skipped,
    )
    if "bkt_contextual" not in skipped:
        models.bkt = bkt_mod.load_params(_need(out / BKT_FILE))
    if "ml_contextual" not in skipped:
        models.ml = forest.load_model(_need(out / ML_FILE))
    return models


def cmd_detect(cfg: pipeline.RunConfig) -> list[Path]:
    d = _dataset(cfg)
    models = _load_models(cfg, d)
    est = pipeline.detect(d, models, cfg)
    out = Path(cfg.out)
    written = []
    for m in pipeline.MODELS:
        path = out / f"{m}.csv"
        _write(path, pipeline.estimates_csv(est[m], _headers(cfg)))
        written.append(path)
    return written


def _read_truth(out: Path, d) -> pipeline.TruthTable | None:
    ev_path, st_path = out / TRUTH_FILE, out / STUDENT_TRUTH_FILE
    if not (ev_path.exists() and st_path.exists()):
        return None

    def rows(path):
        text = "\n".join(ln for ln in path.read_text().splitlines() if not ln.startswith("#"))
        return list(csv.DictReader(io.StringIO(text)))

    index = {(ev.student_id, ev.seq_index): i for i, ev in enumerate(d.events)}
    n = d.n_events
    known, behavior, error = np.zeros(n, bool), np.zeros(n, bool), np.zeros(n, bool)
    seen = 0
    for r in rows(ev_path):
        i = index.get((r["student_id"], int(r["seq_index"])))
        if i is None:
            continue
        known[i], behavior[i], error[i] = (r["known"] == "1", r["careless_behavior"] == "1",
                                           r["careless_error"] == "1")
        seen += 1
    rate = {r["student_id"]: float(r["careless_rate"]) for r in rows(st_path)}
    if seen != n or any(s not in rate for s in d.student_ids):
        raise ValidationError("ground truth files do not match the dataset")
    return pipeline.TruthTable(known, behavior, error, np.array([rate[s] for s in d.student_ids]))


def cmd_compare(cfg: pipeline.RunConfig) -> list[Path]:
    d = _dataset(cfg)
    out = Path(cfg.out)
    models = _load_models(cfg, d)
    est = {}
    for m in pipeline.MODELS:
        est[m] = pipeline.read_estimates(_need(out / f"{m}.csv").read_text(), d, m)
    cv = None
    if (out / CV_FILE).exists() and models.ml is not None:
        cv = json.loads((out / CV_FILE).read_text())
        cv.pop("provenance", None)
    report = pipeline.compare(d, est, models.bkt, models.pfa, truth=_read_truth(out, d), cv=cv,
                              provenance=cfg.provenance, skipped=models.skipped)
    _write(out / REPORT_FILE, pipeline.report_json(report))
    return [out / REPORT_FILE]


def _fmt(v, spec=".3f"):
    return "-" if v is None else format(v, spec)


def _learning_lines(learning):
    lines = []
    for m, block in learning.items():
        for outcome in pipeline.OUTCOMES:
            r = block[outcome]
            if "error" in r:
                lines.append(f"  {m:<16} {outcome:<17} {r['error']}")
                continue
            c = r["coefficients"]["carelessness"]
            lines.append(f"  {m:<16} {outcome:<17} b {_fmt(c['b'], '8.3f')}  p {_fmt(c['p'], '.4f')}  "
                         f"R2 {_fmt(r['r_squared'])}")
    return lines


def summarize_report(report: dict) -> str:
    """Plain-text tables from a comparison report."""
    lines = [f"config {report['provenance'].get('config_hash')}  seed {report['provenance'].get('seed')}"]
    data = report["data"]
    lines.append(
        f"{data['n_students']} students, {data['n_events']} answers "
        f"({data['n_incorrect']} incorrect, {data['n_slip_estimable']} slip-estimable)"
    )
    lines.append(f"analysis set: {report.get('analysis_set')}")
    for m, why in report.get("skipped", {}).items():
        lines.append(f"skipped {m}: {why}")
    lines += ["", "estimates            n      mean     sd  tail   mid"]
    for m, s in report["distributions"].items():
        if "error" in s:
            lines.append(f"{m:<18} {s['error']}")
            continue
        lines.append(f"{m:<18} {s['n']:>5} {_fmt(s['mean']):>8} {_fmt(s['sd']):>6} "
                     f"{_fmt(s['tail_mass'], '.2f'):>5} {_fmt(s['mid_mass'], '.2f'):>5}")
    lines += ["", "student-level Spearman"]
    for pair, r in report["correlations"].items():
        lines.append(f"  {pair:<32} " + (r.get("error") or f"rho {_fmt(r['rho'])}  p {_fmt(r['p'], '.4f')}  n {r['n']}"))
    lines += ["", "carelessness coefficient, controlling for final knowledge"]
    lines += _learning_lines(report["learning"])
    if "all_incorrect" in report:
        lines += ["", "same, over every incorrect answer each detector scores"]
        lines += _learning_lines(report["all_incorrect"]["learning"])
    for measure, block in report.get("external", {}).items():
        lines += ["", f"correlation with {measure}"]
        for m, r in block.items():
            lines.append(f"  {m:<16} " + (r.get("error") or f"rho {_fmt(r['rho'])}  p {_fmt(r['p'], '.4f')}"))
    if "ml_cv" in report:
        cv = report["ml_cv"]
        lines += ["", f"ML slip {cv['k']}-fold student CV: RMSE {_fmt(cv['pooled_rmse'], '.4f')} "
                      f"(mean baseline {_fmt(cv['baseline_rmse'], '.4f')})"]
    if "ground_truth" in report:
        gt = report["ground_truth"]
        lines += ["", "against simulated ground truth"]
        for m in pipeline.MODELS:
            if m in gt:
                b = gt[m]
                rho = b["student_rate_spearman"].get("rho")
                lines.append(f"  {m:<16} known-careless gap {_fmt(b['known_careless_gap'])}  "
                             f"rate rho {_fmt(rho)}")
    return "\n".join(lines) + "\n"


def cmd_report(cfg: pipeline.RunConfig) -> list[Path]:
    out = Path(cfg.out)
    report = json.loads(_need(out / REPORT_FILE).read_text())
    text = summarize_report(report)
    _write(out / SUMMARY_FILE, text)
    sys.stdout.write(text)
    return [out / SUMMARY_FILE]


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "detect": cmd_detect,
    "compare": cmd_compare,
    "report": cmd_report,
}


def build_parser():
    p = argparse.ArgumentParser(prog="careless", description="Carelessness detector comparison")
    p.add_argument("command", choices=[*COMMANDS, "all"],
                   help="pipeline stage ('all' runs simulate through report)")
    p.add_argument("--config", help="run configuration (JSON)")
    p.add_argument("--seed", type=int, help="random seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n-jobs", type=int, help="worker processes (does not change results)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, n_jobs=args.n_jobs)
        stages = list(COMMANDS) if args.command == "all" else [args.command]
        if args.command == "all" and cfg.log:
            stages.remove("simulate")
        for stage in stages:
            for path in COMMANDS[stage](cfg):
                if stage != "report":
                    print(f"{stage}: wrote {path}", file=sys.stderr)
    except ValidationError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit": 1}), file=sys.stderr)
        return 1
    except (CarelessError, ArithmeticError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit": 2}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
