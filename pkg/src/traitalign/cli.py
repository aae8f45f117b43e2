"""Command-line entry point: generate, tune, train, eval, predict, report.

Every command resolves one RunConfig (defaults < --config file < flags; the seed
falls back to $TRAITALIGN_SEED), logs it, and embeds it with the code version in
its outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import ndcore as nd
from .chunking import EmptyAugmentationError
from .inference import aggregate_subject, knn_predict, lowest_highest_gap, report_chunk_similarity
from .objective import DegenerateBatchError
from .search import InfeasibleCandidate, SearchError, TpeConfig, check_feasible, default_bounds, optimize_chunk_length
from .synthdata import CohortSpec, DatasetFormatError, SubjectRecord, generate_cohort, load_dataset, read_array, save_dataset
from .training import RunConfig, embed_chunks, fit_model, load_model, loso_evaluate, prepare_cohort, prepare_subject, save_model

log = logging.getLogger("traitalign")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

TASKS = ("classify", "regress", "both")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ------------------------------------------------------------------ config


_FLAG_FIELDS = {
    "seed": int,
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "weight_decay": float,
    "tau": float,
    "lambda_beh": float,
    "k": int,
    "emb_dim": int,
    "eeg_chunk": str,
    "fmri_chunk": str,
    "eeg_overlap": int,
    "fmri_overlap": int,
    "task": str,
    "positives": str,
    "weighting": str,
    "vote": str,
    "tau_a": float,
    "search_epochs": int,
    "jobs": int,
}


def _chunk_value(v):
    if v == "auto":
        return v
    try:
        n = int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"chunk length must be an integer or 'auto', got {v!r}")
    if n < 1:
        raise ConfigError("chunk length must be >= 1")
    return n


def resolve_config(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}")
    seed_given = "seed" in base
    for name in _FLAG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            base[name] = v
            seed_given |= name == "seed"
    if getattr(args, "dataset", None):
        base["dataset"] = str(args.dataset)
    if getattr(args, "fast", False):
        base["fast"] = True
    if not seed_given and os.environ.get("TRAITALIGN_SEED"):
        try:
            base["seed"] = int(os.environ["TRAITALIGN_SEED"])
        except ValueError:
            raise ConfigError("TRAITALIGN_SEED must be an integer")
    try:
        cfg = RunConfig.from_json(base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    cfg.eeg_chunk = _chunk_value(cfg.eeg_chunk)
    cfg.fmri_chunk = _chunk_value(cfg.fmri_chunk)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    checks = [
        (cfg.task in TASKS, f"task must be one of {TASKS}"),
        (cfg.positives in ("subject", "pair"), "positives must be 'subject' or 'pair'"),
        (cfg.weighting in ("similarity", "uniform"), "weighting must be 'similarity' or 'uniform'"),
        (cfg.vote in ("majority", "mean"), "vote must be 'majority' or 'mean'"),
        (cfg.tau > 0 and cfg.tau_a > 0, "temperatures must be positive"),
        (cfg.lr > 0 and cfg.weight_decay >= 0, "lr must be positive and weight decay non-negative"),
        (cfg.epochs >= 0 and cfg.search_epochs >= 0, "epoch counts must be non-negative"),
        (cfg.batch_size >= 2 and cfg.k >= 1 and cfg.emb_dim >= 1 and cfg.jobs >= 1, "batch_size, k, emb_dim and jobs must be positive"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)
    for L, V in ((cfg.eeg_chunk, cfg.eeg_overlap), (cfg.fmri_chunk, cfg.fmri_overlap)):
        if L != "auto" and V is not None and not 0 <= V < int(L):
            raise ConfigError(f"overlap {V} must lie in [0, {L})")


def _stamp(cfg: RunConfig) -> dict:
    return {"version": __version__, "config": cfg.to_json(), "seed": cfg.seed}


def _write_json(path, obj) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load(cfg: RunConfig):
    if not cfg.dataset:
        raise ConfigError("--dataset is required")
    if not Path(cfg.dataset).exists():
        raise DataError(f"dataset {cfg.dataset} not found")
    return load_dataset(cfg.dataset)


def _check_dims(cohort, model_meta: dict) -> None:
    r = cohort.records[0]
    want = (model_meta["n_channels"], model_meta["n_rois"], model_meta["n_scales"])
    got = (r.eeg.shape[0], r.fmri.shape[0], r.behavior.shape[0])
    if want != got:
        raise DataError(f"checkpoint expects (channels, ROIs, scales) = {want}, dataset has {got}")


def _tune(cohort, cfg: RunConfig, out: Path, budget: int, tie: bool, cv_folds: int = 0) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    tpe = TpeConfig(budget=budget, seed=cfg.seed, tie=tie, bounds=default_bounds(cohort, tie), cv_folds=cv_folds)
    try:
        tpe.validate()
    except ValueError as exc:
        raise ConfigError(str(exc))
    best, trials = optimize_chunk_length(cohort, cfg, tpe, log_path=out / "trials.jsonl")
    done = [t for t in trials if t.ok]
    result = {
        **_stamp(cfg),
        "best": best,
        "best_score": max(t.score for t in done),
        "n_trials": len(trials),
        "n_failed": len(trials) - len(done),
        "bounds": {k: list(v) for k, v in tpe.bounds.items()},
        "tie": tie,
        "cv_folds": cv_folds,
    }
    _write_json(out / "tune.json", result)
    return result


def _resolve_chunks(cohort, cfg: RunConfig, out: Path, budget: int = 30) -> RunConfig:
    if cfg.eeg_chunk == "auto" or cfg.fmri_chunk == "auto":
        res = _tune(cohort, cfg, out / "tune", budget, tie=False)
        cfg = replace(cfg, eeg_chunk=res["best"]["eeg"], fmri_chunk=res["best"]["fmri"], eeg_overlap=None, fmri_overlap=None)
        log.info("auto chunk lengths: %s", res["best"])
    try:
        check_feasible(cohort, cfg)
    except InfeasibleCandidate as exc:
        raise ConfigError(str(exc))
    return cfg


# ------------------------------------------------------------------ commands


def cmd_generate(args) -> int:
    d = json.loads(Path(args.spec).read_text()) if args.spec else {}
    for name in ("n_subjects", "n_timepoints", "n_scans", "corrupt_fraction", "burst_period", "fmri_effect", "eeg_effect"):
        v = getattr(args, name)
        if v is not None:
            d[name] = v
    if args.seed is not None:
        d["seed"] = args.seed
    elif "seed" not in d and os.environ.get("TRAITALIGN_SEED"):
        d["seed"] = int(os.environ["TRAITALIGN_SEED"])
    try:
        spec = CohortSpec.from_json(d)
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc))
    cohort = generate_cohort(spec)
    cohort.manifest["code_version"] = __version__
    save_dataset(args.out, cohort)
    log.info("wrote %d subjects to %s (seed %d)", len(cohort), args.out, spec.seed)
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = resolve_config(args)
    cohort = _load(cfg)
    res = _tune(cohort, cfg, Path(args.out), args.budget, args.tie, args.cv_folds)
    print(json.dumps({"best": res["best"], "best_score": res["best_score"]}))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    cohort = _load(cfg)
    out = Path(args.out)
    cfg = _resolve_chunks(cohort, cfg, out)
    held = [s for s in (args.holdout or "").split(",") if s]
    unknown = set(held) - set(cohort.ids)
    if unknown:
        raise ConfigError(f"unknown holdout subjects: {sorted(unknown)}")
    train_idx = [i for i, sid in enumerate(cohort.ids) if sid not in held]
    train = cohort.subset(train_idx)
    model = fit_model(train, cfg)
    save_model(out, model, cfg, {"holdout": held})
    with open(out / "train_log.jsonl", "w") as fh:
        for rec in model.history:
            fh.write(json.dumps({**rec, "seed": cfg.seed}) + "\n")
    if held:
        test = cohort.subset([i for i, sid in enumerate(cohort.ids) if sid in held])
        _write_json(out / "holdout.json", {**_stamp(cfg), "predictions": _predict_records(model, cfg, test.records)})
    log.info("trained on %d subjects; checkpoint in %s", len(train), out)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    if args.checkpoint:
        _, ck_cfg, meta = load_model(args.checkpoint)
        overrides = {k: v for k, v in asdict(cfg).items() if k not in ("dataset",) and getattr(args, k, None) is not None}
        cfg = replace(ck_cfg, dataset=cfg.dataset or ck_cfg.dataset, **overrides)
    cohort = _load(cfg)
    if args.checkpoint:
        _check_dims(cohort, meta["model"])
    cfg = _resolve_chunks(cohort, cfg, Path(args.out).parent)
    t0 = time.perf_counter()
    res = loso_evaluate(cohort, cfg, pairs=True)
    log.info("LOSO over %d subjects took %.1fs", len(cohort), time.perf_counter() - t0)
    pairs = res.pop("pairs", {"sim": [], "correct": []})
    report = {**_stamp(cfg), **res, "pairs": pairs}
    if pairs["sim"]:
        report["similarity_histogram"] = report_chunk_similarity(pairs["sim"], pairs["correct"], args.bins)
    _write_json(args.out, report)
    print(json.dumps(report["metrics"], sort_keys=True))
    return EXIT_OK


def _predict_records(model, cfg: RunConfig, records) -> list[dict]:
    out = []
    for rec in records:
        subj = prepare_subject(rec, cfg.eeg_spec(), cfg.fmri_spec())
        E, M = embed_chunks(subj, model.params)
        agg = aggregate_subject(E, M, cfg.tau_a, rec.subject_id, cfg.weighting)
        nb = model.index.neighbors(agg.vector)
        out.append(
            {
                "id": rec.subject_id,
                "score": knn_predict(model.index, agg, "regress"),
                "class": knn_predict(model.index, agg, "classify", cfg.vote),
                "neighbors": [model.index.subject_ids[i] for i in nb] if model.index.subject_ids else nb.tolist(),
            }
        )
    return out


def cmd_predict(args) -> int:
    model, cfg, meta = load_model(args.checkpoint)
    mm = meta["model"]
    records = []
    if args.dataset:
        cohort = load_dataset(args.dataset)
        _check_dims(cohort, mm)
        want = [s for s in (args.subjects or "").split(",") if s]
        missing = set(want) - set(cohort.ids)
        if missing:
            raise DataError(f"subjects not in dataset: {sorted(missing)}")
        records = [r for r in cohort.records if not want or r.subject_id in want]
    else:
        if not args.eeg or not args.fmri or len(args.eeg) != len(args.fmri):
            raise ConfigError("give matching --eeg and --fmri file lists, or --dataset")
        ids = args.ids.split(",") if args.ids else [Path(p).stem.split("_")[0] for p in args.eeg]
        if len(ids) != len(args.eeg):
            raise ConfigError("--ids must name every subject")
        for sid, pe, pf in zip(ids, args.eeg, args.fmri):
            eeg, fm = read_array(pe), read_array(pf)
            if eeg.ndim != 2 or fm.ndim != 2 or eeg.shape[0] != mm["n_channels"] or fm.shape[0] != mm["n_rois"]:
                raise DataError(f"{sid}: arrays {eeg.shape}, {fm.shape} do not match the model")
            records.append(SubjectRecord(sid, eeg, fm, np.zeros(mm["n_scales"]), float("nan")))
    preds = _predict_records(model, cfg, records)
    result = {**_stamp(cfg), "checkpoint": str(args.checkpoint), "predictions": preds}
    if args.out:
        _write_json(args.out, result)
    print(json.dumps(preds, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        ev = json.loads(Path(args.eval).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read eval report {args.eval}: {exc}")
    pairs = ev.get("pairs") or {}
    if not pairs.get("sim"):
        raise DataError("eval report holds no chunk-pair similarities")
    rep = report_chunk_similarity(pairs["sim"], pairs["correct"], args.bins, args.lo, args.hi)
    low, high = lowest_highest_gap(rep, args.min_count)
    lines = [f"{'similarity bin':>22}  {'pairs':>7}  {'accuracy':>8}"]
    e = rep["edges"]
    for i, (n, acc) in enumerate(zip(rep["counts"], rep["accuracy"])):
        a = "-" if acc is None else f"{acc:.3f}"
        lines.append(f"[{e[i]:+.3f}, {e[i + 1]:+.3f})  {n:>7d}  {a:>8}")
    lines.append(f"lowest bin {low:.3f}  highest bin {high:.3f}  (bins with >= {args.min_count} pairs)")
    print("\n".join(lines))
    if args.out:
        _write_json(
            args.out,
            {"version": __version__, "config": ev.get("config"), "histogram": rep, "lowest_accuracy": low, "highest_accuracy": high},
        )
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of RunConfig fields; flags override it")
    p.add_argument("--dataset", help="dataset directory (manifest.json + .tads files)")
    for name, typ in _FLAG_FIELDS.items():
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)
    p.add_argument("--fast", action="store_true", help="use search-phase epochs for every fold")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="traitalign", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic cohort")
    g.add_argument("--out", required=True)
    g.add_argument("--spec", help="JSON file of CohortSpec fields")
    g.add_argument("--seed", type=int)
    g.add_argument("--n-subjects", dest="n_subjects", type=int)
    g.add_argument("--n-timepoints", dest="n_timepoints", type=int)
    g.add_argument("--n-scans", dest="n_scans", type=int)
    g.add_argument("--corrupt-fraction", dest="corrupt_fraction", type=float)
    g.add_argument("--burst-period", dest="burst_period", type=int)
    g.add_argument("--fmri-effect", dest="fmri_effect", type=float)
    g.add_argument("--eeg-effect", dest="eeg_effect", type=float)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("tune", help="TPE search over chunk lengths")
    _run_flags(t)
    t.add_argument("--out", required=True, help="directory for trials.jsonl and tune.json (resumes an existing log)")
    t.add_argument("--budget", type=int, default=30)
    t.add_argument("--tie", action="store_true", help="search one shared duration for both modalities")
    t.add_argument("--cv-folds", dest="cv_folds", type=int, default=0, help="k-fold validation per trial (0 = leave-one-subject-out)")
    t.set_defaults(func=cmd_tune)

    tr = sub.add_parser("train", help="fit encoders and the kNN index")
    _run_flags(tr)
    tr.add_argument("--out", required=True)
    tr.add_argument("--holdout", help="comma-separated subject ids kept out of training and predicted")
    tr.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="leave-one-subject-out evaluation")
    _run_flags(e)
    e.add_argument("--out", required=True)
    e.add_argument("--checkpoint", help="take the run config from a trained model directory")
    e.add_argument("--bins", type=int, default=10)
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="predict subjects with a trained model")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--dataset")
    pr.add_argument("--subjects", help="comma-separated ids within --dataset")
    pr.add_argument("--eeg", nargs="+")
    pr.add_argument("--fmri", nargs="+")
    pr.add_argument("--ids")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    r = sub.add_parser("report", help="similarity histogram and per-bin accuracy of an eval report")
    r.add_argument("--eval", required=True)
    r.add_argument("--bins", type=int, default=10)
    r.add_argument("--lo", type=float)
    r.add_argument("--hi", type=float)
    r.add_argument("--min-count", dest="min_count", type=int, default=20)
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr
    )
    try:
        return args.func(args)
    except (ConfigError, InfeasibleCandidate, SearchError, EmptyAugmentationError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, DatasetFormatError, nd.CheckpointError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except (nd.NumericError, DegenerateBatchError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
