"""Chunk-length search: a small Tree-structured Parzen Estimator over
leave-one-subject-out validation scores."""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from statistics import NormalDist
from typing import Callable

import numpy as np

from .synthdata import Cohort
from .training import RunConfig, kfold_evaluate, loso_evaluate

log = logging.getLogger(__name__)

_N01 = NormalDist()
_cdf = np.vectorize(_N01.cdf, otypes=[float])


class SearchError(RuntimeError):
    pass


class InfeasibleCandidate(ValueError):
    """Chunk length does not fit every recording (or the EEG receptive field)."""


@dataclass
class Trial:
    trial: int
    candidate: dict[str, int]
    score: float | None = None
    status: str = "complete"  # complete | failed
    seed: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "complete" and self.score is not None and math.isfinite(self.score)


@dataclass
class TpeConfig:
    gamma: float = 0.25
    n_startup: int = 8
    n_candidates: int = 24
    budget: int = 30
    bounds: dict[str, tuple[int, int]] = field(default_factory=dict)
    eps: float = 1e-3  # bandwidth floor, log units
    bw_scale: float = 0.25  # multiplies the range / sqrt(n) kernel width
    seed: int = 0
    tie: bool = False  # one shared duration for both modalities
    cv_folds: int = 0  # 0 = leave-one-subject-out validation, else interleaved k-fold

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.n_startup < 2:
            raise ValueError("n_startup must be >= 2")
        if self.n_candidates < 1 or self.budget < 1:
            raise ValueError("n_candidates and budget must be positive")
        if not self.bounds:
            raise ValueError("search bounds are empty")
        if self.cv_folds == 1 or self.cv_folds < 0:
            raise ValueError("cv_folds must be 0 (LOSO) or >= 2")
        for name, (lo, hi) in self.bounds.items():
            if not 1 <= lo <= hi:
                raise ValueError(f"bad bounds for {name!r}: [{lo}, {hi}]")


def _log_bounds(cfg: TpeConfig) -> dict[str, tuple[float, float]]:
    return {k: (math.log(lo), math.log(hi)) for k, (lo, hi) in cfg.bounds.items()}


def _to_int(x: float, lo: int, hi: int) -> int:
    return int(min(max(round(math.exp(x)), lo), hi))


class _Parzen:
    """Equal-weight mixture of truncated Gaussians on [a, b] (one dimension, log space)."""

    def __init__(self, centers: np.ndarray, a: float, b: float, eps: float, scale: float = 1.0):
        self.a, self.b = a, b
        self.c = np.asarray(centers, dtype=np.float64)
        if b <= a:
            self.h = eps
            self.mass = np.ones_like(self.c)
            return
        self.h = max(scale * (b - a) / math.sqrt(len(self.c)), eps)
        self.mass = np.maximum(_cdf((b - self.c) / self.h) - _cdf((a - self.c) / self.h), 1e-300)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.b <= self.a:
            return np.full(n, self.a)
        k = rng.integers(len(self.c), size=n)
        c = self.c[k]
        lo = _cdf((self.a - c) / self.h)
        hi = _cdf((self.b - c) / self.h)
        u = lo + rng.uniform(size=n) * (hi - lo)
        u = np.clip(u, 1e-12, 1 - 1e-12)
        z = np.array([_N01.inv_cdf(float(p)) for p in u])
        return np.clip(c + self.h * z, self.a, self.b)

    def logpdf(self, x: np.ndarray) -> np.ndarray:
        if self.b <= self.a:
            return np.zeros(len(x))
        z = (np.asarray(x)[:, None] - self.c[None, :]) / self.h
        dens = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.h) / self.mass[None, :]
        return np.log(np.maximum(dens.mean(axis=1), 1e-300))


def _uniform(cfg: TpeConfig, rng: np.random.Generator) -> dict[str, int]:
    out = {}
    for k, (a, b) in _log_bounds(cfg).items():
        lo, hi = cfg.bounds[k]
        out[k] = _to_int(rng.uniform(a, b), lo, hi)
    return out


def tpe_suggest(history: list[Trial], cfg: TpeConfig, rng: np.random.Generator) -> dict[str, int]:
    """Next candidate: uniform during startup, else argmax of l(x)/g(x) over draws from l."""
    cfg.validate()
    if len(history) < cfg.n_startup:
        return _uniform(cfg, rng)
    done = [t for t in history if t.ok]
    if not done:
        raise SearchError("all trials failed; nothing to model")
    ranked = sorted(done, key=lambda t: (-t.score, t.trial))
    n_good = max(1, math.ceil(cfg.gamma * len(ranked)))
    good, bad = ranked[:n_good], ranked[n_good:]
    draws = {}
    score = np.zeros(cfg.n_candidates)
    for k, (a, b) in _log_bounds(cfg).items():
        xs_g = np.log([t.candidate[k] for t in good])
        lx = _Parzen(xs_g, a, b, cfg.eps, cfg.bw_scale)
        x = lx.sample(rng, cfg.n_candidates)
        if bad:
            lg = _Parzen(np.log([t.candidate[k] for t in bad]), a, b, cfg.eps, cfg.bw_scale).logpdf(x)
        else:
            lg = np.full(len(x), -math.log(b - a) if b > a else 0.0)
        score += lx.logpdf(x) - lg
        draws[k] = x
    best = int(np.argmax(score))
    return {k: _to_int(draws[k][best], *cfg.bounds[k]) for k in cfg.bounds}


# ------------------------------------------------------------------ objective


def default_bounds(cohort: Cohort, tie: bool = False) -> dict[str, tuple[int, int]]:
    t_eeg = min(r.eeg.shape[1] for r in cohort.records)
    t_fmri = min(r.fmri.shape[1] for r in cohort.records)
    b = {"eeg": (32, max(32, t_eeg // 2))}
    if not tie:
        b["fmri"] = (8, max(8, t_fmri // 2))
    return b


def expand(candidate: dict[str, int], cohort: Cohort) -> dict[str, int]:
    """Tied search keeps one duration: fMRI gets the same fraction of its session."""
    if "fmri" in candidate:
        return dict(candidate)
    r = cohort.records[0]
    frac = candidate["eeg"] / r.eeg.shape[1]
    return {"eeg": candidate["eeg"], "fmri": max(3, int(round(frac * r.fmri.shape[1])))}


def candidate_config(candidate: dict[str, int], cfg: RunConfig) -> RunConfig:
    return replace(cfg, eeg_chunk=int(candidate["eeg"]), fmri_chunk=int(candidate["fmri"]), eeg_overlap=None, fmri_overlap=None)


def check_feasible(cohort: Cohort, cfg: RunConfig) -> None:
    L_e, L_f = int(cfg.eeg_chunk), int(cfg.fmri_chunk)
    t_eeg = min(r.eeg.shape[1] for r in cohort.records)
    t_fmri = min(r.fmri.shape[1] for r in cohort.records)
    rf = 1 + (cfg.tw_depth + 1) * (cfg.kernel - 1)
    if L_e > t_eeg or L_f > t_fmri:
        raise InfeasibleCandidate(f"chunk ({L_e}, {L_f}) longer than shortest recording ({t_eeg}, {t_fmri})")
    if L_e < rf:
        raise InfeasibleCandidate(f"EEG chunk {L_e} shorter than receptive field {rf}")
    if L_f < 3:
        raise InfeasibleCandidate("fMRI chunk needs >= 3 scans for a correlation")


def loso_validate(cohort: Cohort, candidate: dict[str, int], cfg: RunConfig, epochs: int | None = None, folds: int = 0) -> float:
    """Mean held-out score of a candidate: accuracy, or negative MAE for regression.

    `folds` > 0 swaps leave-one-subject-out for interleaved k-fold (same model per fold).
    """
    if len(cohort) < 3:
        raise ValueError("validation needs at least 3 subjects")
    run = candidate_config(expand(candidate, cohort), cfg)
    check_feasible(cohort, run)
    task = "regress" if cfg.task == "regress" else "classify"
    run = replace(run, task=task)
    epochs = cfg.search_epochs if epochs is None else epochs
    if folds:
        res = kfold_evaluate(cohort, run, folds, (run.weighting,), epochs)[run.weighting]
    else:
        res = loso_evaluate(cohort, run, epochs=epochs)
    return res["metrics"]["accuracy"] if task == "classify" else -res["metrics"]["mae"]


# ------------------------------------------------------------------ driver


def read_trials(path) -> list[Trial]:
    trials = []
    p = Path(path)
    if not p.exists():
        return trials
    for line in p.read_text().splitlines():
        if line.strip():
            d = json.loads(line)
            trials.append(Trial(d["trial"], {k: int(v) for k, v in d["candidate"].items()}, d["score"], d["status"], d["seed"]))
    return trials


def best_trial(trials: list[Trial]) -> Trial:
    """Highest score; ties go to the earliest trial."""
    done = [t for t in trials if t.ok]
    if not done:
        raise SearchError("no completed trials")
    return min(done, key=lambda t: (-t.score, t.trial))


def optimize_chunk_length(
    cohort: Cohort | None,
    cfg: RunConfig,
    tpe: TpeConfig,
    log_path=None,
    objective: Callable[[dict[str, int]], float] | None = None,
) -> tuple[dict[str, int], list[Trial]]:
    """Run the TPE loop to its budget and return (best candidate, all trials).

    With `log_path`, every trial is appended as a JSON line and an existing log is
    resumed. `objective` overrides LOSO validation (used for synthetic benchmarks).
    """
    if not tpe.bounds:
        if cohort is None:
            raise ValueError("bounds required when no cohort is given")
        tpe = replace(tpe, bounds=default_bounds(cohort, tpe.tie))
    tpe.validate()
    if objective is None:
        objective = lambda cand: loso_validate(cohort, cand, cfg, folds=tpe.cv_folds)  # noqa: E731
    trials = read_trials(log_path) if log_path else []
    fh = open(log_path, "a") if log_path else None
    try:
        while len(trials) < tpe.budget:
            n = len(trials)
            rng = np.random.default_rng([tpe.seed, n])
            cand = tpe_suggest(trials, tpe, rng)
            try:
                score, status = float(objective(cand)), "complete"
                if not math.isfinite(score):
                    score, status = None, "failed"
            except InfeasibleCandidate as exc:
                log.info("trial %d infeasible: %s", n, exc)
                score, status = None, "failed"
            t = Trial(n, cand, score, status, tpe.seed)
            trials.append(t)
            log.info("trial %s", json.dumps(asdict(t)))
            if fh:
                fh.write(json.dumps(asdict(t)) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
    finally:
        if fh:
            fh.close()
    best = best_trial(trials)
    return (expand(best.candidate, cohort) if cohort is not None else dict(best.candidate)), trials


def random_search(objective: Callable[[dict[str, int]], float], tpe: TpeConfig) -> list[Trial]:
    """Baseline: `budget` independent log-uniform draws in the same space."""
    rng = np.random.default_rng([tpe.seed, 99])
    out = []
    for n in range(tpe.budget):
        cand = _uniform(tpe, rng)
        out.append(Trial(n, cand, float(objective(cand)), "complete", tpe.seed))
    return out
