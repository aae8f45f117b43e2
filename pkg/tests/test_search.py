import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traitalign.search import (
    InfeasibleCandidate,
    SearchError,
    TpeConfig,
    Trial,
    _Parzen,
    best_trial,
    check_feasible,
    default_bounds,
    expand,
    optimize_chunk_length,
    random_search,
    read_trials,
    tpe_suggest,
)
from traitalign.synthdata import CohortSpec, generate_cohort
from traitalign.training import RunConfig

BOUNDS = {"eeg": (32, 1000), "fmri": (8, 100)}


def cfg(**kw):
    return TpeConfig(bounds=dict(BOUNDS), **kw)


def in_bounds(cand, bounds=BOUNDS):
    return set(cand) == set(bounds) and all(bounds[k][0] <= v <= bounds[k][1] and isinstance(v, int) for k, v in cand.items())


histories = st.lists(
    st.tuples(st.integers(32, 1000), st.integers(8, 100), st.one_of(st.none(), st.floats(-5, 5))),
    min_size=0,
    max_size=25,
)


def to_trials(h):
    return [Trial(i, {"eeg": e, "fmri": f}, s, "complete" if s is not None else "failed") for i, (e, f, s) in enumerate(h)]


@settings(max_examples=60, deadline=None)
@given(histories, st.integers(0, 2**31))
def test_suggestions_within_bounds_and_deterministic(h, seed):
    trials = to_trials(h)
    c = cfg()
    if len(trials) >= c.n_startup and not any(t.ok for t in trials):
        with pytest.raises(SearchError):
            tpe_suggest(trials, c, np.random.default_rng(seed))
        return
    a = tpe_suggest(trials, c, np.random.default_rng(seed))
    b = tpe_suggest(trials, c, np.random.default_rng(seed))
    assert in_bounds(a) and a == b


def test_startup_is_uniform_log_space():
    c = cfg()
    draws = [tpe_suggest([], c, np.random.default_rng(s))["eeg"] for s in range(400)]
    logs = np.log(draws)
    # log-uniform: the median sits near the log-midpoint
    assert abs(np.median(logs) - 0.5 * (math.log(32) + math.log(1000))) < 0.25
    assert min(draws) >= 32 and max(draws) <= 1000


def test_all_scores_equal_stays_in_bounds():
    trials = [Trial(i, {"eeg": 32 + 40 * i, "fmri": 8 + 3 * i}, 0.5) for i in range(12)]
    for s in range(10):
        assert in_bounds(tpe_suggest(trials, cfg(), np.random.default_rng(s)))


def test_degenerate_bounds():
    c = TpeConfig(bounds={"eeg": (64, 64)})
    trials = [Trial(i, {"eeg": 64}, float(i)) for i in range(10)]
    assert tpe_suggest(trials, c, np.random.default_rng(0)) == {"eeg": 64}


@pytest.mark.parametrize(
    "kw", [dict(gamma=0.0), dict(gamma=1.0), dict(n_startup=1), dict(budget=0), dict(bounds={}), dict(bounds={"eeg": (10, 5)}), dict(cv_folds=1)]
)
def test_config_validation(kw):
    base = dict(bounds=dict(BOUNDS))
    base.update(kw)
    with pytest.raises(ValueError):
        TpeConfig(**base).validate()


def test_parzen_density_normalized_on_bounds():
    p = _Parzen(np.array([0.2, 0.9, 1.0]), 0.0, 2.0, 1e-3, 0.25)
    xs = np.linspace(0, 2, 20001)
    dens = np.exp(p.logpdf(xs))
    mass = float(np.sum(dens[1:] + dens[:-1]) * 0.5 * (xs[1] - xs[0]))
    assert mass == pytest.approx(1.0, abs=1e-3)
    s = p.sample(np.random.default_rng(0), 500)
    assert s.min() >= 0.0 and s.max() <= 2.0


def test_best_trial_argmax_and_ties():
    trials = [Trial(0, {"eeg": 40}, 0.6), Trial(1, {"eeg": 80}, 0.8), Trial(2, {"eeg": 90}, 0.8), Trial(3, {"eeg": 10}, None, "failed")]
    assert best_trial(trials).trial == 1
    with pytest.raises(SearchError):
        best_trial([Trial(0, {"eeg": 40}, None, "failed")])


def quad(c):
    return -((c["eeg"] - 40) ** 2)


def test_budget_one_returns_that_trial():
    best, trials = optimize_chunk_length(None, RunConfig(), TpeConfig(budget=1, bounds={"eeg": (8, 256)}), objective=quad)
    assert len(trials) == 1 and best == trials[0].candidate


def test_log_is_resumable(tmp_path):
    log = tmp_path / "trials.jsonl"
    tpe = TpeConfig(budget=12, bounds={"eeg": (8, 256)}, seed=3)
    full_best, full = optimize_chunk_length(None, RunConfig(), tpe, objective=quad)
    optimize_chunk_length(None, RunConfig(), TpeConfig(budget=5, bounds={"eeg": (8, 256)}, seed=3), log_path=log, objective=quad)
    assert len(read_trials(log)) == 5
    best, resumed = optimize_chunk_length(None, RunConfig(), tpe, log_path=log, objective=quad)
    assert [t.candidate for t in resumed] == [t.candidate for t in full] and best == full_best
    lines = [json.loads(line) for line in log.read_text().splitlines()]
    assert [d["trial"] for d in lines] == list(range(12))
    assert set(lines[0]) == {"trial", "candidate", "score", "status", "seed"}


def test_failures_are_logged_and_excluded():
    def obj(c):
        if c["eeg"] > 100:
            raise InfeasibleCandidate("too long")
        return float("nan") if c["eeg"] < 12 else quad(c)

    best, trials = optimize_chunk_length(None, RunConfig(), TpeConfig(budget=15, bounds={"eeg": (8, 256)}), objective=obj)
    failed = [t for t in trials if t.status == "failed"]
    assert failed and all(t.score is None for t in failed)
    assert 12 <= best["eeg"] <= 100


def test_all_failed_raises():
    def obj(c):
        raise InfeasibleCandidate("never")

    with pytest.raises(SearchError):
        optimize_chunk_length(None, RunConfig(), TpeConfig(budget=10, bounds={"eeg": (8, 256)}), objective=obj)


def test_tpe_beats_random_on_quadratic_sample():
    wins = 0
    for seed in range(10):
        tpe = TpeConfig(budget=30, bounds={"eeg": (8, 256)}, seed=seed)
        best, _ = optimize_chunk_length(None, RunConfig(), tpe, objective=quad)
        rnd = max(random_search(quad, tpe), key=lambda t: t.score)
        wins += abs(best["eeg"] - 40) <= abs(rnd.candidate["eeg"] - 40)
    assert wins >= 8


# ---------------------------------------------------------- cohort plumbing


@pytest.fixture(scope="module")
def tiny_cohort():
    return generate_cohort(CohortSpec(n_subjects=4, n_timepoints=400, n_scans=60))


def test_default_bounds_and_tied_expansion(tiny_cohort):
    assert default_bounds(tiny_cohort) == {"eeg": (32, 200), "fmri": (8, 30)}
    assert default_bounds(tiny_cohort, tie=True) == {"eeg": (32, 200)}
    assert expand({"eeg": 100}, tiny_cohort) == {"eeg": 100, "fmri": 15}
    assert expand({"eeg": 100, "fmri": 9}, tiny_cohort) == {"eeg": 100, "fmri": 9}


def test_feasibility_checks(tiny_cohort):
    check_feasible(tiny_cohort, RunConfig(eeg_chunk=100, fmri_chunk=20))
    for e, f in [(401, 20), (100, 61), (20, 20), (100, 2)]:
        with pytest.raises(InfeasibleCandidate):
            check_feasible(tiny_cohort, RunConfig(eeg_chunk=e, fmri_chunk=f))
