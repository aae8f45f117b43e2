import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traitalign.synthdata import (
    CohortSpec,
    DatasetFormatError,
    generate_cohort,
    load_dataset,
    median_split,
    read_array,
    save_dataset,
    write_array,
)


def band_power(x, fs, lo, hi):
    """Periodogram power in [lo, hi) Hz."""
    p = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(len(x), 1 / fs)
    return float(p[(f >= lo) & (f < hi)].sum())


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(CohortSpec())


def test_alpha_power_tracks_trait(cohort):
    for ch in (3, 5):
        pw = [band_power(r.eeg[ch], 100.0, 8, 12) for r in cohort]
        assert np.corrcoef(pw, cohort.y)[0, 1] > 0.7


def test_zero_effect_is_uncorrelated():
    # a single 40-subject null correlation has sd ~0.16, so pool ten cohorts
    pw, y = {3: [], 5: []}, []
    for seed in range(10):
        c = generate_cohort(CohortSpec(eeg_effect=0.0, fmri_effect=0.0, seed=seed))
        y.extend(c.y)
        for ch in pw:
            pw[ch].extend(band_power(r.eeg[ch], 100.0, 8, 12) for r in c)
    for ch in pw:
        assert abs(np.corrcoef(pw[ch], y)[0, 1]) < 0.15


def test_fmri_coupling_tracks_trait(cohort):
    coupling = [np.corrcoef(r.fmri)[:4, 4:8].mean() for r in cohort]
    assert np.corrcoef(coupling, cohort.y)[0, 1] > 0.7


def test_zscore_and_balance(cohort):
    for r in cohort:
        np.testing.assert_allclose(r.eeg.mean(axis=1), 0.0, atol=1e-9)
        np.testing.assert_allclose(r.eeg.std(axis=1), 1.0, atol=1e-6)
    labels = np.array([r.label for r in cohort])
    assert abs(labels.sum() - (len(labels) - labels.sum())) <= 1


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 9), st.integers(0, 10_000), st.floats(0.0, 0.5))
def test_small_cohort_invariants(n, seed, frac):
    c = generate_cohort(CohortSpec(n_subjects=n, n_timepoints=300, n_scans=60, corrupt_fraction=frac, seed=seed))
    labels = np.array([r.label for r in c])
    assert abs(2 * labels.sum() - n) <= 1
    for r in c:
        assert 0.0 <= r.y < 1.0
        np.testing.assert_allclose(r.eeg.std(axis=1), 1.0, atol=1e-6)
        assert np.all(np.isfinite(r.fmri))


def test_same_seed_is_bitwise_identical():
    spec = CohortSpec(n_subjects=5, n_timepoints=400, n_scans=50, corrupt_fraction=0.3, seed=9)
    a, b = generate_cohort(spec), generate_cohort(spec)
    for ra, rb in zip(a, b):
        for m in ("eeg", "fmri", "behavior"):
            assert getattr(ra, m).tobytes() == getattr(rb, m).tobytes()
    other = generate_cohort(CohortSpec(n_subjects=5, n_timepoints=400, n_scans=50, corrupt_fraction=0.3, seed=10))
    assert a.records[0].eeg.tobytes() != other.records[0].eeg.tobytes()


def test_artifacts_leave_clean_signal_alone():
    base = CohortSpec(n_subjects=3, n_timepoints=600, n_scans=80, seed=4)
    clean = generate_cohort(base)
    dirty = generate_cohort(CohortSpec(**{**base.to_json(), "eeg_channels": (3, 5), "corrupt_fraction": 0.3}))
    for rc, rd in zip(clean, dirty):
        assert rc.y == rd.y
        good = np.ones(rd.fmri.shape[1], bool)
        for a, b in rd.fmri_corrupt:
            good[a:b] = False
        np.testing.assert_array_equal(rc.fmri[:, good], rd.fmri[:, good])


def test_corrupted_segments_are_loud():
    c = generate_cohort(CohortSpec(n_subjects=6, corrupt_fraction=0.3, seed=2))
    for r in c:
        bad = np.zeros(r.fmri.shape[1], bool)
        for a, b in r.fmri_corrupt:
            bad[a:b] = True
        if bad.any() and (~bad).any():
            assert r.fmri[:, bad].var() > 3 * r.fmri[:, ~bad].var()


def test_median_split():
    y = np.array([0.1, 0.9, 0.5, 0.3])
    np.testing.assert_array_equal(median_split(y), [0, 1, 1, 0])
    np.testing.assert_array_equal(median_split(np.array([0.2, 0.8]), reference=y), [0, 1])


@pytest.mark.parametrize(
    "kw",
    [
        dict(n_subjects=1),
        dict(eeg_channels=(7,)),
        dict(n_rois=6),
        dict(corrupt_fraction=1.0),
        dict(fmri_effect=0.9),
        dict(shared_state=1.5),
        dict(eeg_effect=float("nan")),
    ],
)
def test_infeasible_specs(kw):
    with pytest.raises(ValueError):
        generate_cohort(CohortSpec(**kw))


# ------------------------------------------------------------------ on-disk format


def test_dataset_round_trip_bitwise(tmp_path):
    c = generate_cohort(CohortSpec(n_subjects=4, n_timepoints=300, n_scans=50, seed=3))
    save_dataset(tmp_path / "d", c)
    back = load_dataset(tmp_path / "d")
    assert back.ids == c.ids and list(back.y) == list(c.y)
    for ra, rb in zip(c, back):
        for m in ("eeg", "fmri", "behavior"):
            assert getattr(ra, m).tobytes() == getattr(rb, m).tobytes()
        assert ra.label == rb.label
    assert CohortSpec.from_json(back.manifest["spec"]) == CohortSpec(n_subjects=4, n_timepoints=300, n_scans=50, seed=3)


@settings(max_examples=30, deadline=None)
@given(shape=st.lists(st.integers(0, 4), min_size=0, max_size=3), seed=st.integers(0, 1000))
def test_array_round_trip_any_rank(tmp_path_factory, shape, seed):
    arr = np.random.default_rng(seed).standard_normal(shape)
    p = tmp_path_factory.mktemp("a") / "x.tads"
    write_array(p, arr)
    back = read_array(p)
    assert back.shape == arr.shape and back.tobytes() == arr.tobytes()


def test_format_errors(tmp_path):
    p = tmp_path / "x.tads"
    write_array(p, np.arange(6.0).reshape(2, 3))
    raw = p.read_bytes()
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DatasetFormatError, match="magic"):
        read_array(p)
    p.write_bytes(raw[:-8])
    with pytest.raises(DatasetFormatError, match="payload"):
        read_array(p)
    p.write_bytes(raw[:14])
    with pytest.raises(DatasetFormatError, match="truncated"):
        read_array(p)
    p.write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(DatasetFormatError, match="version"):
        read_array(p)


def test_manifest_consistency_errors(tmp_path):
    c = generate_cohort(CohortSpec(n_subjects=3, n_timepoints=300, n_scans=50))
    root = tmp_path / "d"
    save_dataset(root, c)
    (root / "sub-002_fmri.tads").unlink()
    with pytest.raises(DatasetFormatError, match="disagree"):
        load_dataset(root)
    save_dataset(root, c)
    m = json.loads((root / "manifest.json").read_text())
    m["version"] = 99
    (root / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(DatasetFormatError, match="version"):
        load_dataset(root)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "missing")
