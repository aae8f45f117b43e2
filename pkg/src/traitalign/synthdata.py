"""Seeded synthetic cohorts with a known latent trait, and the on-disk dataset format.

Each subject has a trait ``y ~ U[0, 1]`` that modulates
  * theta/alpha oscillation amplitude at two designated EEG channels,
  * the correlation between two designated ROI blocks of the fMRI series,
  * a noisy linear map onto the behavior scales.
Everything else (pink-noise background, nuisance amplitudes, frequency jitter)
is subject-specific noise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SCALE_NAMES = ("SRQS", "LSNS", "IUS", "GSES", "MLQ")
# intolerance of uncertainty runs against resilience
SCALE_SIGNS = (1.0, 1.0, -1.0, 1.0, 1.0)

DATA_MAGIC = b"TADS"
DATA_VERSION = 1
FORMAT_NAME = "traitalign-dataset"


class DatasetFormatError(ValueError):
    pass


@dataclass
class CohortSpec:
    n_subjects: int = 40
    n_channels: int = 6
    n_timepoints: int = 2000
    sample_rate: float = 100.0
    n_rois: int = 16
    n_scans: int = 200
    n_scales: int = 5
    eeg_channels: tuple[int, ...] = (3, 5)
    theta_hz: float = 6.0
    alpha_hz: float = 10.0
    eeg_base_amp: float = 0.3
    eeg_effect: float = 1.2
    eeg_noise: float = 1.0
    roi_block: int = 4
    within_corr: float = 0.5
    fmri_effect: float = 0.45
    behavior_noise: float = 0.25
    corrupt_fraction: float = 0.0
    corrupt_segment_eeg: int = 100
    corrupt_segment_fmri: int = 40
    corrupt_amplitude: float = 4.0
    # per-subject artifact load ~ U((1 - spread) f, (1 + spread) f) around f = corrupt_fraction
    corrupt_spread: float = 1.0
    # share of artifact variance following the subject's own spatial profile (0 = isotropic)
    corrupt_structure: float = 0.9
    # weight of a non-trait subject state seen by both modalities: one value per ROI block sets
    # that block's extra ROI variance and the amplitude of one non-trait EEG channel.
    # 0 keeps the two modalities' subject nuisance independent
    shared_state: float = 0.0
    # >0: trait carried only by brief EEG bursts every `burst_period` samples
    burst_period: int = 0
    burst_width: int = 12
    seed: int = 0

    def validate(self) -> None:
        counts = dict(
            n_subjects=self.n_subjects, n_channels=self.n_channels, n_timepoints=self.n_timepoints,
            n_rois=self.n_rois, n_scans=self.n_scans, n_scales=self.n_scales,
        )
        for k, v in counts.items():
            if v < 1:
                raise ValueError(f"{k} must be positive, got {v}")
        if self.n_subjects < 2:
            raise ValueError("a cohort needs at least 2 subjects")
        if self.n_scans < 2 or self.n_timepoints < 2:
            raise ValueError("recordings need at least 2 samples")
        if any(not 0 <= c < self.n_channels for c in self.eeg_channels):
            raise ValueError("designated EEG channel out of range")
        if self.n_rois < 2 * self.roi_block:
            raise ValueError("need at least two ROI blocks for the trait-coupled correlation")
        if not 0.0 <= self.corrupt_fraction < 1.0:
            raise ValueError("corrupt_fraction must lie in [0, 1)")
        if not 0.0 <= self.corrupt_structure <= 1.0:
            raise ValueError("corrupt_structure must lie in [0, 1]")
        if not 0.0 <= self.corrupt_spread <= 1.0:
            raise ValueError("corrupt_spread must lie in [0, 1]")
        if not 0.0 <= self.shared_state <= 1.0:
            raise ValueError("shared_state must lie in [0, 1]")
        vals = [self.eeg_effect, self.fmri_effect, self.eeg_base_amp, self.eeg_noise, self.behavior_noise]
        if not np.all(np.isfinite(vals)):
            raise ValueError("effect sizes and noise levels must be finite")
        if abs(self.within_corr) >= 1 or abs(self.fmri_effect) > self.within_corr:
            raise ValueError("fMRI correlations must keep the block covariance positive definite")

    def to_json(self) -> dict:
        d = asdict(self)
        d["eeg_channels"] = list(self.eeg_channels)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CohortSpec":
        d = dict(d)
        if "eeg_channels" in d:
            d["eeg_channels"] = tuple(d["eeg_channels"])
        return cls(**d)


@dataclass
class SubjectRecord:
    subject_id: str
    eeg: np.ndarray  # C x T
    fmri: np.ndarray  # R x L_scans
    behavior: np.ndarray  # Q
    y: float
    label: int = 0
    # ground-truth artifact segments [a, b) in samples / scans; not persisted
    eeg_corrupt: list = field(default_factory=list, repr=False)
    fmri_corrupt: list = field(default_factory=list, repr=False)


@dataclass
class Cohort:
    records: list[SubjectRecord]
    manifest: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def subset(self, idx) -> "Cohort":
        return Cohort([self.records[i] for i in idx], self.manifest)

    @property
    def ids(self) -> list[str]:
        return [r.subject_id for r in self.records]

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.records])


def pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    """Unit-variance noise with a 1/f power spectrum."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[0] = 0.0
    x = np.fft.irfft(spec, n)
    return x / x.std()


def _corrupt_segments(rng: np.random.Generator, total: int, seg: int, fraction: float) -> list[tuple[int, int]]:
    n_seg = max(total // seg, 1)
    k = int(round(fraction * n_seg))
    chosen = np.sort(rng.choice(n_seg, size=k, replace=False)) if k else []
    return [(int(i) * seg, min(int(i) * seg + seg, total)) for i in chosen]


def _unit_rms(v: np.ndarray) -> np.ndarray:
    return v / np.sqrt(np.mean(v * v))


def _artifact(rng: np.random.Generator, profile: np.ndarray, n: int, spec: CohortSpec) -> np.ndarray:
    """High-amplitude noise: a shared time course spread by the subject's spatial profile,
    plus an isotropic part."""
    rho = spec.corrupt_structure
    shared = profile[:, None] * rng.standard_normal(n)[None, :]
    iso = rng.standard_normal((len(profile), n))
    return spec.corrupt_amplitude * (np.sqrt(rho) * shared + np.sqrt(1.0 - rho) * iso)


def _fmri_covariance(spec: CohortSpec, y: float, jitter: np.ndarray) -> np.ndarray:
    R, b = spec.n_rois, spec.roi_block
    block = np.arange(R) // b
    cov = np.where(block[:, None] == block[None, :], spec.within_corr, 0.0)
    # blocks 0 and 1 couple in proportion to the trait
    cross = (block[:, None] == 0) & (block[None, :] == 1)
    cov = np.where(cross | cross.T, spec.fmri_effect * y, cov)
    np.fill_diagonal(cov, 1.0 + jitter)  # nuisance: per-ROI extra variance
    return cov


def generate_subject(spec: CohortSpec, index: int, behavior_loadings: np.ndarray) -> SubjectRecord:
    rng = np.random.default_rng([spec.seed, index])
    # artifacts draw from their own stream: the clean signal does not depend on them
    art = np.random.default_rng([spec.seed, index, 1])
    y = float(rng.uniform())
    # per-subject artifact load varies around the cohort mean
    f, d = spec.corrupt_fraction, spec.corrupt_spread
    frac = min(art.uniform((1.0 - d) * f, (1.0 + d) * f), 0.9)
    n_blocks = -(-spec.n_rois // spec.roi_block)
    state = np.random.default_rng([spec.seed, index, 2]).uniform(size=n_blocks)
    w = spec.shared_state
    C, T = spec.n_channels, spec.n_timepoints
    t = np.arange(T) / spec.sample_rate

    eeg = np.empty((C, T))
    for c in range(C):
        sig = spec.eeg_noise * pink_noise(rng, T)
        if spec.burst_period > 0:
            amp = 0.0
        elif c in spec.eeg_channels:
            amp = spec.eeg_base_amp + spec.eeg_effect * y
        else:
            u = rng.uniform()
            amp = spec.eeg_base_amp + spec.eeg_effect * (w * state[c % n_blocks] + (1.0 - w) * u)
        for f0 in (spec.theta_hz, spec.alpha_hz):
            hz = f0 + rng.uniform(-0.5, 0.5)
            sig += amp * np.sin(2 * np.pi * hz * t + rng.uniform(0, 2 * np.pi))
        eeg[c] = sig
    if spec.burst_period > 0:
        # one burst per period with a random offset; its amplitude carries the trait
        offset = int(rng.integers(spec.burst_period))
        bw = spec.burst_width
        shape = np.hanning(bw) * np.sin(2 * np.pi * np.arange(bw) / bw * 2)
        for start in range(offset, T - bw + 1, spec.burst_period):
            for c in spec.eeg_channels:
                eeg[c, start:start + bw] += spec.eeg_effect * (0.2 + 2.0 * y) * shape * 3.0
    eeg_bad = _corrupt_segments(art, T, spec.corrupt_segment_eeg, frac)
    profile = _unit_rms(art.standard_normal(C))
    for a, b in eeg_bad:
        eeg[:, a:b] += _artifact(art, profile, b - a, spec)
    eeg = (eeg - eeg.mean(axis=1, keepdims=True)) / eeg.std(axis=1, keepdims=True)

    jitter = (1.0 - w) * rng.uniform(0.0, 0.3, spec.n_rois) + w * state[np.arange(spec.n_rois) // spec.roi_block]
    cov = _fmri_covariance(spec, y, jitter)
    chol = np.linalg.cholesky(cov)
    fmri = chol @ rng.standard_normal((spec.n_rois, spec.n_scans))
    fmri_bad = _corrupt_segments(art, spec.n_scans, spec.corrupt_segment_fmri, frac)
    profile = _unit_rms(art.standard_normal(spec.n_rois))
    for a, b in fmri_bad:
        fmri[:, a:b] += _artifact(art, profile, b - a, spec)

    behavior = behavior_loadings * y + spec.behavior_noise * rng.standard_normal(spec.n_scales)
    return SubjectRecord(f"sub-{index:03d}", eeg, fmri, behavior, y, eeg_corrupt=eeg_bad, fmri_corrupt=fmri_bad)


def median_split(y: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """1 for scores strictly above the median of `reference` (default: `y` itself)."""
    ref = y if reference is None else reference
    return (np.asarray(y) > np.median(ref)).astype(int)


def generate_cohort(spec: CohortSpec) -> Cohort:
    spec.validate()
    signs = np.array([SCALE_SIGNS[i % len(SCALE_SIGNS)] for i in range(spec.n_scales)])
    loadings = signs * np.linspace(1.0, 0.6, spec.n_scales)
    records = [generate_subject(spec, i, loadings) for i in range(spec.n_subjects)]
    labels = median_split(np.array([r.y for r in records]))
    for r, lab in zip(records, labels):
        r.label = int(lab)
    names = [SCALE_NAMES[i] if i < len(SCALE_NAMES) else f"scale{i}" for i in range(spec.n_scales)]
    manifest = {
        "format": FORMAT_NAME,
        "version": DATA_VERSION,
        "spec": spec.to_json(),
        "seed": spec.seed,
        "subjects": [r.subject_id for r in records],
        "y": [r.y for r in records],
        "labels": [r.label for r in records],
        "scale_names": names,
    }
    return Cohort(records, manifest)


# ---------------------------------------------------------------- on-disk format


def write_array(path, arr: np.ndarray) -> None:
    arr = np.array(arr, dtype="<f8", order="C")
    header = DATA_MAGIC + struct.pack("<II", DATA_VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    Path(path).write_bytes(header + arr.tobytes())


def read_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != DATA_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise DatasetFormatError(f"{path}: truncated header")
    version, rank = struct.unpack_from("<II", raw, 4)
    if version != DATA_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if len(raw) < 12 + 8 * rank:
        raise DatasetFormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}Q", raw, 12)
    off = 12 + 8 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(raw) != off + 8 * count:
        raise DatasetFormatError(f"{path}: payload size {len(raw) - off} != {8 * count}")
    return np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(dims).astype(np.float64)


MODALITIES = ("eeg", "fmri", "beh")


def save_dataset(path, cohort: Cohort) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = dict(cohort.manifest)
    manifest.update(
        format=FORMAT_NAME,
        version=DATA_VERSION,
        subjects=cohort.ids,
        y=[r.y for r in cohort.records],
        labels=[r.label for r in cohort.records],
    )
    for r in cohort.records:
        write_array(root / f"{r.subject_id}_eeg.tads", r.eeg)
        write_array(root / f"{r.subject_id}_fmri.tads", r.fmri)
        write_array(root / f"{r.subject_id}_beh.tads", r.behavior)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_dataset(path) -> Cohort:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"no manifest.json in {root}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"{mpath}: not a {FORMAT_NAME} manifest")
    if manifest.get("version") != DATA_VERSION:
        raise DatasetFormatError(f"{mpath}: unsupported version {manifest.get('version')}")
    ids = manifest["subjects"]
    if not (len(ids) == len(manifest["y"]) == len(manifest["labels"])):
        raise DatasetFormatError("manifest subject, score and label lists differ in length")
    present = {p.name for p in root.glob("*.tads")}
    expected = {f"{s}_{m}.tads" for s in ids for m in MODALITIES}
    if present != expected:
        missing = sorted(expected - present)
        extra = sorted(present - expected)
        raise DatasetFormatError(f"manifest lists {len(ids)} subjects but files disagree (missing={missing[:4]}, extra={extra[:4]})")
    records = []
    for sid, y, lab in zip(ids, manifest["y"], manifest["labels"]):
        eeg = read_array(root / f"{sid}_eeg.tads")
        fmri = read_array(root / f"{sid}_fmri.tads")
        beh = read_array(root / f"{sid}_beh.tads")
        if eeg.ndim != 2 or fmri.ndim != 2 or beh.ndim != 1:
            raise DatasetFormatError(f"{sid}: unexpected array ranks")
        if not all(np.isfinite(a).all() for a in (eeg, fmri, beh)):
            raise DatasetFormatError(f"{sid}: non-finite values in recordings")
        records.append(SubjectRecord(sid, eeg, fmri, beh, float(y), int(lab)))
    return Cohort(records, manifest)
