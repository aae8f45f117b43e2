"""Encoder training on chunk triples, subject embedding, and LOSO evaluation."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import ndcore as nd
from .chunking import ChunkSpec, augment
from .encoders import (
    EncoderParams,
    ModelConfig,
    encode_behavior,
    encode_eeg,
    eeg_pooled,
    encode_fmri_features,
    fmri_features,
    fmri_pooled,
)
from .inference import (
    PredictorIndex,
    aggregate_subject,
    chunk_pair_similarities,
    knn_predict,
    metrics,
)
from .objective import total_loss
from .synthdata import Cohort, SubjectRecord

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    dataset: str = ""
    seed: int = 0
    epochs: int = 20
    batch_size: int = 128
    lr: float = 0.001
    weight_decay: float = 0.0
    tau: float = 0.1
    lambda_beh: float = 1.0
    k: int = 5
    emb_dim: int = 32
    eeg_chunk: int | str = 100  # or "auto"
    eeg_overlap: int | None = None  # None -> half the chunk length
    fmri_chunk: int | str = 40
    fmri_overlap: int | None = None
    task: str = "both"  # classify | regress | both
    positives: str = "subject"  # "pair" = CLIP-style one-hot positives
    weighting: str = "similarity"  # "uniform" = plain chunk averaging
    vote: str = "majority"
    tau_a: float = 0.1
    min_batch_subjects: int = 8
    search_epochs: int = 5
    fast: bool = False
    jobs: int = 1
    eeg_width: int = 8
    kernel: int = 7
    tw_depth: int = 3
    gcn_features: int = 16
    spline_basis: int = 8
    spline_degree: int = 3
    kan_init_gain: float = 0.01
    front_init_gain: float = 0.1

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def eeg_spec(self) -> ChunkSpec:
        L = int(self.eeg_chunk)
        return ChunkSpec(L, L // 2 if self.eeg_overlap is None else self.eeg_overlap)

    def fmri_spec(self) -> ChunkSpec:
        L = int(self.fmri_chunk)
        return ChunkSpec(L, L // 2 if self.fmri_overlap is None else self.fmri_overlap)

    def model_config(self, cohort: Cohort) -> ModelConfig:
        r = cohort.records[0]
        return ModelConfig(
            n_channels=r.eeg.shape[0],
            n_rois=r.fmri.shape[0],
            n_scales=r.behavior.shape[0],
            emb_dim=self.emb_dim,
            eeg_width=self.eeg_width,
            kernel=self.kernel,
            tw_depth=self.tw_depth,
            gcn_features=self.gcn_features,
            spline_basis=self.spline_basis,
            spline_degree=self.spline_degree,
            kan_init_gain=self.kan_init_gain,
            front_init_gain=self.front_init_gain,
        )


@dataclass
class PreparedSubject:
    subject_id: str
    eeg: np.ndarray  # K_e x C x L
    fmri: np.ndarray  # K_m x R x R propagated node features
    behavior: np.ndarray  # Q (raw)
    y: float


def prepare_subject(rec: SubjectRecord, eeg_spec: ChunkSpec, fmri_spec: ChunkSpec) -> PreparedSubject:
    eeg = augment(rec.eeg, eeg_spec)
    fmri = np.stack([fmri_features(c) for c in augment(rec.fmri, fmri_spec)])
    return PreparedSubject(rec.subject_id, eeg, fmri, np.asarray(rec.behavior, dtype=np.float64), rec.y)


def prepare_cohort(cohort: Cohort, cfg: RunConfig) -> list[PreparedSubject]:
    es, fs = cfg.eeg_spec(), cfg.fmri_spec()
    return [prepare_subject(r, es, fs) for r in cohort.records]


def epoch_batches(subjects: list[PreparedSubject], rng: np.random.Generator, batch_size: int) -> list[list[tuple[int, int, int]]]:
    """Subject-stratified chunk triples (subject, eeg chunk, fmri chunk) for one epoch.

    Each subject contributes max(K_e, K_m) triples; subjects are interleaved round-robin
    so every batch spans as many distinct subjects as possible.
    """
    queues = []
    for s, subj in enumerate(subjects):
        ke, km = len(subj.eeg), len(subj.fmri)
        n = max(ke, km)
        ei = np.resize(rng.permutation(ke), n)
        fi = np.resize(rng.permutation(km), n)
        queues.append([(s, int(a), int(b)) for a, b in zip(ei, fi)])
    order = rng.permutation(len(subjects))
    stream = []
    depth = max(len(q) for q in queues)
    for d in range(depth):
        for s in order:
            if d < len(queues[s]):
                stream.append(queues[s][d])
        order = rng.permutation(len(subjects))
    return [stream[i:i + batch_size] for i in range(0, len(stream), batch_size)]


def robust_scale(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column median and MAD-based scale, so artifact chunks do not set the spread."""
    med = np.median(x, axis=0)
    mad = 1.4826 * np.median(np.abs(x - med), axis=0)
    return med, np.maximum(mad, 1e-6)


def calibrate(params: EncoderParams, subjects: list[PreparedSubject], rng: np.random.Generator, n: int = 512) -> None:
    """Set pooled-feature standardization from a sample of training chunks (robust statistics)."""
    pairs = [(s, i) for s, subj in enumerate(subjects) for i in range(len(subj.eeg))]
    pick = rng.permutation(len(pairs))[:n]
    eeg = np.stack([subjects[pairs[p][0]].eeg[pairs[p][1]] for p in pick])
    fm = np.concatenate([s.fmri for s in subjects])
    with nd.no_grad():
        ze = eeg_pooled(eeg, params.eeg).data
        zf = fmri_pooled(fm, params.fmri).data
    params.eeg.pool_mean, params.eeg.pool_std = robust_scale(ze)
    params.fmri.pool_mean, params.fmri.pool_std = robust_scale(zf)


def train_encoders(subjects: list[PreparedSubject], model_cfg: ModelConfig, cfg: RunConfig, epochs: int | None = None, seed: int | None = None):
    """Fit all three encoders jointly. Returns (params, per-epoch log records)."""
    seed = cfg.seed if seed is None else seed
    epochs = cfg.epochs if epochs is None else epochs
    params = EncoderParams.init(model_cfg, seed)
    beh = np.stack([s.behavior for s in subjects])
    params.beh_mean = beh.mean(axis=0)
    params.beh_std = np.maximum(beh.std(axis=0), 1e-8)
    beh_std = params.standardize_behavior(beh)
    rng = np.random.default_rng([seed, 7])
    calibrate(params, subjects, rng)
    opt = nd.Adam(params.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        sums = np.zeros(3)
        n_batches = 0
        for batch in epoch_batches(subjects, rng, cfg.batch_size):
            sid = np.array([b[0] for b in batch])
            if len(np.unique(sid)) < 2:
                continue
            eeg = np.stack([subjects[s].eeg[i] for s, i, _ in batch])
            fm = np.stack([subjects[s].fmri[j] for s, _, j in batch])
            E = encode_eeg(eeg, params.eeg)
            M = encode_fmri_features(fm, params.fmri)
            H = encode_behavior(beh_std[sid], params.beh)
            loss, ln, lb = total_loss(E, M, H, sid, cfg.tau, cfg.lambda_beh, cfg.positives)
            opt.zero_grad()
            nd.backward(loss)
            opt.step()
            sums += [ln.item(), 0.0 if lb is None else lb.item(), loss.item()]
            n_batches += 1
        mean = sums / max(n_batches, 1)
        history.append(
            {
                "epoch": epoch + 1,
                "loss_neu": float(mean[0]),
                "loss_beh": float(mean[1]),
                "total": float(mean[2]),
                "wall_ms": round(1000 * (time.perf_counter() - t0), 3),
            }
        )
        log.debug("epoch %s", json.dumps(history[-1]))
    return params, history


def embed_chunks(subj: PreparedSubject, params: EncoderParams, batch: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Chunk embeddings (K_e x D, K_m x D) without recording a tape."""
    with nd.no_grad():
        E = np.concatenate([encode_eeg(subj.eeg[i:i + batch], params.eeg).data for i in range(0, len(subj.eeg), batch)])
        M = encode_fmri_features(subj.fmri, params.fmri).data
    return E, M


@dataclass
class FoldResult:
    subject_id: str
    truth: float
    truth_class: int
    pred_score: float
    pred_class: int
    pair_sims: list[float] = field(default_factory=list)
    pair_correct: list[bool] = field(default_factory=list)


def build_index(train: list[PreparedSubject], params: EncoderParams, cfg: RunConfig):
    embs = [aggregate_subject(*embed_chunks(s, params), cfg.tau_a, s.subject_id, cfg.weighting) for s in train]
    y = np.array([s.y for s in train])
    threshold = float(np.median(y))
    index = PredictorIndex(
        np.stack([e.vector for e in embs]), y, (y > threshold).astype(int), min(cfg.k, len(train)), [s.subject_id for s in train]
    )
    return index, threshold


def predict_subject(subj: PreparedSubject, params: EncoderParams, index: PredictorIndex, cfg: RunConfig, pairs: bool = False):
    E, M = embed_chunks(subj, params)
    agg = aggregate_subject(E, M, cfg.tau_a, subj.subject_id, cfg.weighting)
    score = knn_predict(index, agg, "regress")
    cls = knn_predict(index, agg, "classify", cfg.vote)
    sims, correct = [], []
    if pairs:
        sims = chunk_pair_similarities(E, M).tolist()
        for i in range(len(E)):
            for j in range(len(M)):
                correct.append(knn_predict(index, np.concatenate([M[j], E[i]]), "classify", cfg.vote))
    return score, cls, sims, correct


def run_fold(args) -> FoldResult:
    subjects, held, model_cfg, cfg, epochs, pairs = args
    train = [s for i, s in enumerate(subjects) if i != held]
    params, _ = train_encoders(train, model_cfg, cfg, epochs)
    index, threshold = build_index(train, params, cfg)
    test = subjects[held]
    truth_cls = int(test.y > threshold)
    score, cls, sims, pred_pairs = predict_subject(test, params, index, cfg, pairs)
    return FoldResult(test.subject_id, test.y, truth_cls, score, cls, sims, [p == truth_cls for p in pred_pairs])


def loso_evaluate(cohort: Cohort, cfg: RunConfig, epochs: int | None = None, pairs: bool = False, subjects=None) -> dict:
    """Leave-one-subject-out: retrain per fold, predict the held-out subject."""
    if len(cohort) < 3:
        raise ValueError("LOSO evaluation needs at least 3 subjects")
    if epochs is None:
        epochs = cfg.search_epochs if cfg.fast else cfg.epochs
    subjects = subjects if subjects is not None else prepare_cohort(cohort, cfg)
    model_cfg = cfg.model_config(cohort)
    jobs = [(subjects, i, model_cfg, cfg, epochs, pairs) for i in range(len(subjects))]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as ex:
            folds = list(ex.map(run_fold, jobs))
    else:
        folds = [run_fold(j) for j in jobs]
    return summarize(folds, cfg)


def summarize(folds: list[FoldResult], cfg: RunConfig) -> dict:
    out = {"per_subject": [], "metrics": {}}
    for f in folds:
        out["per_subject"].append(
            {"id": f.subject_id, "truth": f.truth, "truth_class": f.truth_class, "pred_score": f.pred_score, "pred_class": f.pred_class}
        )
    if cfg.task in ("classify", "both"):
        out["metrics"].update(metrics([f.pred_class for f in folds], [f.truth_class for f in folds], "classify"))
    if cfg.task in ("regress", "both"):
        out["metrics"].update(metrics([f.pred_score for f in folds], [f.truth for f in folds], "regress"))
    if any(f.pair_sims for f in folds):
        out["pairs"] = {
            "sim": [s for f in folds for s in f.pair_sims],
            "correct": [bool(c) for f in folds for c in f.pair_correct],
        }
    return out


# ------------------------------------------------------------------ fitted model


@dataclass
class FittedModel:
    params: EncoderParams
    index: PredictorIndex
    threshold: float
    history: list[dict] = field(default_factory=list)


def fit_model(cohort: Cohort, cfg: RunConfig, epochs: int | None = None, subjects=None) -> FittedModel:
    """Train on every subject of `cohort` and index their subject embeddings."""
    subjects = subjects if subjects is not None else prepare_cohort(cohort, cfg)
    params, history = train_encoders(subjects, cfg.model_config(cohort), cfg, epochs)
    index, threshold = build_index(subjects, params, cfg)
    return FittedModel(params, index, threshold, history)


def save_model(directory, model: FittedModel, cfg: RunConfig, extra: dict | None = None) -> None:
    """params.tacp (weights, buffers, kNN index) plus a model.json sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    state = model.params.state_dict()
    state["index.embeddings"] = model.index.embeddings
    state["index.scores"] = model.index.scores
    state["index.classes"] = model.index.classes.astype(np.float64)
    nd.save_checkpoint(d / "params.tacp", state)
    meta = {
        "version": __version__,
        "config": cfg.to_json(),
        "model": asdict(model.params.config),
        "threshold": model.threshold,
        "k": model.index.k,
        "subjects": list(model.index.subject_ids),
        **(extra or {}),
    }
    (d / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_model(directory) -> tuple[FittedModel, RunConfig, dict]:
    d = Path(directory)
    meta = json.loads((d / "model.json").read_text())
    cfg = RunConfig.from_json(meta["config"])
    state = nd.load_checkpoint(d / "params.tacp")
    params = EncoderParams.init(ModelConfig(**meta["model"]), cfg.seed)
    params.load_state_dict(state)
    for k in ("index.embeddings", "index.scores", "index.classes"):
        if k not in state:
            raise nd.CheckpointError(f"checkpoint lacks {k!r}")
    index = PredictorIndex(
        state["index.embeddings"], state["index.scores"], state["index.classes"].astype(int), int(meta["k"]), meta["subjects"]
    )
    return FittedModel(params, index, float(meta["threshold"])), cfg, meta


# ------------------------------------------------------------------ k-fold ablations


def kfold_evaluate(
    cohort: Cohort,
    cfg: RunConfig,
    n_folds: int = 5,
    weightings: tuple[str, ...] = ("similarity",),
    epochs: int | None = None,
    pairs: bool = False,
) -> dict[str, dict]:
    """Interleaved k-fold CV; every fold trains once and scores each chunk weighting on that same model.

    Cheaper than LOSO and paired across weightings, which is what ablations want.
    """
    if not 2 <= n_folds <= len(cohort):
        raise ValueError(f"n_folds must lie in [2, {len(cohort)}], got {n_folds}")
    subjects = prepare_cohort(cohort, cfg)
    model_cfg = cfg.model_config(cohort)
    fold_of = np.arange(len(subjects)) % n_folds
    results: dict[str, list[FoldResult]] = {w: [] for w in weightings}
    for f in range(n_folds):
        train = [s for s, g in zip(subjects, fold_of) if g != f]
        params, _ = train_encoders(train, model_cfg, cfg, epochs)
        for w in weightings:
            wcfg = RunConfig.from_json({**cfg.to_json(), "weighting": w})
            index, threshold = build_index(train, params, wcfg)
            for s, g in zip(subjects, fold_of):
                if g != f:
                    continue
                truth_cls = int(s.y > threshold)
                score, cls, sims, pred_pairs = predict_subject(s, params, index, wcfg, pairs)
                results[w].append(FoldResult(s.subject_id, s.y, truth_cls, score, cls, sims, [p == truth_cls for p in pred_pairs]))
    return {w: summarize(r, cfg) for w, r in results.items()}
