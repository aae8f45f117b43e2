"""Noise-informed subject aggregation, kNN prediction, metrics, and the
chunk-pair similarity report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

AGG_TAU = 0.1


@dataclass
class SubjectEmbedding:
    vector: np.ndarray  # [weighted fMRI aggregate || weighted EEG aggregate]
    subject_id: str = ""
    n_eeg: int = 0
    n_fmri: int = 0
    eeg_weights: np.ndarray | None = field(default=None, repr=False)
    fmri_weights: np.ndarray | None = field(default=None, repr=False)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def aggregate_subject(
    eeg_embs: np.ndarray, fmri_embs: np.ndarray, tau_a: float = AGG_TAU, subject_id: str = "", weighting: str = "similarity"
) -> SubjectEmbedding:
    """Cross-modal similarity-weighted chunk aggregation.

    fMRI chunk j is weighted by softmax_j(mean_i sim(e_i, m_j) / tau_a), EEG chunk i by
    softmax_i(mean_j sim(e_i, m_j) / tau_a). ``weighting="uniform"`` replaces both with
    plain averages (the ablation baseline).
    """
    E = np.atleast_2d(np.asarray(eeg_embs, dtype=np.float64))
    M = np.atleast_2d(np.asarray(fmri_embs, dtype=np.float64))
    if E.shape[0] == 0 or M.shape[0] == 0:
        raise ValueError("aggregate_subject needs at least one chunk per modality")
    if weighting == "uniform":
        v = np.full(E.shape[0], 1.0 / E.shape[0])
        w = np.full(M.shape[0], 1.0 / M.shape[0])
    elif weighting == "similarity":
        S = _unit_rows(E) @ _unit_rows(M).T  # K_e x K_m
        w = _softmax(S.mean(axis=0) / tau_a)
        v = _softmax(S.mean(axis=1) / tau_a)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    vec = np.concatenate([w @ M, v @ E])
    return SubjectEmbedding(vec, subject_id, E.shape[0], M.shape[0], v, w)


@dataclass
class PredictorIndex:
    embeddings: np.ndarray  # N x 2D
    scores: np.ndarray  # continuous trait per training subject
    classes: np.ndarray  # derived class per training subject
    k: int = 5
    subject_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.classes = np.asarray(self.classes, dtype=int)
        n = self.embeddings.shape[0]
        if n == 0:
            raise ValueError("empty predictor index")
        if not 1 <= self.k <= n:
            raise ValueError(f"k={self.k} must lie in [1, {n}]")
        if len(self.scores) != n or len(self.classes) != n:
            raise ValueError("labels do not match the number of indexed subjects")
        self._unit = _unit_rows(self.embeddings)

    def neighbors(self, query: np.ndarray) -> np.ndarray:
        """Indices of the k nearest training subjects by cosine distance; ties -> lower index."""
        q = np.asarray(query, dtype=np.float64)
        dist = 1.0 - self._unit @ (q / np.linalg.norm(q))
        return np.argsort(dist, kind="stable")[: self.k]


def knn_predict(index: PredictorIndex, query, task: str = "regress", vote: str = "majority"):
    """Mean neighbor score (regression) or neighbor-class vote (classification).

    ``vote="mean"`` thresholds the mean neighbor class at 0.5 instead of counting votes.
    Vote ties resolve to the lower class id.
    """
    vec = query.vector if isinstance(query, SubjectEmbedding) else query
    nb = index.neighbors(vec)
    if task == "regress":
        return float(index.scores[nb].mean())
    if task == "classify":
        if vote == "mean":
            return int(index.classes[nb].mean() > 0.5)
        counts = np.bincount(index.classes[nb])
        return int(np.argmax(counts))
    raise ValueError(f"unknown task {task!r}")


def metrics(preds, truths, task: str) -> dict:
    """Classification -> accuracy and positive-class F1; regression -> MAE and R^2.

    R^2 is None when the truths have zero variance.
    """
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.size == 0 or p.shape != t.shape:
        raise ValueError("metrics need two non-empty arrays of equal shape")
    if task == "classify":
        tp = float(np.sum((p == 1) & (t == 1)))
        fp = float(np.sum((p == 1) & (t == 0)))
        fn = float(np.sum((p == 0) & (t == 1)))
        denom = 2 * tp + fp + fn
        return {"accuracy": float(np.mean(p == t)), "f1": 2 * tp / denom if denom else 0.0}
    if task == "regress":
        ss_tot = float(np.sum((t - t.mean()) ** 2))
        ss_res = float(np.sum((t - p) ** 2))
        return {"mae": float(np.mean(np.abs(p - t))), "r2": None if ss_tot == 0 else 1.0 - ss_res / ss_tot}
    raise ValueError(f"unknown task {task!r}")


def chunk_pair_similarities(eeg_embs: np.ndarray, fmri_embs: np.ndarray) -> np.ndarray:
    """Cosine similarity of every (EEG chunk, fMRI chunk) pair, EEG-major."""
    return (_unit_rows(np.atleast_2d(eeg_embs)) @ _unit_rows(np.atleast_2d(fmri_embs)).T).ravel()


def report_chunk_similarity(sims, correct=None, bins: int = 10, lo: float | None = None, hi: float | None = None) -> dict:
    """Histogram of chunk-pair similarities plus per-bin single-pair accuracy.

    `correct` (optional) flags whether each pair's own prediction was right.
    Bins are equal-width over [lo, hi] (default: the observed range).
    """
    s = np.asarray(sims, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("no chunk pairs to report")
    lo = float(s.min()) if lo is None else lo
    hi = float(s.max()) if hi is None else hi
    if hi <= lo:
        hi = lo + 1e-9
    edges = np.linspace(lo, hi, bins + 1)
    which = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, bins - 1)
    counts = np.bincount(which, minlength=bins)
    out = {"edges": edges.tolist(), "counts": counts.tolist(), "total": int(s.size)}
    if correct is not None:
        c = np.asarray(correct, dtype=np.float64).ravel()
        if c.shape != s.shape:
            raise ValueError("correct flags must align with similarities")
        acc = [float(c[which == b].mean()) if counts[b] else None for b in range(bins)]
        out["accuracy"] = acc
    return out


def lowest_highest_gap(report: dict, min_count: int = 1) -> tuple[float, float]:
    """(accuracy of the lowest, accuracy of the highest) bins holding >= `min_count` pairs."""
    ok = [i for i, n in enumerate(report["counts"]) if n >= min_count and report["accuracy"][i] is not None]
    if not ok:
        return math.nan, math.nan
    return report["accuracy"][ok[0]], report["accuracy"][ok[-1]]
