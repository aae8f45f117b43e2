"""Subject-aware multi-positive contrastive losses.

For anchor ``a_i`` every row of ``B`` from the same subject is a positive; rows from
other subjects are negatives. The CLIP-style variant (``positives="pair"``) keeps
only the row with the same batch index as positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .ndcore import Tensor


class DegenerateBatchError(ValueError):
    """Batch with no negatives: the loss is constant and carries no gradient."""


@dataclass
class BatchEmbeddings:
    E: Tensor
    M: Tensor
    H: Tensor
    subject_ids: np.ndarray
    tau: float = 0.1


def positive_mask(subject_ids, mode: str = "subject") -> np.ndarray:
    ids = np.asarray(subject_ids)
    if mode == "subject":
        return ids[:, None] == ids[None, :]
    if mode == "pair":
        return np.eye(len(ids), dtype=bool)
    raise ValueError(f"unknown positive mode {mode!r}")


def contrastive_loss(A: Tensor, B: Tensor, subject_ids, tau: float = 0.1, positives: str = "subject") -> Tensor:
    """Mean over anchors of -log(sum_pos exp(s/tau) / sum_all exp(s/tau)), s = cosine similarity.

    Rows of `A` and `B` are assumed L2-normalized.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    ids = np.asarray(subject_ids)
    n = A.shape[0]
    if n < 2 or B.shape[0] != n or len(ids) != n:
        raise ValueError("contrastive_loss needs two aligned batches of >= 2 rows")
    if len(np.unique(ids)) < 2:
        raise DegenerateBatchError("batch holds a single subject; no negatives")
    logits = (A @ B.T) * (1.0 / tau)
    pos = positive_mask(ids, positives)
    per_anchor = nd.logsumexp(logits, axis=1, mask=pos) - nd.logsumexp(logits, axis=1)
    return -nd.mean(per_anchor)


def loss_neu(E: Tensor, M: Tensor, subject_ids, tau: float = 0.1, positives: str = "subject") -> Tensor:
    return (contrastive_loss(E, M, subject_ids, tau, positives) + contrastive_loss(M, E, subject_ids, tau, positives)) * 0.5


def loss_beh(E: Tensor, M: Tensor, H: Tensor, subject_ids, tau: float = 0.1, positives: str = "subject") -> Tensor:
    return (contrastive_loss(E, H, subject_ids, tau, positives) + contrastive_loss(M, H, subject_ids, tau, positives)) * 0.5


def total_loss(
    E: Tensor, M: Tensor, H: Tensor, subject_ids, tau: float = 0.1, lambda_beh: float = 1.0, positives: str = "subject"
) -> tuple[Tensor, Tensor, Tensor]:
    """Returns (total, neuro-alignment part, behavior-alignment part)."""
    ln = loss_neu(E, M, subject_ids, tau, positives)
    if lambda_beh == 0:
        return ln, ln, None
    lb = loss_beh(E, M, H, subject_ids, tau, positives)
    return ln + lb * lambda_beh, ln, lb
