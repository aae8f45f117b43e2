"""Overlapping-window chunk augmentation and cross-modal chunk pairing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EmptyAugmentationError(ValueError):
    pass


@dataclass(frozen=True)
class ChunkSpec:
    length: int
    overlap: int = 0

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("chunk length must be >= 1")
        if not 0 <= self.overlap < self.length:
            raise ValueError(f"overlap {self.overlap} must lie in [0, {self.length})")

    @property
    def stride(self) -> int:
        return self.length - self.overlap

    @classmethod
    def half_overlap(cls, length: int) -> "ChunkSpec":
        return cls(length, length // 2)

    def count(self, total: int) -> int:
        """Number of full windows that fit into `total` samples."""
        if total < self.length:
            return 0
        return (total - self.length) // self.stride + 1


@dataclass
class Chunk:
    subject_id: str
    modality: str
    index: int
    data: np.ndarray


def window_starts(total: int, spec: ChunkSpec) -> np.ndarray:
    return np.arange(spec.count(total)) * spec.stride


def augment(x: np.ndarray, spec: ChunkSpec) -> np.ndarray:
    """Slice the last axis of `x` into windows [iS, iS+L); returns (K, ..., L).

    The trailing remainder shorter than L is dropped.
    """
    x = np.asarray(x)
    total = x.shape[-1]
    if total < spec.length:
        raise EmptyAugmentationError(f"recording of {total} samples is shorter than chunk length {spec.length}")
    starts = window_starts(total, spec)
    return np.stack([x[..., s:s + spec.length] for s in starts])


def make_chunks(x: np.ndarray, spec: ChunkSpec, subject_id: str, modality: str) -> list[Chunk]:
    return [Chunk(subject_id, modality, i, c) for i, c in enumerate(augment(x, spec))]


def pair_chunks(eeg_chunks, fmri_chunks, subject_id: str) -> list[tuple[str, int, int]]:
    """All (subject, eeg index, fmri index) pairs, EEG index major."""
    if len(eeg_chunks) == 0 or len(fmri_chunks) == 0:
        raise ValueError(f"subject {subject_id}: cannot pair with an empty chunk list")
    return [(subject_id, i, j) for i in range(len(eeg_chunks)) for j in range(len(fmri_chunks))]
