"""Multimodal (EEG + fMRI + behavior) trait prediction with KAN encoders,
subject-aware contrastive alignment, chunk-length search and
similarity-weighted kNN inference."""

__version__ = "0.1.0"
