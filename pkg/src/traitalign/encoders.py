"""Modality encoders: EEG (temporal/electrode convolutions + KAN), fMRI (GCN over
functional connectivity + KAN) and behavior (KAN on scale vectors).

Every encoder ends with L2 normalization so cosine similarity is a dot product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .kanlayer import KanLayerParams, SplineGrid, kan_forward
from .ndcore import Tensor

log = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01


@dataclass
class ModelConfig:
    n_channels: int = 6
    n_rois: int = 16
    n_scales: int = 5
    emb_dim: int = 32
    eeg_width: int = 16  # electrode-wise conv output channels
    kernel: int = 7
    tw_depth: int = 3  # time-wise convs stacked after the electrode-wise conv
    gcn_features: int = 16
    spline_basis: int = 8
    spline_degree: int = 3
    # KAN weights start small so Adam's fixed step size moves them quickly; outputs are normalized
    kan_init_gain: float = 0.01
    front_init_gain: float = 0.1  # conv / graph weights start small

    @property
    def receptive_field(self) -> int:
        return (self.tw_depth + 1) * (self.kernel - 1) + 1


# ------------------------------------------------------------------------ EEG


def time_wise_conv(x: Tensor, w: Tensor) -> Tensor:
    """Depthwise valid convolution along time followed by SELU. (..., L, D) -> (..., L-K+1, D)."""
    x = nd.as_tensor(x)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[-1]}, filter {w.shape[1]}")
    if x.shape[-2] < w.shape[0]:
        raise ValueError(f"sequence length {x.shape[-2]} < kernel size {w.shape[0]}")
    return nd.selu(nd.depthwise_conv1d(x, w))


def electrode_wise_conv(x: Tensor, w: Tensor) -> Tensor:
    """Per-timestep mix across electrodes followed by SELU. (..., L, D) -> (..., L, O)."""
    x = nd.as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"width mismatch: input {x.shape[-1]}, filter {w.shape[0]}")
    return nd.selu(x @ w)


def temporal_pool(x: Tensor) -> Tensor:
    """Mean over the time axis (second to last)."""
    x = nd.as_tensor(x)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ValueError("temporal_pool needs at least one timestep")
    return nd.mean(x, axis=x.ndim - 2)


@dataclass
class EegEncoderParams:
    tw_first: Tensor  # K x C
    ew: Tensor  # C x O
    tw_stack: list[Tensor]  # each K x O
    kan: KanLayerParams
    # fixed standardization of pooled features ahead of the squash into the spline domain
    pool_mean: np.ndarray = None
    pool_std: np.ndarray = None

    @property
    def kernel(self) -> int:
        return self.tw_first.shape[0]

    @property
    def receptive_field(self) -> int:
        return (len(self.tw_stack) + 1) * (self.kernel - 1) + 1

    def tensors(self) -> dict[str, Tensor]:
        out = {"eeg.tw_first": self.tw_first, "eeg.ew": self.ew}
        out.update({f"eeg.tw_stack.{i}": w for i, w in enumerate(self.tw_stack)})
        out.update(self.kan.tensors("eeg.kan"))
        return out

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "EegEncoderParams":
        K, C, O = cfg.kernel, cfg.n_channels, cfg.eeg_width
        return cls(
            tw_first=Tensor(rng.normal(0.0, cfg.front_init_gain / np.sqrt(K), (K, C)), requires_grad=True),
            ew=Tensor(rng.normal(0.0, cfg.front_init_gain / np.sqrt(C), (C, O)), requires_grad=True),
            tw_stack=[Tensor(rng.normal(0.0, cfg.front_init_gain / np.sqrt(K), (K, O)), requires_grad=True) for _ in range(cfg.tw_depth)],
            kan=KanLayerParams.init(O, cfg.emb_dim, rng, SplineGrid(cfg.spline_degree, cfg.spline_basis), cfg.kan_init_gain),
            pool_mean=np.zeros(O),
            pool_std=np.ones(O),
        )


def squash(pooled: Tensor, mean: np.ndarray, std: np.ndarray) -> Tensor:
    """Standardize pooled features, then tanh into the spline domain (-1, 1)."""
    return nd.tanh((pooled - mean) * (1.0 / std))


def eeg_pooled(chunk, params: EegEncoderParams) -> Tensor:
    """Convolution stack and temporal pooling, before the squash and KAN."""
    x = nd.as_tensor(chunk)
    if x.shape[-1] < params.receptive_field:
        raise ValueError(f"chunk length {x.shape[-1]} shorter than receptive field {params.receptive_field}")
    axes = (1, 0) if x.ndim == 2 else (0, 2, 1)
    h = nd.transpose(x, axes)  # time-major
    h = time_wise_conv(h, params.tw_first)
    h = electrode_wise_conv(h, params.ew)
    for w in params.tw_stack:
        h = time_wise_conv(h, w)
    return temporal_pool(h)


def encode_eeg(chunk, params: EegEncoderParams) -> Tensor:
    """EEG chunk(s) (C, L) or (B, C, L) -> unit-norm embedding(s) (D,) or (B, D)."""
    z = squash(eeg_pooled(chunk, params), params.pool_mean, params.pool_std)
    return nd.l2_normalize(kan_forward(z, params.kan), axis=-1)


# ----------------------------------------------------------------------- fMRI


@dataclass
class ConnectivityGraph:
    adjacency: np.ndarray  # R x R, symmetric, unit diagonal

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    def normalized_operator(self) -> np.ndarray:
        """D^-1/2 (A + I) D^-1/2, D the row sums of |A + I| (signed correlations can cancel)."""
        a_tilde = self.adjacency + np.eye(self.n_nodes)
        deg = np.abs(a_tilde).sum(axis=1)
        if np.any(deg <= 0):
            raise ValueError("non-positive node degree in connectivity graph")
        s = 1.0 / np.sqrt(deg)
        return s[:, None] * a_tilde * s[None, :]


def connectivity(m: np.ndarray) -> ConnectivityGraph:
    """Pearson correlation between ROI series (rows of `m`)."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] < 2:
        raise ValueError("connectivity needs an R x L array with L >= 2")
    c = m - m.mean(axis=1, keepdims=True)
    ss = np.sqrt((c * c).sum(axis=1))
    const = ss == 0.0
    if np.any(const):
        log.warning("constant ROI series at %s; correlations set to 0", np.nonzero(const)[0].tolist())
        ss = np.where(const, 1.0, ss)
    z = c / ss[:, None]
    a = z @ z.T
    a = np.clip(0.5 * (a + a.T), -1.0, 1.0)
    a[const, :] = 0.0
    a[:, const] = 0.0
    np.fill_diagonal(a, 1.0)
    return ConnectivityGraph(a)


def propagate_features(graph: ConnectivityGraph) -> np.ndarray:
    """Fixed part of the graph convolution: normalized operator times node features (rows of A)."""
    return graph.normalized_operator() @ graph.adjacency


def gcn_forward(graph: ConnectivityGraph, x, w: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    """LeakyReLU(D^-1/2 (A+I) D^-1/2 X W)."""
    op = Tensor(graph.normalized_operator())
    return nd.leaky_relu(op @ nd.as_tensor(x) @ w, slope)


def roi_pool(x: Tensor) -> Tensor:
    """Mean over ROIs (second to last axis)."""
    x = nd.as_tensor(x)
    return nd.mean(x, axis=x.ndim - 2)


@dataclass
class FmriEncoderParams:
    gcn_weight: Tensor  # R x F
    kan: KanLayerParams
    pool_mean: np.ndarray = None
    pool_std: np.ndarray = None

    def tensors(self) -> dict[str, Tensor]:
        return {"fmri.gcn_weight": self.gcn_weight, **self.kan.tensors("fmri.kan")}

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "FmriEncoderParams":
        R, F = cfg.n_rois, cfg.gcn_features
        return cls(
            gcn_weight=Tensor(rng.normal(0.0, cfg.front_init_gain / np.sqrt(R), (R, F)), requires_grad=True),
            kan=KanLayerParams.init(F, cfg.emb_dim, rng, SplineGrid(cfg.spline_degree, cfg.spline_basis), cfg.kan_init_gain),
            pool_mean=np.zeros(F),
            pool_std=np.ones(F),
        )


def fmri_features(chunk: np.ndarray) -> np.ndarray:
    """Non-learnable prefix of the fMRI encoder for one (R, L) chunk: propagated node features."""
    return propagate_features(connectivity(chunk))


def fmri_pooled(prop, params: FmriEncoderParams) -> Tensor:
    """Graph convolution on precomputed propagated features, pooled over ROIs."""
    prop = nd.as_tensor(prop)
    if prop.shape[-1] != params.gcn_weight.shape[0]:
        raise ValueError(f"ROI count {prop.shape[-1]} != configured {params.gcn_weight.shape[0]}")
    return roi_pool(nd.leaky_relu(prop @ params.gcn_weight, LEAKY_SLOPE))


def encode_fmri_features(prop, params: FmriEncoderParams) -> Tensor:
    """Learnable part of the fMRI encoder on precomputed features (R, R) or (B, R, R)."""
    z = squash(fmri_pooled(prop, params), params.pool_mean, params.pool_std)
    return nd.l2_normalize(kan_forward(z, params.kan), axis=-1)


def encode_fmri(chunk: np.ndarray, params: FmriEncoderParams) -> Tensor:
    """fMRI chunk (R, L) -> unit-norm embedding (D,)."""
    return encode_fmri_features(fmri_features(chunk), params)


# ------------------------------------------------------------------- behavior


@dataclass
class BehaviorEncoderParams:
    kan: KanLayerParams

    def tensors(self) -> dict[str, Tensor]:
        return self.kan.tensors("beh.kan")

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "BehaviorEncoderParams":
        return cls(KanLayerParams.init(cfg.n_scales, cfg.emb_dim, rng, SplineGrid(cfg.spline_degree, cfg.spline_basis), cfg.kan_init_gain))


def encode_behavior(h, params: BehaviorEncoderParams) -> Tensor:
    """Standardized scale vector(s) (Q,) or (B, Q) -> unit-norm embedding(s)."""
    z = nd.tanh(nd.as_tensor(h))
    return nd.l2_normalize(kan_forward(z, params.kan), axis=-1)


# ------------------------------------------------------------------ all three


@dataclass
class EncoderParams:
    config: ModelConfig
    eeg: EegEncoderParams
    fmri: FmriEncoderParams
    beh: BehaviorEncoderParams
    # z-score statistics of the behavior scales over training subjects
    beh_mean: np.ndarray = field(default=None)
    beh_std: np.ndarray = field(default=None)

    @classmethod
    def init(cls, cfg: ModelConfig, seed: int) -> "EncoderParams":
        rng = np.random.default_rng(seed)
        return cls(
            cfg,
            EegEncoderParams.init(cfg, rng),
            FmriEncoderParams.init(cfg, rng),
            BehaviorEncoderParams.init(cfg, rng),
            np.zeros(cfg.n_scales),
            np.ones(cfg.n_scales),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {**self.eeg.tensors(), **self.fmri.tensors(), **self.beh.tensors()}

    def parameters(self) -> list[Tensor]:
        return list(self.tensors().values())

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-learnable standardization statistics."""
        return {
            "eeg.pool_mean": self.eeg.pool_mean,
            "eeg.pool_std": self.eeg.pool_std,
            "fmri.pool_mean": self.fmri.pool_mean,
            "fmri.pool_std": self.fmri.pool_std,
            "beh.mean": self.beh_mean,
            "beh.std": self.beh_std,
        }

    def state_dict(self) -> dict[str, np.ndarray]:
        return {**{k: t.data for k, t in self.tensors().items()}, **self.buffers()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors().items():
            if k not in state:
                raise KeyError(f"checkpoint lacks {k!r}")
            if state[k].shape != t.shape:
                raise ValueError(f"checkpoint {k!r} has shape {state[k].shape}, model expects {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)
        for k, v in self.buffers().items():
            if k not in state or state[k].shape != v.shape:
                raise ValueError(f"checkpoint buffer {k!r} missing or misshaped")
        self.eeg.pool_mean = np.array(state["eeg.pool_mean"])
        self.eeg.pool_std = np.array(state["eeg.pool_std"])
        self.fmri.pool_mean = np.array(state["fmri.pool_mean"])
        self.fmri.pool_std = np.array(state["fmri.pool_std"])
        self.beh_mean = np.array(state["beh.mean"])
        self.beh_std = np.array(state["beh.std"])

    def standardize_behavior(self, h: np.ndarray) -> np.ndarray:
        return (np.asarray(h) - self.beh_mean) / self.beh_std
