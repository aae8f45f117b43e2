"""B-spline bases and the KAN layer (base SELU branch plus learnable spline branch)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndcore as nd
from .ndcore import Tensor


@dataclass(frozen=True)
class SplineGrid:
    """Open uniform knot vector on ``[lo, hi]``: end knots repeated ``degree + 1`` times."""

    degree: int = 3
    num_basis: int = 8
    lo: float = -1.0
    hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("spline degree must be >= 0")
        if self.num_basis < self.degree + 1:
            raise ValueError(f"num_basis={self.num_basis} < degree+1={self.degree + 1}")
        if not self.hi > self.lo:
            raise ValueError("empty spline domain")
        p, M = self.degree, self.num_basis
        interior = np.linspace(self.lo, self.hi, M - p + 1)
        knots = np.concatenate([np.full(p, self.lo), interior, np.full(p, self.hi)])
        object.__setattr__(self, "knots", knots)

    @classmethod
    def from_knots(cls, knots, degree: int) -> "SplineGrid":
        """Grid with explicit knots (used for non-open vectors such as indicator splines)."""
        knots = np.asarray(knots, dtype=np.float64)
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        M = len(knots) - degree - 1
        if M < 1:
            raise ValueError("too few knots for the requested degree")
        g = object.__new__(cls)
        object.__setattr__(g, "degree", degree)
        object.__setattr__(g, "num_basis", M)
        object.__setattr__(g, "lo", float(knots[degree]))
        object.__setattr__(g, "hi", float(knots[M]))
        object.__setattr__(g, "knots", knots)
        return g


def _basis_and_derivative(x: np.ndarray, grid: SplineGrid) -> tuple[np.ndarray, np.ndarray]:
    """Cox-de Boor on clamped `x`. Returns (B, dB/dx), each shaped x.shape + (M,).

    The derivative is zero where `x` was clamped.
    """
    t = grid.knots
    p = grid.degree
    x = np.asarray(x, dtype=np.float64)
    xc = np.clip(x, grid.lo, grid.hi)[..., None]
    # degree-0 indicators on half-open spans; the right domain end joins the last nonempty span
    left, right = t[:-1], t[1:]
    B = ((xc >= left) & (xc < right)).astype(np.float64)
    last = np.nonzero((right > left) & (right <= grid.hi))[0][-1]
    B[..., last] = np.where(xc[..., 0] >= grid.hi, 1.0, B[..., last])
    dB = np.zeros_like(B)
    for k in range(1, p + 1):
        n = len(t) - k - 1
        d1 = t[k:k + n] - t[:n]
        d2 = t[k + 1:k + 1 + n] - t[1:n + 1]
        inv1 = np.divide(1.0, d1, out=np.zeros_like(d1), where=d1 > 0)
        inv2 = np.divide(1.0, d2, out=np.zeros_like(d2), where=d2 > 0)
        lo_part, hi_part = B[..., :n], B[..., 1:n + 1]
        if k == p:
            dB = k * (inv1 * lo_part - inv2 * hi_part)
        B = (xc - t[:n]) * inv1 * lo_part + (t[k + 1:k + 1 + n] - xc) * inv2 * hi_part
    inside = ((x > grid.lo) & (x < grid.hi))[..., None]
    dB = np.where(inside, dB, 0.0) if p > 0 else np.zeros_like(B)
    return B, dB


def bspline_basis(x: float, grid: SplineGrid) -> np.ndarray:
    """All ``grid.num_basis`` basis values at scalar `x` (clamped into the domain)."""
    if not np.isfinite(x):
        raise ValueError("x must be finite")
    return _basis_and_derivative(np.asarray(float(x)), grid)[0]


def bspline_basis_tensor(x: Tensor, grid: SplineGrid) -> Tensor:
    """Differentiable basis evaluation: x.shape -> x.shape + (M,)."""
    B, dB = _basis_and_derivative(x.data, grid)
    return nd.custom_op(B, (x,), lambda g: ((g * dB).sum(axis=-1),), "bspline")


@dataclass
class KanLayerParams:
    """Weights mapping an input of width O to an output of width D.

    ``coeffs`` holds M spline coefficients for every (output, input) pair.
    """

    w_base: Tensor  # D x O
    w_spline: Tensor  # D x O
    coeffs: Tensor  # D x O x M
    grid: SplineGrid

    @property
    def in_width(self) -> int:
        return self.w_base.shape[1]

    @property
    def out_width(self) -> int:
        return self.w_base.shape[0]

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w_base": self.w_base, f"{prefix}.w_spline": self.w_spline, f"{prefix}.coeffs": self.coeffs}

    @classmethod
    def init(cls, in_width: int, out_width: int, rng: np.random.Generator, grid: SplineGrid | None = None, gain: float = 1.0):
        grid = grid or SplineGrid()
        s = gain / np.sqrt(in_width)
        return cls(
            w_base=Tensor(rng.normal(0.0, s, (out_width, in_width)), requires_grad=True),
            w_spline=Tensor(rng.normal(0.0, s, (out_width, in_width)), requires_grad=True),
            coeffs=Tensor(rng.normal(0.0, 0.1 * gain, (out_width, in_width, grid.num_basis)), requires_grad=True),
            grid=grid,
        )


def kan_forward(x: Tensor, params: KanLayerParams) -> Tensor:
    """``W_base @ selu(x) + sum_{o,i} W_spline[d,o] * c[d,o,i] * B_i(x_o)``.

    `x` is (O,) or (batch, O); output is (D,) or (batch, D).
    """
    x = nd.as_tensor(x)
    if x.shape[-1] != params.in_width:
        raise ValueError(f"KAN input width {x.shape[-1]} != {params.in_width}")
    single = x.ndim == 1
    if single:
        x = nd.reshape(x, (1, x.shape[0]))
    n, O = x.shape
    M = params.grid.num_basis
    D = params.out_width
    base = nd.selu(x) @ params.w_base.T
    basis = nd.reshape(bspline_basis_tensor(x, params.grid), (n, O * M))
    eff = params.coeffs * nd.reshape(params.w_spline, (D, O, 1))
    spline = basis @ nd.reshape(eff, (D, O * M)).T
    out = base + spline
    return nd.reshape(out, (D,)) if single else out
