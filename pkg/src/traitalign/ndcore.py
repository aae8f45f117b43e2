"""Dense float64 arrays with tape-based reverse-mode gradients, Adam, and
the TACP parameter checkpoint format.

A :class:`Tensor` wraps a numpy array. Every op that touches a tensor with
``requires_grad`` records its parents and a backward closure; :func:`backward`
replays the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _alloc  # noqa: F401

SELU_LAMBDA = 1.0507009873554804934193349852946
SELU_ALPHA = 1.6732632423543772848170429916717


class NumericError(FloatingPointError):
    """Raised when a NaN or Inf appears in a forward or backward pass."""


# "debug": check every op output; "release": check one op in `_SAMPLE_EVERY`.
_check_mode = "debug"
_SAMPLE_EVERY = 64
_op_counter = 0
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording a tape (inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_check_mode(mode: str) -> None:
    global _check_mode
    if mode not in ("debug", "release", "off"):
        raise ValueError(f"unknown check mode {mode!r}")
    _check_mode = mode


def get_check_mode() -> str:
    return _check_mode


def _check_finite(arr: np.ndarray, where: str) -> None:
    global _op_counter
    if _check_mode == "off":
        return
    _op_counter += 1
    if _check_mode == "release" and _op_counter % _SAMPLE_EVERY:
        return
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {where}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: str | None = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable | None = None,
        _op: str = "leaf",
    ):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and 0 in arr.shape:
            raise ValueError("tensor dims must be positive")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    """Record one op. `backward(g)` must return one gradient (or None) per parent."""
    _check_finite(data, op)
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward, _op=op)
    return Tensor(data, _op=op)


def custom_op(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str = "custom") -> Tensor:
    """Public hook for ops defined outside this module (e.g. spline bases)."""
    return _make(np.asarray(data, dtype=np.float64), parents, backward, op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log of non-positive value")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def selu(x) -> Tensor:
    x = as_tensor(x)
    la = SELU_LAMBDA * SELU_ALPHA
    out = np.maximum(x.data, 0.0)
    out *= SELU_LAMBDA
    out += la * np.exp(np.minimum(x.data, 0.0))
    out -= la

    def bw(g):
        return (g * np.where(x.data > 0, SELU_LAMBDA, out + la),)

    return _make(out, (x,), bw, "selu")


def leaky_relu(x, slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    d = np.where(x.data > 0, 1.0, slope)
    return _make(x.data * d, (x,), lambda g: (g * d,), "leaky_relu")


# ------------------------------------------------------------------ reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), bw, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def logsumexp(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Stable log-sum-exp along `axis`, optionally over `mask`-selected entries only.

    Every slice must select at least one entry.
    """
    sel = np.ones(x.shape, dtype=bool) if mask is None else np.broadcast_to(mask, x.shape)
    if not np.all(sel.any(axis=axis)):
        raise ValueError("logsumexp over an empty selection")
    masked = np.where(sel, x.data, -np.inf)
    m = masked.max(axis=axis, keepdims=True)
    e = np.where(sel, np.exp(masked - m), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axis)
    w = e / s
    return _make(out, (x,), lambda g: (np.expand_dims(g, axis) * w,), "logsumexp")


def softmax_row(x) -> Tensor:
    """Row-wise softmax over the last axis."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


# -------------------------------------------------------------- shape / linalg


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; `a` may carry a leading batch axis, `b` may be 2-D or batched."""
    a, b = as_tensor(a), as_tensor(b)
    out = a.data @ b.data

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "matmul")


def transpose(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def index(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(out), (x,), bw, "index")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([x.data for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
        "concat",
    )


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if np.any(norm < eps):
        raise NumericError("cannot normalize a zero vector")
    out = x.data / norm

    def bw(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return _make(out, (x,), bw, "l2_normalize")


def cosine_sim(a, b) -> Tensor:
    """Cosine similarity of two equal-length nonzero vectors (scalar tensor)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("cosine_sim needs two vectors of equal length")
    na = float(np.sqrt(a.data @ a.data))
    nb = float(np.sqrt(b.data @ b.data))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine_sim of a zero-norm vector")
    c = float(a.data @ b.data) / (na * nb)
    c = min(1.0, max(-1.0, c))

    def bw(g):
        ga = g * (b.data / (na * nb) - c * a.data / (na * na))
        gb = g * (a.data / (na * nb) - c * b.data / (nb * nb))
        return ga, gb

    return _make(np.asarray(c), (a, b), bw, "cosine_sim")


def depthwise_conv1d(x: Tensor, w: Tensor) -> Tensor:
    """Valid per-channel correlation: out[..., l, d] = sum_k x[..., l+k, d] * w[k, d]."""
    K = w.shape[0]
    L = x.shape[-2]
    if L < K:
        raise ValueError(f"sequence length {L} shorter than kernel {K}")
    Lo = L - K + 1
    xd, wd = x.data, w.data
    out = xd[..., 0:Lo, :] * wd[0]
    for k in range(1, K):
        out = out + xd[..., k:k + Lo, :] * wd[k]

    def bw(g):
        x3 = xd.reshape(-1, L, xd.shape[-1])
        g3 = g.reshape(-1, Lo, g.shape[-1])
        gw = np.stack([np.einsum("nld,nld->d", x3[:, k:k + Lo, :], g3) for k in range(K)])
        gx = np.zeros_like(xd)
        for k in range(K):
            gx[..., k:k + Lo, :] += g * wd[k]
        return gx, gw

    return _make(out, (x, w), bw, "dwconv1d")


# --------------------------------------------------------------------- backward


def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every reachable leaf requiring grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss was not produced by a recorded computation")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at {node._op}")
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for p, gp in zip(node._parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            gp = np.asarray(gp, dtype=np.float64).reshape(p.shape)
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + gp
            else:
                grads[id(p)] = gp


# ------------------------------------------------------------------------ adam


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns fresh arrays; inputs are not mutated."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or state.m[i].shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out, state


class Adam:
    """Stateful wrapper over :func:`adam_step` for a fixed list of leaf tensors."""

    def __init__(self, params: Iterable[Tensor], lr=0.001, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], grads, self.state)
        for p, d in zip(self.params, new):
            p.data = d


# ------------------------------------------------------------------ checkpoints

CKPT_MAGIC = b"TACP"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float64 arrays: magic, u32 version, then one record per tensor."""
    buf = bytearray(CKPT_MAGIC)
    buf += struct.pack("<I", CKPT_VERSION)
    for name, arr in tensors.items():
        arr = np.array(arr, dtype="<f8", order="C")  # keeps rank 0 (ascontiguousarray would not)
        raw = name.encode("utf-8")
        buf += struct.pack("<I", len(raw)) + raw
        buf += struct.pack("<I", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        while pos < len(raw):
            (n,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", raw, pos)
            pos += 8 * rank
            count = int(np.prod(dims)) if rank else 1
            if pos + 8 * count > len(raw):
                raise CheckpointError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated record") from exc
    return out
