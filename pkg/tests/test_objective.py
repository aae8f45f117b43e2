import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import gradcheck
from traitalign import ndcore as nd
from traitalign.ndcore import Tensor
from traitalign.objective import DegenerateBatchError, contrastive_loss, loss_beh, loss_neu, positive_mask, total_loss


def unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def loop_oracle(A, B, ids, tau, one_hot=False):
    """Direct summation: every same-subject row of B is a positive (or only the same index)."""
    n = len(ids)
    total = 0.0
    for i in range(n):
        num = den = 0.0
        for j in range(n):
            cos = float(A[i] @ B[j] / (np.linalg.norm(A[i]) * np.linalg.norm(B[j])))
            e = math.exp(cos / tau)
            den += e
            if (i == j) if one_hot else (ids[i] == ids[j]):
                num += e
        total += math.log(num / den)
    return -total / n


def random_batch(rng, n=6, n_subjects=3, D=4):
    ids = np.array([i % n_subjects for i in range(n)])
    return unit_rows(rng.standard_normal((n, D))), unit_rows(rng.standard_normal((n, D))), ids


@pytest.mark.parametrize("seed", range(100))
def test_matches_summation_oracle(seed):
    rng = np.random.default_rng(seed)
    A, B, ids = random_batch(rng, n=int(rng.integers(4, 10)), n_subjects=int(rng.integers(2, 4)))
    tau = float(rng.uniform(0.05, 1.0))
    got = contrastive_loss(Tensor(A), Tensor(B), ids, tau).item()
    assert got == pytest.approx(loop_oracle(A, B, ids, tau), abs=1e-10)


def test_equal_similarity_closed_form():
    ids = np.array([0, 0, 0, 1, 2, 2])
    A = np.tile([1.0, 0.0, 0.0], (6, 1))
    P = np.array([3, 3, 3, 1, 2, 2])
    expected = -np.mean(np.log(P / 6))
    # exact up to the rounding of the max-shift inside log-sum-exp
    assert contrastive_loss(Tensor(A), Tensor(A), ids, 0.1).item() == pytest.approx(expected, abs=1e-14)


def test_perfect_separation_limit():
    ids = np.array([0, 0, 1, 1])
    A = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
    losses = [contrastive_loss(Tensor(A), Tensor(A), ids, tau).item() for tau in (1.0, 0.3, 0.1, 0.02)]
    assert all(a > b for a, b in zip(losses, losses[1:]))
    assert 0.0 <= losses[-1] < 1e-30


def test_false_negative_elimination():
    rng = np.random.default_rng(0)
    A, B, ids = random_batch(rng, n=6, n_subjects=2)
    ours = contrastive_loss(Tensor(A), Tensor(B), ids, 0.1).item()
    assert ours == pytest.approx(loop_oracle(A, B, ids, 0.1), abs=1e-12)
    assert abs(ours - loop_oracle(A, B, ids, 0.1, one_hot=True)) > 1e-3
    clip = contrastive_loss(Tensor(A), Tensor(B), ids, 0.1, positives="pair").item()
    assert clip == pytest.approx(loop_oracle(A, B, ids, 0.1, one_hot=True), abs=1e-12)


def test_errors():
    A = unit_rows(np.random.default_rng(1).standard_normal((3, 2)))
    with pytest.raises(DegenerateBatchError):
        contrastive_loss(Tensor(A), Tensor(A), [5, 5, 5])
    with pytest.raises(ValueError):
        contrastive_loss(Tensor(A), Tensor(A), [0, 1, 1], tau=0.0)
    with pytest.raises(ValueError):
        contrastive_loss(Tensor(A[:1]), Tensor(A[:1]), [0])
    with pytest.raises(ValueError):
        positive_mask([0, 1], "bogus")


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 12), st.integers(2, 5), st.floats(0.02, 2.0))
def test_bounds_and_permutation_invariance(seed, n, k, tau):
    rng = np.random.default_rng(seed)
    k = min(k, n)
    A, B, _ = random_batch(rng, n, k)
    ids = rng.integers(0, k, n)
    if len(np.unique(ids)) < 2:
        return
    loss = contrastive_loss(Tensor(A), Tensor(B), ids, tau).item()
    P = (ids[:, None] == ids[None, :]).sum(axis=1)
    assert loss >= -1e-12
    perm = rng.permutation(n)
    assert contrastive_loss(Tensor(A[perm]), Tensor(B[perm]), ids[perm], tau).item() == pytest.approx(loss, abs=1e-10)
    # the multi-positive loss never exceeds the worst case where all positives sit at -1 and negatives at +1
    assert loss <= np.mean(np.log(n / P)) + 2.0 / tau + 1e-9


def test_loss_neu_and_beh_compositions():
    rng = np.random.default_rng(2)
    E, M, ids = random_batch(rng, 8, 3)
    H = unit_rows(rng.standard_normal((8, 4)))
    E_, M_, H_ = Tensor(E), Tensor(M), Tensor(H)
    neu = loss_neu(E_, M_, ids).item()
    assert neu == pytest.approx(loss_neu(M_, E_, ids).item(), abs=1e-15)
    assert neu == pytest.approx((contrastive_loss(E_, M_, ids).item() + contrastive_loss(M_, E_, ids).item()) / 2, abs=1e-15)
    beh = loss_beh(E_, M_, H_, ids).item()
    assert beh == pytest.approx((contrastive_loss(E_, H_, ids).item() + contrastive_loss(M_, H_, ids).item()) / 2, abs=1e-15)
    tot, ln, lb = total_loss(E_, M_, H_, ids, lambda_beh=1.0)
    assert tot.item() == pytest.approx(neu + beh, abs=1e-14)
    tot0, _, none = total_loss(E_, M_, H_, ids, lambda_beh=0.0)
    assert tot0.item() == neu and none is None


def test_aligned_rows_beat_shuffled():
    rng = np.random.default_rng(3)
    ids = np.repeat(np.arange(4), 2)
    E = unit_rows(rng.standard_normal((8, 6)))
    shuffled = E[rng.permutation(8)]
    assert loss_neu(Tensor(E), Tensor(E), ids).item() < loss_neu(Tensor(E), Tensor(shuffled), ids).item()


@pytest.mark.parametrize("seed", range(20))
def test_total_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    ids = np.array([0, 0, 1, 2, 2, 1])
    raw = [rng.standard_normal((6, 3)) for _ in range(3)]

    def build(e, m, h):
        E, M, H = (nd.l2_normalize(t) for t in (e, m, h))
        return total_loss(E, M, H, ids, tau=0.3, lambda_beh=0.7)[0]

    gradcheck(build, raw)
