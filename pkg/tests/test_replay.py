import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exdm.errors import BufferTooSmall, DimMismatch, ModeMismatch, PretrainModeHasNoRewards
from exdm.replay import ReplayBuffer, Transition


def tr(i, done=False, r=None):
    return Transition(np.array([i, i], float), np.array([i], float), np.array([i + 1, i + 1], float), done, r)


def test_push_and_evict():
    buf = ReplayBuffer(3, 2, 1)
    for i in range(5):
        buf.push(tr(i))
    assert len(buf) == 3
    assert buf.all().s[:, 0].tolist() == [2, 3, 4]


def test_errors():
    buf = ReplayBuffer(3, 2, 1)
    with pytest.raises(DimMismatch):
        buf.push(Transition(np.zeros(3), np.zeros(1), np.zeros(2), False))
    with pytest.raises(ModeMismatch):
        buf.push(tr(0, r=1.0))
    with pytest.raises(BufferTooSmall):
        buf.sample_batch(4, np.random.default_rng(0))
    with pytest.raises(PretrainModeHasNoRewards):
        buf.sample_nstep(1, np.random.default_rng(0))
    fb = ReplayBuffer(3, 2, 1, mode="finetune")
    with pytest.raises(ModeMismatch):
        fb.push(tr(0))


def test_nstep_hand_values():
    buf = ReplayBuffer(10, 2, 1, mode="finetune", n_step=3, gamma=0.5)
    rewards = [1.0, 2.0, 4.0, 8.0]
    for i, r in enumerate(rewards):
        buf.push(tr(i, done=(i == 3), r=r))

    class Fixed:
        def integers(self, lo, hi, size):
            return np.array([0, 1, 2, 3])

    b = buf.sample_nstep(4, Fixed())
    # from 0: 1 + .5*2 + .25*4 = 3, boot at s_next of slot 2
    np.testing.assert_allclose(b.ret, [3.0, 2 + 2 + 2, 4 + 4, 8])
    np.testing.assert_allclose(b.discount, [0.125, 0.125, 0.25, 0.5])
    np.testing.assert_allclose(b.mask, [1, 0, 0, 0])
    assert b.boot_idx.tolist() == [2, 3, 3, 3]


def test_nstep_truncates_at_newest():
    buf = ReplayBuffer(10, 2, 1, mode="finetune", n_step=3, gamma=0.9)
    for i in range(2):
        buf.push(tr(i, r=1.0))

    class Fixed:
        def integers(self, lo, hi, size):
            return np.array([1])

    b = buf.sample_nstep(1, Fixed(), n=1)
    assert b.mask[0] == 1 and b.discount[0] == pytest.approx(0.9)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 20), st.integers(0, 60))
def test_size_never_exceeds_capacity(cap, n):
    buf = ReplayBuffer(cap, 2, 1)
    for i in range(n):
        buf.push(tr(i))
    assert len(buf) == min(cap, n)
    if n:
        assert buf.all().s[-1, 0] == n - 1


def test_save_load_roundtrip(tmp_path):
    buf = ReplayBuffer(4, 2, 1, mode="finetune")
    for i in range(6):
        buf.push(tr(i, done=i % 2 == 0, r=float(i)))
    buf.save(tmp_path / "b.npz")
    other = ReplayBuffer.load(tmp_path / "b.npz")
    a, b = buf.all(), other.all()
    for k in ("s", "a", "s_next", "done", "r"):
        assert np.array_equal(getattr(a, k), getattr(b, k))
    rng1, rng2 = np.random.default_rng(3), np.random.default_rng(3)
    assert np.array_equal(buf.sample_nstep(5, rng1).ret, other.sample_nstep(5, rng2).ret)
