import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from gaitscore.errors import SequenceTooShortError
from gaitscore.features import clip_features, jcd, motion, stack_features


def brute_jcd(frames):
    k, n, _ = frames.shape
    out = []
    for f in range(k):
        row = []
        for i in range(n):
            for j in range(i + 1, n):
                row.append(np.sqrt(np.sum((frames[f, i] - frames[f, j]) ** 2)))
        out.append(row)
    return np.array(out)


def test_jcd_coincident_joints():
    assert np.all(jcd(np.zeros((4, 5, 3))) == 0.0)


def test_jcd_length_for_24_joints():
    assert jcd(np.random.default_rng(0).normal(size=(2, 24, 3))).shape == (2, 276)


def test_jcd_345_triangle():
    frames = np.array([[[0, 0, 0], [3, 4, 0]]], dtype=float)
    assert jcd(frames)[0, 0] == 5.0


def test_jcd_pair_order_matches_brute_force():
    frames = np.random.default_rng(1).normal(size=(3, 6, 3))
    np.testing.assert_allclose(jcd(frames), brute_jcd(frames), rtol=0, atol=1e-14)


def test_jcd_rigid_invariance():
    rng = np.random.default_rng(2)
    frames = rng.normal(size=(10, 24, 3))
    base = jcd(frames)
    for rot in Rotation.random(50, random_state=3):
        moved = frames @ rot.as_matrix().T + rng.uniform(-100, 100, size=3)
        np.testing.assert_allclose(jcd(moved), base, rtol=0, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jcd_triangle_inequality(seed):
    frames = np.random.default_rng(seed).normal(size=(1, 7, 3))
    d = np.zeros((7, 7))
    i, j = np.triu_indices(7, 1)
    d[i, j] = d[j, i] = jcd(frames)[0]
    assert np.all(d[:, :, None] <= d[:, None, :] + d.T[None, :, :] + 1e-12)


def test_motion_static_is_zero():
    slow, fast = motion(np.ones((9, 4, 3)))
    assert not slow.any() and not fast.any()


def test_motion_uniform_translation_exact():
    k = 200
    frames = np.zeros((k, 24, 3))
    frames[:, :, 0] = np.arange(k)[:, None]
    slow, fast = motion(frames)
    assert slow.shape == (199, 24, 3) and fast.shape == (99, 24, 3)
    assert np.all(slow == [1.0, 0.0, 0.0])
    assert np.all(fast == [2.0, 0.0, 0.0])


@pytest.mark.parametrize("k", [3, 4, 5, 16, 199, 200])
def test_fast_length_counts_odd_frames(k):
    # 1-based frames k = 1, 3, 5, ... up to K-2
    expected = len(range(1, k - 1, 2))
    assert motion(np.zeros((k, 2, 3)))[1].shape[0] == expected == (k - 1) // 2


def test_fast_motion_at_odd_one_based_frames():
    frames = (np.arange(7, dtype=float) ** 2)[:, None, None] * np.ones((7, 1, 3))
    _, fast = motion(frames)
    # S_3-S_1, S_5-S_3 with S_k = (k-1)^2
    np.testing.assert_array_equal(fast[:, 0, 0], [4 - 0, 16 - 4, 36 - 16])


def test_motion_too_short():
    with pytest.raises(SequenceTooShortError):
        motion(np.zeros((2, 3, 3)))


def test_motion_translation_covariance():
    rng = np.random.default_rng(4)
    frames = rng.normal(size=(20, 6, 3))
    s0, f0 = motion(frames)
    s1, f1 = motion(frames + rng.normal(size=3) * 50)
    np.testing.assert_allclose(s1, s0, atol=1e-12)
    np.testing.assert_allclose(f1, f0, atol=1e-12)


def test_motion_time_reversal():
    frames = np.random.default_rng(5).normal(size=(15, 6, 3))
    slow, _ = motion(frames)
    slow_rev, _ = motion(frames[::-1])
    assert np.array_equal(slow_rev, -slow[::-1])


def test_clip_features_shapes_and_stack():
    frames = np.random.default_rng(6).normal(size=(16, 6, 3))
    f = clip_features(frames)
    assert f.jcd.shape == (16, 15) and f.slow.shape == (15, 18) and f.fast.shape == (7, 18)
    batch = stack_features([f, f])
    assert batch.jcd.shape == (2, 16, 15)
