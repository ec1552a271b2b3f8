import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaitscore.losses import EPS, LossConfig, focal, hybrid, hybrid_logits, ordinal, softmax

P = np.array([0.1, 0.2, 0.5, 0.2])

# Scalar evaluations: 0.25 * 0.5**2 * ln 2, ln(2) / 4, ln(10)
FOCAL_GOLDEN = 0.25 * 0.25 * np.log(2.0)
ORDINAL_W0_GOLDEN = np.log(2.0) / 4
ORDINAL_W3_GOLDEN = np.log(10.0)


def test_golden_values_are_the_stated_decimals():
    assert FOCAL_GOLDEN == pytest.approx(0.0433217, abs=1e-7)
    assert ORDINAL_W0_GOLDEN == pytest.approx(0.1732868, abs=1e-7)
    assert ORDINAL_W3_GOLDEN == pytest.approx(2.3025851, abs=1e-7)


def test_focal_golden():
    assert focal(2, P) == pytest.approx(FOCAL_GOLDEN, abs=1e-12)


def test_focal_accepts_one_hot():
    assert focal(np.eye(4)[2], P) == focal(2, P)


def test_focal_perfect_prediction():
    assert focal(1, [0.0, 1.0, 0.0, 0.0]) < 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_focal_degenerates_to_cross_entropy(seed):
    p = softmax(np.random.default_rng(seed).normal(size=4))
    cfg = LossConfig(alpha=1.0, gamma=0.0)
    assert focal(3, p, cfg) == pytest.approx(-np.log(p[3]), rel=1e-12)


def test_ordinal_golden_w0():
    assert ordinal(2, P) == pytest.approx(ORDINAL_W0_GOLDEN, abs=1e-12)


def test_ordinal_golden_w3():
    assert ordinal(3, [0.7, 0.1, 0.1, 0.1]) == pytest.approx(ORDINAL_W3_GOLDEN, abs=1e-12)


def test_ordinal_argmax_tie_takes_smallest_index():
    # argmax tie between 1 and 2 -> predicted 1, w = |3 - 1| = 2
    p = [0.1, 0.4, 0.4, 0.1]
    assert ordinal(3, p) == pytest.approx(-3 / 4 * np.log(0.1))


def test_ordinal_w0_is_ce_over_c():
    p = np.array([0.05, 0.6, 0.25, 0.1])
    assert ordinal(1, p) == pytest.approx(-np.log(0.6) / 4, rel=1e-14)


def test_ordinal_monotone_in_distance():
    # p_t = 0.2 fixed, move the argmax further from the true class 0
    losses = []
    for pred in (1, 2, 3):
        p = np.full(4, 0.1)
        p[0] = 0.2
        p[pred] = 0.6
        losses.append(ordinal(0, p))
    assert losses[0] < losses[1] < losses[2]


def test_hybrid_golden_sum():
    loss, _ = hybrid(2, P, LossConfig(lam=1.0))
    assert loss == pytest.approx(0.2166085, abs=1e-6)
    assert loss == pytest.approx(FOCAL_GOLDEN + ORDINAL_W0_GOLDEN, abs=1e-12)


def test_hybrid_lambda_zero_is_focal():
    loss, _ = hybrid(2, P, LossConfig(lam=0.0))
    assert loss == focal(2, P)


def test_loss_modes():
    ce, _ = hybrid(2, P, LossConfig(mode="ce"))
    assert ce == pytest.approx(np.log(2.0))
    only_focal, _ = hybrid(2, P, LossConfig(mode="focal"))
    assert only_focal == focal(2, P)
    only_ord, _ = hybrid(2, P, LossConfig(mode="ordinal"))
    assert only_ord == ordinal(2, P)


def test_rejects_unnormalized():
    with pytest.raises(ValueError):
        focal(0, [0.5, 0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        focal(0, [1.2, -0.2, 0, 0])


def test_batch_matches_single():
    rng = np.random.default_rng(0)
    p = softmax(rng.normal(size=(6, 4)))
    y = rng.integers(0, 4, size=6)
    batch = hybrid(y, p)[0]
    assert np.allclose(batch, [hybrid(y[i], p[i])[0] for i in range(6)], rtol=0, atol=0)


def fd_logits(y, z, cfg, pred, h=1e-6):
    g = np.zeros_like(z)
    for j in range(z.size):
        e = np.zeros_like(z)
        e[j] = h
        g[j] = (hybrid_logits(y, z + e, cfg, pred)[0] - hybrid_logits(y, z - e, cfg, pred)[0]) / (2 * h)
    return g


@pytest.mark.parametrize("mode", ["ce", "focal", "ordinal", "focal+ordinal"])
def test_logit_gradient_modes(mode):
    rng = np.random.default_rng(11)
    cfg = LossConfig(mode=mode, lam=0.7)
    for _ in range(50):
        z = rng.normal(scale=2, size=4)
        y = int(rng.integers(4))
        pred = int(np.argmax(z))
        _, g = hybrid_logits(y, z, cfg)
        np.testing.assert_allclose(g, fd_logits(y, z, cfg, pred), rtol=1e-5, atol=1e-8)


def test_gradient_wrt_p_is_only_on_true_class():
    _, g = hybrid(1, P)
    assert g[0] == g[2] == g[3] == 0.0
    # d/dq [-a (1-q)^2 ln q - (1/4) ln q] at q = 0.2 (argmax 2, w = 1 -> 2/4)
    q = 0.2
    expected = 0.25 * (2 * (1 - q) * np.log(q) - (1 - q) ** 2 / q) - 0.5 / q
    assert g[1] == pytest.approx(expected, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_focal_to_ce_ratio_decreasing(q1, q2):
    if abs(q1 - q2) < 1e-6:
        return
    lo, hi = sorted((q1, q2))
    ratio = lambda q: focal(0, [q, 1 - q]) / -np.log(q)
    assert ratio(lo) > ratio(hi)
    assert ratio(lo) == pytest.approx(0.25 * (1 - lo) ** 2, rel=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4), st.integers(0, 3))
def test_losses_non_negative(z, y):
    p = softmax(np.array(z))
    assert focal(y, p) >= 0 and ordinal(y, p) >= 0 and hybrid(y, p)[0] >= 0


def test_zero_loss_only_at_certainty():
    assert hybrid(0, [1 - EPS / 2, EPS / 2, 0, 0])[0] < 1e-10
    assert hybrid(0, [0.999, 0.001, 0, 0])[0] > 0


def test_argmax_weight_invariant_to_monotone_rescaling():
    p = np.array([0.1, 0.3, 0.45, 0.15])
    q = p ** 3 / np.sum(p ** 3)
    # same argmax and true-class weight (1 + w) regardless of the rescaling
    ratio_p = ordinal(0, p) / -np.log(p[0])
    ratio_q = ordinal(0, q) / -np.log(q[0])
    assert ratio_p == pytest.approx(ratio_q) == pytest.approx(3 / 4)


def test_config_validation():
    for kwargs in ({"alpha": 0}, {"gamma": -1}, {"lam": -0.1}, {"n_classes": 1}, {"mode": "mse"}):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)


def test_hybrid_logit_gradient_1000_draws():
    rng = np.random.default_rng(2024)
    cfg = LossConfig(lam=1.0)
    worst = 0.0
    for _ in range(1000):
        z = rng.normal(scale=1.5, size=4)
        y = int(rng.integers(4))
        _, g = hybrid_logits(y, z, cfg)
        num = fd_logits(y, z, cfg, int(np.argmax(z)))
        worst = max(worst, np.max(np.abs(g - num)) / max(np.max(np.abs(g)), np.max(np.abs(num))))
    assert worst <= 1e-6
