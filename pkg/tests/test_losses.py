import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from colonnet.losses import (
    FocalTverskyConfig,
    bce_grad,
    bce_loss,
    focal_tversky_grad,
    focal_tversky_loss,
    mse_grad,
    mse_loss,
    tversky_index,
)

t64 = lambda x: torch.tensor(x, dtype=torch.float64)


# --- worked examples ----------------------------------------------------------

def test_mse_examples():
    assert mse_loss(t64([0.1, 0.2, 0.4, 0.6]), t64([0.1, 0.2, 0.4, 0.6])).item() == 0.0
    assert mse_loss(t64([0, 0, 0, 0]), t64([1, 1, 1, 1])).item() == 1.0
    assert mse_loss(t64([0.1, 0.2, 0.4, 0.6]), t64([0.2, 0.2, 0.5, 0.6])).item() == pytest.approx(0.005)


def test_bce_examples():
    assert bce_loss(t64([0.5]), t64([1])).item() == pytest.approx(math.log(2))
    assert bce_loss(t64([0.9]), t64([0])).item() == pytest.approx(2.302585, abs=1e-6)
    assert bce_loss(t64([1 - 1e-12]), t64([1])).item() < 1e-6


def test_bce_logits_matches_probabilities():
    logits = t64([-3.0, -0.2, 0.0, 1.5, 4.0])
    y = t64([0, 1, 1, 0, 1])
    assert bce_loss(logits, y, from_logits=True).item() == pytest.approx(
        bce_loss(torch.sigmoid(logits), y).item(), rel=1e-9)


def test_ftl_worked_example():
    pred = t64([[0.8, 0.2], [0.6, 0.1]])
    true = t64([[1, 0], [1, 0]])
    assert tversky_index(pred, true).item() == pytest.approx(0.7330, abs=5e-5)
    # scalar oracle: TP=1.4, FN=0.6, FP=0.3, TI=1.4/1.91
    assert focal_tversky_loss(pred, true).item() == pytest.approx(0.171942, abs=1e-6)


def test_ftl_perfect_and_total_miss():
    true = t64(np.random.default_rng(0).random((6, 6)) < 0.5)
    assert focal_tversky_loss(true.clone(), true).item() == pytest.approx(0.0, abs=1e-9)
    assert focal_tversky_loss(1 - true, true).item() == pytest.approx(1.0, abs=1e-6)


def test_ftl_shape_mismatch():
    with pytest.raises(ValueError):
        focal_tversky_loss(torch.zeros(3, 3), torch.zeros(3, 4))


def test_ftl_batched_is_mean_of_images():
    rng = np.random.default_rng(1)
    p, y = t64(rng.random((3, 1, 5, 5))), t64(rng.random((3, 1, 5, 5)) < 0.3)
    per = [focal_tversky_loss(p[i], y[i]).item() for i in range(3)]
    assert focal_tversky_loss(p, y, batched=True).item() == pytest.approx(np.mean(per), rel=1e-12)


# --- properties -------------------------------------------------------------------

def test_ftl_permutation_invariant():
    rng = np.random.default_rng(2)
    p, y = rng.random(64), (rng.random(64) < 0.4).astype(float)
    perm = rng.permutation(64)
    a = focal_tversky_loss(t64(p.reshape(8, 8)), t64(y.reshape(8, 8))).item()
    b = focal_tversky_loss(t64(p[perm].reshape(8, 8)), t64(y[perm].reshape(8, 8))).item()
    assert a == pytest.approx(b, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), delta=st.floats(1e-3, 0.5))
def test_ftl_monotone(seed, delta):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.01, 0.99, size=16)
    y = (rng.random(16) < 0.5).astype(float)
    y[0], y[1] = 1.0, 0.0
    base = focal_tversky_loss(t64(p), t64(y)).item()
    up_pos, up_neg = p.copy(), p.copy()
    up_pos[0] = min(1.0, p[0] + delta)
    up_neg[1] = min(1.0, p[1] + delta)
    assert focal_tversky_loss(t64(up_pos), t64(y)).item() <= base + 1e-12
    assert focal_tversky_loss(t64(up_neg), t64(y)).item() >= base - 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_losses_nonnegative_and_bounded(seed):
    rng = np.random.default_rng(seed)
    p, y = rng.random((4, 4)), (rng.random((4, 4)) < 0.5).astype(float)
    ftl = focal_tversky_loss(t64(p), t64(y)).item()
    assert 0.0 <= ftl <= 1.0
    assert bce_loss(t64(p), t64(y)).item() >= 0
    assert mse_loss(t64(p), t64(y)).item() >= 0


# --- closed-form gradients ----------------------------------------------------------

def _autograd(fn, x, *rest):
    x = x.clone().requires_grad_(True)
    fn(x, *rest).backward()
    return x.grad


@pytest.mark.parametrize("seed", range(5))
def test_closed_form_gradients_match_autograd(seed):
    rng = np.random.default_rng(seed)
    p = t64(rng.uniform(0.05, 0.95, (3, 3)))
    y = t64(rng.random((3, 3)) < 0.5)
    torch.testing.assert_close(mse_grad(p, y), _autograd(mse_loss, p, y))
    torch.testing.assert_close(bce_grad(p, y), _autograd(bce_loss, p, y))
    torch.testing.assert_close(focal_tversky_grad(p, y), _autograd(focal_tversky_loss, p, y))


def test_config_validation():
    with pytest.raises(ValueError):
        FocalTverskyConfig(alpha=0)
    with pytest.raises(ValueError):
        FocalTverskyConfig(gamma=-1)
