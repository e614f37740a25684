import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudosal.errors import InvalidArgument
from pseudosal.objective import (
    ContingencyTotals,
    LossConfig,
    f_beta,
    f_beta_from_pr,
    fusion_gradient,
    fusion_loss,
    image_level_loss,
    loss_gradient,
    precision_recall,
    soft_contingency,
    torch_fbeta_loss,
)


def test_f_beta_scalar_value():
    # 1.3 * 0.8 * 0.5 / (0.3 * 0.8 + 0.5) = 0.52 / 0.74
    assert f_beta_from_pr(0.8, 0.5, 0.3) == pytest.approx(0.52 / 0.74, abs=1e-12)


def test_soft_contingency_matches_loop(rng):
    p = rng.random((8, 8))
    t = (rng.random((8, 8)) > 0.5).astype(np.uint8)
    tp = fp = fn = 0.0
    for i in range(8):
        for j in range(8):
            tp += p[i, j] * t[i, j]
            fp += p[i, j] * (1 - t[i, j])
            fn += (1 - p[i, j]) * t[i, j]
    c = soft_contingency(p, t)
    assert c.tp == pytest.approx(tp, abs=1e-12)
    assert c.fp == pytest.approx(fp, abs=1e-12)
    assert c.fn == pytest.approx(fn, abs=1e-12)


def test_perfect_prediction_scores_one():
    t = np.zeros((4, 4), np.uint8)
    t[1:3, 1:3] = 1
    assert image_level_loss(t.astype(float), t) == pytest.approx(0.0, abs=1e-6)


def test_empty_target_and_prediction_is_perfect():
    z = np.zeros((4, 4))
    assert f_beta(soft_contingency(z, z.astype(np.uint8))) == pytest.approx(1.0)


def test_shape_mismatch_rejected():
    with pytest.raises(InvalidArgument):
        soft_contingency(np.zeros((2, 2)), np.zeros((2, 3)))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        LossConfig(beta_sq=0)
    with pytest.raises(InvalidArgument):
        LossConfig(epsilon=0)


def test_gradient_against_finite_differences():
    h = 1e-4
    worst = 0.0
    for seed in range(100):
        r = np.random.default_rng(seed)
        p = r.uniform(0.05, 0.95, (16, 16))
        t = (r.random((16, 16)) > r.uniform(0.2, 0.8)).astype(np.uint8)
        g = loss_gradient(p, t)
        num = np.empty_like(p)
        for idx in np.ndindex(p.shape):
            up, dn = p.copy(), p.copy()
            up[idx] += h
            dn[idx] -= h
            num[idx] = (image_level_loss(up, t) - image_level_loss(dn, t)) / (2 * h)
        rel = np.abs(g - num) / np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-12)
        worst = max(worst, float(rel.max()))
    assert worst < 1e-4


def test_torch_loss_and_autograd_agree_with_numpy(rng):
    p = rng.uniform(0.05, 0.95, (3, 8, 8))
    t = (rng.random((3, 8, 8)) > 0.5).astype(np.uint8)
    pt = torch.tensor(p, requires_grad=True)
    loss = torch_fbeta_loss(pt, torch.tensor(t))
    loss.sum().backward()
    for b in range(3):
        assert float(loss[b].detach()) == pytest.approx(image_level_loss(p[b], t[b]), abs=1e-12)
        np.testing.assert_allclose(pt.grad[b].numpy(), loss_gradient(p[b], t[b]), rtol=1e-9, atol=1e-12)


def test_fusion_loss_is_mean_of_targets(rng):
    p = rng.random((6, 6))
    ts = [(rng.random((6, 6)) > 0.5).astype(np.uint8) for _ in range(3)]
    assert fusion_loss(p, ts) == pytest.approx(np.mean([image_level_loss(p, t) for t in ts]))
    np.testing.assert_allclose(fusion_gradient(p, ts), np.mean([loss_gradient(p, t) for t in ts], 0))
    with pytest.raises(InvalidArgument):
        fusion_loss(p, [])


@settings(max_examples=60, deadline=None)
@given(tp=st.floats(0, 100), fp=st.floats(0, 100), fn=st.floats(0, 100))
def test_f_beta_bounded(tp, fp, fn):
    f = f_beta(ContingencyTotals(tp, fp, fn))
    assert 0.0 <= f <= 1.0 + 1e-12
    pr = precision_recall(ContingencyTotals(tp, fp, fn))
    assert all(0 <= v <= 1 + 1e-12 for v in pr)
