import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from drawdet.detector import DetectorConfig, HeadOutput, encode
from drawdet.geometry import Box, Klass
from drawdet.losses import (OhemConfig, assign_targets, bce, focal_conf_loss, gated_conf_loss, select_hard_examples,
                            selfsup_loss, smooth_l1, supervised_loss, total_loss)

from oracles import sigmoid


def oracle_gated(p, p_hat, pos_t, neg_t):
    q = min(max(p_hat, 1e-7), 1 - 1e-7)
    ct_pos = 1.0 if p_hat >= pos_t else 0.0
    ct_neg = 1.0 if p_hat <= neg_t else 0.0
    return -p * ct_pos * math.log(q) - (1 - p) * ct_neg * math.log(1 - q)


def test_smooth_l1_examples():
    assert smooth_l1(3.0, 3.0) == 0.0
    assert smooth_l1(0.0, 0.5) == 0.125
    assert smooth_l1(2.0, 0.0) == 1.5
    # continuous at unit error
    assert smooth_l1(0.0, 1.0 - 1e-12) == pytest.approx(smooth_l1(0.0, 1.0), abs=1e-11)


def test_gated_examples():
    cfg = OhemConfig(0.5, 0.5)
    assert gated_conf_loss(1, 0.8, cfg) == pytest.approx(0.22314355131, abs=1e-10)
    assert gated_conf_loss(1, 0.3, cfg) == 0.0
    assert gated_conf_loss(0, 0.6, cfg) == 0.0
    # shared boundary point: both gates open at exactly 0.5
    assert gated_conf_loss(1, 0.5, cfg) == pytest.approx(math.log(2))
    assert gated_conf_loss(0, 0.5, cfg) == pytest.approx(math.log(2))


def test_gated_matches_oracle_grid():
    p_hats = np.linspace(0.01, 0.99, 10)
    thresholds = np.linspace(0.0, 1.0, 10)
    for p in (0, 1):
        for ph in p_hats:
            for t in thresholds:
                cfg = OhemConfig(t, 1 - t)
                assert abs(gated_conf_loss(p, ph, cfg) - oracle_gated(p, ph, t, 1 - t)) <= 1e-9


@given(st.sampled_from([0, 1]), st.floats(0.0, 1.0))
def test_open_gates_reduce_to_bce(p, ph):
    cfg = OhemConfig(0.0, 1.0)
    assert gated_conf_loss(p, ph, cfg) == bce(p, ph)


@given(st.sampled_from([0, 1]), st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_gated_nonnegative_and_zero_when_closed(p, ph, pos_t, neg_t):
    cfg = OhemConfig(pos_t, neg_t)
    v = gated_conf_loss(p, ph, cfg)
    assert v >= 0
    if (p == 1 and ph < pos_t) or (p == 0 and ph > neg_t):
        assert v == 0.0


def test_gated_monotone_when_open():
    cfg = OhemConfig(0.2, 0.5)
    xs = np.linspace(0.2, 0.999, 200)
    vals = [gated_conf_loss(1, x, cfg) for x in xs]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_gated_tensor_path_matches_numpy(rng):
    cfg = OhemConfig(0.3, 0.6)
    p = rng.integers(0, 2, 50).astype(np.float64)
    ph = rng.uniform(size=50)
    t = gated_conf_loss(torch.from_numpy(p), torch.from_numpy(ph), cfg).numpy()
    np.testing.assert_allclose(t, gated_conf_loss(p, ph, cfg), rtol=0, atol=1e-12)


def test_total_loss_gradient_matches_finite_differences(rng):
    checked = 0
    while checked < 100:
        p = float(rng.integers(0, 2))
        ph = float(rng.uniform(0.02, 0.98))
        pos_t, neg_t = rng.uniform(size=2)
        gt = rng.normal(size=4) * 2
        pred = rng.normal(size=4) * 2
        beta = float(rng.uniform(0, 4))
        if min(abs(ph - pos_t), abs(ph - neg_t)) < 1e-3 or np.any(np.abs(np.abs(gt - pred) - 1) < 1e-3):
            continue
        cfg = OhemConfig(pos_t, neg_t)

        def f(ph_, pred_):
            conf = gated_conf_loss(p, ph_, cfg)
            reg = smooth_l1(torch.from_numpy(gt), pred_).sum() if isinstance(pred_, torch.Tensor) \
                else float(np.sum(smooth_l1(gt, pred_)))
            return total_loss(conf, reg, beta).total

        ph_t = torch.tensor(ph, dtype=torch.float64, requires_grad=True)
        pred_t = torch.tensor(pred, dtype=torch.float64, requires_grad=True)
        g_ph, g_pred = torch.autograd.grad(f(ph_t, pred_t), (ph_t, pred_t))
        h = 1e-6
        fd_ph = (f(ph + h, pred) - f(ph - h, pred)) / (2 * h)
        assert abs(fd_ph - g_ph.item()) <= 1e-4 * max(abs(fd_ph), 1e-8) or abs(fd_ph - g_ph.item()) < 1e-9
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            fd = (f(ph, pred + e) - f(ph, pred - e)) / (2 * h)
            assert abs(fd - g_pred[k].item()) <= 1e-4 * max(abs(fd), 1e-8) or abs(fd - g_pred[k].item()) < 1e-9
        checked += 1


def oracle_hard_examples(losses, positives, ratio, min_neg):
    negs = [i for i in range(len(losses)) if i not in set(positives)]
    negs.sort(key=lambda i: (-losses[i], i))
    k = min(len(negs), max(ratio * len(set(positives)), min_neg))
    return sorted(set(positives) | set(negs[:k]))


def test_select_hard_examples_examples(rng):
    losses = rng.uniform(size=100)
    got = select_hard_examples(losses, [], OhemConfig(min_neg=16))
    assert len(got) == 16
    assert set(got) == set(np.argsort(-losses)[:16])
    got = select_hard_examples(rng.uniform(size=100), [1, 2, 3, 4], OhemConfig(neg_pos_ratio=3, min_neg=0))
    assert len(got) == 16 and {1, 2, 3, 4} <= set(got)


def test_select_hard_examples_matches_oracle_with_ties(rng):
    for _ in range(300):
        n = int(rng.integers(1, 60))
        losses = np.round(rng.uniform(size=n), 1)  # plenty of ties
        positives = list(rng.choice(n, size=int(rng.integers(0, min(n, 8) + 1)), replace=False))
        ratio, min_neg = int(rng.integers(1, 5)), int(rng.integers(0, 20))
        cfg = OhemConfig(neg_pos_ratio=ratio, min_neg=min_neg)
        got = select_hard_examples(losses, positives, cfg)
        assert list(got) == oracle_hard_examples(list(losses), positives, ratio, min_neg)
        n_neg = n - len(set(positives))
        assert len(got) == len(set(positives)) + min(n_neg, max(ratio * len(set(positives)), min_neg))


def test_total_loss_examples():
    assert total_loss(1.3, 0.7, 0.0).total == 1.3
    assert total_loss(1.0, 0.5, 2.0).total == 2.0
    assert total_loss(0.0, 0.0, 2.0).total == 0.0
    with pytest.raises(ValueError):
        total_loss(-1.0, 0.0, 1.0)


def test_focal_examples():
    assert focal_conf_loss(1, 0.5, 0.25, 2.0) == pytest.approx(0.25 * 0.25 * -math.log(0.5))
    for p, ph in [(0, 0.3), (1, 0.3), (1, 0.9)]:
        assert focal_conf_loss(p, ph, None, 0.0) == pytest.approx(bce(p, ph), abs=1e-15)
    assert focal_conf_loss(1, 1 - 1e-9, 0.25, 2.0) < 1e-12


# ---- supervised loss -------------------------------------------------------

def _output(cfg, rng, dtype=torch.float64, scale=1.0):
    conf = [torch.from_numpy(rng.normal(size=(1, g, g)) * scale) for g in cfg.grid_sizes()]
    reg = [torch.from_numpy(rng.normal(size=(1, 4, g, g)) * 0.5) for g in cfg.grid_sizes()]
    return HeadOutput(Klass.FACE, cfg.strides, conf, reg)


def oracle_supervised(out, gts, cfg, beta):
    """Per-location loops: own assignment, own BCE and smooth-L1."""
    scale = cfg.input_size / 256
    owner = {}
    for k, b in enumerate(gts):
        side = max(b.w, b.h)
        lvl = 0 if side < 64 * scale else (1 if side < 128 * scale else 2)
        s, g = cfg.strides[lvl], cfg.input_size // cfg.strides[lvl]
        cc = min(max(int(b.cx // s), 0), g - 1)
        rc = min(max(int(b.cy // s), 0), g - 1)
        for r in range(rc - 1, rc + 2):
            for c in range(cc - 1, cc + 2):
                if 0 <= r < g and 0 <= c < g:
                    key = (lvl, r, c)
                    if key not in owner or b.w * b.h < gts[owner[key]].w * gts[owner[key]].h:
                        owner[key] = k
    n_pos = max(1, len(owner))
    conf = reg = 0.0
    for lvl, s in enumerate(cfg.strides):
        g = cfg.input_size // s
        for r in range(g):
            for c in range(g):
                z = out.conf[lvl][0, r, c].item()
                y = 1.0 if (lvl, r, c) in owner else 0.0
                q = sigmoid(z)
                conf += -(y * math.log(q) + (1 - y) * math.log(1 - q))
                if y:
                    b = gts[owner[(lvl, r, c)]]
                    tgt = (b.cx / s - c, b.cy / s - r, math.log(b.w / s), math.log(b.h / s))
                    for t, j in zip(tgt, range(4)):
                        e = abs(t - out.reg[lvl][0, j, r, c].item())
                        reg += 0.5 * e * e if e < 1 else e - 0.5
    return conf / n_pos, reg / n_pos, conf / n_pos + beta * reg / n_pos


def test_supervised_loss_matches_loop_oracle(rng):
    cfg = DetectorConfig(input_size=64)
    for _ in range(20):
        out = _output(cfg, rng)
        gts = []
        for _ in range(int(rng.integers(0, 5))):
            w, h = rng.uniform(3, 50, size=2)
            gts.append(Box(float(rng.uniform(w / 2, 64 - w / 2)), float(rng.uniform(h / 2, 64 - h / 2)),
                           float(w), float(h)))
        got = supervised_loss(out, [gts], cfg, beta=1.5)
        c, r, t = oracle_supervised(out, gts, cfg, 1.5)
        assert float(got.conf) == pytest.approx(c, abs=1e-6)
        assert float(got.reg) == pytest.approx(r, abs=1e-6)
        assert float(got.total) == pytest.approx(t, abs=1e-6)


def test_supervised_loss_perfect_negative_fit():
    cfg = DetectorConfig(input_size=64)
    conf = [torch.full((1, g, g), -60.0, dtype=torch.float64) for g in cfg.grid_sizes()]
    reg = [torch.zeros(1, 4, g, g, dtype=torch.float64) for g in cfg.grid_sizes()]
    loss = supervised_loss(HeadOutput(Klass.FACE, cfg.strides, conf, reg), [[]], cfg)
    assert float(loss.total) < 1e-20


def test_supervised_zero_regression_residual(rng):
    cfg = DetectorConfig(input_size=64)
    gt = Box(30.0, 22.0, 12.0, 10.0)
    t = assign_targets([gt], cfg)
    assert t.positive.sum() == 9
    out = _output(cfg, rng)
    flat_reg = out.flat_reg()[0]
    # write the encoded targets into the positive cells through the level views
    offsets = np.cumsum([0] + [g * g for g in cfg.grid_sizes()])
    for loc in np.flatnonzero(t.positive):
        lvl = int(np.searchsorted(offsets, loc, side="right") - 1)
        g = cfg.grid_sizes()[lvl]
        r, c = divmod(loc - offsets[lvl], g)
        out.reg[lvl][0, :, r, c] = torch.tensor(encode(gt, c, r, cfg.strides[lvl]), dtype=torch.float64)
    assert float(supervised_loss(out, [[gt]], cfg).reg) == pytest.approx(0.0, abs=1e-12)
    del flat_reg


def test_assignment_prefers_smaller_box():
    cfg = DetectorConfig(input_size=64)
    big, small = Box(20.0, 20.0, 14.0, 14.0), Box(21.0, 20.0, 8.0, 8.0)
    t = assign_targets([big, small], cfg)
    assert set(t.gt_index[t.positive]) == {1}


def test_selfsup_loss_negatives_only_path(rng):
    cfg = DetectorConfig(input_size=64)
    out = _output(cfg, rng)
    loss = selfsup_loss(out, [[]], cfg, OhemConfig(0.5, 0.5, 3, 16), beta=2.0)
    p_hat = torch.sigmoid(out.flat_logits()[0]).numpy()
    per = gated_conf_loss(np.zeros_like(p_hat), p_hat, OhemConfig(0.5, 0.5))
    expected = np.sort(per)[::-1][:16].mean()
    assert float(loss.conf) == pytest.approx(expected, abs=1e-9)
    assert float(loss.reg) == 0.0


def test_selfsup_focal_variant_runs(rng):
    cfg = DetectorConfig(input_size=64)
    out = _output(cfg, rng)
    loss = selfsup_loss(out, [[Box(20.0, 20.0, 10.0, 12.0)]], cfg, OhemConfig(), beta=2.0, loss="focal")
    assert float(loss.total) > 0
