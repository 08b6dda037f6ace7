import math

import numpy as np
import pytest

from spectrack import autodiff as ad
from spectrack import head as hd
from spectrack.errors import DimensionError, ValidationError
from spectrack.nn import param


def test_single_cell_focal_loss_is_quarter_log_two():
    # one positive cell at p = 0.5: loss = -(1-p)^2 log p = 0.25 ln 2
    score = ad.tensor(np.array([[0.5]]))
    loss = hd.focal_loss(score, (0, 0))
    assert abs(loss.data - 0.25 * math.log(2.0)) < 1e-12


def test_focal_loss_falls_as_the_positive_sharpens():
    values = []
    for p in (0.2, 0.5, 0.9, 0.99):
        score = np.full((4, 4), 0.01)
        score[2, 1] = p
        values.append(float(hd.focal_loss(ad.tensor(score), (2, 1)).data))
    assert values == sorted(values, reverse=True)


def test_focal_loss_survives_saturated_scores():
    score = np.zeros((3, 3))
    loss = hd.focal_loss(ad.tensor(score), (1, 1))
    assert np.isfinite(loss.data)
    assert abs(loss.data - (-math.log(hd._PROB_EPS))) < 1e-9


def test_focal_loss_matches_loop_oracle():
    rng = np.random.default_rng(3)
    g = 6
    score = rng.uniform(0.05, 0.95, size=(g, g))
    center = (2, 4)
    radius = 1.5
    heat = hd.gaussian_heatmap(g, center, radius)
    want = 0.0
    for i in range(g):
        for j in range(g):
            p = score[i, j]
            if (i, j) == center:
                want -= (1.0 - p) ** 2 * math.log(p)
            else:
                want -= (1.0 - heat[i, j]) ** 4 * p * p * math.log(1.0 - p)
    got = hd.focal_loss(ad.tensor(score), center, radius)
    assert abs(got.data - want) < 1e-12


def test_focal_gradients():
    rng = np.random.default_rng(5)

    def f(s):
        return hd.focal_loss(s, (1, 2), 1.5)

    report = ad.grad_check(f, param(rng.uniform(0.1, 0.9, size=(4, 4))))
    assert report.passed, report


def test_heatmap_peaks_at_exactly_one():
    heat = hd.gaussian_heatmap(8, (3, 5), 2.0)
    assert heat[3, 5] == 1.0
    assert heat.max() == 1.0
    assert heat.min() > 0.0
    # symmetric around the centre where the grid allows
    assert abs(heat[3, 4] - heat[3, 6]) < 1e-15
    assert abs(heat[2, 5] - heat[4, 5]) < 1e-15


def test_heatmap_validation():
    with pytest.raises(ValidationError):
        hd.gaussian_heatmap(4, (4, 0), 1.0)
    with pytest.raises(ValidationError):
        hd.gaussian_heatmap(4, (0, 0), 0.0)


def test_giou_loss_matches_the_hand_case():
    # corners [0,0,2,2] vs [1,1,3,3]: iou 1/7, hull 9, union 7
    pred = ad.tensor(np.array([1.0, 1.0, 2.0, 2.0]))
    loss = hd.giou_loss(pred, np.array([2.0, 2.0, 2.0, 2.0]))
    want = 1.0 - (1.0 / 7.0 - 2.0 / 9.0)
    assert abs(loss.data - want) < 1e-12
    assert loss.shape == ()


def test_giou_loss_vanishes_for_identical_boxes():
    box = np.array([5.0, 7.0, 3.0, 4.0])
    loss = hd.giou_loss(ad.tensor(box.copy()), box)
    assert abs(loss.data) < 1e-12


def test_giou_validation():
    with pytest.raises(ValidationError):
        hd.giou_loss(ad.tensor(np.array([1.0, 1.0, 0.0, 2.0])), np.array([1.0, 1.0, 2.0, 2.0]))
    with pytest.raises(DimensionError):
        hd.giou_loss(ad.tensor(np.zeros((2, 2))), np.array([1.0, 1.0, 2.0, 2.0]))


def test_giou_gradients_including_disjoint_boxes():
    gt = np.array([10.0, 10.0, 4.0, 4.0])
    for start in ([9.0, 11.0, 5.0, 3.0], [30.0, 30.0, 4.0, 4.0]):
        def f(b):
            return hd.giou_loss(b, gt)

        report = ad.grad_check(f, param(np.array(start)))
        assert report.passed, report


def test_combined_weighting_is_affine():
    total = hd.combine_losses(
        ad.tensor(np.array(0.2)), ad.tensor(np.array(0.05)), ad.tensor(np.array(0.3)),
        hd.LossWeights(1.0, 14.0, 1.0),
    )
    assert abs(total.data - 1.2) < 1e-12


def test_build_targets_places_the_cell_and_fractions():
    t = hd.build_targets((30.0, 27.0, 20.0, 16.0), 4, 64)
    assert t.cell == (1, 1)
    assert abs(t.offset_frac[0] - 0.875) < 1e-12
    assert abs(t.offset_frac[1] - 0.6875) < 1e-12
    assert t.size_frac == (0.3125, 0.25)
    assert t.heatmap[1, 1] == 1.0
    corner = hd.build_targets((0.0, 0.0, 8.0, 8.0), 4, 64)
    assert corner.cell == (0, 0)
    far = hd.build_targets((200.0, 200.0, 8.0, 8.0), 4, 64)
    assert far.cell == (3, 3)
    with pytest.raises(ValidationError):
        hd.build_targets((10.0, 10.0, -1.0, 4.0), 4, 64)


def test_decode_box_applies_offset_and_clamps():
    g, side = 2, 64
    score = np.array([[0.1, 0.2], [0.9, 0.3]])
    size = np.zeros((2, g, g))
    offset = np.zeros((2, g, g))
    size[0, 1, 0] = 0.5
    size[1, 1, 0] = 0.25
    offset[0, 1, 0] = 0.25
    offset[1, 1, 0] = 0.5
    box, peak, cell = hd.decode_box(score, size, offset, side)
    assert cell == (1, 0)
    assert peak == 0.9
    # raw centre (8, 48) with a width-32 box clips at the left edge
    assert box == (12.0, 48.0, 24.0, 16.0)


def test_head_forward_shapes_and_decode_consistency():
    rng = np.random.default_rng(7)
    params = hd.init_head_params(8, rng)
    feature = ad.tensor(rng.normal(size=(4, 4, 8)))
    out = hd.head_forward(feature, params, 64)
    assert out.score.shape == (4, 4)
    assert out.size.shape == (2, 4, 4)
    assert out.offset.shape == (2, 4, 4)
    assert np.all(out.score.data > 0.0) and np.all(out.score.data < 1.0)
    box, peak, cell = hd.decode_box(out.score.data, out.size.data, out.offset.data, 64)
    assert out.box == box and out.peak_score == peak and out.peak_cell == cell
    with pytest.raises(DimensionError):
        hd.head_forward(ad.tensor(rng.normal(size=(4, 5, 8))), params, 64)


def test_total_loss_parts_match_hand_recomputation():
    rng = np.random.default_rng(9)
    params = hd.init_head_params(8, rng)
    feature = ad.tensor(rng.normal(size=(4, 4, 8)))
    out = hd.head_forward(feature, params, 64)
    gt = (30.0, 27.0, 20.0, 16.0)
    total, parts = hd.total_loss(out, gt)

    t = hd.build_targets(gt, 4, 64)
    i, j = t.cell
    pred4 = np.array([
        out.size.data[0, i, j], out.size.data[1, i, j],
        out.offset.data[0, i, j], out.offset.data[1, i, j],
    ])
    target4 = np.array([*t.size_frac, *t.offset_frac])
    assert abs(parts["l1"] - 0.25 * np.abs(pred4 - target4).sum()) < 1e-12

    cell = 16.0
    pred_box = np.array([
        (j + out.offset.data[0, i, j]) * cell,
        (i + out.offset.data[1, i, j]) * cell,
        out.size.data[0, i, j] * 64.0,
        out.size.data[1, i, j] * 64.0,
    ])
    manual_giou = hd.giou_loss(ad.tensor(pred_box), np.array(gt))
    assert abs(parts["giou"] - manual_giou.data) < 1e-12

    radius = max(1.0, min(gt[2], gt[3]) * 4 / 64.0 / 3.0)
    manual_focal = hd.focal_loss(out.score, t.cell, radius)
    assert abs(parts["focal"] - manual_focal.data) < 1e-12
    assert abs(parts["total"] - (parts["focal"] + 14.0 * parts["l1"] + parts["giou"])) < 1e-12
    assert abs(total.data - parts["total"]) < 1e-15


def test_total_loss_gradients_reach_the_feature():
    rng = np.random.default_rng(11)
    params = hd.init_head_params(6, rng)

    def f(feature):
        out = hd.head_forward(feature, params, 64)
        total, _ = hd.total_loss(out, (30.0, 27.0, 20.0, 16.0))
        return total

    report = ad.grad_check(f, param(rng.normal(size=(4, 4, 6))), sample=40, rng=np.random.default_rng(0))
    assert report.passed, report
