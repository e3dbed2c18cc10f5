import numpy as np
import pytest

from liverseg import metrics as m

import oracles


def test_confusion_identity():
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[2:5, 2:5] = 1
    c = m.confusion(gt, gt)
    assert (c.tp, c.fp, c.fn) == (9, 0, 0)
    assert c.total == 64


def test_confusion_all_ones_vs_zeros():
    pred = np.ones((4, 4), dtype=np.uint8)
    gt = np.zeros((4, 4), dtype=np.uint8)
    c = m.confusion(pred, gt)
    assert (c.tp, c.fp, c.fn, c.tn) == (0, 16, 0, 0)


def test_confusion_shape_mismatch():
    with pytest.raises(ValueError, match="shape mismatch"):
        m.confusion(np.zeros((3, 3)), np.zeros((4, 4)))


def test_confusion_matches_loop_oracle():
    rng = np.random.default_rng(1)
    for _ in range(25):
        pred, gt = oracles.random_mask_pair(rng, size=16)
        c = m.confusion(pred, gt)
        assert (c.tp, c.fp, c.fn, c.tn) == oracles.confusion_loop(pred, gt)


def test_dice_hand_value():
    assert m.dice(m.ConfusionCounts(tp=2, fp=2, fn=2, tn=10)) == 0.5


def test_dice_both_empty_convention():
    assert m.dice(m.ConfusionCounts(tp=0, fp=0, fn=0, tn=16)) == 1.0
    assert m.iou(m.ConfusionCounts(tp=0, fp=0, fn=0, tn=16)) == 1.0


def test_iou_hand_value():
    assert m.iou(m.ConfusionCounts(tp=1, fp=1, fn=2, tn=5)) == 0.25


def test_dice_iou_identity():
    rng = np.random.default_rng(2)
    for _ in range(50):
        pred, gt = oracles.random_mask_pair(rng, size=16)
        c = m.confusion(pred, gt)
        d, i = m.dice(c), m.iou(c)
        assert abs(d - 2 * i / (1 + i)) < 1e-12
        assert d >= i


def test_rates_hand_values():
    c = m.ConfusionCounts(tp=8, fp=0, fn=0, tn=8)
    assert m.accuracy(c) == m.precision(c) == m.sensitivity(c) == m.specificity(c) == 1.0
    assert m.precision(m.ConfusionCounts(tp=3, fp=1, fn=0, tn=0)) == 0.75


def test_rates_zero_denominator_flagged():
    undefined = []
    c = m.ConfusionCounts(tp=0, fp=0, fn=3, tn=5)
    assert m.precision(c, undefined) == 1.0
    assert undefined == ["precision"]


def test_boundary_square():
    mask = np.zeros((5, 5), dtype=np.uint8)
    mask[1:4, 1:4] = 1
    b = m.extract_boundary(mask)
    assert len(b) == 8  # center excluded
    assert (2, 2) not in {tuple(p) for p in b.points}


def test_boundary_single_pixel_and_border():
    mask = np.zeros((4, 4), dtype=np.uint8)
    mask[2, 2] = 1
    assert {tuple(p) for p in m.extract_boundary(mask).points} == {(2, 2)}
    full = np.ones((3, 3), dtype=np.uint8)
    assert len(m.extract_boundary(full)) == 8  # ring; interior pixel excluded


def test_boundary_matches_scan_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        mask = (rng.random((12, 12)) < 0.4).astype(np.uint8)
        got = {tuple(p) for p in m.extract_boundary(mask).points}
        assert got == set(oracles.boundary_scan(mask))


def test_hd95_identical_masks():
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[3:7, 3:7] = 1
    value, fallback = m.hd95(mask, mask)
    assert value == 0.0 and not fallback


def test_hd95_single_pixels():
    a = np.zeros((8, 8), dtype=np.uint8)
    b = np.zeros((8, 8), dtype=np.uint8)
    a[0, 0] = 1
    b[3, 4] = 1
    value, _ = m.hd95(a, b)
    assert value == pytest.approx(5.0)


def test_hd95_empty_conventions():
    empty = np.zeros((10, 10), dtype=np.uint8)
    mask = empty.copy()
    mask[4, 4] = 1
    assert m.hd95(empty, empty) == (0.0, False)
    value, fallback = m.hd95(mask, empty)
    assert fallback and value == pytest.approx(np.hypot(9, 9))


def test_hd95_symmetry_and_spacing():
    rng = np.random.default_rng(4)
    pred, gt = oracles.random_mask_pair(rng, size=12)
    assert m.hd95(pred, gt)[0] == pytest.approx(m.hd95(gt, pred)[0])
    v1, _ = m.hd95(pred, gt, spacing=(2.0, 2.0))
    v0, _ = m.hd95(pred, gt, spacing=(1.0, 1.0))
    assert v1 == pytest.approx(2 * v0)


def test_hd95_matches_bruteforce():
    rng = np.random.default_rng(5)
    for _ in range(30):
        pred, gt = oracles.random_mask_pair(rng, size=24, p=0.2)
        got, _ = m.hd95(pred, gt)
        assert got == pytest.approx(oracles.hd95_bruteforce(pred, gt), abs=1e-9)


def test_hd95_monotone_under_translation():
    gt = np.zeros((40, 40), dtype=np.uint8)
    gt[2:5, 2:5] = 1
    values = []
    for shift in range(10, 30, 4):
        pred = np.zeros_like(gt)
        pred[shift:shift + 3, shift:shift + 3] = 1
        values.append(m.hd95(pred, gt)[0])
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))


def test_evaluate_split_perfect():
    masks = [np.zeros((8, 8), dtype=np.uint8) for _ in range(3)]
    for mk in masks:
        mk[2:4, 2:4] = 1
    report = m.evaluate_split(masks, masks)
    assert all(report.means[k] == 1.0 for k in ("dice", "iou", "accuracy"))
    assert report.means["hd95"] == 0.0


def test_evaluate_split_mean():
    gt = np.zeros((4, 4), dtype=np.uint8)
    gt[0:2, 0:2] = 1
    half = gt.copy()
    half[1, :] = 0  # dice 2*2/(2+4) ... pred 2 px overlap 2 -> 2*2/(2+4)=2/3
    report = m.evaluate_split([gt, half], [gt, gt])
    expected = (1.0 + m.dice(m.confusion(half, gt))) / 2
    assert report.means["dice"] == pytest.approx(expected)


def test_evaluate_split_misaligned():
    with pytest.raises(ValueError, match="misaligned"):
        m.evaluate_split([np.zeros((2, 2))], [])


def test_report_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(6)
    preds, gts = zip(*[oracles.random_mask_pair(rng, 16) for _ in range(4)])
    report = m.evaluate_split(list(preds), list(gts))
    path = tmp_path / "report.csv"
    report.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("slice,dice,iou,hd95")
    assert len(lines) == 6  # header + 4 slices + mean row


def test_metric_ranges_property():
    rng = np.random.default_rng(7)
    for _ in range(50):
        pred, gt = oracles.random_mask_pair(rng, 10)
        sm = m.slice_metrics(pred, gt)
        for name in ("dice", "iou", "accuracy", "precision", "sensitivity", "specificity"):
            assert 0.0 <= getattr(sm, name) <= 1.0
        assert sm.hd95 >= 0.0
