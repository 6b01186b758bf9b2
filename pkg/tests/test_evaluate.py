"""Mean IoU against hand-counted confusion matrices on tiny label maps."""

import numpy as np
import pytest

from attnseg.errors import DataError, ShapeError
from attnseg.evaluate import ConfusionMatrix, format_report, miou


def test_hand_counted_two_class_case():
    # gt [0,0,1,1], pred all zeros: class 0 TP=2 FP=2 FN=0 -> 0.5;
    # class 1 TP=0 FP=0 FN=2 -> 0.0; mean 0.25.
    gt = np.array([[0, 0, 1, 1]])
    pred = np.zeros((1, 4), dtype=np.int64)
    per_class, mean = miou([pred], [gt], classes=2)
    assert per_class.tolist() == [0.5, 0.0]
    assert mean == 0.25


def test_perfect_prediction_is_exactly_one():
    rng = np.random.default_rng(0)
    gts = [rng.integers(0, 3, size=(4, 4)) for _ in range(3)]
    per_class, mean = miou(gts, gts, classes=3)
    assert per_class.tolist() == [1.0, 1.0, 1.0]
    assert mean == 1.0


def test_hand_counted_three_class_case():
    gt = np.array([[0, 1, 2], [0, 1, 2]])
    pred = np.array([[0, 1, 1], [2, 1, 2]])
    # class 0: TP 1, FN 1, FP 0 -> 1/2; class 1: TP 2, FP 1, FN 0 -> 2/3;
    # class 2: TP 1, FP 1, FN 1 -> 1/3.
    per_class, mean = miou([pred], [gt], classes=3)
    assert np.allclose(per_class, [1 / 2, 2 / 3, 1 / 3])
    assert mean == pytest.approx((1 / 2 + 2 / 3 + 1 / 3) / 3)


def test_classes_absent_from_both_sides_are_excluded():
    gt = np.array([[0, 1]])
    pred = np.array([[0, 1]])
    per_class, mean = miou([pred], [gt], classes=4)
    assert per_class[:2].tolist() == [1.0, 1.0]
    assert np.isnan(per_class[2]) and np.isnan(per_class[3])
    assert mean == 1.0  # absent classes do not drag the mean to 0.5


def test_class_predicted_but_never_true_counts_as_zero():
    gt = np.array([[0, 0]])
    pred = np.array([[0, 1]])
    per_class, _ = miou([pred], [gt], classes=2)
    assert per_class[1] == 0.0  # FP>0 makes the class non-absent


def test_ignore_pixels_leave_no_trace():
    gt = np.array([[0, 255], [255, 1]])
    pred = np.array([[0, 1], [0, 1]])
    cm = ConfusionMatrix(2).update(gt, pred)
    assert cm.counts.sum() == 2
    assert cm.counts.tolist() == [[1, 0], [0, 1]]


def test_accumulation_is_additive_and_order_free():
    rng = np.random.default_rng(1)
    gts = [rng.integers(0, 3, size=(5, 5)) for _ in range(4)]
    preds = [rng.integers(0, 3, size=(5, 5)) for _ in range(4)]

    whole = ConfusionMatrix(3)
    for gt, pred in zip(gts, preds):
        whole.update(gt, pred)

    first = ConfusionMatrix(3).update(gts[0], preds[0]).update(gts[1], preds[1])
    second = ConfusionMatrix(3).update(gts[2], preds[2]).update(gts[3], preds[3])
    merged = first + second
    assert np.array_equal(merged.counts, whole.counts)

    reordered = ConfusionMatrix(3)
    for gt, pred in zip(reversed(gts), reversed(preds)):
        reordered.update(gt, pred)
    assert np.array_equal(reordered.counts, whole.counts)


def test_dataset_level_iou_differs_from_per_image_averaging():
    # Dataset-level: counts pool before the ratio. Image 1 perfect on class 0
    # (4 px), image 2 bad (1 of 4) -> pooled 5/8, not (1.0 + 0.25) / 2.
    gt = np.zeros((2, 2), dtype=np.int64)
    good = np.zeros((2, 2), dtype=np.int64)
    bad = np.array([[0, 1], [1, 1]])
    per_class, _ = miou([good, bad], [gt, gt], classes=2)
    assert per_class[0] == pytest.approx(5 / 8)


def test_errors_are_specific():
    cm = ConfusionMatrix(2)
    with pytest.raises(ShapeError):
        cm.update(np.zeros((2, 2)), np.zeros((3, 3)))
    with pytest.raises(DataError):
        cm.update(np.array([[5]]), np.array([[0]]))
    with pytest.raises(DataError):
        cm.update(np.array([[0]]), np.array([[5]]))
    with pytest.raises(DataError):
        ConfusionMatrix(1)
    with pytest.raises(ShapeError):
        miou([np.zeros((2, 2))], [], classes=2)
    with pytest.raises(ShapeError):
        ConfusionMatrix(2).merge(ConfusionMatrix(3))


def test_all_ignored_gives_nan_mean():
    cm = ConfusionMatrix(2)
    cm.update(np.full((2, 2), 255), np.zeros((2, 2)))
    assert np.isnan(cm.mean_iou())


def test_format_report_layout():
    report = format_report(np.array([1.0, 0.25, np.nan]), 0.625)
    lines = report.splitlines()
    assert lines[0] == "class  iou"
    assert lines[1] == "0      1.0000"
    assert lines[2] == "1      0.2500"
    assert lines[3] == "2      absent"
    assert lines[4] == "mIoU   0.6250"
    assert report.endswith("\n")
