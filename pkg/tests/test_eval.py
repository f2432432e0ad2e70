import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from amdn.detect import ScoreMap, decide
from amdn.errors import DomainError
from amdn.eval import (
    covers,
    frame_roc,
    pairwise_auc,
    pixel_level_eval,
    pixel_roc,
    precision_recall,
    write_gnuplot,
    write_roc_csv,
)
from amdn.ingest import GroundTruth


def test_perfect_separation():
    roc = frame_roc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert roc.auc == 1.0 and roc.eer == 0.0


def test_constant_scores_give_half():
    roc = frame_roc([0.5] * 6, [0, 1, 0, 1, 1, 0])
    assert roc.auc == 0.5


def test_one_inversion():
    s, y = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    assert frame_roc(s, y).auc == 0.75
    assert pairwise_auc(s, y) == 0.75


def test_single_class_rejected():
    with pytest.raises(DomainError):
        frame_roc([0.1, 0.2], [1, 1])
    with pytest.raises(DomainError):
        precision_recall([0.1, 0.2], [0, 0])


def test_curve_shape():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 50)
    y[:2] = [1, 0]
    roc = frame_roc(rng.random(50), y)
    assert roc.fpr[0] == 0 and roc.tpr[0] == 0 and roc.fpr[-1] == 1 and roc.tpr[-1] == 1
    assert np.all(np.diff(roc.fpr) >= 0) and np.all(np.diff(roc.tpr) >= 0)
    assert roc.eta[0] == np.inf and roc.eta[-1] == -np.inf
    assert roc.auc == pytest.approx(np.trapezoid(roc.tpr, roc.fpr), abs=1e-15)
    assert 0 <= roc.eer <= 1


def test_eer_interpolates_between_points():
    # sweep points (fpr, tpr): (0,0) (0,.5) (.5,.5) (.5,1) (1,1)
    roc = frame_roc([4, 3, 2, 1], [1, 0, 1, 0])
    # fpr - (1 - tpr): -1, -.5, 0, .5, 1 -> crosses exactly at (.5, .5)
    assert roc.eer == 0.5
    roc = frame_roc([5, 4, 3, 2, 1], [1, 1, 0, 1, 0])
    # (0,0) (0,1/3) (0,2/3) (.5,2/3) (.5,1) (1,1); diff: -1 -2/3 -1/3 1/6 ...
    # interpolate between (0, 2/3) and (.5, 2/3): t = (1/3)/(1/2) = 2/3 -> fpr 1/3
    assert roc.eer == pytest.approx(1 / 3, abs=1e-15)


scored = st.lists(st.tuples(st.floats(-1e3, 1e3, allow_nan=False), st.integers(0, 1)), min_size=2, max_size=60)


@given(scored)
def test_trapezoid_equals_mann_whitney(pairs):
    s = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    if y.all() or not y.any():
        y[0] = 1 - y[0]
    assert abs(frame_roc(s, y).auc - pairwise_auc(s, y)) <= 1e-9


@given(scored, st.integers(0, 2**31))
def test_joint_shuffle_invariance(pairs, seed):
    s = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    if y.all() or not y.any():
        y[0] = 1 - y[0]
    perm = np.random.default_rng(seed).permutation(len(s))
    a, b = frame_roc(s, y), frame_roc(s[perm], y[perm])
    assert a.auc == b.auc and a.eer == b.eer


def test_precision_recall_perfect():
    pr = precision_recall([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert (1.0, 1.0) in [(p, r) for p, r, _ in pr]


def test_precision_recall_base_rate():
    y = [0, 1, 0, 0, 1]
    p, r, e = precision_recall([0.3, 0.1, 0.5, 0.9, 0.2], y)[-1]
    assert e == -np.inf and p == pytest.approx(0.4) and r == 1.0


def test_precision_recall_toy_table():
    pr = precision_recall([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
    expected = [(1.0, 0.5), (0.5, 0.5), (2 / 3, 1.0), (0.5, 1.0)]
    assert [(p, r) for p, r, _ in pr] == pytest.approx(expected)


def _map(scores, stride=5, size=5, idx=0):
    s = np.asarray(scores, dtype=float)
    return ScoreMap("c", idx, s.shape[0], s.shape[1], stride, size, s)


def test_covers_boundary():
    truth = np.zeros((10, 10), bool)
    truth[:, :5] = True  # 50 pixels
    det = np.zeros_like(truth)
    det[:4, :5] = True  # 20 = 40% exactly
    assert not covers(det, truth)
    det[4, 0] = True  # 21 > 40%
    assert covers(det, truth)
    det = np.zeros_like(truth)
    det.ravel()[np.flatnonzero(truth.ravel())[:19]] = True  # 38%
    assert not covers(det, truth)


def test_pixel_level_eval_cases():
    sm_hit = _map([[3.0, 0.0], [0.0, 0.0]], idx=0)
    sm_miss = _map([[0.0, 0.0], [0.0, 0.0]], idx=1)
    sm_fp = _map([[0.0, 0.0], [0.0, 9.0]], idx=2)
    gt_mask = np.zeros((10, 10), bool)
    gt_mask[:5, :5] = True
    masks = [gt_mask, gt_mask.copy(), np.zeros((10, 10), bool)]
    res = decide([sm_hit, sm_miss, sm_fp], 1.0, (10, 10))
    tpr, fpr = pixel_level_eval(res, GroundTruth(np.array([1, 1, 0]), masks), 1.0)
    assert tpr == 0.5 and fpr == 1.0
    with pytest.raises(DomainError):
        pixel_level_eval(res, GroundTruth(np.array([1, 1, 0])), 1.0)


def test_pixel_roc_overlap_gate():
    truth = np.zeros((10, 10), bool)
    truth[:, :5] = True
    # anomalous frame: one patch covers 25 of 50 truth pixels; another nothing
    a = _map([[5.0, 1.0], [2.0, 0.0]], idx=0)
    n = _map([[3.0, 0.0], [0.0, 0.0]], idx=1)
    roc = pixel_roc([a, n], [truth, np.zeros_like(truth)])
    # top patch alone gives 50% > 40%: effective score 5 beats the normal frame's 3
    assert roc.auc == 1.0
    roc = pixel_roc([a, n], [truth, np.zeros_like(truth)], threshold=0.6)
    # needs patch (1,0) too, effective score 2 < 3
    assert roc.auc == 0.0


def test_writers(tmp_path):
    roc = frame_roc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    write_roc_csv(tmp_path / "roc.csv", roc)
    write_gnuplot(tmp_path / "roc.dat", roc)
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "fpr,tpr,eta" and len(lines) == len(roc.points) + 1
    assert (tmp_path / "roc.dat").read_text().startswith("#")
