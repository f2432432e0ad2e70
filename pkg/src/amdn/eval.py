"""Frame-level and pixel-level evaluation: ROC, AUC, EER, precision/recall.

Threshold convention matches detection: a score is flagged when
``score > eta``. A sweep visits ``eta = +inf`` (nothing flagged), then each
distinct score from the top down (everything at or above it flagged), and
ends at ``eta = -inf``. Equal scores always flip together.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeError

OVERLAP_THRESHOLD = 0.4


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    eta: np.ndarray
    auc: float
    eer: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.eta.tolist()))


def _validate(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores but {labels.size} labels")
    if not np.all(np.isin(labels, (0, 1))):
        raise DomainError("labels must be 0/1")
    labels = labels.astype(bool)
    if labels.all() or not labels.any():
        raise DomainError("both classes must be present")
    if np.any(np.isnan(scores)):
        raise DomainError("scores contain NaN")
    return scores, labels


def _sweep(scores, labels):
    """Cumulative (tp, fp, eta) at each sweep point. ``-inf`` scores are
    never flagged."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    finite = np.isfinite(s) | (s == np.inf)
    s_f, y_f = s[finite], y[finite]
    # last index of each distinct-score run
    if s_f.size:
        ends = np.flatnonzero(np.r_[s_f[1:] != s_f[:-1], True])
        tp = np.cumsum(y_f)[ends]
        fp = np.cumsum(~y_f)[ends]
        distinct = s_f[ends]
    else:
        tp = fp = distinct = np.empty(0)
    eta = np.r_[np.inf, distinct[1:], -np.inf] if distinct.size else np.array([np.inf])
    tp = np.r_[0, tp]
    fp = np.r_[0, fp]
    return tp.astype(np.float64), fp.astype(np.float64), eta


def _auc(fpr, tpr):
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) * 0.5))


def _eer(fpr, tpr):
    diff = fpr - (1.0 - tpr)
    k = np.flatnonzero(diff >= 0)
    if k.size == 0:
        return float(fpr[-1])
    k = k[0]
    if diff[k] == 0 or k == 0:
        return float(fpr[k])
    t = -diff[k - 1] / (diff[k] - diff[k - 1])
    return float(fpr[k - 1] + t * (fpr[k] - fpr[k - 1]))


def roc_from_counts(tp, fp, eta, n_pos, n_neg):
    fpr = fp / n_neg
    tpr = tp / n_pos
    return RocCurve(fpr, tpr, eta, _auc(fpr, tpr), _eer(fpr, tpr))


def frame_roc(frame_scores, labels):
    """ROC over frames by sweeping the threshold across every distinct score.

    AUC is the trapezoidal area; EER is where FPR meets the miss rate
    ``1 - TPR``, linearly interpolated between the bracketing sweep points.
    """
    scores, y = _validate(frame_scores, labels)
    if not np.all(np.isfinite(scores)):
        raise DomainError("frame scores must be finite")
    tp, fp, eta = _sweep(scores, y)
    return roc_from_counts(tp, fp, eta, y.sum(), (~y).sum())


def pairwise_auc(scores, labels):
    """Mann-Whitney AUC: fraction of (anomalous, normal) pairs ranked
    correctly, ties counted as one half."""
    scores, y = _validate(scores, labels)
    pos = scores[y]
    neg = scores[~y]
    gt = (pos[:, None] > neg[None, :]).sum()
    eq = (pos[:, None] == neg[None, :]).sum()
    return float((gt + 0.5 * eq) / (pos.size * neg.size))


def precision_recall(frame_scores, labels):
    """``(precision, recall, eta)`` along the threshold sweep; points where
    nothing is flagged are dropped."""
    scores, y = _validate(frame_scores, labels)
    tp, fp, eta = _sweep(scores, y)
    n_pos = y.sum()
    out = []
    for t, f, e in zip(tp, fp, eta):
        if t + f == 0:
            continue
        out.append((float(t / (t + f)), float(t / n_pos), float(e)))
    return out


# ---------------------------------------------------------------------------
# Pixel level (localization gate)
# ---------------------------------------------------------------------------


def covers(detected, truth, threshold=OVERLAP_THRESHOLD):
    """True when ``detected`` covers strictly more than ``threshold`` of the
    annotated pixels in ``truth``."""
    truth = np.asarray(truth, dtype=bool)
    total = int(truth.sum())
    if total == 0:
        return False
    hit = int(np.logical_and(detected, truth).sum())
    return hit > threshold * total


def pixel_level_eval(result, gt, eta, threshold=OVERLAP_THRESHOLD):
    """``(tpr, fpr)`` at threshold ``eta`` under the localization gate.

    An anomalous frame (non-empty mask) is a true positive when the painted
    detection covers more than 40% of its annotated pixels; a normal frame
    (empty mask) is a false positive when anything is detected.
    """
    from .detect import detection_mask

    if gt is None or not gt.has_masks:
        raise DomainError("pixel-level evaluation needs ground-truth masks")
    tp = fp = n_pos = n_neg = 0
    for sm in result.score_maps:
        truth = gt.pixel_masks[sm.frame_index]
        det = detection_mask(sm, eta, truth.shape)
        if truth.any():
            n_pos += 1
            tp += covers(det, truth, threshold)
        else:
            n_neg += 1
            fp += bool(det.any())
    tpr = tp / n_pos if n_pos else float("nan")
    fpr = fp / n_neg if n_neg else float("nan")
    return tpr, fpr


def localization_scores(score_maps, masks, threshold=OVERLAP_THRESHOLD):
    """Per-frame effective score for the pixel-level sweep.

    For an anomalous frame it is the largest ``eta`` at which the detection
    still passes the overlap gate (``-inf`` if it never does); for a normal
    frame it is the top patch score. The pixel-level ROC is then an ordinary
    sweep over these values.
    """
    from .detect import paint_footprint

    scores, labels = [], []
    for sm, truth in zip(score_maps, masks):
        flat = sm.scores.ravel()
        if not truth.any():
            scores.append(float(flat.max()))
            labels.append(0)
            continue
        total = int(truth.sum())
        det = np.zeros(truth.shape, dtype=bool)
        eff = -np.inf
        order = np.argsort(-flat, kind="mergesort")
        k = 0
        while k < len(order):
            # patches sharing a score are flagged together
            s = flat[order[k]]
            while k < len(order) and flat[order[k]] == s:
                r, c = divmod(int(order[k]), sm.grid_cols)
                paint_footprint(det, sm, r, c)
                k += 1
            if np.logical_and(det, truth).sum() > threshold * total:
                eff = s
                break
        scores.append(eff)
        labels.append(1)
    return np.asarray(scores), np.asarray(labels)


def pixel_roc(score_maps, masks, threshold=OVERLAP_THRESHOLD):
    scores, labels = localization_scores(score_maps, masks, threshold)
    y = labels.astype(bool)
    if y.all() or not y.any():
        raise DomainError("pixel-level ROC needs both anomalous and normal frames")
    tp, fp, eta = _sweep(scores, y)
    return roc_from_counts(tp, fp, eta, y.sum(), (~y).sum())


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def write_roc_csv(path, curve):
    lines = ["fpr,tpr,eta"]
    lines += [f"{f!r},{t!r},{e!r}" for f, t, e in curve.points]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_gnuplot(path, curve, title="ROC"):
    with open(path, "w") as fh:
        fh.write(f"# {title}: fpr tpr (auc={curve.auc:.6f}, eer={curve.eer:.6f})\n")
        for f, t, _ in curve.points:
            fh.write(f"{f!r} {t!r}\n")


def write_pr_csv(path, pr):
    with open(path, "w") as fh:
        fh.write("precision,recall,eta\n")
        for p, r, e in pr:
            fh.write(f"{p!r},{r!r},{e!r}\n")


def write_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
